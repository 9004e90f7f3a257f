"""Depth-ordered compositing: closed forms, the scalar oracle, the tape,
threading, and backward gradients."""

import numpy as np
import pytest

from specsplat.core import Projection, project_gaussians
from specsplat.rasterize import blend, blend_backward, max_blend_weights
from conftest import front_camera, random_cloud
from oracles import blend_scalar

ALPHA_MIN = 1.0 / 255.0


def manual_projection(means, depths, conic=(1.0, 0.0, 1.0), bbox=None, size=17):
    """Hand-built Projection so tests control the kernel inputs exactly."""
    n = len(means)
    means = np.asarray(means, dtype=np.float64).reshape(n, 2)
    if bbox is None:
        bbox = np.tile(np.array([0, size - 1, 0, size - 1], dtype=np.int32), (n, 1))
    conics = np.tile(np.asarray(conic, dtype=np.float64), (n, 1))
    return Projection(
        mean2d=means,
        cov2d=np.zeros((n, 2, 2)),
        conic=conics,
        depth=np.asarray(depths, dtype=np.float64),
        visible=np.ones(n, dtype=bool),
        bbox=np.asarray(bbox, dtype=np.int32),
        t_cam=np.zeros((n, 3)),
        clamp_mask=np.ones((n, 2)),
    )


def test_single_gaussian_center_pixel():
    # Mean on the center of pixel (8, 8): q = 0 there, alpha = opacity.
    proj = manual_projection([[8.5, 8.5]], [1.0])
    res = blend(proj, np.array([0.8]), np.array([[0.6, 0.2, 1.0]]), 17, 17)
    assert np.allclose(res.image[8, 8], 0.8 * np.array([0.6, 0.2, 1.0]), atol=1e-15)
    assert res.alpha[8, 8] == pytest.approx(0.8, abs=1e-15)
    assert res.final_trans[8, 8] == pytest.approx(0.2, abs=1e-15)


def test_two_gaussians_front_to_back():
    proj = manual_projection([[8.5, 8.5], [8.5, 8.5]], [1.0, 2.0])
    c = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    res = blend(proj, np.array([0.8, 0.4]), c, 17, 17)
    # front contributes 0.8, back sees T = 0.2
    assert res.image[8, 8, 0] == pytest.approx(0.8, abs=1e-15)
    assert res.image[8, 8, 1] == pytest.approx(0.2 * 0.4, abs=1e-15)
    assert res.alpha[8, 8] == pytest.approx(0.88, abs=1e-15)
    # swapping depths swaps the roles
    proj2 = manual_projection([[8.5, 8.5], [8.5, 8.5]], [2.0, 1.0])
    res2 = blend(proj2, np.array([0.8, 0.4]), c, 17, 17)
    assert res2.image[8, 8, 1] == pytest.approx(0.4, abs=1e-15)
    assert res2.image[8, 8, 0] == pytest.approx(0.6 * 0.8, abs=1e-15)


def test_alpha_ceiling_applies():
    proj = manual_projection([[8.5, 8.5]], [1.0])
    res = blend(proj, np.array([0.9999]), np.ones((1, 1)), 17, 17)
    assert res.alpha[8, 8] == pytest.approx(0.99, abs=1e-15)


def test_alpha_floor_skips():
    # Opacity high enough to survive culling, conic steep enough that the
    # next pixel over is already below 1/255: it must stay untouched.
    proj = manual_projection([[8.5, 8.5]], [1.0], conic=(14.0, 0.0, 14.0))
    res = blend(proj, np.array([0.9]), np.ones((1, 1)), 17, 17)
    assert res.alpha[8, 8] > 0
    assert res.alpha[8, 9] == 0.0 and res.alpha[9, 8] == 0.0


def test_saturation_excludes_crossing_contributor():
    """The T < 1e-4 cut happens before the crossing Gaussian contributes,
    and later Gaussians on the same pixel are never visited."""
    means = [[8.5, 8.5]] * 4
    proj = manual_projection(means, [1.0, 2.0, 3.0, 4.0])
    op = np.array([0.97, 0.97, 0.97, 0.5])
    c = np.eye(4)
    res = blend(proj, op, c, 17, 17)
    # T after two: (1-0.97)^2 = 9e-4; third would land at 2.7e-5 < 1e-4.
    t1 = 1.0 * (1.0 - 0.97)
    t2 = t1 * (1.0 - 0.97)
    assert res.image[8, 8, 0] == 0.97
    assert res.image[8, 8, 1] == 0.97 * t1
    assert res.image[8, 8, 2] == 0.0
    assert res.image[8, 8, 3] == 0.0
    assert res.final_trans[8, 8] == t2
    # two tape records, not three
    pix = 8 * 17 + 8
    assert res.offsets[pix + 1] - res.offsets[pix] == 2


def test_ones_channel_equals_alpha_bitwise(rng):
    cloud = random_cloud(rng, 40)
    proj = project_gaussians(cloud, front_camera(res=32))
    channels = np.concatenate([rng.normal(size=(40, 3)), np.ones((40, 1))], axis=1)
    res = blend(proj, cloud.opacity, channels, 32, 32)
    assert np.array_equal(res.image[:, :, 3], res.alpha)


def test_blend_matches_scalar_oracle_bitwise(rng):
    cloud = random_cloud(rng, 60)
    cam = front_camera(res=33)  # odd size: last band is a partial stripe
    proj = project_gaussians(cloud, cam)
    channels = rng.normal(size=(60, 5))
    res = blend(proj, cloud.opacity, channels, 33, 33)

    vis = np.nonzero(proj.visible)[0]
    order = vis[np.argsort(proj.depth[vis], kind="stable")]
    img_o, alpha_o, trans_o, records = blend_scalar(
        order, proj.mean2d, proj.conic, cloud.opacity, proj.bbox, channels, 33, 33)
    assert np.array_equal(res.image, img_o)
    assert np.array_equal(res.alpha, alpha_o)
    assert np.array_equal(res.final_trans, trans_o)
    # tape agrees record by record
    for (r, c), recs in records.items():
        pix = r * 33 + c
        lo, hi = res.offsets[pix], res.offsets[pix + 1]
        assert hi - lo == len(recs)
        assert np.array_equal(res.tape_idx[lo:hi], [g for g, _, _ in recs])
        assert np.array_equal(res.tape_alpha[lo:hi], [a for _, a, _ in recs])


def test_weight_partition_reconstructs_alpha(rng):
    cloud = random_cloud(rng, 50)
    proj = project_gaussians(cloud, front_camera(res=32))
    res = blend(proj, cloud.opacity, np.ones((50, 1)), 32, 32)
    alpha = np.zeros((32, 32))
    for pix in range(32 * 32):
        t = 1.0
        acc = 0.0
        for k in range(res.offsets[pix], res.offsets[pix + 1]):
            a = res.tape_alpha[k]
            acc += a * t
            t = t * (1.0 - a)
        alpha[pix // 32, pix % 32] = acc
    assert np.array_equal(alpha, res.alpha)


def test_max_blend_weights_match_tape_walk(rng):
    cloud = random_cloud(rng, 50)
    proj = project_gaussians(cloud, front_camera(res=32))
    res = blend(proj, cloud.opacity, np.ones((50, 1)), 32, 32)
    expect = np.zeros(50)
    for pix in range(32 * 32):
        t = 1.0
        for k in range(res.offsets[pix], res.offsets[pix + 1]):
            a = res.tape_alpha[k]
            g = res.tape_idx[k]
            expect[g] = max(expect[g], a * t)
            t = t * (1.0 - a)
    got = max_blend_weights(res, 50)
    assert np.allclose(got, expect, rtol=1e-12, atol=1e-300)
    # untouched Gaussians report exactly zero
    assert np.array_equal(got == 0.0, expect == 0.0)


def test_max_blend_weights_empty_tape():
    proj = manual_projection([[8.5, 8.5]], [1.0])
    proj.visible[:] = False
    res = blend(proj, np.array([0.5]), np.ones((1, 1)), 17, 17)
    assert np.array_equal(max_blend_weights(res, 4), np.zeros(4))


@pytest.mark.parametrize("n_threads", [2, 4, 8])
def test_thread_count_is_bitwise_invariant(rng, n_threads):
    cloud = random_cloud(rng, 80)
    proj = project_gaussians(cloud, front_camera(res=48))
    channels = rng.normal(size=(80, 7))
    base = blend(proj, cloud.opacity, channels, 48, 48, n_threads=1)
    multi = blend(proj, cloud.opacity, channels, 48, 48, n_threads=n_threads)
    assert np.array_equal(base.image, multi.image)
    assert np.array_equal(base.alpha, multi.alpha)
    assert np.array_equal(base.tape_alpha, multi.tape_alpha)

    d_img = rng.normal(size=(48, 48, 7))
    d_alpha = rng.normal(size=(48, 48))
    g1 = blend_backward(base, proj, cloud.opacity, channels, d_img, d_alpha, n_threads=1)
    g8 = blend_backward(multi, proj, cloud.opacity, channels, d_img, d_alpha, n_threads=n_threads)
    for a, b in zip(g1, g8):
        assert np.array_equal(a, b)


def test_blend_backward_fd(rng):
    """Central differences on every kernel input. The fixed hand-made bbox
    keeps the integer footprint constant under perturbation; opacities stay
    away from the 1/255 and 0.99 clamps inside the +-h bracket."""
    n = 4
    means = np.array([[5.2, 6.1], [7.9, 8.4], [6.6, 5.3], [8.1, 7.2]])
    depths = np.array([1.0, 1.5, 2.2, 3.1])
    proj = manual_projection(means, depths, conic=(0.35, 0.05, 0.28), size=14)
    opacity = np.array([0.55, 0.4, 0.62, 0.3])
    channels = rng.normal(size=(n, 3))

    res = blend(proj, opacity, channels, 14, 14)
    d_image = rng.normal(size=(14, 14, 3))
    d_alpha = rng.normal(size=(14, 14))
    d_ch, d_mean, d_conic, d_op = blend_backward(res, proj, opacity, channels, d_image, d_alpha)

    def value(mean2d=proj.mean2d, conic=proj.conic, op=opacity, ch=channels):
        p = manual_projection(mean2d, depths, size=14)
        p.conic = np.ascontiguousarray(conic)
        r = blend(p, op, ch, 14, 14)
        return np.sum(r.image * d_image) + np.sum(r.alpha * d_alpha)

    h = 1e-6
    for i in range(n):
        for k in range(3):
            cp, cm = channels.copy(), channels.copy()
            cp[i, k] += h
            cm[i, k] -= h
            fd = (value(ch=cp) - value(ch=cm)) / (2 * h)
            assert d_ch[i, k] == pytest.approx(fd, rel=1e-5, abs=1e-8)
        for k in range(2):
            mp, mm = means.copy(), means.copy()
            mp[i, k] += h
            mm[i, k] -= h
            fd = (value(mean2d=mp) - value(mean2d=mm)) / (2 * h)
            assert d_mean[i, k] == pytest.approx(fd, rel=2e-5, abs=1e-7)
        base_conic = np.tile(np.array([0.35, 0.05, 0.28]), (n, 1))
        for k in range(3):
            cp, cm = base_conic.copy(), base_conic.copy()
            cp[i, k] += h
            cm[i, k] -= h
            fd = (value(conic=cp) - value(conic=cm)) / (2 * h)
            assert d_conic[i, k] == pytest.approx(fd, rel=2e-5, abs=1e-7)
        op_p, op_m = opacity.copy(), opacity.copy()
        op_p[i] += h
        op_m[i] -= h
        fd = (value(op=op_p) - value(op=op_m)) / (2 * h)
        assert d_op[i] == pytest.approx(fd, rel=1e-5, abs=1e-8)


def test_backward_zero_for_saturated_tail(rng):
    """A Gaussian whose only pixel saturates before its turn gets exactly
    zero gradient (the T < 1e-4 cut excludes it from the tape)."""
    bbox = np.array([[0, 16, 0, 16], [0, 16, 0, 16], [8, 8, 8, 8]], dtype=np.int32)
    proj = manual_projection([[8.5, 8.5]] * 3, [1.0, 2.0, 3.0], bbox=bbox)
    opacity = np.array([0.98, 0.98, 0.8])
    channels = rng.normal(size=(3, 2))
    res = blend(proj, opacity, channels, 17, 17)
    # front two leave T = 4e-4 at the center; the third would cross 1e-4
    pix = 8 * 17 + 8
    assert res.offsets[pix + 1] - res.offsets[pix] == 2
    d_ch, d_mean, d_conic, d_op = blend_backward(
        res, proj, opacity, channels, np.ones((17, 17, 2)), np.zeros((17, 17)))
    assert np.array_equal(d_ch[2], np.zeros(2))
    assert d_op[2] == 0.0
    assert np.abs(d_ch[:2]).max() > 0


def test_empty_scene_renders_zero():
    proj = manual_projection(np.zeros((0, 2)), np.zeros(0))
    res = blend(proj, np.zeros(0), np.zeros((0, 3)), 17, 17)
    assert not res.image.any() and not res.alpha.any()
    assert res.offsets[-1] == 0
