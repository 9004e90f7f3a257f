"""Image loss (L1 + D-SSIM) and the evaluation metrics."""

import numpy as np
import pytest

from specsplat.loss import combined_loss, dssim_loss, l1_loss, SSIM_C1, SSIM_C2
from specsplat.metrics import (
    eval_metrics,
    masked_psnr,
    mean_angular_error_deg,
    psnr,
    ssim,
)


def pair(rng, h=24, w=24):
    return rng.uniform(0, 1, (h, w, 3)), rng.uniform(0, 1, (h, w, 3))


# ---------------------------------------------------------------------------
# loss values
# ---------------------------------------------------------------------------

def test_identical_images_zero_loss(rng):
    x, _ = pair(rng)
    rep = combined_loss(x, x.copy())
    assert rep.total == 0.0
    assert rep.l1 == 0.0
    assert rep.dssim == 0.0
    # analytically zero; the separate window convolutions leave float dust
    assert np.abs(rep.grad).max() < 1e-12


def test_l1_closed_form():
    x = np.zeros((16, 16))
    y = np.full((16, 16), 0.25)
    loss, grad = l1_loss(x, y)
    assert loss == pytest.approx(0.25, abs=1e-15)
    assert np.allclose(grad, -1.0 / 256.0, atol=1e-18)


def test_constant_offset_ssim_closed_form():
    # Constant images have zero variance; SSIM collapses to the luminance
    # term (2 mu1 mu2 + C1)/(mu1^2 + mu2^2 + C1).
    a, b = 0.4, 0.6
    x = np.full((20, 20), a)
    y = np.full((20, 20), b)
    loss, _ = dssim_loss(x, y)
    s = (2 * a * b + SSIM_C1) / (a * a + b * b + SSIM_C1)
    assert loss == pytest.approx((1 - s) / 2, abs=1e-12)


def test_combined_is_the_stated_mixture(rng):
    x, y = pair(rng)
    lam = 0.35
    rep = combined_loss(x, y, lam)
    l1, _ = l1_loss(x, y)
    ds, _ = dssim_loss(x, y)
    assert rep.total == (1 - lam) * l1 + lam * ds
    assert rep.l1 == l1 and rep.dssim == ds


def test_lambda_endpoints(rng):
    x, y = pair(rng)
    assert combined_loss(x, y, 0.0).total == l1_loss(x, y)[0]
    assert combined_loss(x, y, 1.0).total == dssim_loss(x, y)[0]
    with pytest.raises(ValueError):
        combined_loss(x, y, 1.2)


def test_shape_mismatch_raises(rng):
    with pytest.raises(ValueError):
        l1_loss(np.zeros((8, 8)), np.zeros((8, 9)))
    with pytest.raises(ValueError):
        dssim_loss(np.zeros((8, 8)), np.zeros((8, 8)))  # below the window


def test_dssim_range(rng):
    for _ in range(5):
        x, y = pair(rng)
        loss, _ = dssim_loss(x, y)
        assert 0.0 <= loss <= 1.0


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

def test_l1_gradient_is_sign(rng):
    x, y = pair(rng)
    _, grad = l1_loss(x, y)
    assert np.array_equal(grad, np.sign(x - y) / x.size)


def test_dssim_gradient_fd(rng):
    x, y = pair(rng, 16, 16)
    _, grad = dssim_loss(x, y)
    h = 1e-6
    flat = x.reshape(-1)
    for fi in rng.choice(flat.size, 30, replace=False):
        xp, xm = x.copy(), x.copy()
        xp.reshape(-1)[fi] += h
        xm.reshape(-1)[fi] -= h
        fd = (dssim_loss(xp, y)[0] - dssim_loss(xm, y)[0]) / (2 * h)
        assert grad.reshape(-1)[fi] == pytest.approx(fd, rel=1e-4, abs=1e-10)


def test_combined_gradient_fd(rng):
    # L1 has a kink at zero difference; random continuous pairs never land
    # on it, so central differences are clean.
    x, y = pair(rng, 16, 16)
    rep = combined_loss(x, y, 0.2)
    h = 1e-6
    flat = x.reshape(-1)
    for fi in rng.choice(flat.size, 20, replace=False):
        xp, xm = x.copy(), x.copy()
        xp.reshape(-1)[fi] += h
        xm.reshape(-1)[fi] -= h
        fd = (combined_loss(xp, y, 0.2).total - combined_loss(xm, y, 0.2).total) / (2 * h)
        assert rep.grad.reshape(-1)[fi] == pytest.approx(fd, rel=1e-4, abs=1e-10)


def test_grayscale_and_rgb_consistent(rng):
    g = rng.uniform(0, 1, (18, 18))
    t = rng.uniform(0, 1, (18, 18))
    mono, grad_mono = dssim_loss(g, t)
    rgb, grad_rgb = dssim_loss(np.stack([g] * 3, -1), np.stack([t] * 3, -1))
    assert mono == pytest.approx(rgb, abs=1e-14)
    assert np.allclose(grad_rgb, grad_mono[:, :, None] / 3.0, atol=1e-15)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def test_psnr_known_offset():
    x = np.zeros((10, 10, 3))
    assert psnr(x + 0.1, x) == pytest.approx(20.0, abs=1e-12)


def test_psnr_identical_capped():
    x = np.random.default_rng(0).uniform(0, 1, (10, 10, 3))
    assert psnr(x, x) == 99.0


def test_ssim_identical_is_one(rng):
    x, _ = pair(rng)
    assert ssim(x, x) == 1.0


def test_mae_exact_rotation_field(rng):
    """Every ground-truth normal rotated by exactly 5 degrees about an axis
    orthogonal to it; the mean angular error must be 5 degrees."""
    n = 500
    g = rng.normal(size=(n, 3))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    helper = rng.normal(size=(n, 3))
    axis = np.cross(g, helper)
    axis /= np.linalg.norm(axis, axis=1, keepdims=True)
    ang = np.deg2rad(5.0)
    pred = g * np.cos(ang) + np.cross(axis, g) * np.sin(ang)
    mae = mean_angular_error_deg(pred.reshape(25, 20, 3), g.reshape(25, 20, 3),
                                 np.ones((25, 20), dtype=bool))
    assert mae == pytest.approx(5.0, abs=0.01)


def test_mae_empty_mask_is_none():
    z = np.zeros((4, 4, 3))
    assert mean_angular_error_deg(z, z, np.zeros((4, 4), dtype=bool)) is None


def test_masked_psnr_ignores_outside(rng):
    x, y = pair(rng, 12, 12)
    mask = np.zeros((12, 12), dtype=bool)
    mask[3:7, 2:9] = True
    y2 = y.copy()
    y2[~mask] = -50.0  # garbage outside must not matter
    assert masked_psnr(x, y2, mask) == pytest.approx(
        10 * np.log10(1.0 / np.mean((x[mask] - y[mask]) ** 2)), abs=1e-12)


def test_eval_metrics_aggregates(rng):
    r1, t1 = pair(rng)
    r2, t2 = pair(rng)
    out = eval_metrics([r1, r2], [t1, t2])
    assert len(out["psnr"]) == 2
    assert out["mean_psnr"] == pytest.approx(np.mean(out["psnr"]))
    assert out["mean_mae_deg"] is None  # no normals supplied
