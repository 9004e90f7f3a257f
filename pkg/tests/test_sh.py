"""Spherical-harmonics color: basis identities and exact gradients."""

import numpy as np
import pytest

from specsplat.sh import (
    SH_C0,
    eval_colors,
    eval_colors_backward,
    num_coeffs,
    sh_basis,
    sh_basis_grad,
)


def unit_dirs(rng, n):
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def test_num_coeffs():
    assert [num_coeffs(d) for d in range(4)] == [1, 4, 9, 16]


def test_basis_orthonormal_monte_carlo(rng):
    # <b_i, b_j> over the sphere = delta_ij / (4 pi) after the uniform
    # sampling measure; 200k samples put the MC error well under 1%.
    d = unit_dirs(rng, 200_000)
    b = sh_basis(d, 3)
    gram = 4.0 * np.pi * (b.T @ b) / len(d)
    assert np.allclose(gram, np.eye(16), atol=0.03)


def test_basis_degree_prefix_consistent(rng):
    d = unit_dirs(rng, 64)
    full = sh_basis(d, 3)
    for deg in range(3):
        assert np.array_equal(sh_basis(d, deg), full[:, : num_coeffs(deg)])


def test_basis_grad_fd(rng):
    d = unit_dirs(rng, 16)
    g = sh_basis_grad(d, 3)
    h = 1e-6
    for k in range(3):
        dp, dm = d.copy(), d.copy()
        dp[:, k] += h
        dm[:, k] -= h
        fd = (sh_basis(dp, 3) - sh_basis(dm, 3)) / (2 * h)
        assert np.allclose(g[:, :, k], fd, atol=1e-7)


def test_degree0_color_is_dc():
    coeffs = np.zeros((2, 3, 16))
    coeffs[0, :, 0] = 0.9
    coeffs[1, :, 0] = -5.0  # drives raw value negative -> clamp
    pos = np.array([[0.0, 2.0, 0.0], [0.0, 2.0, 1.0]])
    colors, _ = eval_colors(coeffs, pos, np.zeros(3), 0)
    assert np.allclose(colors[0], SH_C0 * 0.9 + 0.5, atol=1e-15)
    assert np.allclose(colors[1], 0.0, atol=1e-15)


def test_degree0_is_view_independent(rng):
    coeffs = rng.normal(0, 0.2, (5, 3, 16))
    pos = rng.normal(0, 0.5, (5, 3))
    c1, _ = eval_colors(coeffs, pos, np.array([3.0, 0.0, 0.0]), 0)
    c2, _ = eval_colors(coeffs, pos, np.array([-1.0, 2.0, 0.5]), 0)
    assert np.array_equal(c1, c2)


def test_higher_degrees_vary_with_view(rng):
    coeffs = rng.normal(0, 0.2, (5, 3, 16))
    pos = rng.normal(0, 0.5, (5, 3))
    c1, _ = eval_colors(coeffs, pos, np.array([3.0, 0.0, 0.0]), 3)
    c2, _ = eval_colors(coeffs, pos, np.array([-1.0, 2.0, 0.5]), 3)
    assert np.abs(c1 - c2).max() > 1e-3


def test_eval_colors_backward_fd(rng):
    n = 4
    coeffs = rng.normal(0, 0.2, (n, 3, 16))
    coeffs[:, :, 0] += 1.0  # keep the zero-clamp's kink out of the bracket
    pos = rng.normal(0, 0.4, (n, 3))
    cam = np.array([0.2, -2.5, 0.6])
    d_colors = rng.normal(size=(n, 3))

    _, ctx = eval_colors(coeffs, pos, cam, 3)
    d_sh, d_pos = eval_colors_backward(coeffs, d_colors, ctx)

    h = 1e-6

    def value(cf, p):
        c, _ = eval_colors(cf, p, cam, 3)
        return np.sum(c * d_colors)

    it = np.nditer(coeffs, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        cp, cm = coeffs.copy(), coeffs.copy()
        cp[idx] += h
        cm[idx] -= h
        fd = (value(cp, pos) - value(cm, pos)) / (2 * h)
        assert d_sh[idx] == pytest.approx(fd, rel=1e-5, abs=1e-9)

    for i in range(n):
        for k in range(3):
            pp, pm = pos.copy(), pos.copy()
            pp[i, k] += h
            pm[i, k] -= h
            fd = (value(coeffs, pp) - value(coeffs, pm)) / (2 * h)
            assert d_pos[i, k] == pytest.approx(fd, rel=1e-4, abs=1e-8)


def test_backward_zero_pads_inactive_degrees(rng):
    coeffs = rng.normal(0, 0.2, (3, 3, 16))
    coeffs[:, :, 0] += 1.0
    _, ctx = eval_colors(coeffs, rng.normal(0, 0.3, (3, 3)), np.array([0.0, -2.0, 0.0]), 1)
    d_sh, _ = eval_colors_backward(coeffs, np.ones((3, 3)), ctx)
    assert np.array_equal(d_sh[:, :, 4:], np.zeros((3, 3, 12)))
    assert np.abs(d_sh[:, :, :4]).max() > 0


def test_clamped_channel_gets_no_gradient():
    coeffs = np.zeros((1, 3, 16))
    coeffs[0, 0, 0] = -5.0  # red clamps to zero
    coeffs[0, 1:, 0] = 0.5
    _, ctx = eval_colors(coeffs, np.zeros((1, 3)), np.array([0.0, -2.0, 0.0]), 0)
    d_sh, _ = eval_colors_backward(coeffs, np.ones((1, 3)), ctx)
    assert d_sh[0, 0, 0] == 0.0
    assert d_sh[0, 1, 0] != 0.0
