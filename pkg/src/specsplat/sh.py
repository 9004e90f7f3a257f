"""Real spherical harmonics up to degree 3 for view-dependent color.

Color convention: channel value = sum_i coeff_i * basis_i(dir) + 0.5,
clamped below at zero. The clamp mask is part of the backward pass.
"""

from __future__ import annotations

import numpy as np

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)


def num_coeffs(degree):
    return (degree + 1) ** 2


def sh_basis(dirs, degree):
    """Basis values for unit directions (N,3) -> (N, (degree+1)^2)."""
    dirs = np.asarray(dirs, dtype=np.float64)
    n = len(dirs)
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    b = np.empty((n, num_coeffs(degree)))
    b[:, 0] = SH_C0
    if degree >= 1:
        b[:, 1] = -SH_C1 * y
        b[:, 2] = SH_C1 * z
        b[:, 3] = -SH_C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        b[:, 4] = SH_C2[0] * xy
        b[:, 5] = SH_C2[1] * yz
        b[:, 6] = SH_C2[2] * (2.0 * zz - xx - yy)
        b[:, 7] = SH_C2[3] * xz
        b[:, 8] = SH_C2[4] * (xx - yy)
    if degree >= 3:
        b[:, 9] = SH_C3[0] * y * (3.0 * xx - yy)
        b[:, 10] = SH_C3[1] * xy * z
        b[:, 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
        b[:, 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        b[:, 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
        b[:, 14] = SH_C3[5] * z * (xx - yy)
        b[:, 15] = SH_C3[6] * x * (xx - 3.0 * yy)
    return b


def sh_basis_grad(dirs, degree):
    """d basis / d dir for unit directions: (N, (degree+1)^2, 3)."""
    dirs = np.asarray(dirs, dtype=np.float64)
    n = len(dirs)
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    zero = np.zeros(n)
    g = np.zeros((n, num_coeffs(degree), 3))
    if degree >= 1:
        g[:, 1, 1] = -SH_C1
        g[:, 2, 2] = SH_C1
        g[:, 3, 0] = -SH_C1
    if degree >= 2:
        g[:, 4] = SH_C2[0] * np.stack([y, x, zero], axis=1)
        g[:, 5] = SH_C2[1] * np.stack([zero, z, y], axis=1)
        g[:, 6] = SH_C2[2] * np.stack([-2 * x, -2 * y, 4 * z], axis=1)
        g[:, 7] = SH_C2[3] * np.stack([z, zero, x], axis=1)
        g[:, 8] = SH_C2[4] * np.stack([2 * x, -2 * y, zero], axis=1)
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        g[:, 9] = SH_C3[0] * np.stack([6 * x * y, 3 * xx - 3 * yy, zero], axis=1)
        g[:, 10] = SH_C3[1] * np.stack([y * z, x * z, x * y], axis=1)
        g[:, 11] = SH_C3[2] * np.stack([-2 * x * y, 4 * zz - xx - 3 * yy, 8 * y * z], axis=1)
        g[:, 12] = SH_C3[3] * np.stack([-6 * x * z, -6 * y * z, 6 * zz - 3 * xx - 3 * yy], axis=1)
        g[:, 13] = SH_C3[4] * np.stack([4 * zz - 3 * xx - yy, -2 * x * y, 8 * x * z], axis=1)
        g[:, 14] = SH_C3[5] * np.stack([2 * x * z, -2 * y * z, xx - yy], axis=1)
        g[:, 15] = SH_C3[6] * np.stack([3 * xx - 3 * yy, -6 * x * y, zero], axis=1)
    return g


def view_directions(positions, cam_position):
    """Unit directions from the camera to each Gaussian center, plus norms."""
    vec = np.asarray(positions, dtype=np.float64) - np.asarray(cam_position, dtype=np.float64)
    norm = np.linalg.norm(vec, axis=1)
    norm_safe = np.where(norm > 1e-12, norm, 1.0)
    return vec / norm_safe[:, None], norm_safe


def eval_colors(sh_coeffs, positions, cam_position, degree):
    """View-dependent RGB per Gaussian, clamped at zero.

    Returns (colors (N,3), ctx) where ctx replays the clamp and direction
    in the backward pass.
    """
    dirs, norms = view_directions(positions, cam_position)
    k = num_coeffs(degree)
    basis = sh_basis(dirs, degree)
    raw = np.einsum("nck,nk->nc", sh_coeffs[:, :, :k], basis) + 0.5
    colors = np.maximum(raw, 0.0)
    ctx = (dirs, norms, basis, raw >= 0.0, degree)
    return colors, ctx


def eval_colors_backward(sh_coeffs, d_colors, ctx):
    """Returns (d_sh (N,3,16) zero-padded beyond the active degree, d_positions (N,3))."""
    dirs, norms, basis, active, degree = ctx
    k = num_coeffs(degree)
    d_raw = d_colors * active
    d_sh = np.zeros_like(sh_coeffs)
    d_sh[:, :, :k] = d_raw[:, :, None] * basis[:, None, :]
    d_basis = np.einsum("nck,nc->nk", sh_coeffs[:, :, :k], d_raw)
    grad = sh_basis_grad(dirs, degree)
    d_dirs = np.einsum("nk,nkd->nd", d_basis, grad)
    # dir = v/|v| with v = p - cam: project out the radial component.
    d_vec = (d_dirs - dirs * np.sum(d_dirs * dirs, axis=1, keepdims=True)) / norms[:, None]
    return d_sh, d_vec
