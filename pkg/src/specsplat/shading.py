"""Environment map, mirror reflection, and deferred shading.

The environment is an equirectangular latitude-longitude image sampled
bilinearly with horizontal wrap and vertical clamp. Texel centers sit at
((j + 0.5)/W, (i + 0.5)/H) in (u, v). Directions map via
u = atan2(y, x)/(2 pi) + 0.5 and v = acos(z)/pi, so v=0 is the +z pole.

Deferred shading consumes the alpha-blended G-buffer: premultiplied base
color, unnormalized blended normal, blended reflection strength, and
accumulated alpha. Per pixel

    shaded = (1 - R) * C + R * env(reflect(view, normal))

with the reflection term dropped where the blended normal is too short to
normalize. The background is composited afterwards with weight (1 - A).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NORMAL_EPS = 1e-6


@dataclass
class EnvironmentMap:
    """Equirectangular radiance map, (H, W, 3) float64."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValueError("environment map must be (H, W, 3)")

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    def copy(self):
        return EnvironmentMap(self.data.copy())


def dirs_to_uv(dirs):
    """Unit directions (..., 3) -> (u, v) in [0,1)x[0,1]."""
    dirs = np.asarray(dirs, dtype=np.float64)
    u = np.arctan2(dirs[..., 1], dirs[..., 0]) / (2.0 * np.pi) + 0.5
    v = np.arccos(np.clip(dirs[..., 2], -1.0, 1.0)) / np.pi
    return u, v


def uv_to_dirs(u, v):
    """Inverse of dirs_to_uv, for building maps from analytic functions."""
    phi = (np.asarray(u) - 0.5) * 2.0 * np.pi
    theta = np.asarray(v) * np.pi
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def _bilinear_setup(env, dirs):
    u, v = dirs_to_uv(dirs)
    h, w = env.height, env.width
    x = u * w - 0.5
    y = v * h - 0.5
    j0 = np.floor(x).astype(np.int64)
    i0 = np.floor(y).astype(np.int64)
    fx = x - j0
    fy = y - i0
    j0w = np.mod(j0, w)
    j1w = np.mod(j0 + 1, w)
    i0c = np.clip(i0, 0, h - 1)
    i1c = np.clip(i0 + 1, 0, h - 1)
    return fx, fy, i0c, i1c, j0w, j1w


def sample_env(env, dirs):
    """Bilinear radiance lookup for unit directions (..., 3) -> (..., 3).

    Returns (values, ctx); ctx replays the footprint in the backward pass.
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    fx, fy, i0, i1, j0, j1 = _bilinear_setup(env, dirs)
    e = env.data
    w00 = (1.0 - fx) * (1.0 - fy)
    w01 = fx * (1.0 - fy)
    w10 = (1.0 - fx) * fy
    w11 = fx * fy
    out = (
        w00[..., None] * e[i0, j0]
        + w01[..., None] * e[i0, j1]
        + w10[..., None] * e[i1, j0]
        + w11[..., None] * e[i1, j1]
    )
    ctx = (dirs, fx, fy, i0, i1, j0, j1)
    return out, ctx


def sample_env_backward(env, ctx, d_out):
    """Backward of sample_env.

    Returns (d_env (H,W,3), d_dirs (...,3)). The direction gradient flows
    through the interpolation weights and the (u, v) mapping; it is zeroed
    at the poles and on the optical axis where the mapping is singular.
    """
    dirs, fx, fy, i0, i1, j0, j1 = ctx
    e = env.data
    h, w = env.height, env.width
    d_out = np.asarray(d_out, dtype=np.float64)

    flat = lambda idx_i, idx_j: (idx_i * w + idx_j).ravel()
    d_env = np.zeros(h * w * 3)
    weights = [
        ((1.0 - fx) * (1.0 - fy), i0, j0),
        (fx * (1.0 - fy), i0, j1),
        ((1.0 - fx) * fy, i1, j0),
        (fx * fy, i1, j1),
    ]
    for wgt, ii, jj in weights:
        contrib = (wgt[..., None] * d_out).reshape(-1, 3)
        base = flat(ii, jj) * 3
        for c in range(3):
            d_env += np.bincount(base + c, weights=contrib[:, c], minlength=h * w * 3)
    d_env = d_env.reshape(h, w, 3)

    # d/dfx, d/dfy of the weighted sum.
    g00 = np.sum(d_out * e[i0, j0], axis=-1)
    g01 = np.sum(d_out * e[i0, j1], axis=-1)
    g10 = np.sum(d_out * e[i1, j0], axis=-1)
    g11 = np.sum(d_out * e[i1, j1], axis=-1)
    d_fx = (1.0 - fy) * (g01 - g00) + fy * (g11 - g10)
    d_fy = (1.0 - fx) * (g10 - g00) + fx * (g11 - g01)
    d_u = d_fx * w
    d_v = d_fy * h

    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    rho2 = x * x + y * y
    safe_rho = rho2 > 1e-12
    rho2s = np.where(safe_rho, rho2, 1.0)
    du_dx = np.where(safe_rho, -y / rho2s, 0.0) / (2.0 * np.pi)
    du_dy = np.where(safe_rho, x / rho2s, 0.0) / (2.0 * np.pi)
    s2 = 1.0 - z * z
    safe_pole = s2 > 1e-12
    dv_dz = np.where(safe_pole, -1.0 / (np.pi * np.sqrt(np.where(safe_pole, s2, 1.0))), 0.0)

    d_dirs = np.zeros_like(dirs)
    d_dirs[..., 0] = d_u * du_dx
    d_dirs[..., 1] = d_u * du_dy
    d_dirs[..., 2] = d_v * dv_dz
    return d_env, d_dirs


def reflect(view, normal_unit):
    """Mirror direction 2 (v . n) n - v for unit normals; v points at the eye."""
    vn = np.sum(view * normal_unit, axis=-1, keepdims=True)
    return 2.0 * vn * normal_unit - view


def reflect_backward(view, normal_unit, d_refl):
    """d_refl -> gradient w.r.t. the unit normal (view is constant per pixel)."""
    dn = np.sum(d_refl * normal_unit, axis=-1, keepdims=True)
    vn = np.sum(view * normal_unit, axis=-1, keepdims=True)
    return 2.0 * view * dn + 2.0 * vn * d_refl


def reflect_backward_view(normal_unit, d_refl):
    """d_refl -> gradient w.r.t. the view direction (unit normal held fixed)."""
    dn = np.sum(d_refl * normal_unit, axis=-1, keepdims=True)
    return 2.0 * normal_unit * dn - d_refl


@dataclass
class ShadeContext:
    view: np.ndarray
    normal_unit: np.ndarray
    normal_len: np.ndarray
    valid: np.ndarray
    refl_dirs: np.ndarray
    env_vals: np.ndarray
    env_ctx: tuple
    base: np.ndarray
    refl: np.ndarray
    view_len: np.ndarray | None = None  # set by the per-Gaussian route only


def shade_deferred(gbuffer, cam, env, background):
    """Compose the final image from a G-buffer.

    gbuffer: dict with "color" (H,W,3), "normal" (H,W,3), "reflect" (H,W),
    "alpha" (H,W). background: (3,) constant color. Returns (image, ctx).
    """
    base = gbuffer["color"]
    nrm = gbuffer["normal"]
    refl = gbuffer["reflect"]
    alpha = gbuffer["alpha"]

    view = -cam.ray_directions()
    nlen = np.linalg.norm(nrm, axis=-1)
    valid = nlen > NORMAL_EPS
    nlen_safe = np.where(valid, nlen, 1.0)
    n_unit = nrm / nlen_safe[..., None]
    refl_eff = np.where(valid, refl, 0.0)

    refl_dirs = reflect(view, n_unit)
    env_vals, env_ctx = sample_env(env, refl_dirs)

    shaded = (1.0 - refl_eff)[..., None] * base + refl_eff[..., None] * env_vals
    image = shaded + (1.0 - alpha)[..., None] * np.asarray(background, dtype=np.float64)
    ctx = ShadeContext(
        view=view, normal_unit=n_unit, normal_len=nlen_safe, valid=valid,
        refl_dirs=refl_dirs, env_vals=env_vals, env_ctx=env_ctx,
        base=base, refl=refl_eff,
    )
    return image, ctx


def shade_deferred_backward(ctx, env, background, d_image):
    """Backward of shade_deferred.

    Returns (d_gbuffer dict, d_env). Invalid-normal pixels route all
    gradient into the base color, matching the forward fallback.
    """
    d_image = np.asarray(d_image, dtype=np.float64)
    refl = ctx.refl
    d_base = (1.0 - refl)[..., None] * d_image
    d_refl = np.sum(d_image * (ctx.env_vals - ctx.base), axis=-1)
    d_refl = np.where(ctx.valid, d_refl, 0.0)
    d_env_vals = refl[..., None] * d_image

    d_env, d_refl_dirs = sample_env_backward(env, ctx.env_ctx, d_env_vals)
    d_n_unit = reflect_backward(ctx.view, ctx.normal_unit, d_refl_dirs)
    nu = ctx.normal_unit
    d_nrm = (d_n_unit - nu * np.sum(d_n_unit * nu, axis=-1, keepdims=True)) / ctx.normal_len[..., None]
    d_nrm = np.where(ctx.valid[..., None], d_nrm, 0.0)

    d_alpha = -np.sum(d_image * np.asarray(background, dtype=np.float64), axis=-1)
    return {"color": d_base, "normal": d_nrm, "reflect": d_refl, "alpha": d_alpha}, d_env


def shade_per_gaussian(colors, normals, refl, positions, cam_position, env):
    """Forward-shading variant: mix reflection into each Gaussian's color
    before blending, using its own normal and center-to-eye view direction.

    Returns (shaded_colors (N,3), ctx). Kept for comparison runs; gradients
    apply to the same parameters but reflections get alpha-blended across
    Gaussians instead of evaluated once per pixel.
    """
    vec = np.asarray(cam_position, dtype=np.float64) - positions
    vlen = np.linalg.norm(vec, axis=1, keepdims=True)
    vlen = np.where(vlen > 1e-12, vlen, 1.0)
    view = vec / vlen
    nlen = np.linalg.norm(normals, axis=1)
    valid = nlen > NORMAL_EPS
    nlen_safe = np.where(valid, nlen, 1.0)
    n_unit = normals / nlen_safe[:, None]
    refl_eff = np.where(valid, refl, 0.0)
    refl_dirs = reflect(view, n_unit)
    env_vals, env_ctx = sample_env(env, refl_dirs)
    shaded = (1.0 - refl_eff)[:, None] * colors + refl_eff[:, None] * env_vals
    ctx = ShadeContext(
        view=view, normal_unit=n_unit, normal_len=nlen_safe, valid=valid,
        refl_dirs=refl_dirs, env_vals=env_vals, env_ctx=env_ctx,
        base=colors, refl=refl_eff, view_len=vlen,
    )
    return shaded, ctx


def shade_per_gaussian_backward(ctx, env, d_shaded):
    """Backward of shade_per_gaussian.

    Returns (d_colors, d_normals, d_refl, d_env, d_positions); the position
    term flows through the center-to-eye view direction.
    """
    d_shaded = np.asarray(d_shaded, dtype=np.float64)
    refl = ctx.refl
    d_colors = (1.0 - refl)[:, None] * d_shaded
    d_refl = np.sum(d_shaded * (ctx.env_vals - ctx.base), axis=-1)
    d_refl = np.where(ctx.valid, d_refl, 0.0)
    d_env_vals = refl[:, None] * d_shaded
    d_env, d_refl_dirs = sample_env_backward(env, ctx.env_ctx, d_env_vals)
    d_n_unit = reflect_backward(ctx.view, ctx.normal_unit, d_refl_dirs)
    nu = ctx.normal_unit
    d_normals = (d_n_unit - nu * np.sum(d_n_unit * nu, axis=-1, keepdims=True)) / ctx.normal_len[:, None]
    d_normals = np.where(ctx.valid[:, None], d_normals, 0.0)
    d_view = reflect_backward_view(ctx.normal_unit, d_refl_dirs)
    v = ctx.view
    d_vec = (d_view - v * np.sum(d_view * v, axis=-1, keepdims=True)) / ctx.view_len
    d_positions = -d_vec  # view vector is (eye - center) before normalization
    return d_colors, d_normals, d_refl, d_env, d_positions
