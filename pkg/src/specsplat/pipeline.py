"""End-to-end differentiable rendering: parameters in, image out, exact
gradients back.

Two shading routes share the projection/blending machinery:

- "deferred": blend base color, normal, and reflection strength into a
  G-buffer, then evaluate one mirror lookup per pixel from the blended
  normal. Reflections stay sharp because the environment is queried after
  compositing.
- "forward": fold the mirror lookup into each Gaussian's color before
  blending. Kept as the comparison baseline; reflections from different
  normals average together and blur.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import sh as shlib
from . import shading
from .core import (
    GaussianCloud,
    conic_backward,
    gaussian_normals,
    gaussian_normals_backward,
    project_backward,
    project_gaussians,
)
from .rasterize import blend, blend_backward


@dataclass
class ParamGrads:
    """Gradients w.r.t. every optimizable parameter array."""

    positions: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    opacity_raw: np.ndarray
    sh_coeffs: np.ndarray
    reflection: np.ndarray
    env: np.ndarray
    screen: np.ndarray  # (N, 2) raw screen-space center gradient, for densification

    def param_items(self):
        return [
            ("positions", self.positions),
            ("rotations", self.rotations),
            ("log_scales", self.log_scales),
            ("opacity_raw", self.opacity_raw),
            ("sh_coeffs", self.sh_coeffs),
            ("reflection", self.reflection),
        ]


@dataclass
class RenderContext:
    mode: str
    sh_degree: int
    n_threads: int
    cloud: GaussianCloud
    cam: object
    env: object
    background: np.ndarray
    proj: object
    sh_ctx: tuple
    colors: np.ndarray
    normals: np.ndarray
    axis: np.ndarray
    sign: np.ndarray
    opacity: np.ndarray
    channels: np.ndarray
    blend_res: object
    shade_ctx: object
    gbuffer: dict | None


def render(cloud, cam, env, background=(0.0, 0.0, 0.0), mode="deferred",
           sh_degree=3, n_threads=1, want_ctx=False):
    """Render the cloud from ``cam`` against ``env``; float64 (H, W, 3).

    want_ctx=True also returns the context consumed by render_backward.
    """
    if mode not in ("deferred", "forward"):
        raise ValueError("mode must be 'deferred' or 'forward'")
    background = np.asarray(background, dtype=np.float64).reshape(3)
    proj = project_gaussians(cloud, cam)
    cam_pos = cam.position
    colors, sh_ctx = shlib.eval_colors(cloud.sh_coeffs, cloud.positions, cam_pos, sh_degree)
    normals, axis, sign = gaussian_normals(cloud, cam_pos)
    opacity = cloud.opacity

    if mode == "deferred":
        channels = np.concatenate([colors, normals, cloud.reflection[:, None]], axis=1)
        res = blend(proj, opacity, channels, cam.height, cam.width, n_threads=n_threads)
        gbuffer = {
            "color": res.image[:, :, 0:3],
            "normal": res.image[:, :, 3:6],
            "reflect": res.image[:, :, 6],
            "alpha": res.alpha,
        }
        image, shade_ctx = shading.shade_deferred(gbuffer, cam, env, background)
    else:
        shaded, shade_ctx = shading.shade_per_gaussian(
            colors, normals, cloud.reflection, cloud.positions, cam_pos, env)
        channels = shaded
        res = blend(proj, opacity, channels, cam.height, cam.width, n_threads=n_threads)
        gbuffer = None
        image = res.image + (1.0 - res.alpha)[:, :, None] * background

    if not want_ctx:
        return image
    ctx = RenderContext(
        mode=mode, sh_degree=sh_degree, n_threads=n_threads,
        cloud=cloud, cam=cam, env=env, background=background,
        proj=proj, sh_ctx=sh_ctx, colors=colors, normals=normals,
        axis=axis, sign=sign, opacity=opacity, channels=channels,
        blend_res=res, shade_ctx=shade_ctx, gbuffer=gbuffer,
    )
    return image, ctx


def render_backward(ctx, d_image):
    """Propagate dL/dimage back to all parameters. Returns ParamGrads."""
    cloud = ctx.cloud
    cam = ctx.cam
    d_image = np.asarray(d_image, dtype=np.float64)

    if ctx.mode == "deferred":
        d_gbuf, d_env = shading.shade_deferred_backward(
            ctx.shade_ctx, ctx.env, ctx.background, d_image)
        d_chan_img = np.concatenate(
            [d_gbuf["color"], d_gbuf["normal"], d_gbuf["reflect"][:, :, None]], axis=2)
        d_alpha_img = d_gbuf["alpha"]
        d_channels, d_mean2d, d_conic, d_opacity = blend_backward(
            ctx.blend_res, ctx.proj, ctx.opacity, ctx.channels,
            d_chan_img, d_alpha_img, n_threads=ctx.n_threads)
        d_colors = d_channels[:, 0:3]
        d_normals = d_channels[:, 3:6]
        d_refl = d_channels[:, 6]
    else:
        d_alpha_img = -np.sum(d_image * ctx.background, axis=2)
        d_channels, d_mean2d, d_conic, d_opacity = blend_backward(
            ctx.blend_res, ctx.proj, ctx.opacity, ctx.channels,
            d_image, d_alpha_img, n_threads=ctx.n_threads)
        d_colors, d_normals, d_refl, d_env, d_pos_view = shading.shade_per_gaussian_backward(
            ctx.shade_ctx, ctx.env, d_channels)

    d_opacity_raw = d_opacity * ctx.opacity * (1.0 - ctx.opacity)
    d_rot_n = gaussian_normals_backward(cloud, ctx.axis, ctx.sign, d_normals)
    d_sh, d_pos_sh = shlib.eval_colors_backward(cloud.sh_coeffs, d_colors, ctx.sh_ctx)
    d_cov2d = conic_backward(ctx.proj.cov2d, d_conic)
    d_pos_p, d_rot_p, d_log_scales = project_backward(
        cloud, cam, ctx.proj, d_mean2d, d_cov2d)
    if ctx.mode == "forward":
        d_pos_sh = d_pos_sh + d_pos_view

    return ParamGrads(
        positions=d_pos_p + d_pos_sh,
        rotations=d_rot_p + d_rot_n,
        log_scales=d_log_scales,
        opacity_raw=d_opacity_raw,
        sh_coeffs=d_sh,
        reflection=d_refl,
        env=d_env,
        screen=d_mean2d.copy(),
    )
