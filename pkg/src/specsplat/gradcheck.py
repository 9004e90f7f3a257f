"""Finite-difference validation of the analytic gradient chain.

Central differences (h = 1e-3, float64) of the full render + image loss
against the hand-written backward pass, for every parameter class:
position, rotation, scale, opacity, SH, reflection strength, and
environment texels.

The render is piecewise smooth: contributions switch on and off at the
alpha floor, the transmittance stop, and bounding-box edges, and the
normal axis flips sign at grazing view. Finite differences are only
meaningful where no such switch sits inside the +-h bracket, so the scene
construction (see build_scene) conditions the randomness to keep every
checked parameter inside a smooth piece. Pass --seed to probe other draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import GaussianCloud, Camera, logit
from .loss import combined_loss
from .pipeline import render, render_backward
from .shading import EnvironmentMap

DEFAULT_SEED = 0
FD_STEP = 1e-3
REL_TOL = 1e-3
ABS_TOL = 1e-6

PARAM_CLASSES = ("positions", "rotations", "log_scales", "opacity_raw",
                 "sh_coeffs", "reflection", "env")


def _affine_env(rng, height):
    """Texture affine in v and constant in u. Interpolating affine data is
    exact, so the lookup is kink-free away from the polar clamp rows; a
    generic texture would put a C1 break at every texel boundary, each of
    which poisons any fd bracket it lands in. The texel-weight chain is
    still fully exercised (and checked against scattered textures in the
    unit tests)."""
    width = 2 * height
    v = (np.arange(height) + 0.5) / height
    base = rng.uniform(0.15, 0.35, 3)
    gain = rng.uniform(0.5, 0.8, 3)
    data = np.broadcast_to(
        (base + gain * v[:, None])[:, None, :], (height, width, 3)).copy()
    return EnvironmentMap(data)


def build_scene(seed=DEFAULT_SEED, n_gaussians=8, res=24, env_height=16,
                mode="deferred"):
    """Random cloud in front of a fixed camera, plus a target image.

    Central differencing is only valid where the renderer is smooth, so the
    randomness is conditioned to keep every parameter a safe multiple of the
    step away from the model's discrete switches: depths are staggered (+-h
    cannot reorder the blend), footprints are wide enough that the alpha
    cutoff contour lies outside the image, opacities are low enough that
    transmittance never reaches the early-stop threshold and stay clear of
    the saturation clamp, the shortest axis is well separated from the other
    two (stable normal axis) and roughly faces the camera (stable flip sign),
    and the target sits at a bounded offset from the rendered image so the
    absolute-error term is locally linear.
    """
    rng = np.random.default_rng(seed)
    n = n_gaussians
    depth_row = -0.38 + 0.095 * np.arange(n)
    xs = rng.uniform(-0.25, 0.25, n)
    zs = rng.uniform(-0.25, 0.25, n)
    positions = np.stack([xs, depth_row, zs], axis=1)

    # Near-identity orientations: local y (the short axis) keeps facing the
    # camera, which sits on the -y side.
    quats = np.concatenate([np.ones((n, 1)), rng.uniform(-0.09, 0.09, (n, 3))], axis=1)
    short = rng.uniform(0.25, 0.40, n)
    long_a = rng.uniform(0.90, 1.40, n)
    long_b = rng.uniform(0.90, 1.40, n)
    log_scales = np.log(np.stack([long_a, short, long_b], axis=1))

    cloud = GaussianCloud(
        positions=positions,
        rotations=quats,
        log_scales=log_scales,
        opacity_raw=logit(rng.uniform(0.30, 0.55, n)),
        sh_coeffs=rng.normal(0.0, 0.12, (n, 3, 16)),
        reflection=rng.uniform(0.15, 0.85, n),
    )
    cloud.sh_coeffs[:, :, 0] += rng.uniform(0.4, 1.2, (n, 3))
    env = _affine_env(rng, env_height)
    cam = Camera.look_at(position=(0.0, -2.6, 0.45), target=(0.0, 0.0, 0.0),
                         width=res, height=res, fov_x=0.85)
    background = np.array([0.25, 0.3, 0.35])

    base = render(cloud, cam, env, background=background, mode=mode, sh_degree=3)
    offset = rng.uniform(0.08, 0.30, base.shape) * rng.choice([-1.0, 1.0], base.shape)
    target = base + offset
    return cloud, env, cam, background, target


@dataclass
class ClassResult:
    name: str
    n_checked: int
    worst_rel: float
    worst_abs: float
    passed: bool


def _loss_value(cloud, env, cam, background, target, mode, loss_lambda):
    image = render(cloud, cam, env, background=background, mode=mode, sh_degree=3)
    return combined_loss(image, target, loss_lambda).total


def run_gradcheck(seed=DEFAULT_SEED, n_gaussians=8, res=24, env_height=16,
                  mode="deferred", loss_lambda=0.2, h=FD_STEP,
                  max_env_texels=None, report_fn=None):
    """Check every parameter class; returns (all_passed, [ClassResult])."""
    cloud, env, cam, background, target = build_scene(
        seed, n_gaussians=n_gaussians, res=res, env_height=env_height, mode=mode)

    image, ctx = render(cloud, cam, env, background=background, mode=mode,
                        sh_degree=3, want_ctx=True)
    analytic = render_backward(ctx, combined_loss(image, target, loss_lambda).grad)
    grads = {name: getattr(analytic, name) for name in PARAM_CLASSES}

    arrays = {name: getattr(cloud, name) for name in PARAM_CLASSES if name != "env"}
    arrays["env"] = env.data

    results = []
    for name in PARAM_CLASSES:
        arr = arrays[name]
        flat = arr.reshape(-1)
        ana = grads[name].reshape(-1)
        idx = np.arange(flat.size)
        if name == "env" and max_env_texels and flat.size > max_env_texels:
            stride = flat.size // max_env_texels
            idx = idx[::stride]
        worst_rel = 0.0
        worst_abs = 0.0
        for i in idx:
            keep = flat[i]
            flat[i] = keep + h
            lp = _loss_value(cloud, env, cam, background, target, mode, loss_lambda)
            flat[i] = keep - h
            lm = _loss_value(cloud, env, cam, background, target, mode, loss_lambda)
            flat[i] = keep
            numeric = (lp - lm) / (2.0 * h)
            diff = abs(numeric - ana[i])
            rel = diff / max(abs(numeric), abs(ana[i]), 1e-12)
            if diff > ABS_TOL and rel > worst_rel:
                worst_rel = rel
            worst_abs = max(worst_abs, diff)
        passed = worst_rel <= REL_TOL
        results.append(ClassResult(name=name, n_checked=len(idx),
                                   worst_rel=worst_rel, worst_abs=worst_abs,
                                   passed=passed))
        if report_fn:
            status = "pass" if passed else "FAIL"
            report_fn(f"{status}  {name:12s} checked {len(idx):5d}  "
                      f"worst_rel {worst_rel:.3e}  worst_abs {worst_abs:.3e}")
    return all(r.passed for r in results), results
