"""Staged training: diffuse bootstrap, reflection stage with normal
propagation and color sabotage, specular termination, then high-order SH.

Stage layout over total_iters:

1. Bootstrap (iterations < bootstrap_iters): reflection strengths stay
   at zero, the environment map is frozen, SH is restricted to degree 0.
   Plain splatting optimization with densification.
2. Reflection stage: reflection strengths and the environment map join
   the optimization. Every propagation_period iterations all opacities
   are raised to at least opacity_floor and reflection strengths to at
   least r_floor, the two longest axes of strongly reflective Gaussians
   (r > reflective_threshold) are stretched by axis_scale_factor so their
   normals claim neighboring surface, and the base colors of
   not-yet-reflective Gaussians get multiplicative +-sabotage_amplitude
   noise so reflections cannot hide in base color. The usual periodic
   opacity clamp runs on an interleaved schedule that provably never
   collides with propagation.
3. Once the count of reflective Gaussians stops improving for
   termination_patience_iters, propagation and sabotage switch off for
   good and SH degrees 1..3 unlock.

Out-of-band parameter edits (raises, clamps, stretches, sabotage) write
the raw parameter and zero the touched rows' optimizer moments.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .core import GaussianCloud, logit, quat_to_rotmat, sigmoid
from .loss import combined_loss
from .metrics import psnr
from .optim import Adam
from .pipeline import render, render_backward
from .rasterize import max_blend_weights
from .shading import EnvironmentMap

PARAM_GROUPS = ("positions", "rotations", "log_scales", "opacity_raw",
                "sh_coeffs", "reflection")
LOG_SCALE_MIN = -12.0
LOG_SCALE_MAX = 6.0


@dataclass
class TrainConfig:
    bootstrap_iters: int = 3000
    total_iters: int = 30000
    propagation_period: int = 1000
    clamp_period: int = 3000
    # Interleave phase: clamp events fire at propagation_offset + k*clamp_period,
    # which keeps them off the propagation grid.
    propagation_offset: int = 500
    reflective_threshold: float = 0.1
    opacity_floor: float = 0.9
    r_floor: float = 0.001
    axis_scale_factor: float = 1.5
    sabotage_amplitude: float = 0.10
    opacity_clamp_value: float = 0.01
    termination_patience_iters: int = 2000

    lr_position: float = 1.6e-4
    lr_position_final_mult: float = 0.01
    lr_rotation: float = 1e-3
    lr_scale: float = 5e-3
    lr_opacity: float = 5e-2
    lr_sh: float = 2.5e-3
    lr_reflection: float = 1e-2
    lr_env: float = 1e-2

    densify_start: int = 500
    densify_end: int = 15000
    densify_interval: int = 100
    densify_grad_threshold: float = 6e-6  # pixel-space mean screen gradient
    densify_percent: float = 0.01
    prune_opacity: float = 0.005
    # Gaussians whose best single-pixel blend weight stayed below this over a
    # whole densify window are dead mass buried behind opaque surfaces; on
    # highly reflective objects that mass otherwise survives as a fake
    # "virtual image" inside the object and soaks up the view-dependent
    # signal the reflection channel needs. 0 disables the rule.
    prune_min_weight: float = 0.01
    max_gaussians: int = 60000

    loss_lambda: float = 0.2
    deferred_mode: bool = True
    n_init: int = 2000
    env_height: int = 32
    sh_degree_max: int = 3
    background: tuple = (0.1, 0.1, 0.1)

    domain_center: tuple | None = None
    domain_radius: float | None = None

    # Ablation switches; the defaults are the full method.
    enable_propagation: bool = True
    enable_sabotage: bool = True
    enable_reflection: bool = True

    def __post_init__(self):
        for name in ("reflective_threshold", "opacity_floor", "r_floor",
                     "sabotage_amplitude", "opacity_clamp_value"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if not 0.0 <= self.loss_lambda <= 1.0:
            raise ValueError("loss_lambda outside [0, 1]")
        collisions = [i for i in range(self.total_iters + 1)
                      if self.is_propagation_iter(i) and self.is_clamp_iter(i)]
        if collisions:
            raise ValueError(
                f"propagation and clamp schedules collide at iterations {collisions[:5]}")

    def is_propagation_iter(self, it):
        return (self.enable_propagation and self.enable_reflection
                and it >= self.bootstrap_iters
                and it % self.propagation_period == 0)

    def is_clamp_iter(self, it):
        if it < self.propagation_offset or it > self.densify_end:
            return False
        return (it - self.propagation_offset) % self.clamp_period == 0

    def position_lr_scale(self, it):
        t = min(max(it / max(self.total_iters, 1), 0.0), 1.0)
        return self.lr_position_final_mult ** t

    def config_hash(self):
        blob = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d):
        kwargs = {}
        valid = {f.name: f for f in fields(cls)}
        for key, val in d.items():
            if key not in valid:
                raise ValueError(f"unknown config key: {key}")
            kwargs[key] = val
        return cls(**kwargs)


@dataclass
class TrainState:
    iteration: int = 0
    best_reflective_count: int = 0
    best_count_iteration: int = 0
    terminated: bool = False
    sh_unlocked: bool = False
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    def rng_state_json(self):
        return json.dumps(self.rng.bit_generator.state)

    def load_rng_state_json(self, blob):
        self.rng.bit_generator.state = json.loads(blob)


def init_cloud(dataset, cfg, rng):
    """Seed a fresh cloud: uniform positions in a ball around the scene
    focus, gray color, low opacity, isotropic scale from mean spacing."""
    cam_positions = np.array([cam.position for cam, *_ in dataset.entries])
    focus = np.array(cfg.domain_center) if cfg.domain_center is not None \
        else cam_positions.mean(axis=0)
    if cfg.domain_radius is not None:
        radius = 1.15 * cfg.domain_radius
    else:
        radius = 0.5 * float(np.min(np.linalg.norm(cam_positions - focus, axis=1)))

    n = cfg.n_init
    u = rng.random(n)
    pts = rng.normal(size=(n, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    positions = focus + pts * (radius * np.cbrt(u))[:, None]

    qs = rng.normal(size=(n, 4))
    qs /= np.linalg.norm(qs, axis=1, keepdims=True)
    spacing = 1.6 * radius / np.cbrt(n)
    cloud = GaussianCloud(
        positions=positions,
        rotations=qs,
        log_scales=np.full((n, 3), np.log(spacing)),
        opacity_raw=np.full(n, logit(0.1)),
        sh_coeffs=np.zeros((n, 3, 16)),
        reflection=np.zeros(n),
        domain_center=None if cfg.domain_center is None else np.array(cfg.domain_center),
        domain_radius=cfg.domain_radius,
    )
    return cloud


def scene_extent(dataset):
    cam_positions = np.array([cam.position for cam, *_ in dataset.entries])
    centroid = cam_positions.mean(axis=0)
    return float(np.max(np.linalg.norm(cam_positions - centroid, axis=1)))


def checkpoint_state_arrays(state, optimizer):
    """Everything beyond cloud/env/config needed to reproduce the run state,
    as arrays for the checkpoint container."""
    out = dict(optimizer.state_arrays())
    out["iteration"] = np.array(state.iteration, dtype=np.int64)
    out["best_reflective_count"] = np.array(state.best_reflective_count, dtype=np.int64)
    out["best_count_iteration"] = np.array(state.best_count_iteration, dtype=np.int64)
    out["terminated"] = np.array(int(state.terminated), dtype=np.int64)
    out["sh_unlocked"] = np.array(int(state.sh_unlocked), dtype=np.int64)
    out["rng_state"] = np.bytes_(state.rng_state_json())
    return out


# ---------------------------------------------------------------------------
# Schedule operations
# ---------------------------------------------------------------------------

def normal_propagation_step(cloud, cfg, optimizer=None):
    """Raise every opacity to >= opacity_floor and every in-domain reflection
    to >= r_floor; stretch the two longest axes of reflective Gaussians."""
    opacity = cloud.opacity
    raise_rows = opacity < cfg.opacity_floor
    if raise_rows.any():
        cloud.opacity_raw[raise_rows] = logit(cfg.opacity_floor)
        if optimizer is not None:
            optimizer.zero_rows("opacity_raw", raise_rows)

    floor_rows = (cloud.reflection < cfg.r_floor) & cloud.inside_domain()
    if floor_rows.any():
        cloud.reflection[floor_rows] = cfg.r_floor
        if optimizer is not None:
            optimizer.zero_rows("reflection", floor_rows)

    reflective = cloud.reflection > cfg.reflective_threshold
    if reflective.any():
        ls = cloud.log_scales[reflective]
        order = np.argsort(ls, axis=1)  # ascending; stretch the top two
        grow = np.zeros_like(ls)
        np.put_along_axis(grow, order[:, 1:], np.log(cfg.axis_scale_factor), axis=1)
        cloud.log_scales[reflective] = ls + grow
        if optimizer is not None:
            optimizer.zero_rows("log_scales", reflective)
    return cloud


def color_sabotage(cloud, cfg, rng):
    """Multiplicative per-channel uniform noise on the degree-0 color of
    not-yet-reflective Gaussians."""
    rows = cloud.reflection <= cfg.reflective_threshold
    if rows.any():
        amp = cfg.sabotage_amplitude
        factors = rng.uniform(1.0 - amp, 1.0 + amp, size=(int(rows.sum()), 3))
        cloud.sh_coeffs[rows, :, 0] *= factors
    return cloud


def opacity_clamp_step(cloud, cfg, optimizer=None):
    """Clamp every opacity to <= opacity_clamp_value (floater cleanup)."""
    rows = cloud.opacity > cfg.opacity_clamp_value
    if rows.any():
        cloud.opacity_raw[rows] = logit(cfg.opacity_clamp_value)
        if optimizer is not None:
            optimizer.zero_rows("opacity_raw", rows)
    return cloud


def reflective_count(cloud, cfg):
    return int(np.sum(cloud.reflection > cfg.reflective_threshold))


def specular_termination_check(state, cfg):
    """True once the reflective count has not beaten its best for the
    configured patience window."""
    return (state.iteration - state.best_count_iteration
            >= cfg.termination_patience_iters)


def enable_higher_sh(cloud, state):
    if not state.terminated:
        raise RuntimeError("higher SH requested before specular termination")
    state.sh_unlocked = True
    return cloud


def densify_and_prune(cloud, optimizer, cfg, grad_acc, grad_count, extent, rng,
                      weight_peak=None):
    """Adaptive density control: clone small / split large high-gradient
    Gaussians, prune transparent and buried ones. Returns the updated cloud.

    weight_peak: per-Gaussian max blend weight since the last call; rows that
    were projected (grad_count > 0) but never exceeded prune_min_weight get
    pruned. None skips the rule."""
    n = len(cloud)
    avg = np.zeros(n)
    seen = grad_count > 0
    avg[seen] = grad_acc[seen] / grad_count[seen]
    high = avg > cfg.densify_grad_threshold
    size_limit = cfg.densify_percent * extent
    max_scale = cloud.scales.max(axis=1)
    room = cfg.max_gaussians - n

    clone = high & (max_scale <= size_limit)
    split = high & (max_scale > size_limit)
    if room <= 0:
        clone[:] = False
        split[:] = False
    elif int(clone.sum()) + int(split.sum()) > room:
        # Keep the strongest gradients when butting against the cap.
        budget_order = np.argsort(-avg)
        allowed = np.zeros(n, dtype=bool)
        allowed[budget_order[:room]] = True
        clone &= allowed
        split &= allowed

    pieces = [cloud]
    if clone.any():
        pieces.append(cloud.select(clone))
    if split.any():
        # Each oversized Gaussian becomes two samples drawn from itself,
        # shrunk by 1.6; the source row is dropped below.
        for _ in range(2):
            src = cloud.select(split)
            rot = quat_to_rotmat(src.rotations)
            samples = rng.normal(size=(len(src), 3)) * src.scales
            src.positions = src.positions + np.einsum("nij,nj->ni", rot, samples)
            src.log_scales = src.log_scales - np.log(1.6)
            pieces.append(src)

    if len(pieces) > 1:
        merged = GaussianCloud(
            positions=np.concatenate([p.positions for p in pieces]),
            rotations=np.concatenate([p.rotations for p in pieces]),
            log_scales=np.concatenate([p.log_scales for p in pieces]),
            opacity_raw=np.concatenate([p.opacity_raw for p in pieces]),
            sh_coeffs=np.concatenate([p.sh_coeffs for p in pieces]),
            reflection=np.concatenate([p.reflection for p in pieces]),
            domain_center=cloud.domain_center,
            domain_radius=cloud.domain_radius,
        )
        optimizer.append_zeros(len(merged) - n)
        cloud = merged

    keep = cloud.opacity >= cfg.prune_opacity
    keep[:n] &= ~split
    if weight_peak is not None and cfg.prune_min_weight > 0.0:
        buried = (weight_peak < cfg.prune_min_weight) & (grad_count > 0)
        keep[:n] &= ~buried  # fresh clones/children have no history yet
    if not keep.all():
        cloud = cloud.select(keep)
        optimizer.gather(keep)
    return cloud


# ---------------------------------------------------------------------------
# Main loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    cloud: GaussianCloud
    env: EnvironmentMap
    state: TrainState
    config: TrainConfig
    history: dict
    optimizer: Adam


def _check_finite(grads, it):
    for name, arr in [("positions", grads.positions), ("rotations", grads.rotations),
                      ("log_scales", grads.log_scales), ("opacity_raw", grads.opacity_raw),
                      ("sh_coeffs", grads.sh_coeffs), ("reflection", grads.reflection),
                      ("env", grads.env)]:
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(
                f"non-finite gradient in parameter group '{name}' at iteration {it}")


def train(dataset, cfg, seed=0, n_threads=1, log_fn=None, log_interval=200,
          checkpoint_fn=None, checkpoint_interval=0):
    """Run the full schedule on a loaded dataset; returns a TrainResult.

    checkpoint_fn(tag, cloud, env, state, optimizer), when given, is called
    every checkpoint_interval iterations and once at the end.
    """
    rng = np.random.default_rng(seed)
    state = TrainState(rng=rng)
    state.best_count_iteration = cfg.bootstrap_iters
    cloud = init_cloud(dataset, cfg, rng)
    env = EnvironmentMap(np.full((cfg.env_height, 2 * cfg.env_height, 3), 0.5))
    extent = scene_extent(dataset)

    lrs = {
        "positions": cfg.lr_position * extent,
        "rotations": cfg.lr_rotation,
        "log_scales": cfg.lr_scale,
        "opacity_raw": cfg.lr_opacity,
        "sh_coeffs": cfg.lr_sh,
        "reflection": cfg.lr_reflection,
        "env": cfg.lr_env,
    }
    optimizer = Adam(lrs, row_groups=PARAM_GROUPS)
    for name in PARAM_GROUPS:
        optimizer.register(name, getattr(cloud, name).shape)
    optimizer.register("env", env.data.shape)

    train_entries = [e for e in dataset.entries]
    grad_acc = np.zeros(len(cloud))
    grad_count = np.zeros(len(cloud), dtype=np.int64)
    weight_peak = np.zeros(len(cloud))
    view_order = []
    history = {"iter": [], "loss": [], "l1": [], "dssim": [], "n_gaussians": [],
               "n_reflective": [], "psnr_train": [],
               "reflective_trace": np.zeros(cfg.total_iters, dtype=np.int64)}

    for it in range(cfg.total_iters):
        state.iteration = it
        if not view_order:
            view_order = list(rng.permutation(len(train_entries)))
        cam, target = train_entries[view_order.pop()][:2]

        in_bootstrap = it < cfg.bootstrap_iters
        sh_degree = cfg.sh_degree_max if state.sh_unlocked else 0
        mode = "deferred" if cfg.deferred_mode else "forward"

        image, ctx = render(cloud, cam, env, background=cfg.background,
                            mode=mode, sh_degree=sh_degree,
                            n_threads=n_threads, want_ctx=True)
        report = combined_loss(image, target, cfg.loss_lambda)
        grads = render_backward(ctx, report.grad)
        _check_finite(grads, it)

        reflection_live = cfg.enable_reflection and not in_bootstrap
        scale = {"positions": cfg.position_lr_scale(it)}
        if not reflection_live:
            scale["reflection"] = 0.0
            scale["env"] = 0.0
        params = {name: getattr(cloud, name) for name in PARAM_GROUPS}
        params["env"] = env.data
        grad_map = {name: getattr(grads, name) for name in PARAM_GROUPS}
        grad_map["env"] = grads.env
        optimizer.step(params, grad_map, lr_scale=scale)

        # Post-step projections back onto the valid set.
        cloud.normalize_rotations()
        np.clip(cloud.reflection, 0.0, 1.0, out=cloud.reflection)
        np.clip(cloud.log_scales, LOG_SCALE_MIN, LOG_SCALE_MAX, out=cloud.log_scales)
        np.clip(env.data, 0.0, None, out=env.data)
        if cloud.domain_center is not None:
            cloud.reflection[~cloud.inside_domain()] = 0.0

        # Densification statistics: mean screen-space gradient magnitude.
        seen = ctx.proj.visible
        grad_acc[seen] += np.linalg.norm(grads.screen[seen], axis=1)
        grad_count[seen] += 1
        np.maximum(weight_peak, max_blend_weights(ctx.blend_res, len(cloud)),
                   out=weight_peak)

        n_reflective = reflective_count(cloud, cfg)
        history["reflective_trace"][it] = n_reflective
        if reflection_live and not state.terminated:
            if n_reflective > state.best_reflective_count:
                state.best_reflective_count = n_reflective
                state.best_count_iteration = it
            if specular_termination_check(state, cfg):
                state.terminated = True
                cloud = enable_higher_sh(cloud, state)
                if log_fn:
                    log_fn(f"# specular termination at iter {it}, "
                           f"best reflective count {state.best_reflective_count}; "
                           f"SH degrees 1-{cfg.sh_degree_max} unlocked")

        if (cfg.densify_start < it <= cfg.densify_end
                and it % cfg.densify_interval == 0):
            cloud = densify_and_prune(cloud, optimizer, cfg, grad_acc,
                                      grad_count, extent, rng,
                                      weight_peak=weight_peak)
            grad_acc = np.zeros(len(cloud))
            grad_count = np.zeros(len(cloud), dtype=np.int64)
            weight_peak = np.zeros(len(cloud))

        if cfg.is_clamp_iter(it):
            assert not cfg.is_propagation_iter(it), "schedule collision"
            opacity_clamp_step(cloud, cfg, optimizer)

        if cfg.is_propagation_iter(it) and not state.terminated:
            normal_propagation_step(cloud, cfg, optimizer)
            if cfg.enable_sabotage:
                color_sabotage(cloud, cfg, rng)

        if it % log_interval == 0 or it == cfg.total_iters - 1:
            train_psnr = psnr(image, target)
            history["iter"].append(it)
            history["loss"].append(report.total)
            history["l1"].append(report.l1)
            history["dssim"].append(report.dssim)
            history["n_gaussians"].append(len(cloud))
            history["n_reflective"].append(n_reflective)
            history["psnr_train"].append(train_psnr)
            if log_fn:
                log_fn(f"iter {it}, loss {report.total:.5f}, l1 {report.l1:.5f}, "
                       f"dssim {report.dssim:.5f}, n_gaussians {len(cloud)}, "
                       f"n_reflective {n_reflective}, psnr_train {train_psnr:.2f}")

        if (checkpoint_fn and checkpoint_interval
                and it > 0 and it % checkpoint_interval == 0):
            checkpoint_fn(f"iter{it:06d}", cloud, env, state, optimizer)

    state.iteration = cfg.total_iters
    if checkpoint_fn:
        checkpoint_fn("final", cloud, env, state, optimizer)
    return TrainResult(cloud=cloud, env=env, state=state, config=cfg,
                       history=history, optimizer=optimizer)
