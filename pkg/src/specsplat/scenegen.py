"""Analytic ground truth: procedural environment maps and a ray-traced
sphere scene with exact normals, used to score the learned renderer.

The sphere is either a perfect mirror (colors come only from the
environment via the mirror law, the same law the deferred shader applies)
or lambertian (view-independent shading from a fixed directional light).
The background is a constant dark gray so the environment is observable
only through reflections.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Camera
from .io import save_dataset, load_dataset
from .shading import EnvironmentMap, sample_env, dirs_to_uv

BACKGROUND_GRAY = 0.1
DEFAULT_RES = 64
DEFAULT_TRAIN_VIEWS = 50
DEFAULT_TEST_VIEWS = 10
DEFAULT_RING_RADIUS = 4.0
LIGHT_DIR = np.array([0.3, -0.5, 0.8]) / np.linalg.norm([0.3, -0.5, 0.8])


@dataclass
class OracleScene:
    kind: str = "mirror"                   # "mirror" | "lambertian"
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    radius: float = 1.0
    albedo: np.ndarray = field(default_factory=lambda: np.array([0.7, 0.45, 0.3]))
    env: EnvironmentMap | None = None
    background: np.ndarray = field(default_factory=lambda: np.full(3, BACKGROUND_GRAY))
    ring_radius: float = DEFAULT_RING_RADIUS
    elevation_range: tuple = (-0.35, 0.75)  # radians above the equator

    def __post_init__(self):
        if self.kind not in ("mirror", "lambertian"):
            raise ValueError(f"unknown surface kind {self.kind!r}")
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.albedo = np.asarray(self.albedo, dtype=np.float64).reshape(3)
        if self.ring_radius <= self.radius:
            raise ValueError("camera ring must lie outside the sphere")


# ---------------------------------------------------------------------------
# Environment map generators
# ---------------------------------------------------------------------------

GRID_COLS = 8
GRID_ROWS = 4


def _texel_uv(h, w):
    u = (np.arange(w) + 0.5) / w
    v = (np.arange(h) + 0.5) / h
    return np.meshgrid(u, v)


def grid_cell_colors(seed):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.05, 0.95, size=(GRID_ROWS, GRID_COLS, 3))


def grid_env_value(dirs, cells):
    """Exact piecewise-constant grid value for unit directions."""
    u, v = dirs_to_uv(dirs)
    col = np.minimum((u * GRID_COLS).astype(np.int64), GRID_COLS - 1)
    row = np.minimum((v * GRID_ROWS).astype(np.int64), GRID_ROWS - 1)
    return cells[row, col]


def sinusoid_params(seed):
    rng = np.random.default_rng(seed)
    k = rng.integers(1, 4, size=3)    # azimuthal integer frequencies
    m = rng.integers(1, 4, size=3)    # polar integer frequencies
    phase = rng.uniform(0, 2 * np.pi, size=3)
    return k, m, phase


def sinusoid_value(u, v, params):
    k, m, phase = params
    u = np.asarray(u)[..., None]
    v = np.asarray(v)[..., None]
    return 0.5 + 0.4 * np.sin(2 * np.pi * k * u + phase) * np.sin(np.pi * m * v)


def sinusoid_mean_energy():
    """Closed form of the (u, v)-uniform integral of the squared generator.

    integral of (0.5 + 0.4 sin(2 pi k u + phi) sin(pi m v))^2 du dv
      = 0.25 + 0.16 * (1/2) * (1/2) for any integer k, m >= 1.
    """
    return 0.25 + 0.16 * 0.25


def gen_envmap(kind, height, width, seed=0):
    """Procedural equirectangular map; width must equal 2 * height."""
    if width != 2 * height:
        raise ValueError("environment maps use a 2:1 equirectangular layout")
    gu, gv = _texel_uv(height, width)
    if kind == "grid":
        cells = grid_cell_colors(seed)
        col = np.minimum((gu * GRID_COLS).astype(np.int64), GRID_COLS - 1)
        row = np.minimum((gv * GRID_ROWS).astype(np.int64), GRID_ROWS - 1)
        data = cells[row, col]
    elif kind == "sinusoid":
        data = sinusoid_value(gu, gv, sinusoid_params(seed))
    elif kind == "hdr-blobs":
        rng = np.random.default_rng(seed)
        n_blobs = 14
        centers = rng.normal(size=(n_blobs, 3))
        centers /= np.linalg.norm(centers, axis=1, keepdims=True)
        # Width window is load-bearing in both directions: lobes narrower
        # than ~0.15 rad alias into speckle at grazing angles that no smooth
        # radiance field can match, while an all-wide sky is so flat that a
        # volumetric haze fits the renders and nothing forces surfaces to
        # form.  Saturating amplitudes keep local contrast high.
        amps = rng.uniform(0.8, 1.8, size=n_blobs)
        widths = rng.uniform(0.15, 0.35, size=n_blobs)
        colors = rng.uniform(0.3, 1.0, size=(n_blobs, 3))
        phi = (gu - 0.5) * 2 * np.pi
        theta = gv * np.pi
        st = np.sin(theta)
        dirs = np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)
        data = np.full((height, width, 3), 0.05)
        for j in range(n_blobs):
            w = np.exp((dirs @ centers[j] - 1.0) / widths[j] ** 2)
            data += amps[j] * w[..., None] * colors[j]
    else:
        raise ValueError(f"unknown environment kind {kind!r}")
    return EnvironmentMap(data)


# ---------------------------------------------------------------------------
# Ray-traced oracle renders
# ---------------------------------------------------------------------------

def render_oracle(scene, cam):
    """Trace every pixel against the sphere.

    Returns (image (H,W,3), normals (H,W,3), mask (H,W) bool). Misses get
    the background color and a zero normal.
    """
    dirs = cam.ray_directions()
    origin = cam.position
    oc = origin - scene.center
    b = dirs @ oc
    c = float(oc @ oc) - scene.radius ** 2
    disc = b * b - c
    hit = disc > 0.0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t = -b - sq
    hit &= t > 0.0

    points = origin + dirs * t[..., None]
    normals = np.where(hit[..., None], (points - scene.center) / scene.radius, 0.0)

    image = np.broadcast_to(scene.background, dirs.shape).copy()
    if scene.kind == "mirror":
        view = -dirs
        vn = np.sum(view * normals, axis=-1, keepdims=True)
        refl = 2.0 * vn * normals - view
        # Normalize away rounding before the lookup; |refl| = 1 analytically.
        refl = refl / np.maximum(np.linalg.norm(refl, axis=-1, keepdims=True), 1e-12)
        vals, _ = sample_env(scene.env, refl)
        image[hit] = vals[hit]
    else:
        lambert = np.maximum(normals @ LIGHT_DIR, 0.0)
        shaded = scene.albedo * (0.25 + 0.75 * lambert[..., None])
        image[hit] = shaded[hit]
    return image, normals, hit


def reflection_coverage(scene, cams):
    """Boolean texel mask of scene.env covered by the cameras' mirror hits.

    A texel counts as covered when any hit pixel's reflected direction
    lands in its bilinear footprint; used to score recovered environments
    only where reflections actually sampled them.
    """
    h, w = scene.env.height, scene.env.width
    covered = np.zeros((h, w), dtype=bool)
    for cam in cams:
        dirs = cam.ray_directions()
        origin = cam.position
        oc = origin - scene.center
        b = dirs @ oc
        c = float(oc @ oc) - scene.radius ** 2
        disc = b * b - c
        hit = disc > 0.0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        t = -b - sq
        hit &= t > 0.0
        if not hit.any():
            continue
        points = origin + dirs * t[..., None]
        normals = (points - scene.center) / scene.radius
        view = -dirs
        vn = np.sum(view * normals, axis=-1, keepdims=True)
        refl = (2.0 * vn * normals - view)[hit]
        refl /= np.linalg.norm(refl, axis=-1, keepdims=True)
        u, v = dirs_to_uv(refl)
        x = u * w - 0.5
        y = v * h - 0.5
        j0 = np.floor(x).astype(np.int64)
        i0 = np.floor(y).astype(np.int64)
        for dj in (0, 1):
            for di in (0, 1):
                covered[np.clip(i0 + di, 0, h - 1), np.mod(j0 + dj, w)] = True
    return covered


# ---------------------------------------------------------------------------
# Dataset emission
# ---------------------------------------------------------------------------

def ring_cameras(scene, n_views, width, height, fov_x=0.8, phase=0.0):
    """Evenly spaced azimuths at cycling elevations, all aimed at the sphere."""
    cams = []
    el_lo, el_hi = scene.elevation_range
    for i in range(n_views):
        azim = phase + 2.0 * np.pi * i / n_views
        elev = el_lo + (el_hi - el_lo) * (0.5 + 0.5 * np.sin(2.4 * i))
        pos = scene.center + scene.ring_radius * np.array([
            np.cos(azim) * np.cos(elev),
            np.sin(azim) * np.cos(elev),
            np.sin(elev),
        ])
        cams.append(Camera.look_at(pos, scene.center, width, height, fov_x))
    return cams


def make_dataset(scene, n_train, n_test, out_path, res=DEFAULT_RES):
    """Render and write a complete train/test dataset; returns the loaded
    Dataset (cameras read back from the emitted transforms file, so a
    re-render of the loaded cameras reproduces the stored images exactly)."""
    if n_train < 1:
        raise ValueError("need at least one training view")
    train_cams = ring_cameras(scene, n_train, res, res)
    # Test ring sits halfway between train azimuths: interleaved coverage.
    test_cams = ring_cameras(scene, n_test, res, res,
                             phase=np.pi / max(n_train, 1)) if n_test else []

    frames = []
    for cam in train_cams:
        frames.append({"camera": cam, "split": "train"})
    for cam in test_cams:
        frames.append({"camera": cam, "split": "test"})
    for fr in frames:
        image, normals, mask = render_oracle(scene, fr["camera"])
        fr.update(image=image, normals=normals, mask=mask)
    save_dataset(out_path, frames, train_cams[0].camera_angle_x,
                 fl_x=train_cams[0].fx)
    return load_dataset(out_path)


def default_scene(kind, seed=0, env_height=32):
    if kind == "diffuse":  # CLI-facing alias
        kind = "lambertian"
    env = gen_envmap("hdr-blobs" if kind == "mirror" else "grid",
                     env_height, 2 * env_height, seed=seed)
    # Reflections are clamped to displayable range in the oracle images, so
    # keep the ground-truth env within [0, 1] for recoverability.
    data = np.clip(env.data, 0.0, 1.0)
    return OracleScene(kind=kind, env=EnvironmentMap(data))
