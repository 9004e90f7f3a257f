"""Core scene types and per-Gaussian math.

Everything here is pure float64 numpy, vectorized over the Gaussian axis.
Each forward operation that participates in optimization has a matching
``*_backward`` computing exact analytic derivatives; these are validated
against central finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

# Number of SH coefficients per channel at the maximum supported degree.
SH_MAX_DEGREE = 3
SH_MAX_COEFFS = (SH_MAX_DEGREE + 1) ** 2

# Isotropic dilation added to every projected 2D covariance (px^2).
# Keeps sub-pixel splats from collapsing to degenerate ellipses.
COV2D_DILATION = 0.3

DEFAULT_ZNEAR = 0.2


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p / (1.0 - p))


@dataclass
class GaussianCloud:
    """Structure-of-arrays collection of anisotropic 3D Gaussians.

    positions:    (N, 3) world units
    rotations:    (N, 4) quaternions (w, x, y, z); renormalized after each
                  optimizer step, internally normalized before use
    log_scales:   (N, 3) log of per-axis standard deviations
    opacity_raw:  (N,) logit-space opacity, squashed by sigmoid
    sh_coeffs:    (N, 3, 16) per-channel SH coefficients up to degree 3
    reflection:   (N,) reflection strength in [0, 1], stored directly
    domain_center/domain_radius: optional spherical domain restricting
                  which Gaussians may become reflective
    """

    positions: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    opacity_raw: np.ndarray
    sh_coeffs: np.ndarray
    reflection: np.ndarray
    domain_center: np.ndarray | None = None
    domain_radius: float | None = None

    def __post_init__(self):
        n = len(self.positions)
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64).reshape(n, 3)
        self.rotations = np.ascontiguousarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.log_scales = np.ascontiguousarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.opacity_raw = np.ascontiguousarray(self.opacity_raw, dtype=np.float64).reshape(n)
        self.sh_coeffs = np.ascontiguousarray(self.sh_coeffs, dtype=np.float64).reshape(n, 3, SH_MAX_COEFFS)
        self.reflection = np.ascontiguousarray(self.reflection, dtype=np.float64).reshape(n)
        if self.domain_center is not None:
            self.domain_center = np.asarray(self.domain_center, dtype=np.float64).reshape(3)
            if not (self.domain_radius and self.domain_radius > 0):
                raise ValueError("domain_radius must be > 0 when a domain is set")

    def __len__(self):
        return len(self.positions)

    @property
    def opacity(self):
        return sigmoid(self.opacity_raw)

    @property
    def scales(self):
        return np.exp(self.log_scales)

    @classmethod
    def empty(cls, n):
        return cls(
            positions=np.zeros((n, 3)),
            rotations=np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (n, 1)),
            log_scales=np.zeros((n, 3)),
            opacity_raw=np.zeros(n),
            sh_coeffs=np.zeros((n, 3, SH_MAX_COEFFS)),
            reflection=np.zeros(n),
        )

    def copy(self):
        return GaussianCloud(
            positions=self.positions.copy(),
            rotations=self.rotations.copy(),
            log_scales=self.log_scales.copy(),
            opacity_raw=self.opacity_raw.copy(),
            sh_coeffs=self.sh_coeffs.copy(),
            reflection=self.reflection.copy(),
            domain_center=None if self.domain_center is None else self.domain_center.copy(),
            domain_radius=self.domain_radius,
        )

    def select(self, mask_or_idx):
        return replace(
            self,
            positions=self.positions[mask_or_idx],
            rotations=self.rotations[mask_or_idx],
            log_scales=self.log_scales[mask_or_idx],
            opacity_raw=self.opacity_raw[mask_or_idx],
            sh_coeffs=self.sh_coeffs[mask_or_idx],
            reflection=self.reflection[mask_or_idx],
        )

    def inside_domain(self):
        """Boolean mask of Gaussians inside the spherical domain (all True if unset)."""
        if self.domain_center is None:
            return np.ones(len(self), dtype=bool)
        d = np.linalg.norm(self.positions - self.domain_center, axis=1)
        return d <= self.domain_radius

    def normalize_rotations(self):
        self.rotations /= np.linalg.norm(self.rotations, axis=1, keepdims=True)


@dataclass
class Camera:
    """Pinhole camera with a rigid world-to-camera transform.

    Convention: camera x right, y down, z forward (looking along +z in
    camera space). ``rotation`` rows are the camera axes in world coords;
    ``position`` is the optical center in world coords (stored directly so
    cameras survive save/load round-trips bit-exactly).
    """

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        rtr = self.rotation @ self.rotation.T
        if not np.allclose(rtr, np.eye(3), atol=1e-6):
            raise ValueError("camera rotation is not orthonormal")

    @property
    def translation(self):
        return -self.rotation @ self.position

    @property
    def camera_angle_x(self):
        return 2.0 * np.arctan2(self.width / 2.0, self.fx)

    @classmethod
    def look_at(cls, position, target, width, height, fov_x, up=(0.0, 0.0, 1.0)):
        """Camera at ``position`` looking at ``target`` with world-up ``up``."""
        position = np.asarray(position, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - position
        forward /= np.linalg.norm(forward)
        up = np.asarray(up, dtype=np.float64)
        right = np.cross(forward, up)
        nr = np.linalg.norm(right)
        if nr < 1e-9:  # looking straight along up; pick an arbitrary right
            right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
            nr = np.linalg.norm(right)
        right /= nr
        down = np.cross(forward, right)
        rot = np.stack([right, down, forward])
        fx = (width / 2.0) / np.tan(fov_x / 2.0)
        return cls(
            width=width, height=height,
            fx=fx, fy=fx, cx=width / 2.0, cy=height / 2.0,
            rotation=rot, position=position,
        )

    def to_camera(self, points):
        """World points (N,3) -> camera-space points (N,3)."""
        return (points - self.position) @ self.rotation.T

    def ray_directions(self):
        """Unit world-space ray directions through every pixel center, (H, W, 3)."""
        xs = (np.arange(self.width) + 0.5 - self.cx) / self.fx
        ys = (np.arange(self.height) + 0.5 - self.cy) / self.fy
        gx, gy = np.meshgrid(xs, ys)
        dirs_cam = np.stack([gx, gy, np.ones_like(gx)], axis=-1)
        dirs = dirs_cam @ self.rotation  # = dirs_cam @ R == (R^T @ d)^T per pixel
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        return dirs


# ---------------------------------------------------------------------------
# Quaternions and rotation matrices
# ---------------------------------------------------------------------------

def quat_to_rotmat(q):
    """Unit-normalize quaternions (N,4) wxyz and convert to rotation matrices (N,3,3)."""
    q = np.asarray(q, dtype=np.float64)
    qn = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = qn[..., 0], qn[..., 1], qn[..., 2], qn[..., 3]
    rot = np.empty(q.shape[:-1] + (3, 3))
    rot[..., 0, 0] = 1 - 2 * (y * y + z * z)
    rot[..., 0, 1] = 2 * (x * y - w * z)
    rot[..., 0, 2] = 2 * (x * z + w * y)
    rot[..., 1, 0] = 2 * (x * y + w * z)
    rot[..., 1, 1] = 1 - 2 * (x * x + z * z)
    rot[..., 1, 2] = 2 * (y * z - w * x)
    rot[..., 2, 0] = 2 * (x * z - w * y)
    rot[..., 2, 1] = 2 * (y * z + w * x)
    rot[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return rot


def rotmat_backward(q, d_rot):
    """Chain dL/dR (N,3,3) back to the raw (unnormalized) quaternion (N,4)."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    qn = q / norm
    w, x, y, z = qn[..., 0], qn[..., 1], qn[..., 2], qn[..., 3]
    zero = np.zeros_like(w)

    def mat(rows):
        return 2.0 * np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)

    d_w = mat([[zero, -z, y], [z, zero, -x], [-y, x, zero]])
    d_x = mat([[zero, y, z], [y, -2 * x, -w], [z, w, -2 * x]])
    d_y = mat([[-2 * y, x, w], [x, zero, z], [-w, z, -2 * y]])
    d_z = mat([[-2 * z, -w, x], [w, -2 * z, y], [x, y, zero]])
    d_qn = np.stack(
        [np.sum(d_rot * m, axis=(-2, -1)) for m in (d_w, d_x, d_y, d_z)], axis=-1
    )
    # Through the normalization q -> q/|q|.
    proj = d_qn - qn * np.sum(d_qn * qn, axis=-1, keepdims=True)
    return proj / norm


# ---------------------------------------------------------------------------
# Per-Gaussian geometry
# ---------------------------------------------------------------------------

def covariance_3d(cloud):
    """World-space covariance R S S^T R^T per Gaussian, (N,3,3)."""
    rot = quat_to_rotmat(cloud.rotations)
    m = rot * cloud.scales[:, None, :]  # columns scaled: M = R diag(s)
    return m @ np.transpose(m, (0, 2, 1))


def gaussian_normals(cloud, cam_position):
    """Shortest-axis normals flipped toward the camera.

    Returns (normals (N,3), axis_index (N,), sign (N,)); axis/sign are the
    discrete choices replayed by the backward pass. Ties on the shortest
    axis break to the lowest axis index.
    """
    rot = quat_to_rotmat(cloud.rotations)
    axis = np.argmin(cloud.log_scales, axis=1)  # argmin of log == argmin of exp
    n = np.take_along_axis(rot, axis[:, None, None], axis=2)[:, :, 0]
    to_cam = np.asarray(cam_position, dtype=np.float64) - cloud.positions
    sign = np.where(np.sum(n * to_cam, axis=1) >= 0.0, 1.0, -1.0)
    return n * sign[:, None], axis, sign


def gaussian_normals_backward(cloud, axis, sign, d_normals):
    """dL/dnormal -> dL/drotation (the flip sign and axis choice are constants)."""
    d_rot = np.zeros((len(cloud), 3, 3))
    cols = d_normals * sign[:, None]
    np.put_along_axis(d_rot, axis[:, None, None], cols[:, :, None], axis=2)
    return rotmat_backward(cloud.rotations, d_rot)


@dataclass
class Projection:
    """Screen-space projection of a cloud, plus cached values for backward."""

    mean2d: np.ndarray       # (N, 2) pixels
    cov2d: np.ndarray        # (N, 2, 2)
    conic: np.ndarray        # (N, 3) packed inverse covariance (a, b, c)
    depth: np.ndarray        # (N,) camera-space z
    visible: np.ndarray      # (N,) bool; False = culled
    bbox: np.ndarray         # (N, 4) int32 pixel bounds x0, x1, y0, y1 (inclusive)
    t_cam: np.ndarray        # (N, 3) camera-space centers
    clamp_mask: np.ndarray   # (N, 2) 1.0 where tx/tz, ty/tz inside frustum limit


def project_gaussians(cloud, cam, znear=DEFAULT_ZNEAR):
    """EWA-style perspective projection of all Gaussians into screen space.

    cov2d = J W Sigma W^T J^T + COV2D_DILATION * I, with the standard
    frustum clamp on the off-axis Jacobian terms. Gaussians behind the
    near plane are marked culled, not errors. The bbox is the exact
    axis-aligned pixel range where alpha can reach 1/255 given the
    Gaussian's opacity (empty when opacity <= 1/255).
    """
    n = len(cloud)
    t = cam.to_camera(cloud.positions)
    tz = t[:, 2]
    in_front = tz > znear
    tz_safe = np.where(in_front, tz, 1.0)

    sigma = covariance_3d(cloud)
    limx = 1.3 * (cam.width / 2.0) / cam.fx
    limy = 1.3 * (cam.height / 2.0) / cam.fy
    rx = t[:, 0] / tz_safe
    ry = t[:, 1] / tz_safe
    rxc = np.clip(rx, -limx, limx)
    ryc = np.clip(ry, -limy, limy)
    clamp_mask = np.stack([np.abs(rx) < limx, np.abs(ry) < limy], axis=1).astype(np.float64)

    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = cam.fx / tz_safe
    jac[:, 0, 2] = -cam.fx * rxc / tz_safe
    jac[:, 1, 1] = cam.fy / tz_safe
    jac[:, 1, 2] = -cam.fy * ryc / tz_safe

    a_mat = jac @ cam.rotation
    cov2d = a_mat @ sigma @ np.transpose(a_mat, (0, 2, 1))
    cov2d[:, 0, 0] += COV2D_DILATION
    cov2d[:, 1, 1] += COV2D_DILATION

    mean2d = np.stack(
        [cam.fx * rx + cam.cx, cam.fy * ry + cam.cy], axis=1
    )

    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] ** 2
    invertible = np.isfinite(det) & (det > 1e-12)
    det_safe = np.where(invertible, det, 1.0)
    conic = np.stack(
        [cov2d[:, 1, 1] / det_safe, -cov2d[:, 0, 1] / det_safe, cov2d[:, 0, 0] / det_safe],
        axis=1,
    )

    # alpha = o * exp(-q/2) >= 1/255  <=>  q <= 2 ln(255 o)
    opacity = cloud.opacity
    qmax = 2.0 * np.log(np.maximum(255.0 * opacity, 1e-12))
    reach = qmax > 0
    hx = np.sqrt(np.maximum(qmax, 0.0) * np.maximum(cov2d[:, 0, 0], 0.0)) + 1e-9
    hy = np.sqrt(np.maximum(qmax, 0.0) * np.maximum(cov2d[:, 1, 1], 0.0)) + 1e-9

    x0 = np.maximum(np.ceil(mean2d[:, 0] - hx - 0.5), 0).astype(np.int32)
    x1 = np.minimum(np.floor(mean2d[:, 0] + hx - 0.5), cam.width - 1).astype(np.int32)
    y0 = np.maximum(np.ceil(mean2d[:, 1] - hy - 0.5), 0).astype(np.int32)
    y1 = np.minimum(np.floor(mean2d[:, 1] + hy - 0.5), cam.height - 1).astype(np.int32)
    on_screen = (x0 <= x1) & (y0 <= y1)

    visible = in_front & invertible & reach & on_screen
    bbox = np.stack([x0, x1, y0, y1], axis=1).astype(np.int32)
    return Projection(
        mean2d=mean2d, cov2d=cov2d, conic=conic, depth=tz,
        visible=visible, bbox=bbox, t_cam=t, clamp_mask=clamp_mask,
    )


def project_backward(cloud, cam, proj, d_mean2d, d_cov2d):
    """Backward of project_gaussians.

    d_mean2d: (N, 2); d_cov2d: (N, 2, 2) symmetric upstream.
    Returns (d_positions (N,3), d_rotations (N,4), d_log_scales (N,3)).
    Culled Gaussians must carry zero upstream.
    """
    n = len(cloud)
    t = proj.t_cam
    tz = np.where(proj.depth > 0, proj.depth, 1.0)
    scales = cloud.scales
    rot = quat_to_rotmat(cloud.rotations)
    m = rot * scales[:, None, :]
    sigma = m @ np.transpose(m, (0, 2, 1))

    limx = 1.3 * (cam.width / 2.0) / cam.fx
    limy = 1.3 * (cam.height / 2.0) / cam.fy
    rxc = np.clip(t[:, 0] / tz, -limx, limx)
    ryc = np.clip(t[:, 1] / tz, -limy, limy)

    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = cam.fx / tz
    jac[:, 0, 2] = -cam.fx * rxc / tz
    jac[:, 1, 1] = cam.fy / tz
    jac[:, 1, 2] = -cam.fy * ryc / tz
    a_mat = jac @ cam.rotation

    d_cov2d = 0.5 * (d_cov2d + np.transpose(d_cov2d, (0, 2, 1)))
    d_sigma = np.transpose(a_mat, (0, 2, 1)) @ d_cov2d @ a_mat
    d_a = 2.0 * d_cov2d @ a_mat @ sigma
    d_jac = d_a @ cam.rotation.T

    # Sigma = M M^T with M = R diag(s)
    d_m = 2.0 * d_sigma @ m
    d_rotmat = d_m * scales[:, None, :]
    d_scales = np.sum(d_m * rot, axis=1)
    d_log_scales = d_scales * scales
    d_rotations = rotmat_backward(cloud.rotations, d_rotmat)

    # Jacobian entries back to camera-space center t.
    mx, my = proj.clamp_mask[:, 0], proj.clamp_mask[:, 1]
    d_t = np.zeros((n, 3))
    d_t[:, 0] += d_jac[:, 0, 2] * (-cam.fx / tz) * mx / tz
    d_t[:, 1] += d_jac[:, 1, 2] * (-cam.fy / tz) * my / tz
    d_t[:, 2] += (
        d_jac[:, 0, 0] * (-cam.fx / tz**2)
        + d_jac[:, 1, 1] * (-cam.fy / tz**2)
        + d_jac[:, 0, 2] * (cam.fx * rxc / tz**2 + (-cam.fx / tz) * mx * (-t[:, 0] / tz**2))
        + d_jac[:, 1, 2] * (cam.fy * ryc / tz**2 + (-cam.fy / tz) * my * (-t[:, 1] / tz**2))
    )

    # mean2d = (fx tx/tz + cx, fy ty/tz + cy), unclamped.
    d_t[:, 0] += d_mean2d[:, 0] * cam.fx / tz
    d_t[:, 1] += d_mean2d[:, 1] * cam.fy / tz
    d_t[:, 2] += (
        d_mean2d[:, 0] * (-cam.fx * t[:, 0] / tz**2)
        + d_mean2d[:, 1] * (-cam.fy * t[:, 1] / tz**2)
    )

    d_positions = d_t @ cam.rotation
    return d_positions, d_rotations, d_log_scales


def conic_backward(cov2d, d_conic):
    """dL/d(packed conic a,b,c) -> dL/dcov2d (N,2,2), via d(C^-1) = -C^-1 dC C^-1."""
    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] ** 2
    det = np.where(np.abs(det) > 1e-300, det, 1.0)
    inv = np.empty_like(cov2d)
    inv[:, 0, 0] = cov2d[:, 1, 1] / det
    inv[:, 1, 1] = cov2d[:, 0, 0] / det
    inv[:, 0, 1] = inv[:, 1, 0] = -cov2d[:, 0, 1] / det
    u = np.empty_like(cov2d)
    u[:, 0, 0] = d_conic[:, 0]
    u[:, 0, 1] = u[:, 1, 0] = 0.5 * d_conic[:, 1]
    u[:, 1, 1] = d_conic[:, 2]
    return -inv @ u @ inv
