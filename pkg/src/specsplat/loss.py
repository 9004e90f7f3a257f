"""Image loss L = (1 - lambda) * L1 + lambda * D-SSIM with exact gradients.

SSIM uses the standard 11x11 Gaussian window (sigma = 1.5, C1 = 0.01^2,
C2 = 0.03^2), evaluated per channel on fully-covered window positions
(valid mode) and averaged. The gradient is the exact adjoint: each local
statistic is differentiated and pushed back through the transpose of the
window correlation, which for a symmetric separable window is the same
correlation applied to the zero-embedded interior gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
DEFAULT_LAMBDA = 0.2


def _window():
    offs = np.arange(WINDOW_SIZE) - WINDOW_SIZE // 2
    w = np.exp(-(offs ** 2) / (2.0 * WINDOW_SIGMA ** 2))
    return w / w.sum()

_WIN = _window()
_HALF = WINDOW_SIZE // 2


def _smooth(img):
    out = correlate1d(img, _WIN, axis=0, mode="constant")
    return correlate1d(out, _WIN, axis=1, mode="constant")


def _valid(img):
    return img[_HALF:-_HALF, _HALF:-_HALF]


def _embed(interior, shape):
    full = np.zeros(shape)
    full[_HALF:-_HALF, _HALF:-_HALF] = interior
    return full


@dataclass
class LossReport:
    total: float
    l1: float
    dssim: float
    grad: np.ndarray  # dL/drender, same shape as the inputs


def _check_pair(render, target):
    render = np.asarray(render, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if render.shape != target.shape:
        raise ValueError(f"shape mismatch: {render.shape} vs {target.shape}")
    return render, target


def l1_loss(render, target):
    """Mean absolute error and its gradient sign(render - target)/count."""
    render, target = _check_pair(render, target)
    diff = render - target
    loss = float(np.mean(np.abs(diff)))
    grad = np.sign(diff) / diff.size
    return loss, grad


def dssim_loss(render, target):
    """(1 - mean SSIM)/2 and its gradient w.r.t. render."""
    render, target = _check_pair(render, target)
    h, w = render.shape[:2]
    if min(h, w) < WINDOW_SIZE:
        raise ValueError(f"image {h}x{w} smaller than the {WINDOW_SIZE}px SSIM window")
    if render.ndim == 2:
        render = render[:, :, None]
        target = target[:, :, None]
        squeeze = True
    else:
        squeeze = False

    x, y = render, target
    ux = _valid(_smooth(x))
    uy = _valid(_smooth(y))
    vx = _valid(_smooth(x * x)) - ux * ux
    vy = _valid(_smooth(y * y)) - uy * uy
    vxy = _valid(_smooth(x * y)) - ux * uy

    a1 = 2.0 * ux * uy + SSIM_C1
    a2 = 2.0 * vxy + SSIM_C2
    b1 = ux * ux + uy * uy + SSIM_C1
    b2 = vx + vy + SSIM_C2
    ssim_map = (a1 * a2) / (b1 * b2)
    loss = float((1.0 - np.mean(ssim_map)) / 2.0)

    # dL/dS for each window position, then chain to the statistics.
    g = np.full(ssim_map.shape, -0.5 / ssim_map.size)
    d_ux = g * (2.0 * uy * a2 / (b1 * b2) - 2.0 * ux * a1 * a2 / (b1 * b1 * b2))
    d_vx = g * (-a1 * a2 / (b1 * b2 * b2))
    d_vxy = g * (2.0 * a1 / (b1 * b2))

    # ux = W*x, vx = W*(x^2) - ux^2, vxy = W*(xy) - ux uy.
    shape = x.shape
    term_mean = _smooth(_embed(d_ux - 2.0 * ux * d_vx - uy * d_vxy, shape))
    term_sq = _smooth(_embed(d_vx, shape))
    term_cross = _smooth(_embed(d_vxy, shape))
    grad = term_mean + 2.0 * x * term_sq + y * term_cross
    if squeeze:
        grad = grad[:, :, 0]
    return loss, grad


def combined_loss(render, target, loss_lambda=DEFAULT_LAMBDA):
    """Weighted L1 + D-SSIM; returns a LossReport with the summed gradient."""
    if not 0.0 <= loss_lambda <= 1.0:
        raise ValueError("loss_lambda must be in [0, 1]")
    l1, g1 = l1_loss(render, target)
    ds, gs = dssim_loss(render, target)
    total = (1.0 - loss_lambda) * l1 + loss_lambda * ds
    grad = (1.0 - loss_lambda) * g1 + loss_lambda * gs
    return LossReport(total=float(total), l1=l1, dssim=ds, grad=grad)
