"""Depth-ordered alpha blending of projected Gaussians into channel images.

This layer owns the screen-space bookkeeping around the compiled kernels:
depth sorting, the fixed row-band decomposition, the contribution tape,
and the thread pool. Band height is a constant so the set of bands (and
therefore every float operation) is independent of the thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._kernels import blend_band, blend_band_backward

BAND_ROWS = 16


def _bands(height):
    return [(r, min(r + BAND_ROWS, height)) for r in range(0, height, BAND_ROWS)]


def _run_bands(fn, bands, n_threads):
    if n_threads <= 1 or len(bands) == 1:
        for band in bands:
            fn(band)
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            list(pool.map(fn, bands))


@dataclass
class BlendResult:
    """Forward blend output plus everything the backward pass replays."""

    image: np.ndarray        # (H, W, K) premultiplied channel sums
    alpha: np.ndarray        # (H, W) accumulated alpha
    final_trans: np.ndarray  # (H, W) transmittance after the last contribution
    offsets: np.ndarray      # (H*W + 1,) CSR offsets into the tape
    tape_idx: np.ndarray     # (M,) contributing Gaussian index per record
    tape_alpha: np.ndarray   # (M,) alpha of each contribution
    order: np.ndarray        # visible indices, front to back
    shape: tuple


def blend(proj, opacity, channels, height, width, n_threads=1):
    """Alpha-blend per-Gaussian channel vectors into (H, W, K) images.

    proj: a core.Projection. opacity: (N,) in (0, 1). channels: (N, K).
    Returns a BlendResult; image excludes any background term.
    """
    opacity = np.ascontiguousarray(opacity, dtype=np.float64)
    channels = np.ascontiguousarray(channels, dtype=np.float64)
    vis = np.nonzero(proj.visible)[0]
    order = vis[np.argsort(proj.depth[vis], kind="stable")].astype(np.int64)

    mean2d = np.ascontiguousarray(proj.mean2d)
    conic = np.ascontiguousarray(proj.conic)
    bbox = np.ascontiguousarray(proj.bbox)
    n_chan = channels.shape[1]

    image = np.zeros((height, width, n_chan))
    alpha = np.zeros((height, width))
    trans = np.ones((height, width))
    counts = np.zeros((height, width), dtype=np.int64)
    dummy_off = np.zeros(1, dtype=np.int64)
    dummy_idx = np.zeros(1, dtype=np.int64)
    dummy_alpha = np.zeros(1)
    dummy_pos = np.zeros((1, 1), dtype=np.int64)
    bands = _bands(height)

    def pass_count(band):
        row0, row1 = band
        blend_band(order, mean2d, conic, opacity, bbox, channels,
                   row0, row1, width, 0,
                   image, alpha, trans, counts,
                   dummy_off, dummy_idx, dummy_alpha, dummy_pos)

    _run_bands(pass_count, bands, n_threads)

    offsets = np.zeros(height * width + 1, dtype=np.int64)
    np.cumsum(counts.ravel(), out=offsets[1:])
    total = int(offsets[-1])
    tape_idx = np.zeros(total, dtype=np.int64)
    tape_alpha = np.zeros(total)
    trans_fill = np.ones((height, width))
    fill_pos = np.zeros((height, width), dtype=np.int64)

    def pass_fill(band):
        row0, row1 = band
        blend_band(order, mean2d, conic, opacity, bbox, channels,
                   row0, row1, width, 1,
                   image, alpha, trans_fill, counts,
                   offsets, tape_idx, tape_alpha, fill_pos)

    _run_bands(pass_fill, bands, n_threads)

    return BlendResult(
        image=image, alpha=alpha, final_trans=np.abs(trans),
        offsets=offsets, tape_idx=tape_idx, tape_alpha=tape_alpha,
        order=order, shape=(height, width, n_chan),
    )


def max_blend_weights(result, n):
    """Largest single-pixel blend weight alpha_k * T_k each of n Gaussians
    reached in this frame; 0 for Gaussians that contributed nowhere.

    Replays the transmittance chains from the tape with a segmented
    log-cumsum, so an occluded Gaussian that stayed on the tape still
    reports its (tiny) actual weight.
    """
    out = np.zeros(n)
    ta = result.tape_alpha
    if ta.size:
        logs = np.concatenate([[0.0], np.cumsum(np.log1p(-ta))])
        counts = np.diff(result.offsets)
        starts = np.repeat(result.offsets[:-1], counts)
        t = np.exp(logs[np.arange(ta.size)] - logs[starts])
        np.maximum.at(out, result.tape_idx, ta * t)
    return out


def blend_backward(result, proj, opacity, channels, d_image, d_alpha, n_threads=1):
    """Backward of blend.

    d_image: (H, W, K); d_alpha: (H, W). Returns (d_channels (N, K),
    d_mean2d (N, 2), d_conic (N, 3) packed, d_opacity (N,)).
    """
    height, width, n_chan = result.shape
    n = len(opacity)
    opacity = np.ascontiguousarray(opacity, dtype=np.float64)
    channels = np.ascontiguousarray(channels, dtype=np.float64)
    mean2d = np.ascontiguousarray(proj.mean2d)
    conic = np.ascontiguousarray(proj.conic)
    d_image = np.ascontiguousarray(d_image, dtype=np.float64)
    d_alpha = np.ascontiguousarray(d_alpha, dtype=np.float64)

    bands = _bands(height)
    nb = len(bands)
    d_channels_b = np.zeros((nb, n, n_chan))
    d_mean2d_b = np.zeros((nb, n, 2))
    d_conic_b = np.zeros((nb, n, 3))
    d_opacity_b = np.zeros((nb, n))

    def run(item):
        bi, (row0, row1) = item
        blend_band_backward(result.offsets, result.tape_idx, result.tape_alpha,
                            result.final_trans, mean2d, conic, opacity, channels,
                            d_image, d_alpha, row0, row1, width,
                            d_channels_b[bi], d_mean2d_b[bi],
                            d_conic_b[bi], d_opacity_b[bi])

    _run_bands(run, list(enumerate(bands)), n_threads)

    return (d_channels_b.sum(axis=0), d_mean2d_b.sum(axis=0),
            d_conic_b.sum(axis=0), d_opacity_b.sum(axis=0))
