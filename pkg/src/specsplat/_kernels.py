"""Compiled per-pixel blending kernels.

All kernels are nogil so the Python layer can run them on a thread pool.
Work is split into fixed-height row bands whose extent never depends on
the thread count, and each band only writes pixels (or its own gradient
accumulator), so renders are bitwise identical for any number of threads.

Gaussians are walked in global front-to-back depth order; every pixel
therefore sees its covering splats in depth order without any binning.
Blending follows the usual compositing rules: alpha is the Gaussian
falloff times opacity clamped at 0.99, contributions below 1/255 are
skipped, and a pixel stops accepting splats once its transmittance would
drop below 1e-4 (the splat that would cross the threshold is excluded).

The forward pass doubles as a tape builder: a first sweep blends and
counts contributions per pixel, a second sweep records (gaussian, alpha)
per contribution in depth order so the backward pass can rewalk each
pixel back to front.
"""

import math

import numpy as np
from numba import njit

ALPHA_MIN = 1.0 / 255.0
ALPHA_MAX = 0.99
TRANSMITTANCE_EPS = 1e-4


@njit(nogil=True, cache=True)
def blend_band(order, mean2d, conic, opacity, bbox, channels,
               row0, row1, width, fill,
               out, out_alpha, trans, counts,
               offsets, tape_idx, tape_alpha, fill_pos):
    """One row band of the forward blend.

    fill == 0: accumulate image, alpha, per-pixel counts; trans must start
    at 1.0 and ends as the final transmittance (negated where the pixel
    terminated early).
    fill == 1: identical traversal, but writes (gaussian, alpha) records at
    offsets[pixel] + running position instead of accumulating.
    """
    n_chan = channels.shape[1]
    for oi in range(order.shape[0]):
        g = order[oi]
        x0 = bbox[g, 0]
        x1 = bbox[g, 1]
        y0 = bbox[g, 2] if bbox[g, 2] > row0 else row0
        y1 = bbox[g, 3] if bbox[g, 3] < row1 - 1 else row1 - 1
        if y0 > y1 or x0 > x1:
            continue
        mx = mean2d[g, 0]
        my = mean2d[g, 1]
        ca = conic[g, 0]
        cb = conic[g, 1]
        cc = conic[g, 2]
        opac = opacity[g]
        for r in range(y0, y1 + 1):
            dy = (r + 0.5) - my
            for c in range(x0, x1 + 1):
                t_cur = trans[r, c]
                if t_cur < 0.0:
                    continue
                dx = (c + 0.5) - mx
                q = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy
                if q < 0.0:
                    continue
                alpha = opac * math.exp(-0.5 * q)
                if alpha > ALPHA_MAX:
                    alpha = ALPHA_MAX
                if alpha < ALPHA_MIN:
                    continue
                t_next = t_cur * (1.0 - alpha)
                if t_next < TRANSMITTANCE_EPS:
                    trans[r, c] = -t_cur
                    continue
                if fill == 0:
                    w = alpha * t_cur
                    for k in range(n_chan):
                        out[r, c, k] += w * channels[g, k]
                    out_alpha[r, c] += w
                    counts[r, c] += 1
                else:
                    pix = r * width + c
                    pos = offsets[pix] + fill_pos[r, c]
                    tape_idx[pos] = g
                    tape_alpha[pos] = alpha
                    fill_pos[r, c] += 1
                trans[r, c] = t_next


@njit(nogil=True, cache=True)
def blend_band_backward(offsets, tape_idx, tape_alpha, final_trans,
                        mean2d, conic, opacity, channels,
                        d_img, d_alpha_img,
                        row0, row1, width,
                        d_channels, d_mean2d, d_conic, d_opacity):
    """Backward of one row band; walks each pixel's tape back to front.

    The gradient accumulators are band-private; the caller sums them in a
    fixed order. Transmittance before each contribution is reconstructed
    from the stored final value by dividing out (1 - alpha) in reverse, so
    weights match the forward pass exactly. Contributions whose alpha hit
    the 0.99 clamp keep their channel gradient but pass nothing to
    opacity or geometry.
    """
    n_chan = channels.shape[1]
    suffix = np.zeros(n_chan)
    for r in range(row0, row1):
        for c in range(width):
            pix = r * width + c
            lo = offsets[pix]
            hi = offsets[pix + 1]
            if hi == lo:
                continue
            g_alpha = d_alpha_img[r, c]
            for k in range(n_chan):
                suffix[k] = 0.0
            suffix_a = 0.0
            t_next = final_trans[r, c]
            for e in range(hi - 1, lo - 1, -1):
                g = tape_idx[e]
                alpha = tape_alpha[e]
                one_m = 1.0 - alpha
                t_cur = t_next / one_m
                w = alpha * t_cur
                d_alpha_val = g_alpha * (t_cur - suffix_a / one_m)
                for k in range(n_chan):
                    g_k = d_img[r, c, k]
                    d_channels[g, k] += w * g_k
                    d_alpha_val += g_k * (t_cur * channels[g, k] - suffix[k] / one_m)
                if alpha < ALPHA_MAX:
                    opac = opacity[g]
                    d_opacity[g] += d_alpha_val * (alpha / opac)
                    dq = -0.5 * d_alpha_val * alpha
                    dx = (c + 0.5) - mean2d[g, 0]
                    dy = (r + 0.5) - mean2d[g, 1]
                    ca = conic[g, 0]
                    cb = conic[g, 1]
                    cc = conic[g, 2]
                    d_conic[g, 0] += dq * dx * dx
                    d_conic[g, 1] += dq * 2.0 * dx * dy
                    d_conic[g, 2] += dq * dy * dy
                    d_mean2d[g, 0] -= dq * (2.0 * ca * dx + 2.0 * cb * dy)
                    d_mean2d[g, 1] -= dq * (2.0 * cb * dx + 2.0 * cc * dy)
                for k in range(n_chan):
                    suffix[k] += w * channels[g, k]
                suffix_a += w
                t_next = t_cur
