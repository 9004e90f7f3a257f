"""Evaluation metrics: PSNR, SSIM, and normal mean angular error."""

from __future__ import annotations

import numpy as np

from .loss import dssim_loss

PSNR_CAP = 99.0


def psnr(render, target):
    """10 log10(1/MSE) on linear [0,1] floats; identical images report the cap."""
    render = np.asarray(render, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    mse = float(np.mean((render - target) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return min(float(10.0 * np.log10(1.0 / mse)), PSNR_CAP)


def ssim(render, target):
    """Mean SSIM, recovered from the D-SSIM loss definition."""
    ds, _ = dssim_loss(render, target)
    return 1.0 - 2.0 * ds


def mean_angular_error_deg(pred_normals, gt_normals, mask):
    """Mean arccos of the dot between unit normals over masked pixels, degrees.

    Returns None when the mask selects nothing (undefined rather than zero).
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return None
    p = np.asarray(pred_normals, dtype=np.float64)[mask]
    g = np.asarray(gt_normals, dtype=np.float64)[mask]

    def unit(v):
        n = np.linalg.norm(v, axis=-1, keepdims=True)
        return v / np.where(n > 1e-12, n, 1.0)

    dots = np.clip(np.sum(unit(p) * unit(g), axis=-1), -1.0, 1.0)
    return float(np.degrees(np.mean(np.arccos(dots))))


def eval_metrics(renders, targets, gt_normals=None, masks=None,
                 rendered_normals=None):
    """Per-view PSNR/SSIM (and MAE degrees where normals + mask exist).

    Returns a dict with per-view lists and their means; mae entries are None
    for views without a usable mask, and mean_mae_deg is None if no view had
    one.
    """
    n = len(renders)
    report = {"psnr": [], "ssim": [], "mae_deg": []}
    for i in range(n):
        report["psnr"].append(psnr(renders[i], targets[i]))
        report["ssim"].append(ssim(renders[i], targets[i]))
        mae = None
        if (gt_normals is not None and rendered_normals is not None
                and masks is not None and gt_normals[i] is not None
                and masks[i] is not None):
            mae = mean_angular_error_deg(rendered_normals[i], gt_normals[i],
                                         masks[i])
        report["mae_deg"].append(mae)
    report["mean_psnr"] = float(np.mean(report["psnr"]))
    report["mean_ssim"] = float(np.mean(report["ssim"]))
    usable = [m for m in report["mae_deg"] if m is not None]
    report["mean_mae_deg"] = float(np.mean(usable)) if usable else None
    return report


def masked_psnr(render, target, mask):
    """PSNR restricted to masked samples (used for env-map recovery)."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return None
    r = np.asarray(render, dtype=np.float64)[mask]
    t = np.asarray(target, dtype=np.float64)[mask]
    mse = float(np.mean((r - t) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return min(float(10.0 * np.log10(1.0 / mse)), PSNR_CAP)
