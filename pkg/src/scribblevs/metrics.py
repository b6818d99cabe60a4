"""Segmentation metrics: per-class Dice, HD95 and pseudo-label accuracy."""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from scribblevs.labels import IGNORE, StructureError


def _as_np(a) -> np.ndarray:
    if hasattr(a, "detach"):
        a = a.detach().cpu().numpy()
    return np.asarray(a)


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred, gt = _as_np(pred), _as_np(gt)
    if pred.shape != gt.shape:
        raise StructureError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    return pred, gt


def dice_score(pred, gt, k: int) -> float:
    """``2|P∩G| / (|P|+|G|)`` for class ``k``; 1.0 when both are empty."""
    pred, gt = _pair(pred, gt)
    p, g = pred == k, gt == k
    size = int(p.sum()) + int(g.sum())
    if size == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / size


def boundary(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with at least one 4-neighbour outside the mask or image."""
    mask = mask.astype(bool)
    if not mask.any():
        return mask
    structure = ndimage.generate_binary_structure(mask.ndim, 1)
    return mask & ~ndimage.binary_erosion(mask, structure=structure, border_value=0)


def _spacing(spacing, ndim: int) -> tuple[float, ...]:
    if np.isscalar(spacing):
        return (float(spacing),) * ndim
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != ndim:
        raise StructureError(f"spacing {spacing} does not match {ndim} dims")
    return spacing


def surface_distances(a: np.ndarray, b: np.ndarray, spacing=1.0) -> np.ndarray:
    """Distances from every boundary pixel of ``a`` to the nearest boundary pixel of ``b``."""
    ba, bb = boundary(a), boundary(b)
    dist_to_b = ndimage.distance_transform_edt(~bb, sampling=_spacing(spacing, a.ndim))
    return dist_to_b[ba]


def hd95(pred, gt, k: int, spacing=1.0) -> float:
    """95th percentile of the pooled symmetric boundary distances for class ``k``.

    Both directed distance sets are concatenated before taking the
    percentile (linear interpolation). If exactly one mask is empty the image
    diagonal is returned; two empty masks give 0.
    """
    pred, gt = _pair(pred, gt)
    p, g = pred == k, gt == k
    if not p.any() and not g.any():
        return 0.0
    if not p.any() or not g.any():
        sp = _spacing(spacing, pred.ndim)
        return math.sqrt(sum((n * s) ** 2 for n, s in zip(pred.shape, sp)))
    pooled = np.concatenate([surface_distances(p, g, spacing), surface_distances(g, p, spacing)])
    return float(np.percentile(pooled, 95))


def pseudo_label_accuracy(pseudo, gt, ignore_index: int = IGNORE) -> dict[str, float]:
    """Agreement with the dense mask on active pixels, and the active fraction."""
    pseudo, gt = _pair(pseudo, gt)
    active = pseudo != ignore_index
    n_active = int(active.sum())
    if n_active == 0:
        return {"active_accuracy": 1.0, "active_fraction": 0.0}
    agree = int((pseudo[active] == gt[active]).sum())
    return {"active_accuracy": agree / n_active, "active_fraction": n_active / pseudo.size}


def evaluate_masks(preds, gts, num_classes: int, spacing=1.0) -> dict:
    """Per-class Dice/HD95 averaged over images; class 0 (background) excluded from means."""
    dice = np.zeros((len(preds), num_classes - 1))
    hd = np.zeros_like(dice)
    for i, (p, g) in enumerate(zip(preds, gts)):
        for k in range(1, num_classes):
            dice[i, k - 1] = dice_score(p, g, k)
            hd[i, k - 1] = hd95(p, g, k, spacing)
    return {
        "dice_per_class": dice.mean(axis=0).tolist(),
        "hd95_per_class": hd.mean(axis=0).tolist(),
        "mean_dice": float(dice.mean()),
        "mean_hd95": float(hd.mean()),
    }
