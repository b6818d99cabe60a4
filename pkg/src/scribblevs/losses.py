"""Sparse-label loss kernels.

Every kernel takes probabilities with the class axis at dim 1, i.e.
``(N, K)`` or ``(B, K, *spatial)``, and integer labels shaped like the
probabilities minus the class axis. Pixels equal to ``ignore_index`` are
dropped before any arithmetic, so padding an input with ignored pixels leaves
the result bit-identical.

Pixel terms are summed, not averaged. ``reduction="mean"`` divides the
cross-entropy sums by the number of contributing pixels.
"""

from __future__ import annotations

import torch

from scribblevs.labels import IGNORE, check_label_map

LOG_CLAMP_MIN = 1e-8
DICE_SMOOTH = 1e-5


def _active(probs: torch.Tensor, labels: torch.Tensor, ignore_index: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Return ``(M, K)`` probabilities and ``(M,)`` labels for non-ignored pixels."""
    check_label_map(probs, labels, ignore_index)
    flat = probs.movedim(1, -1).reshape(-1, probs.shape[1])
    lab = labels.reshape(-1)
    keep = lab != ignore_index
    return flat[keep], lab[keep].long()


def _masked_ce(probs, labels, ignore_index, reduction):
    p, lab = _active(probs, labels, ignore_index)
    if lab.numel() == 0:
        return probs.sum() * 0.0
    picked = p.gather(1, lab.unsqueeze(1)).squeeze(1)
    total = -torch.log(picked.clamp(LOG_CLAMP_MIN, 1.0)).sum()
    if reduction == "mean":
        return total / lab.numel()
    if reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    return total


def partial_cross_entropy(
    probs: torch.Tensor,
    scribble: torch.Tensor,
    ignore_index: int = IGNORE,
    reduction: str = "sum",
) -> torch.Tensor:
    """Cross-entropy over annotated scribble pixels only.

    Computes ``-sum_{i labeled} log p[i, s[i]]`` with probabilities clamped to
    ``[1e-8, 1]`` inside the log. Returns 0 when nothing is annotated.
    """
    return _masked_ce(probs, scribble, ignore_index, reduction)


def pl_cross_entropy(
    probs: torch.Tensor,
    pseudo: torch.Tensor,
    ignore_index: int = IGNORE,
    reduction: str = "sum",
) -> torch.Tensor:
    """Cross-entropy against hard pseudo labels on the active region."""
    return _masked_ce(probs, pseudo, ignore_index, reduction)


def pl_dice(
    probs: torch.Tensor,
    pseudo: torch.Tensor,
    ignore_index: int = IGNORE,
    smooth: float = DICE_SMOOTH,
) -> torch.Tensor:
    """Soft Dice loss on the active region as one global fraction.

    All classes and active pixels are pooled into a single ratio
    ``1 - (2 I + eps) / (sum p^2 + sum onehot^2 + eps)``; there is no
    per-class averaging. An empty active region gives 0.
    """
    p, lab = _active(probs, pseudo, ignore_index)
    if lab.numel() == 0:
        return probs.sum() * 0.0
    onehot = torch.nn.functional.one_hot(lab, probs.shape[1]).to(p.dtype)
    intersect = (p * onehot).sum()
    denom = (p * p).sum() + (onehot * onehot).sum()
    return 1.0 - (2.0 * intersect + smooth) / (denom + smooth)


def pl_loss(
    probs: torch.Tensor,
    pseudo: torch.Tensor,
    ignore_index: int = IGNORE,
    reduction: str = "sum",
) -> torch.Tensor:
    """Average of the pseudo-label cross-entropy and Dice terms."""
    ce = pl_cross_entropy(probs, pseudo, ignore_index, reduction)
    dice = pl_dice(probs, pseudo, ignore_index)
    return 0.5 * (ce + dice)


def total_loss(l_sup, l_pl, lambda_t: float):
    """Scribble loss plus the warm-up weighted pseudo-label loss."""
    return l_sup + lambda_t * l_pl
