"""Label sentinels and shared validation helpers."""

from __future__ import annotations

import torch

# Unannotated scribble pixels and inactive pseudo-label pixels share one value.
IGNORE = -1
# On-disk sentinel for 8-bit label PNGs.
FILE_IGNORE = 255


class StructureError(ValueError):
    """Inputs disagree on shape, class count or pixel domain."""


class ConfigError(ValueError):
    """A configuration value is outside its valid range."""


def check_label_map(probs: torch.Tensor, labels: torch.Tensor, ignore_index: int = IGNORE) -> None:
    """Validate a probability tensor ``(B, K, *S)`` against labels ``(B, *S)``.

    ``(N, K)`` with ``(N,)`` labels is the degenerate case without spatial dims.
    """
    if probs.dim() < 2:
        raise StructureError(f"probabilities need a class axis, got shape {tuple(probs.shape)}")
    expected = (probs.shape[0],) + tuple(probs.shape[2:])
    if tuple(labels.shape) != expected:
        raise StructureError(
            f"label shape {tuple(labels.shape)} does not match probability shape {tuple(probs.shape)}"
        )
    if labels.dtype.is_floating_point:
        raise StructureError("labels must be an integer tensor")
    num_classes = probs.shape[1]
    valid = labels[labels != ignore_index]
    if valid.numel() and (int(valid.min()) < 0 or int(valid.max()) >= num_classes):
        raise StructureError(f"label values must lie in [0, {num_classes}) or equal {ignore_index}")
