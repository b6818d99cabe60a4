"""Regional pseudo-label diffusion.

A prediction becomes a pseudo-label map in four steps: softmax, a confidence
partition into an active region (max class probability strictly above
``tau``) and an inactive region, an argmax, and a fusion that keeps the
argmax on the active region and writes ``IGNORE`` everywhere else.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from scribblevs.labels import IGNORE, ConfigError


class NumericError(ArithmeticError):
    """Non-finite values reached a kernel that requires finite input."""


@dataclass(frozen=True)
class ConfidencePartition:
    omega: torch.Tensor  # bool, high confidence
    theta: torch.Tensor  # bool, complement of omega
    tau: float


def normalize(logits: torch.Tensor) -> torch.Tensor:
    """Softmax over the class axis (dim 1)."""
    if not torch.isfinite(logits).all():
        raise NumericError("logits contain NaN or inf")
    return torch.softmax(logits, dim=1)


def confidence(probs: torch.Tensor) -> torch.Tensor:
    return probs.max(dim=1).values


def partition(probs: torch.Tensor, tau: float) -> ConfidencePartition:
    if not 0.0 < tau < 1.0:
        raise ConfigError(f"tau must lie in (0, 1), got {tau}")
    omega = confidence(probs) > tau
    return ConfidencePartition(omega=omega, theta=~omega, tau=float(tau))


def hard_labels(probs: torch.Tensor) -> torch.Tensor:
    """Per-pixel argmax; ties resolve to the lowest class index."""
    # torch.argmax returns the first maximal index on CPU.
    return probs.argmax(dim=1)


def fuse(labels: torch.Tensor, part: ConfidencePartition, ignore_index: int = IGNORE) -> torch.Tensor:
    if labels.shape != part.omega.shape:
        raise ValueError(f"label shape {tuple(labels.shape)} != partition shape {tuple(part.omega.shape)}")
    return torch.where(part.omega, labels, torch.full_like(labels, ignore_index))


def pseudo_labels_from_probs(probs: torch.Tensor, tau: float, ignore_index: int = IGNORE) -> torch.Tensor:
    return fuse(hard_labels(probs), partition(probs, tau), ignore_index)


def rpd(logits: torch.Tensor, tau: float, ignore_index: int = IGNORE) -> torch.Tensor:
    """Pseudo-label map from raw network logits."""
    return pseudo_labels_from_probs(normalize(logits), tau, ignore_index)
