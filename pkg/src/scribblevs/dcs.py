"""Dynamic competitive selection between student and teacher predictions.

Both predictions are scored with partial cross-entropy on the scribble
pixels. The lower score wins, ties go to the student, and the winner's
prediction is turned into pseudo labels. Scoring builds no autograd state.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import torch

from scribblevs.labels import IGNORE, StructureError
from scribblevs.losses import partial_cross_entropy
from scribblevs.rpd import hard_labels, pseudo_labels_from_probs


class Winner(str, enum.Enum):
    STUDENT = "student"
    TEACHER = "teacher"


@dataclass
class CompetitionOutcome:
    winner: Winner | list[Winner]
    loss_student: float | list[float]
    loss_teacher: float | list[float]
    pseudo_labels: torch.Tensor


def _labels_for(probs: torch.Tensor, tau: float | None, ignore_index: int) -> torch.Tensor:
    # tau=None selects the plain argmax target (every pixel active).
    if tau is None:
        return hard_labels(probs)
    return pseudo_labels_from_probs(probs, tau, ignore_index)


def select(
    p_student: torch.Tensor,
    p_teacher: torch.Tensor,
    scribble: torch.Tensor,
    tau: float | None = 0.5,
    granularity: str = "batch",
    ignore_index: int = IGNORE,
) -> CompetitionOutcome:
    """Pick student or teacher by scribble pCE and build pseudo labels from the winner.

    ``granularity="batch"`` decides once for the whole batch; ``"image"``
    decides independently for every sample along dim 0.
    """
    if p_student.shape != p_teacher.shape:
        raise StructureError(
            f"student {tuple(p_student.shape)} and teacher {tuple(p_teacher.shape)} predictions differ in shape"
        )
    with torch.no_grad():
        if granularity == "batch":
            ls = float(partial_cross_entropy(p_student, scribble, ignore_index))
            lt = float(partial_cross_entropy(p_teacher, scribble, ignore_index))
            winner = Winner.STUDENT if ls <= lt else Winner.TEACHER
            chosen = p_student if winner is Winner.STUDENT else p_teacher
            return CompetitionOutcome(winner, ls, lt, _labels_for(chosen, tau, ignore_index))
        if granularity != "image":
            raise ValueError(f"unknown granularity {granularity!r}")
        winners, ls_all, lt_all, maps = [], [], [], []
        for b in range(p_student.shape[0]):
            sub = select(p_student[b : b + 1], p_teacher[b : b + 1], scribble[b : b + 1], tau, "batch", ignore_index)
            winners.append(sub.winner)
            ls_all.append(sub.loss_student)
            lt_all.append(sub.loss_teacher)
            maps.append(sub.pseudo_labels)
        return CompetitionOutcome(winners, ls_all, lt_all, torch.cat(maps, dim=0))
