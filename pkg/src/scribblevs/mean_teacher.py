"""EMA teacher maintained alongside a trainable student."""

from __future__ import annotations

import copy
from typing import Iterable, Sequence

import torch
from torch import nn

from scribblevs.labels import StructureError


def effective_decay(step: int, ema_decay: float) -> float:
    """Ramped decay ``min(1 - 1/(step+1), ema_decay)``; 0 at step 0."""
    if step < 0:
        raise ValueError(f"step must be non-negative, got {step}")
    return min(1.0 - 1.0 / (step + 1), ema_decay)


@torch.no_grad()
def ema_update_(teacher: Sequence[torch.Tensor], student: Sequence[torch.Tensor], alpha: float) -> None:
    """In place ``teacher <- alpha * teacher + (1 - alpha) * student``."""
    teacher, student = list(teacher), list(student)
    if len(teacher) != len(student):
        raise StructureError(f"teacher has {len(teacher)} tensors, student has {len(student)}")
    for t, s in zip(teacher, student):
        if t.shape != s.shape:
            raise StructureError(f"parameter shape mismatch {tuple(t.shape)} vs {tuple(s.shape)}")
        if alpha == 0.0:
            t.copy_(s)
        else:
            # lerp form keeps teacher == student an exact fixed point.
            t.lerp_(s, 1.0 - alpha)


class TeacherStudentPair:
    """Student network plus a gradient-free teacher copy updated by EMA."""

    def __init__(self, student: nn.Module, ema_decay: float = 0.99, teacher: nn.Module | None = None):
        if not 0.0 <= ema_decay < 1.0:
            raise ValueError(f"ema_decay must lie in [0, 1), got {ema_decay}")
        self.student = student
        self.teacher = teacher if teacher is not None else copy.deepcopy(student)
        for p in self.teacher.parameters():
            p.requires_grad_(False)
        self.ema_decay = float(ema_decay)
        _check_layout(self.student, self.teacher)

    def ema_update(self, step: int) -> float:
        alpha = effective_decay(step, self.ema_decay)
        ema_update_(self.teacher.parameters(), self.student.parameters(), alpha)
        # Normalization statistics (if any) follow the student directly.
        for tb, sb in zip(self.teacher.buffers(), self.student.buffers()):
            tb.copy_(sb)
        return alpha

    def state_dict(self) -> dict:
        return {
            "student": self.student.state_dict(),
            "teacher": self.teacher.state_dict(),
            "ema_decay": self.ema_decay,
        }

    def load_state_dict(self, state: dict) -> None:
        self.student.load_state_dict(state["student"])
        self.teacher.load_state_dict(state["teacher"])
        self.ema_decay = float(state["ema_decay"])


def init_pair(student: nn.Module, ema_decay: float = 0.99) -> TeacherStudentPair:
    return TeacherStudentPair(student, ema_decay)


def flat_params(params: Iterable[torch.Tensor]) -> torch.Tensor:
    return torch.cat([p.detach().reshape(-1) for p in params])


def _check_layout(a: nn.Module, b: nn.Module) -> None:
    sa = [(n, tuple(p.shape)) for n, p in a.named_parameters()]
    sb = [(n, tuple(p.shape)) for n, p in b.named_parameters()]
    if sa != sb:
        raise StructureError("student and teacher parameter layouts differ")
