import numpy as np
import pytest
import torch

from scribblevs.dcs import Winner, select
from scribblevs.labels import IGNORE, StructureError
from scribblevs.losses import partial_cross_entropy
from scribblevs.rpd import hard_labels, pseudo_labels_from_probs


def random_triple(rng, b=2, k=4, h=8, w=8):
    ps = torch.softmax(torch.tensor(rng.normal(0, 2, size=(b, k, h, w))), 1)
    pt = torch.softmax(torch.tensor(rng.normal(0, 2, size=(b, k, h, w))), 1)
    s = torch.tensor(rng.integers(0, k, size=(b, h, w)))
    s[torch.tensor(rng.random((b, h, w)) < 0.8)] = IGNORE
    return ps, pt, s


def test_correct_student_beats_uniform_teacher():
    s = torch.tensor([[0, 1, IGNORE, 2]])
    onehot = torch.nn.functional.one_hot(s.clamp_min(0), 3).permute(0, 2, 1).double()
    uniform = torch.full_like(onehot, 1 / 3)
    out = select(onehot, uniform, s, tau=0.5)
    assert out.winner is Winner.STUDENT
    assert torch.equal(out.pseudo_labels, pseudo_labels_from_probs(onehot, 0.5))


def test_tie_goes_to_student(rng):
    ps, _, s = random_triple(rng)
    out = select(ps, ps.clone(), s)
    assert out.winner is Winner.STUDENT
    assert out.loss_student == out.loss_teacher


def test_swap_flips_winner(rng):
    ps, pt, s = random_triple(rng)
    a = select(ps, pt, s)
    b = select(pt, ps, s)
    assert a.loss_student != a.loss_teacher
    assert a.winner != b.winner
    assert (a.loss_student, a.loss_teacher) == (b.loss_teacher, b.loss_student)
    assert a.loss_student == pytest.approx(partial_cross_entropy(ps, s).item(), rel=1e-15)
    assert torch.equal(a.pseudo_labels, b.pseudo_labels)


def test_argmax_mode(rng):
    ps, pt, s = random_triple(rng)
    out = select(ps, pt, s, tau=None)
    chosen = ps if out.winner is Winner.STUDENT else pt
    assert torch.equal(out.pseudo_labels, hard_labels(chosen))


def test_per_image_granularity(rng):
    ps, pt, s = random_triple(rng, b=4)
    out = select(ps, pt, s, granularity="image")
    assert len(out.winner) == 4
    for b in range(4):
        single = select(ps[b : b + 1], pt[b : b + 1], s[b : b + 1])
        assert out.winner[b] is single.winner
        assert torch.equal(out.pseudo_labels[b], single.pseudo_labels[0])


def test_ignored_pixels_do_not_affect_winner(rng):
    for _ in range(20):
        ps, pt, s = random_triple(rng)
        base = select(ps, pt, s).winner
        noise = torch.softmax(torch.tensor(rng.normal(0, 3, size=ps.shape)), 1)
        mask = (s == IGNORE).unsqueeze(1)
        ps2 = torch.where(mask, noise, ps)
        assert select(ps2, pt, s).winner is base


def test_no_autograd_state(rng):
    ps, pt, s = random_triple(rng)
    ps.requires_grad_(True)
    out = select(ps, pt, s)
    assert isinstance(out.loss_student, float)
    assert not out.pseudo_labels.requires_grad


def test_shape_mismatch(rng):
    ps, pt, s = random_triple(rng)
    with pytest.raises(StructureError):
        select(ps, pt[:, :3], s)
