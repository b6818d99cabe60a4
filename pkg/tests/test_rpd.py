import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from scribblevs.labels import IGNORE, ConfigError
from scribblevs.rpd import NumericError, fuse, hard_labels, normalize, partition, pseudo_labels_from_probs, rpd


def probs(rows):
    return torch.tensor(rows, dtype=torch.float64)


class TestNormalize:
    def test_uniform(self):
        out = normalize(torch.zeros(1, 4, dtype=torch.float64))
        assert torch.allclose(out, torch.full((1, 4), 0.25, dtype=torch.float64), atol=0)

    def test_closed_form(self):
        out = normalize(torch.tensor([[math.log(2.0), 0.0]], dtype=torch.float64))
        assert out[0, 0].item() == pytest.approx(2 / 3, rel=1e-14)
        assert out[0, 1].item() == pytest.approx(1 / 3, rel=1e-14)

    def test_shift_invariance(self, rng):
        z = torch.tensor(rng.normal(size=(10, 4)))
        assert torch.allclose(normalize(z), normalize(z + 7.5), atol=1e-14)

    def test_simplex(self, rng):
        p = normalize(torch.tensor(rng.normal(0, 5, size=(3, 5, 8, 8))))
        assert torch.allclose(p.sum(1), torch.ones(3, 8, 8, dtype=torch.float64), atol=1e-12)
        assert (p >= 0).all() and (p <= 1).all()

    @pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
    def test_non_finite(self, bad):
        with pytest.raises(NumericError):
            normalize(torch.tensor([[0.0, bad]]))


class TestPartition:
    def test_confident_pixel_in_omega(self):
        part = partition(probs([[0.7, 0.1, 0.1, 0.1]]), 0.5)
        assert part.omega.tolist() == [True] and part.theta.tolist() == [False]

    def test_boundary_is_strict(self):
        part = partition(probs([[0.25] * 4]), 0.25)
        assert part.omega.tolist() == [False] and part.theta.tolist() == [True]

    def test_k4_quarter_threshold_keeps_every_nonuniform_pixel(self, rng):
        p = torch.softmax(torch.tensor(rng.normal(size=(500, 4))), 1)
        assert partition(p, 0.25).omega.all()

    @pytest.mark.parametrize("tau", [0.0, 1.0, -0.1, 1.5])
    def test_tau_range(self, tau):
        with pytest.raises(ConfigError):
            partition(probs([[0.5, 0.5]]), tau)


class TestHardLabels:
    def test_simple(self):
        assert hard_labels(probs([[0.1, 0.7, 0.2]])).tolist() == [1]

    def test_tie_goes_to_lowest(self):
        assert hard_labels(probs([[0.5, 0.5]])).tolist() == [0]
        assert hard_labels(probs([[0.2, 0.4, 0.4]])).tolist() == [1]

    def test_attains_row_max(self, rng):
        p = torch.softmax(torch.tensor(rng.normal(size=(200, 5))), 1)
        lab = hard_labels(p)
        for i in range(200):
            row = p[i].tolist()
            assert row[lab[i]] == max(row)
            assert all(v < row[lab[i]] for v in row[: lab[i]])


class TestFuse:
    def test_all_omega(self):
        a = torch.tensor([2, 0, 1, 3])
        part = partition(probs([[0.9, 0.1]] * 4), 0.5)
        assert torch.equal(fuse(a, part), a)

    def test_all_theta(self):
        a = torch.tensor([2, 0, 1, 3])
        part = partition(probs([[0.5, 0.5]] * 4), 0.5)
        assert fuse(a, part).tolist() == [IGNORE] * 4

    def test_mixed(self):
        a = torch.tensor([2, 0, 1, 3])
        part = partition(probs([[0.9, 0.1], [0.5, 0.5], [0.4, 0.6], [0.2, 0.8]]), 0.7)
        assert fuse(a, part).tolist() == [2, IGNORE, IGNORE, 3]


class TestRPD:
    def test_large_margin_is_argmax(self, rng):
        labels = torch.tensor(rng.integers(0, 4, size=(2, 6, 6)))
        logits = 20.0 * torch.nn.functional.one_hot(labels, 4).permute(0, 3, 1, 2).double()
        assert torch.equal(rpd(logits, 0.9), labels)

    def test_uniform_is_inactive(self):
        assert (rpd(torch.zeros(1, 4, 5, 5), 0.5) == IGNORE).all()

    def test_quarter_threshold_equals_argmax(self, rng):
        logits = torch.tensor(rng.normal(size=(4, 4, 16, 16)))
        p = normalize(logits)
        nonuniform = ~torch.isclose(p, torch.full_like(p, 0.25), atol=0, rtol=0).all(1)
        assert torch.equal(rpd(logits, 0.25)[nonuniform], p.argmax(1)[nonuniform])


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 100_000), t1=st.floats(0.01, 0.98), dt=st.floats(0.0, 0.5))
def test_rpd_properties(seed, t1, dt):
    t2 = min(t1 + dt, 0.99)
    rng = np.random.default_rng(seed)
    logits = torch.tensor(rng.normal(0, 2, size=(2, 3, 7, 5)))
    p = normalize(logits)
    part1, part2 = partition(p, t1), partition(p, t2)
    assert int(part1.omega.sum() + part1.theta.sum()) == p[:, 0].numel()
    assert not (part1.omega & part1.theta).any()
    assert not (part2.omega & ~part1.omega).any()
    pl = pseudo_labels_from_probs(p, t1)
    active = pl != IGNORE
    assert torch.equal(active, part1.omega)
    assert torch.equal(pl[active], p.argmax(1)[active])
    assert torch.equal(pl, rpd(logits, t1))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000), c=st.integers(-64, 64))
def test_shift_invariance_bit_exact(seed, c):
    # Integer logits keep x + c - max(x + c) exact in float64.
    rng = np.random.default_rng(seed)
    logits = torch.tensor(rng.integers(-6, 7, size=(1, 4, 6, 6)), dtype=torch.float64)
    shift = torch.tensor(rng.integers(-abs(c) - 1, abs(c) + 2, size=(1, 1, 6, 6)), dtype=torch.float64)
    assert torch.equal(rpd(logits, 0.5), rpd(logits + shift, 0.5))
