import math

import numpy as np
import pytest

from scribblevs.labels import ConfigError
from scribblevs.schedule import LR_FLOOR, PolyLRSchedule, ScheduleExhausted, WarmupSchedule, lambda_at, lr_at


class TestWarmup:
    def test_start(self):
        assert lambda_at(WarmupSchedule(12000), 0) == pytest.approx(6.7379e-3, rel=1e-4)
        assert abs(lambda_at(WarmupSchedule(12000), 0) - math.exp(-5)) <= 1e-12

    def test_end_and_after(self):
        s = WarmupSchedule(12000)
        assert lambda_at(s, 12000) == 1.0
        assert lambda_at(s, 60000) == 1.0

    def test_midpoint(self):
        assert lambda_at(WarmupSchedule(12000), 6000) == pytest.approx(0.28650, abs=5e-6)

    def test_monotone_and_bounded(self):
        s = WarmupSchedule(1000)
        vals = np.array([lambda_at(s, t) for t in range(3000)])
        assert (np.diff(vals) >= 0).all()
        assert vals.min() >= math.exp(-5) and vals.max() == 1.0

    def test_continuity_at_horizon(self):
        s = WarmupSchedule(500)
        assert 1.0 - lambda_at(s, 499) < 1e-4

    def test_invalid(self):
        with pytest.raises(ConfigError):
            WarmupSchedule(0)
        with pytest.raises(ValueError):
            lambda_at(WarmupSchedule(10), -1)


class TestPolyLR:
    def test_start(self):
        assert lr_at(PolyLRSchedule(0.01, 100), 0) == 0.01

    def test_end_floor(self):
        assert lr_at(PolyLRSchedule(0.01, 100), 100) == LR_FLOOR

    def test_half(self):
        assert lr_at(PolyLRSchedule(0.01, 100, 0.9), 50) == pytest.approx(0.01 * 0.5**0.9, rel=1e-14)

    def test_non_increasing(self):
        s = PolyLRSchedule(0.01, 500)
        vals = [lr_at(s, t) for t in range(501)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))
        assert all(0 < v <= 0.01 for v in vals)

    def test_exhausted(self):
        with pytest.raises(ScheduleExhausted):
            lr_at(PolyLRSchedule(0.01, 100), 101)
