import json
import math

import mpmath
import numpy as np
import pytest

from cantorharm.exceptions import UsageError
from cantorharm.feasibility import (
    bound_delta2,
    bound_delta3,
    feasible,
    in_window,
    search_max_delta,
)


def mp_series(a, r, power, N=2, half_gap=1):
    """Majorant series summed term by term to 80 terms in 40-digit arithmetic."""
    mpmath.mp.dps = 40
    a, r = mpmath.mpf(a), mpmath.mpf(r)
    c = half_gap - a * r / (1 - r)
    total = mpmath.mpf(0)
    for ell in range(1, 81):
        u = a / 2 * r**ell / c
        total += (N - 1) * mpmath.mpf(N) ** (ell - 1) * u**power / (1 - u**power)
    return total


class TestMajorants:
    @pytest.mark.parametrize("a,r", [(2.217, 0.0623), (1.0, 0.01), (3.0, 1 / 16), (1.5, 0.03)])
    def test_against_mpmath(self, a, r):
        assert bound_delta2(a, r) == pytest.approx(float(2 * mp_series(a, r, 1)), rel=1e-14)
        assert bound_delta3(a, r) == pytest.approx(float(mp_series(a, r, 2)), rel=1e-14)

    def test_default_point_frozen(self):
        assert bound_delta2(2.217, 0.0623) == pytest.approx(0.19941039877681943, rel=1e-14)
        assert bound_delta3(2.217, 0.0623) == pytest.approx(0.006653817313558158, rel=1e-14)

    def test_window_corner(self):
        # separation 4/5 at the corner, first denominator 1 - 15/128
        rep = feasible(3.0, 1 / 16)
        assert rep.extra["separation_constant"] == pytest.approx(0.8, abs=1e-15)
        assert math.isfinite(rep.B2) and rep.window_ok

    def test_small_r_limit(self):
        # leading term: 2 (a/2) r / 1
        for r in (1e-6, 1e-9):
            assert bound_delta2(2.217, r) == pytest.approx(2.217 * r, rel=1e-5)
            assert bound_delta3(2.217, r) == pytest.approx((2.217 * r / 2) ** 2, rel=1e-5)

    def test_monotone_in_r(self):
        r = np.geomspace(1e-4, 1 / 16, 50)
        b = bound_delta2(2.0, r) + bound_delta3(2.0, r)
        assert np.all(np.diff(b) > 0)

    def test_tail_sound(self):
        # the truncated sum plus tail never undershoots the long sum
        for a, r in ((2.217, 0.0623), (3.0, 1 / 16)):
            assert float(2 * mp_series(a, r, 1)) - bound_delta2(a, r) <= 1e-12

    def test_roots_majorant(self):
        rep = feasible(2.63, 0.033, "roots:4")
        half = math.sqrt(2) / 2
        assert rep.B2 == pytest.approx(float(4 * mp_series(2.63, 0.033, 1, 4, half)), rel=1e-13)
        assert rep.B3 == pytest.approx(float(mp_series(2.63, 0.033, 2, 4, half)), rel=1e-13)

    def test_ring_rejected(self):
        with pytest.raises(UsageError):
            feasible(2.5, 0.0623, "ring:3")


class TestFeasible:
    def test_default_point(self):
        rep = feasible(2.217, 0.0623)
        assert 0.2496 <= rep.delta <= 0.2498
        assert rep.window_ok and rep.budget_safe
        assert rep.B2 + rep.B3 <= math.log(2.217) / 2
        assert rep.margin == pytest.approx(math.log(2.217) / 4 - rep.B2 - rep.B3, abs=1e-15)
        assert rep.margin == pytest.approx(-0.007025483431833984, abs=1e-12)
        assert not rep.feasible

    def test_roots_point(self):
        rep = feasible(2.63, 0.033, "roots:4")
        assert 0.406 <= rep.delta <= 0.407
        assert rep.extra["quoted_threshold"] == pytest.approx(3 * math.log(2.63) / 32)

    def test_no_spacing_range(self):
        rep = feasible(1.0, 0.01)
        assert rep.threshold == 0 and not rep.feasible

    def test_outside_window(self):
        rep = feasible(3.0, 0.2)
        assert not rep.window_ok and not rep.feasible
        assert not in_window(3.0, 0.07)

    def test_json(self):
        doc = json.loads(feasible(2.217, 0.0623).to_json())
        assert {"B2", "B3", "margin", "delta", "window_ok", "threshold"} <= set(doc)


class TestSearch:
    def test_line(self):
        res = search_max_delta()
        assert not res.empty
        assert res.best.delta >= 0.24 and res.best.margin >= 0 and res.best.feasible
        assert res.best.delta == pytest.approx(0.24716, abs=1e-4)

    def test_empty_region(self):
        res = search_max_delta(a_range=(1.0, 1.0))
        assert res.empty and not res.best.feasible

    def test_roots_reported(self):
        res = search_max_delta("roots:4", resolution=100, rounds=2)
        assert res.best.feasible and 0.3 < res.best.delta < 0.35

    def test_raster(self):
        res = search_max_delta(resolution=20, rounds=0)
        lines = res.raster_csv().splitlines()
        assert lines[0] == "a,r,delta,margin,feasible"
        assert len(lines) == 401

    def test_bad_arguments(self):
        with pytest.raises(UsageError):
            search_max_delta(resolution=1)
