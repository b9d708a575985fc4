"""Exponential-integral evaluation, inversion, and stable differences."""

import math

import numpy as np
import pytest
import scipy.integrate
import scipy.special
from hypothesis import given, settings
from hypothesis import strategies as st

from commute_control.expint import (
    exp_integral_diff,
    exp_integral_e1,
    exp_integral_inverse,
)
from commute_control.grid import DomainError

# Adaptive-quadrature values of int_x^inf exp(-u)/u du, frozen here so the
# suite does not depend on scipy.special for its reference numbers.
E1_AT_1 = 0.21938393439551984
E1_AT_2 = 0.04890051070806106


def quad_e1(x: float) -> float:
    val, err = scipy.integrate.quad(
        lambda u: math.exp(-u) / u, x, np.inf, limit=200
    )
    assert err < 1e-9
    return val


class TestEvaluation:
    def test_pinned_values_match_quadrature(self):
        assert quad_e1(1.0) == pytest.approx(E1_AT_1, abs=1e-9)
        assert quad_e1(2.0) == pytest.approx(E1_AT_2, abs=1e-9)
        assert exp_integral_e1(1.0) == pytest.approx(E1_AT_1, abs=1e-13)
        assert exp_integral_e1(2.0) == pytest.approx(E1_AT_2, abs=1e-13)

    def test_matches_scipy_on_lattice(self):
        xs = np.concatenate(
            [
                np.geomspace(1e-8, 0.99, 40),
                np.linspace(1.0, 30.0, 40),
                np.geomspace(30.0, 600.0, 10),
            ]
        )
        ours = exp_integral_e1(xs)
        ref = scipy.special.exp1(xs)
        scale = np.maximum(ref, 1e-300)
        assert np.max(np.abs(ours - ref) / scale) < 5e-14

    def test_series_cf_agree_at_crossover(self):
        # both branches are accurate near x = 1, so the seam must be smooth
        for x in (0.999999, 1.0, 1.000001):
            assert exp_integral_e1(x) == pytest.approx(
                float(scipy.special.exp1(x)), rel=1e-13
            )

    @pytest.mark.parametrize("x", [5.0, 10.0])
    def test_classical_envelope(self, x):
        # exp(-x)/(x+1) < E1(x) < exp(-x)/x for x > 0
        val = exp_integral_e1(x)
        assert math.exp(-x) / (x + 1.0) < val < math.exp(-x) / x

    def test_array_input_preserves_shape(self):
        xs = np.array([[0.5, 1.5], [2.5, 3.5]])
        out = exp_integral_e1(xs)
        assert out.shape == xs.shape
        assert out[0, 1] == exp_integral_e1(1.5)

    def test_rejects_nonpositive(self):
        with pytest.raises(DomainError):
            exp_integral_e1(0.0)
        with pytest.raises(DomainError):
            exp_integral_e1(np.array([1.0, -2.0]))

    @settings(max_examples=60, deadline=None)
    @given(st.floats(min_value=1e-6, max_value=50.0))
    def test_strictly_decreasing(self, x):
        assert exp_integral_e1(x) > exp_integral_e1(x * (1.0 + 1e-6))


class TestInverse:
    @pytest.mark.parametrize(
        "x", [1e-6, 1e-3, 0.1, 0.9, 1.0, 1.1, 3.0, 10.0, 50.0, 200.0]
    )
    def test_round_trip_from_x(self, x):
        y = exp_integral_e1(x)
        assert exp_integral_inverse(y) == pytest.approx(x, rel=5e-14)

    @settings(max_examples=80, deadline=None)
    @given(st.floats(min_value=-4.0, max_value=2.0))
    def test_round_trip_from_y(self, log10_y):
        y = 10.0**log10_y
        x = exp_integral_inverse(y)
        assert exp_integral_e1(x) == pytest.approx(y, rel=1e-12)

    def test_rejects_nonpositive(self):
        with pytest.raises(DomainError):
            exp_integral_inverse(0.0)


class TestDifference:
    def test_antisymmetry_and_zero(self):
        assert exp_integral_diff(2.0, 2.0) == 0.0
        assert exp_integral_diff(1.0, 3.0) == -exp_integral_diff(3.0, 1.0)

    def test_wide_gap_matches_direct(self):
        got = exp_integral_diff(0.5, 4.0)
        assert got == pytest.approx(
            exp_integral_e1(0.5) - exp_integral_e1(4.0), rel=1e-14
        )

    @pytest.mark.parametrize("a", [0.3, 1.0, 2.5, 8.0])
    @pytest.mark.parametrize("gap", [1e-1, 1e-3, 1e-6, 1e-9, 1e-12])
    def test_narrow_gap_stability_ladder(self, a, gap):
        # relative accuracy must hold where naive subtraction cancels
        b = a + gap
        ref, err = scipy.integrate.quad(lambda u: math.exp(-u) / u, a, b)
        got = exp_integral_diff(a, b)
        assert err < 1e-10 * abs(ref) + 1e-280
        assert got == pytest.approx(ref, rel=2e-13)

    def test_naive_subtraction_actually_cancels(self):
        # guard that the ladder above is testing something nontrivial
        a, b = 2.5, 2.5 + 1e-12
        naive = exp_integral_e1(a) - exp_integral_e1(b)
        ref = exp_integral_diff(a, b)
        assert abs(naive - ref) > 1e-3 * abs(ref)

    def test_rejects_nonpositive(self):
        with pytest.raises(DomainError):
            exp_integral_diff(-1.0, 2.0)
