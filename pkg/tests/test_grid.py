"""Grid container and quadrature primitives."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from commute_control import DomainError, GridFunction, product_grid


def test_nodes_and_spacing():
    g = GridFunction.constant(2.0, 0.0, 1.0, 5)
    assert g.n == 5
    assert g.h == pytest.approx(0.25)
    assert np.allclose(g.nodes, [0.0, 0.25, 0.5, 0.75, 1.0])


def test_rejects_bad_shapes():
    with pytest.raises(ValueError):
        GridFunction(0.0, 1.0, np.ones((2, 2)))
    with pytest.raises(ValueError):
        GridFunction(0.0, 1.0, np.ones(1))
    with pytest.raises(ValueError):
        GridFunction(1.0, 0.0, np.ones(3))
    with pytest.raises(ValueError):
        GridFunction(0.0, 1.0, np.array([1.0, np.nan, 1.0]))
    with pytest.raises(ValueError):
        GridFunction(0.0, 1.0, np.ones(3), "cubic")


def test_log_linear_requires_positive_values():
    with pytest.raises(ValueError):
        GridFunction(0.0, 1.0, np.array([1.0, 0.0, 1.0]), "log-linear")


def test_values_are_frozen():
    g = GridFunction.constant(1.0, 0.0, 1.0, 9)
    with pytest.raises(ValueError):
        g.values[0] = 3.0
    with pytest.raises(ValueError):
        g.nodes[0] = 3.0


def test_call_linear_interpolation():
    g = GridFunction(0.0, 1.0, np.linspace(0.0, 2.0, 3))
    assert g(0.25) == pytest.approx(0.5)
    out = g(np.array([0.0, 0.5, 1.0]))
    assert isinstance(out, np.ndarray)
    assert np.allclose(out, [0.0, 1.0, 2.0])
    assert isinstance(g(0.5), float)


def test_call_log_linear_is_geometric():
    # exp(linear in x) reproduces exponentials exactly between nodes
    g = GridFunction(0.0, 1.0, np.array([1.0, math.e ** 2]), "log-linear")
    assert g(0.5) == pytest.approx(math.e)


def test_domain_check():
    g = GridFunction.constant(1.0, 0.0, 1.0, 5)
    with pytest.raises(DomainError):
        g(1.5)
    with pytest.raises(DomainError):
        g.integral_to(-0.2)
    # tiny float slop is clipped, not rejected
    assert g(1.0 + 1e-14) == pytest.approx(1.0)


def test_integral_linear_exact():
    # trapezoid is exact on piecewise-linear data, including partial cells
    g = GridFunction(0.0, 2.0, np.linspace(0.0, 4.0, 9))
    assert g.integral_to(2.0) == pytest.approx(4.0)
    assert g.integral_to(0.7) == pytest.approx(0.49, abs=1e-15)
    assert g.integrate(0.3, 1.1) == pytest.approx((1.1 ** 2 - 0.3 ** 2), abs=1e-14)
    assert g.integrate(1.1, 0.3) == pytest.approx(-(1.1 ** 2 - 0.3 ** 2), abs=1e-14)


def test_cumulative_matches_integral_to_at_nodes():
    rng = np.random.default_rng(7)
    g = GridFunction(0.0, 1.0, rng.uniform(0.5, 2.0, 33))
    for k, x in enumerate(g.nodes):
        assert g.integral_to(float(x)) == pytest.approx(g.cumulative[k], abs=1e-15)


def test_total_quadratic_convergence():
    exact = math.e - 1.0
    errs = []
    for n in (17, 33, 65):
        g = GridFunction.from_callable(math.exp, 0.0, 1.0, n)
        errs.append(abs(g.total - exact))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.05)


def test_from_callable_and_resample():
    g = GridFunction.from_callable(lambda x: x * x, 0.0, 1.0, 101)
    r = g.resample(0.25, 0.75, 51)
    assert r.lo == 0.25 and r.hi == 0.75 and r.n == 51
    assert r(0.5) == pytest.approx(0.25, abs=1e-4)


def test_with_values_keeps_domain():
    g = GridFunction.constant(1.0, 0.0, 1.0, 9)
    g2 = g.with_values(2.0 * g.values)
    assert g2.total == pytest.approx(2.0)
    with pytest.raises(ValueError):
        g.with_values(np.ones(8))


def test_product_grid_requires_matching_grids():
    a = GridFunction.constant(2.0, 0.0, 1.0, 9)
    b = GridFunction.constant(3.0, 0.0, 1.0, 9)
    assert product_grid(a, b).total == pytest.approx(6.0)
    c = GridFunction.constant(3.0, 0.0, 1.0, 17)
    with pytest.raises(ValueError):
        product_grid(a, c)


@given(
    st.floats(min_value=0.0, max_value=1.0),
    st.floats(min_value=0.0, max_value=1.0),
)
@settings(max_examples=60, deadline=None)
def test_integrate_is_additive(a, b):
    g = GridFunction.from_callable(lambda x: 1.0 + 0.5 * math.sin(3.0 * x), 0.0, 1.0, 65)
    mid = 0.5 * (a + b)
    whole = g.integrate(a, b)
    split = g.integrate(a, mid) + g.integrate(mid, b)
    assert whole == pytest.approx(split, abs=1e-13)


@given(st.floats(min_value=0.0, max_value=1.0))
@settings(max_examples=60, deadline=None)
def test_interpolation_stays_within_node_bounds(x):
    rng = np.random.default_rng(11)
    vals = rng.uniform(0.5, 2.0, 33)
    g = GridFunction(0.0, 1.0, vals)
    y = g(x)
    assert vals.min() - 1e-12 <= y <= vals.max() + 1e-12
