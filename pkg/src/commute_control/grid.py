"""Uniform-grid sampled functions on an interval, with trapezoid quadrature.

Everything downstream stores coefficient fields (volatility, cost rate, scale
densities, cumulative measures) as :class:`GridFunction` objects.  Positive
densities use log-linear interpolation so that pointwise evaluation can never
produce a negative value; cumulative quantities use plain linear interpolation.
Quadrature is the composite trapezoid rule on the stored nodes, with exact
partial-cell handling for off-node endpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np


class DomainError(ValueError):
    """Evaluation or construction outside a function's declared domain."""


_INTERP_MODES = ("linear", "log-linear")


@dataclass(frozen=True)
class GridFunction:
    """A function sampled on ``n`` uniformly spaced nodes of ``[lo, hi]``.

    ``interp`` selects how values between nodes are produced: ``"linear"``
    interpolates the values directly, ``"log-linear"`` interpolates their
    logarithms (requires strictly positive samples, preserves positivity).
    """

    lo: float
    hi: float
    values: np.ndarray
    interp: str = "linear"

    def __post_init__(self):
        vals = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if vals.ndim != 1 or vals.size < 2:
            raise DomainError("GridFunction needs a 1-d array of at least 2 values")
        if not (np.isfinite(self.lo) and np.isfinite(self.hi) and self.lo < self.hi):
            raise DomainError(f"bad interval [{self.lo}, {self.hi}]")
        if not np.all(np.isfinite(vals)):
            raise DomainError("GridFunction values must be finite")
        if self.interp not in _INTERP_MODES:
            raise DomainError(f"unknown interpolation mode {self.interp!r}")
        if self.interp == "log-linear" and not np.all(vals > 0.0):
            raise DomainError("log-linear storage requires strictly positive values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / (self.n - 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        x = np.linspace(self.lo, self.hi, self.n)
        x.setflags(write=False)
        return x

    # -- evaluation ---------------------------------------------------------

    def _check_domain(self, x):
        x = np.asarray(x, dtype=np.float64)
        slack = 1e-12 * max(1.0, abs(self.lo), abs(self.hi))
        if np.any(x < self.lo - slack) or np.any(x > self.hi + slack):
            raise DomainError(
                f"evaluation at {x} outside domain [{self.lo}, {self.hi}]"
            )
        return np.clip(x, self.lo, self.hi)

    def __call__(self, x):
        """Evaluate at ``x`` (scalar or array); outside ``[lo, hi]`` is an error."""
        xc = self._check_domain(x)
        if self.interp == "linear":
            out = np.interp(xc, self.nodes, self.values)
        else:
            out = np.exp(np.interp(xc, self.nodes, np.log(self.values)))
        if np.isscalar(x) or np.ndim(x) == 0:
            return float(out)
        return out

    # -- quadrature ---------------------------------------------------------

    @cached_property
    def cumulative(self) -> np.ndarray:
        """Trapezoid prefix integral at the nodes; ``cumulative[0] == 0``."""
        v = self.values
        out = np.empty(self.n)
        out[0] = 0.0
        np.cumsum(0.5 * self.h * (v[1:] + v[:-1]), out=out[1:])
        out.setflags(write=False)
        return out

    def integral_to(self, x):
        """Integral of the linear interpolant from ``lo`` to ``x`` (exact per cell)."""
        xc = self._check_domain(x)
        pos = (xc - self.lo) / self.h
        idx = np.minimum(pos.astype(np.int64), self.n - 2)
        theta = pos - idx
        v0 = self.values[idx]
        dv = self.values[idx + 1] - v0
        out = self.cumulative[idx] + self.h * (theta * v0 + 0.5 * theta * theta * dv)
        if np.isscalar(x) or np.ndim(x) == 0:
            return float(out)
        return out

    def integrate(self, a: float, b: float) -> float:
        """Signed integral over ``[a, b]`` of the linear interpolant."""
        return self.integral_to(b) - self.integral_to(a)

    @property
    def total(self) -> float:
        return float(self.cumulative[-1])

    # -- constructors -------------------------------------------------------

    @staticmethod
    def from_callable(fn: Callable, lo: float, hi: float, n: int,
                      interp: str = "linear") -> "GridFunction":
        x = np.linspace(lo, hi, n)
        try:
            vals = np.asarray(fn(x), dtype=np.float64)
            if vals.shape != x.shape:
                raise TypeError
        except (TypeError, ValueError):
            # scalar-only callable
            vals = np.array([float(fn(t)) for t in x])
        return GridFunction(lo, hi, vals, interp)

    @staticmethod
    def constant(value: float, lo: float = 0.0, hi: float = 1.0, n: int = 2,
                 interp: str = "linear") -> "GridFunction":
        return GridFunction(lo, hi, np.full(n, float(value)), interp)

    def resample(self, lo: float, hi: float, n: int) -> "GridFunction":
        """Sample this function onto a new uniform grid inside its domain."""
        x = np.linspace(lo, hi, n)
        return GridFunction(lo, hi, self(x), self.interp)

    def with_values(self, values: np.ndarray) -> "GridFunction":
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (self.n,):
            raise DomainError(f"expected {self.n} values, got shape {values.shape}")
        return GridFunction(self.lo, self.hi, values, self.interp)


def product_grid(a: GridFunction, b: GridFunction) -> GridFunction:
    """Pointwise product on a shared grid, stored linearly for quadrature."""
    if a.n != b.n or a.lo != b.lo or a.hi != b.hi:
        raise DomainError("product requires identical grids")
    return GridFunction(a.lo, a.hi, a.values * b.values, "linear")
