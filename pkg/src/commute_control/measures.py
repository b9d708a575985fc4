"""Scale functions, speed measures, and one-dimensional commute costs.

A regular diffusion on [0, 1] with reflection at both endpoints is described
by its scale density s'(x) > 0 and volatility sigma(x) > 0; the implied drift
is mu = -sigma^2 (ln s')' / 2.  Running a positive cost rate f against the
speed measure gives the cost-weighted speed density m_f' = rho / s' with
rho = 2 f / sigma^2.  All expected-cost formulas below reduce to integrals of
s' against the cumulative weighted measures m_f and its tail counterpart.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .grid import DomainError, GridFunction


class ValidationError(ValueError):
    """Inconsistent or out-of-contract problem data."""


@dataclass(frozen=True)
class ScaleFunction:
    """A scale function on [0, 1] held through its density s'.

    ``s(x)`` is the prefix integral of the density and ``s_tilde(x)`` the
    suffix integral, so ``s(x) + s_tilde(x) == s(1)`` up to rounding.  The
    density is stored log-linearly: scale densities are strictly positive and
    arise as exponentials of integrated drift.
    """

    s_prime: GridFunction

    def __post_init__(self):
        g = self.s_prime
        if g.lo != 0.0 or g.hi != 1.0:
            raise ValidationError("scale density must live on [0, 1]")
        if not np.all(g.values > 0.0):
            raise ValidationError("scale density must be strictly positive")

    @property
    def n(self) -> int:
        return self.s_prime.n

    @cached_property
    def _suffix(self) -> np.ndarray:
        # independent suffix accumulation; the conservation identity
        # s + s_tilde = s(1) is then a genuine float-consistency check
        v = self.s_prime.values
        h = self.s_prime.h
        out = np.empty(v.size)
        out[-1] = 0.0
        out[:-1] = np.cumsum((0.5 * h * (v[1:] + v[:-1]))[::-1])[::-1]
        out.setflags(write=False)
        return out

    def s(self, x):
        """Prefix scale s(x) = integral of s' over [0, x]."""
        return self.s_prime.integral_to(x)

    def s_tilde(self, x):
        """Suffix scale s~(x) = integral of s' over [x, 1].

        Uses the same exact partial-cell trapezoid rule as the prefix, so the
        conservation identity s + s~ = s(1) holds to roundoff everywhere.
        """
        g = self.s_prime
        xc = g._check_domain(x)
        pos = (xc - g.lo) / g.h
        idx = np.minimum(pos.astype(np.int64), g.n - 2)
        theta = pos - idx
        v0 = g.values[idx]
        dv = g.values[idx + 1] - v0
        out = self._suffix[idx] - g.h * (theta * v0 + 0.5 * theta * theta * dv)
        if np.isscalar(x) or np.ndim(x) == 0:
            return float(out)
        return out

    @property
    def total(self) -> float:
        """s(1), the full scale mass of [0, 1]."""
        return self.s_prime.total

    @property
    def s_values(self) -> np.ndarray:
        return self.s_prime.cumulative

    @property
    def stilde_values(self) -> np.ndarray:
        return self._suffix

    @staticmethod
    def from_density(density: GridFunction) -> "ScaleFunction":
        return ScaleFunction(density)

    @staticmethod
    def natural(n: int = 2049) -> "ScaleFunction":
        """Driftless normalisation: s'(x) = 1."""
        return ScaleFunction(GridFunction.constant(1.0, 0.0, 1.0, n, "log-linear"))


@dataclass(frozen=True)
class ProblemSpec:
    """Problem data: volatility, cost rate, constraint interval, boundary scale.

    The scale density is pinned on the constraint set [0, ell] and [i0, 1];
    ``s0_prime`` stores a full extension of that boundary data across (ell, i0)
    which doubles as the default static comparison policy.  All fields share
    one uniform grid on [0, 1].
    """

    sigma: GridFunction
    f: GridFunction
    ell: float
    i0: float
    s0_prime: GridFunction

    def __post_init__(self):
        for name in ("sigma", "f", "s0_prime"):
            g = getattr(self, name)
            if g.lo != 0.0 or g.hi != 1.0:
                raise ValidationError(f"{name} must be sampled on [0, 1]")
            if not np.all(g.values > 0.0):
                raise ValidationError(f"{name} must be strictly positive")
        if not (self.sigma.n == self.f.n == self.s0_prime.n):
            raise ValidationError("sigma, f, s0_prime must share one grid")
        if not (0.0 <= self.ell < self.i0 <= 1.0):
            raise ValidationError(
                f"need 0 <= ell < i0 <= 1, got ell={self.ell}, i0={self.i0}"
            )
        # integrability guard for the square-root cost metric
        if not np.all(np.isfinite(np.sqrt(self.rho_values))):
            raise ValidationError("sqrt(2 f / sigma^2) must be integrable")

    @property
    def n(self) -> int:
        return self.sigma.n

    @cached_property
    def rho_values(self) -> np.ndarray:
        sig = self.sigma.values
        return 2.0 * self.f.values / (sig * sig)

    def s0(self) -> ScaleFunction:
        return ScaleFunction(self.s0_prime)


def scale_from_drift(mu: GridFunction, sigma: GridFunction) -> ScaleFunction:
    """Scale density of the diffusion dX = mu dt + sigma dB on [0, 1].

    s'(u) = exp(-2 * integral_0^u mu / sigma^2), so s is constructed from the
    drift with s'(0) = 1.
    """
    if mu.n != sigma.n or mu.lo != sigma.lo or mu.hi != sigma.hi:
        raise DomainError("mu and sigma must share one grid")
    if not np.all(sigma.values > 0.0):
        raise DomainError("sigma must be strictly positive")
    ratio = GridFunction(mu.lo, mu.hi, mu.values / sigma.values ** 2, "linear")
    log_density = -2.0 * ratio.cumulative
    return ScaleFunction(GridFunction(mu.lo, mu.hi, np.exp(log_density), "log-linear"))


def rho(spec: ProblemSpec) -> GridFunction:
    """Cost rate per unit of natural speed: 2 f / sigma^2."""
    return GridFunction(0.0, 1.0, spec.rho_values, "log-linear")


def beta(spec: ProblemSpec) -> GridFunction:
    """Square-root cost metric beta(x) = integral_ell^x sqrt(rho) on [ell, 1].

    beta is the intrinsic distance in which the reduced variational problem
    becomes one-dimensional; its derivative is sqrt(rho).
    """
    root = np.sqrt(spec.rho_values)
    if not np.all(np.isfinite(root)):
        raise ValidationError("sqrt(rho) must be finite on the grid")
    base = GridFunction(0.0, 1.0, root, "linear")
    m = max(2, int(round((1.0 - spec.ell) * (spec.n - 1))) + 1)
    x = np.linspace(spec.ell, 1.0, m)
    vals = base.integral_to(x) - base.integral_to(spec.ell)
    vals[0] = 0.0
    return GridFunction(spec.ell, 1.0, vals, "linear")


def mf_measures(s: ScaleFunction, spec: ProblemSpec) -> tuple[GridFunction, GridFunction]:
    """Cumulative cost-weighted speed measures (m_f, m_f tail) on [0, 1].

    m_f(x) integrates rho / s' from 0 to x; the tail version integrates from
    x to 1.  Their sum is constant equal to m_f(1).
    """
    if s.n != spec.n:
        raise ValidationError("scale and spec must share one grid")
    density = spec.rho_values / s.s_prime.values
    h = s.s_prime.h
    cells = 0.5 * h * (density[1:] + density[:-1])
    mf = np.empty(s.n)
    mf[0] = 0.0
    np.cumsum(cells, out=mf[1:])
    mtilde = np.empty(s.n)
    mtilde[-1] = 0.0
    mtilde[:-1] = np.cumsum(cells[::-1])[::-1]
    return (
        GridFunction(0.0, 1.0, mf, "linear"),
        GridFunction(0.0, 1.0, mtilde, "linear"),
    )


def phi_cost(s: ScaleFunction, spec: ProblemSpec, x: float, y: float) -> float:
    """Expected accumulated cost before first hitting y, started at x.

    Both endpoints reflect, so the upward journey (x < y) weighs s' against
    the below-mass m_f and the downward journey against the above-mass tail:

        x <= y:  integral_x^y s'(v) m_f(v) dv
        x >= y:  integral_y^x s'(v) m_f_tail(v) dv
    """
    if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
        raise DomainError(f"levels must lie in [0, 1], got x={x}, y={y}")
    if x == y:
        return 0.0
    mf, mtilde = mf_measures(s, spec)
    sp = s.s_prime.values
    if x < y:
        prod = GridFunction(0.0, 1.0, sp * mf.values, "linear")
        return prod.integrate(x, y)
    prod = GridFunction(0.0, 1.0, sp * mtilde.values, "linear")
    return prod.integrate(y, x)


def commute_identity_gap(s: ScaleFunction, spec: ProblemSpec) -> float:
    """Defect of phi_cost(0,1) + phi_cost(1,0) against s(1) times the total
    weighted speed mass; zero for the exact round trip.

    The full up-and-down commute cost factorises into total scale mass times
    total weighted speed mass; the gap measures internal quadrature
    consistency, not model error.
    """
    mf, _ = mf_measures(s, spec)
    up = phi_cost(s, spec, 0.0, 1.0)
    down = phi_cost(s, spec, 1.0, 0.0)
    return abs(up + down - s.total * mf.values[-1])
