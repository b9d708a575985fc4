"""Reset-policy payoff: boundary constants, the log-stretch transform, and
the running-minimum law.

The policy priced here plays a candidate scale until the top boundary is hit,
descends to the lowest pre-hit level, teleports to the lower constraint level
ell, and finishes the descent behind a reflecting barrier at ell.  Its
expected total cost has two equivalent quadrature forms, kept separate as a
cross-check of the whole algebra chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import DomainError, GridFunction
from .measures import ProblemSpec, ScaleFunction, ValidationError, mf_measures, phi_cost


@dataclass(frozen=True)
class BoundaryConstants:
    """Scalars determined by the scale outside the free interval.

    kappa: expected descent cost from ell to 0 behind a reflector at ell.
    a: weighted speed mass above the start level i.
    b: scale mass above i.
    c: weighted speed mass below ell.
    t_ell: scale mass above ell.
    k: scale mass below ell.
    """

    kappa: float
    a: float
    b: float
    c: float
    t_ell: float
    k: float

    def __post_init__(self):
        if self.t_ell < self.b - 1e-12 * max(1.0, self.b):
            raise ValidationError("scale mass above ell must dominate mass above i")
        if self.b <= 0.0 or self.a <= 0.0:
            raise ValidationError("start level must keep positive mass above it")


@dataclass(frozen=True)
class HTransform:
    """Log-stretch of the tail scale: H(z) = 1 + k/t_ell + ln(t_ell / s~(z)).

    H is nondecreasing with H' = s'/s~, and exp(H(z)) s~(z) is constant on
    the interval, equal to t_ell * exp(1 + k/t_ell).
    """

    H: GridFunction
    k: float
    t_ell: float

    @property
    def level(self) -> float:
        """The constant value of exp(H) * s~."""
        return self.t_ell * math.exp(1.0 + self.k / self.t_ell)


def boundary_constants(
    s: ScaleFunction, spec: ProblemSpec, ell: float, i: float
) -> BoundaryConstants:
    if not 0.0 <= ell < i <= 1.0:
        raise DomainError(f"need 0 <= ell < i <= 1, got ell={ell}, i={i}")
    mf, mtilde = mf_measures(s, spec)
    k = s.s(ell)
    t_ell = s.s_tilde(ell)
    b = s.s_tilde(i)
    a = float(mtilde(i))
    c = float(mf(ell))
    if ell == 0.0:
        kappa = 0.0
    else:
        # below-ell mass of m_f relative to ell, weighted by s'
        integrand = s.s_prime.values * (c - mf.values)
        kappa = GridFunction(0.0, 1.0, integrand).integral_to(ell)
    return BoundaryConstants(kappa=kappa, a=a, b=b, c=c, t_ell=t_ell, k=k)


def kappa_alternate(s: ScaleFunction, spec: ProblemSpec, ell: float) -> float:
    """Second quadrature route to kappa, via the tail measure.

    kappa = int_0^ell s' m~_f dv - s(ell) m~_f(ell); agreement with the
    direct form exercises the prefix/suffix bookkeeping.
    """
    _, mtilde = mf_measures(s, spec)
    lead = GridFunction(0.0, 1.0, s.s_prime.values * mtilde.values).integral_to(ell)
    return lead - s.s(ell) * float(mtilde(ell))


def h_transform(
    s: ScaleFunction, consts: BoundaryConstants, ell: float, i: float
) -> HTransform:
    if not 0.0 <= ell < i <= 1.0:
        raise DomainError(f"need 0 <= ell < i <= 1, got ell={ell}, i={i}")
    m = max(33, int(round((i - ell) * (s.n - 1))) + 1)
    x = np.linspace(ell, i, m)
    tail = s.s_tilde(x)
    if np.any(tail <= 0.0):
        raise DomainError("tail scale mass vanishes on the transform interval")
    vals = 1.0 + consts.k / consts.t_ell + np.log(consts.t_ell / tail)
    return HTransform(H=GridFunction(ell, i, vals), k=consts.k, t_ell=consts.t_ell)


def _assert_fixed_region(s: ScaleFunction, spec: ProblemSpec, ell: float, i: float):
    # the candidate may only differ from s0 strictly between ell and i
    nodes = s.s_prime.nodes
    fixed = (nodes <= ell + 1e-12) | (nodes >= i - 1e-12)
    got = s.s_prime.values[fixed]
    want = spec.s0_prime.values[fixed]
    if not np.allclose(got, want, rtol=1e-9, atol=0.0):
        raise ValidationError("candidate scale differs from the pinned boundary data")


def payoff_sstar(
    s: ScaleFunction, spec: ProblemSpec, ell: float, i: float, verify: bool = False
) -> float:
    """Expected cost of the reset policy under candidate scale s, start i.

    Closed form: kappa + b c + a b H(i) + b * int_ell^i rho H / s' dz, where
    the last term is the stretch-weighted integral exp(-H(i)) int rho H e^H/H'
    rewritten through the constancy of exp(H) s~ so that no large
    exponentials are formed.  With verify=True the independent expansion
    route is evaluated as well and a disagreement raises.
    """
    if s.n != spec.n:
        raise ValidationError("scale and spec must share one grid")
    _assert_fixed_region(s, spec, ell, i)
    consts = boundary_constants(s, spec, ell, i)
    ht = h_transform(s, consts, ell, i)
    grid = ht.H
    rho_on = spec.rho_values
    rho_fun = GridFunction(0.0, 1.0, rho_on)
    sp = s.s_prime
    x = grid.nodes
    integrand = rho_fun(x) * grid.values / sp(x)
    tail_term = consts.b * GridFunction(ell, i, integrand).total
    h_i = float(grid.values[-1])
    value = consts.kappa + consts.b * consts.c + consts.a * consts.b * h_i + tail_term
    if verify:
        expansion = payoff_sstar_expansion(s, spec, ell, i)
        scale = max(1.0, abs(value))
        if abs(value - expansion) > 1e-6 * scale:
            raise ValidationError(
                f"payoff routes disagree: {value} vs {expansion} at ell={ell}, i={i}"
            )
    return value


def payoff_sstar_expansion(
    s: ScaleFunction, spec: ProblemSpec, ell: float, i: float
) -> float:
    """Independent route: condition on the pre-hit running minimum.

    Ascend from i, then average the descent cost over the minimum's law F:
    plain full descent when the minimum dipped to ell or lower, otherwise
    descent to the minimum plus the reset cost kappa.
    """
    if s.n != spec.n:
        raise ValidationError("scale and spec must share one grid")
    consts = boundary_constants(s, spec, ell, i)
    _, mtilde = mf_measures(s, spec)
    up = phi_cost(s, spec, i, 1.0)
    down_full = phi_cost(s, spec, 1.0, 0.0)
    f_ell = infimum_law_cdf(s, i, ell)
    # descent-to-x costs for all grid x at once: phi_cost(1, x) = W(1) - W(x)
    prod = GridFunction(0.0, 1.0, s.s_prime.values * mtilde.values)
    m = max(33, int(round((i - ell) * (s.n - 1))) + 1)
    x = np.linspace(ell, i, m)
    phi_1_x = prod.total - prod.integral_to(x)
    tail = s.s_tilde(x)
    density = consts.b * sp_on(s, x) / (tail * tail)
    averaged = GridFunction(ell, i, phi_1_x * density).total
    return up + f_ell * down_full + (1.0 - f_ell) * consts.kappa + averaged


def sp_on(s: ScaleFunction, x: np.ndarray) -> np.ndarray:
    return s.s_prime(x)


def infimum_law_cdf(s: ScaleFunction, i: float, x: float) -> float:
    """Law of the lowest level visited before the first top-boundary hit.

    Started from i, the minimum M satisfies P(M <= x) = s~(i)/s~(x) for
    x in [0, i]; mass never exceeds i and never goes negative.
    """
    if x < 0.0:
        return 0.0
    if x > i:
        return 1.0
    return s.s_tilde(i) / s.s_tilde(x)
