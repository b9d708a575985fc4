"""Analytical core: the reduced kernel calculus and the optimal scale.

The expected-cost optimization over scale densities on the free interval
reduces, in the square-root cost metric, to a one-parameter family of convex
kernels built from the exponential integral.  This module evaluates that
kernel and its convex conjugate, returns the frontier value V(i), constructs
the optimal scale density by integrating the feedback law downward from the
start level, and evaluates the pointwise optimality residual that
characterizes the construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .expint import exp_integral_diff, exp_integral_e1, exp_integral_inverse
from .grid import DomainError, GridFunction
from .measures import ProblemSpec, ScaleFunction, ValidationError, beta, mf_measures
from .payoff import boundary_constants

_EDGE_SLACK = 1e-12


def phi_exp_integral(x):
    """The exponential integral E1; the kernel's underlying special function."""
    return exp_integral_e1(x)


def p_delta(delta: float, y) -> float:
    """The stretch map y -> 1 + delta/y + ln y on y >= 1."""
    if delta < 0.0:
        raise DomainError(f"delta must be nonnegative, got {delta}")
    ya = np.asarray(y, dtype=np.float64)
    if np.any(ya < 1.0 - _EDGE_SLACK):
        raise DomainError("stretch map is restricted to y >= 1")
    out = 1.0 + delta / ya + np.log(ya)
    if np.isscalar(y) or np.ndim(y) == 0:
        return float(out)
    return out


def Gamma_delta(delta: float) -> float:
    """Left edge of the invertible branch of the stretch map."""
    if delta < 0.0:
        raise DomainError(f"delta must be nonnegative, got {delta}")
    return max(delta, 1.0)


def gamma_delta(delta: float) -> float:
    """Smallest attainable stretch value: p_delta evaluated at its branch edge."""
    if delta < 0.0:
        raise DomainError(f"delta must be nonnegative, got {delta}")
    return 1.0 + delta if delta < 1.0 else 2.0 + math.log(delta)


def p_delta_inv(delta: float, z: float, y0: float | None = None) -> float:
    """Upper-branch inverse of the stretch map: the unique y >= Gamma_delta
    with p_delta(y) = z.

    Safeguarded Newton: iterates stay inside a maintained bracket and fall
    back to bisection whenever a Newton step would leave it.
    """
    if delta < 0.0:
        raise DomainError(f"delta must be nonnegative, got {delta}")
    g = gamma_delta(delta)
    if z < g - 1e-12 * max(1.0, abs(g)):
        raise DomainError(f"stretch value {z} below the branch minimum {g}")
    big = Gamma_delta(delta)
    if z <= g:
        return big
    lo = big
    hi = math.exp(min(z - 1.0, 700.0))
    y = y0 if (y0 is not None and lo < y0 < hi) else 0.5 * (lo + hi)
    for _ in range(120):
        fy = 1.0 + delta / y + math.log(y) - z
        if abs(fy) < 2e-15 * max(1.0, z):
            return y
        if fy > 0.0:
            hi = y
        else:
            lo = y
        if hi - lo < 4e-16 * hi:
            return 0.5 * (lo + hi)
        dfy = (y - delta) / (y * y)
        if dfy > 0.0:
            ynew = y - fy / dfy
        else:
            ynew = 0.5 * (lo + hi)
        if not lo < ynew < hi:
            ynew = 0.5 * (lo + hi)
        y = ynew
    return y


@dataclass(frozen=True)
class PsiPoint:
    """Kernel evaluation: value and slope at one point of one family member."""

    delta: float
    z: float
    psi: float
    psi_prime: float

    def __post_init__(self):
        if not (self.psi > 0.0 and self.psi_prime < 0.0):
            raise ValidationError(
                f"kernel must be positive and decreasing, got {self.psi}, {self.psi_prime}"
            )


def psi(delta: float, z: float, y0: float | None = None) -> PsiPoint:
    """Kernel value exp(-z) / (E1(w) - E1(z)) with w = 1 + delta/y, plus the
    closed-form slope; y is the upper-branch preimage of z.

    The identity z - ln y = 1 + delta/y (the stretch relation rearranged) is
    asserted; it is how the first E1 argument avoids a log subtraction.
    """
    g = gamma_delta(delta)
    if not z > g:
        raise DomainError(f"kernel defined only beyond the edge {g}, got z={z}")
    y = p_delta_inv(delta, z, y0)
    w = 1.0 + delta / y
    if abs((z - math.log(y)) - w) > 1e-9 * max(1.0, abs(z)):
        raise ValidationError("stretch relation violated in kernel evaluation")
    denom = exp_integral_diff(w, z)
    if denom <= 0.0:
        raise DomainError(f"kernel denominator vanished at z={z}, delta={delta}")
    val = math.exp(-z) / denom
    y2 = y * y
    d2 = delta * delta
    if y2 - d2 <= 0.0:
        raise DomainError(f"slope undefined at the branch edge, z={z}")
    gval = 1.0 / z + delta * y2 / (y2 - d2)
    return PsiPoint(delta=delta, z=z, psi=val, psi_prime=-(val + val * val * gval))


@dataclass(frozen=True)
class ConjugateResult:
    """Convex conjugate at one slope: inf over z of (z r + kernel(z))."""

    r: float
    value: float
    argmin_R: float


def psi_star(delta: float, r: float, z_hint: float | None = None) -> ConjugateResult:
    """Minimize z*r + kernel(z) over the kernel's domain.

    The slope condition kernel'(R) = -r has a unique root by strict
    convexity; the kernel's slope falls to -inf at the domain edge and rises
    to 0 at infinity, so a geometric bracket always exists.  Roots pinned
    within the edge offset are clamped there (the value error this makes is
    below r times the offset).
    """
    if not r > 0.0:
        raise DomainError(f"conjugate slope must be positive, got {r}")
    g = gamma_delta(delta)
    edge = g + 1e-9 * max(1.0, g)

    y_cache: list[float | None] = [None]

    def slope(z: float) -> float:
        pt = psi(delta, z, y_cache[0])
        y_cache[0] = p_delta_inv(delta, z, y_cache[0])
        return pt.psi_prime + r

    if slope(edge) >= 0.0:
        best = edge
    else:
        lo = edge
        hi = None
        if z_hint is not None and z_hint > edge:
            cand = g + 1.6 * (z_hint - g)
            if slope(cand) >= 0.0:
                hi = cand
                tight = g + 0.6 * (z_hint - g)
                if tight > edge and slope(tight) < 0.0:
                    lo = tight
        if hi is None:
            width = 1.0 if z_hint is None else max(1.0, 2.0 * (z_hint - g))
            hi = g + width
            for _ in range(80):
                if slope(hi) >= 0.0:
                    break
                hi = g + 2.0 * (hi - g)
            else:
                raise ValidationError(f"no conjugate bracket for delta={delta}, r={r}")
        best = brentq(slope, lo, hi, xtol=1e-13, rtol=8.9e-16, maxiter=200)
    pt = psi(delta, best)
    return ConjugateResult(r=r, value=best * r + pt.psi, argmin_R=best)


def value_V(spec: ProblemSpec, s: ScaleFunction, i: float) -> float:
    """Frontier value: best expected remaining cost when the running minimum
    sits at i and the scale above i is already fixed to s.

    Equals kappa + b c + beta(i)^2 * conjugate(a b / beta(i)^2).  As i falls
    to the lower constraint level the conjugate term tends to
    gamma_delta * a b (the static commute cost from there), not to zero, so
    the degenerate branch returns that limit.
    """
    if not spec.ell < i <= spec.i0 + _EDGE_SLACK:
        raise DomainError(f"frontier must lie in (ell, i0], got {i}")
    consts = boundary_constants(s, spec, spec.ell, i)
    base = consts.kappa + consts.b * consts.c
    delta = consts.k / consts.b
    ab = consts.a * consts.b
    bfun = beta(spec)
    bi = float(bfun(i))
    if bi <= 1e-8:
        return base + gamma_delta(delta) * ab
    b2 = bi * bi
    conj = psi_star(delta, ab / b2)
    return base + b2 * conj.value


def value_V_tgrid(
    spec: ProblemSpec, s: ScaleFunction, i: float, num_t: int = 4001
) -> tuple[float, float, bool]:
    """Independent route to the frontier value: direct minimization over the
    tail-mass parameter t >= b, without the conjugate machinery.

    Returns (value, minimizing t, boundary flag); the flag reports a
    minimizer within one grid step of the lower endpoint t = b, where the
    grid cannot distinguish an interior minimum from a boundary one.
    """
    if not spec.ell < i <= spec.i0 + _EDGE_SLACK:
        raise DomainError(f"frontier must lie in (ell, i0], got {i}")
    consts = boundary_constants(s, spec, spec.ell, i)
    base = consts.kappa + consts.b * consts.c
    k, b = consts.k, consts.b
    delta = k / b
    ab = consts.a * consts.b
    bfun = beta(spec)
    bi = float(bfun(i))
    if bi <= 1e-8:
        return base + gamma_delta(delta) * ab, b * Gamma_delta(delta), False
    b2 = bi * bi

    def objective(y: float) -> float:
        z = 1.0 + delta / y + math.log(y)
        w = 1.0 + delta / y
        denom = exp_integral_diff(w, z)
        if denom <= 0.0:
            return math.inf
        return ab * z + b2 * math.exp(-z) / denom

    y_hi = math.exp(min(gamma_delta(delta) + 80.0, 700.0) - 1.0)
    ys = np.exp(np.linspace(math.log(1.0 + 1e-9), math.log(y_hi), num_t))
    vals = np.array([objective(t) for t in ys])
    j = int(np.argmin(vals))
    lo = ys[max(j - 1, 0)]
    hi = ys[min(j + 1, num_t - 1)]
    res = minimize_scalar(objective, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12 * max(1.0, hi)})
    y_opt = float(res.x)
    best = float(res.fun)
    if vals[j] < best:
        y_opt, best = float(ys[j]), float(vals[j])
    boundary = y_opt <= ys[1]
    return base + best, y_opt * b, boundary


def euler_lagrange_H(beta_grid: GridFunction, H_ell: float, H_i: float) -> GridFunction:
    """Stationary stretch profile between fixed endpoint values.

    The stationarity condition integrates in closed form: E1(H(y)) is affine
    in the metric coordinate beta(y), so the profile is recovered by
    inverting E1 along that line.
    """
    if not H_i > H_ell >= 1.0:
        raise DomainError(f"need H_i > H_ell >= 1, got {H_ell}, {H_i}")
    bv = beta_grid.values
    if bv[0] > 1e-12 or np.any(np.diff(bv) <= 0.0):
        raise DomainError("metric coordinate must start at 0 and strictly increase")
    e_lo = exp_integral_e1(H_ell)
    e_hi = exp_integral_e1(H_i)
    D = (e_lo - e_hi) / bv[-1]
    targets = e_lo - D * bv
    if targets[-1] <= 0.0:
        raise DomainError("stretch profile leaves the invertible range")
    h_vals = np.array([exp_integral_inverse(t) for t in targets])
    h_vals[0] = H_ell
    h_vals[-1] = H_i
    return GridFunction(beta_grid.lo, beta_grid.hi, h_vals)


@dataclass(frozen=True)
class OptimalScaleResult:
    """Downward-integrated optimal scale and its diagnostics.

    All four curves live on the open-at-bottom interval (ell, i0] sampled at
    uniform nodes; residual is recomputed from the stitched profile by
    quadrature, so it measures ODE-vs-quadrature consistency rather than
    restating the construction.
    """

    s_hat_prime: GridFunction
    s_tilde: GridFunction
    value_at: GridFunction
    residual: GridFunction
    argmin_R: GridFunction
    ode_error_estimate: float


def _feedback(
    spec: ProblemSpec,
    bfun: GridFunction,
    rho_fun: GridFunction,
    kappa: float,
    c: float,
    k: float,
    i: float,
    st: float,
    mt: float,
    hint: float | None,
) -> tuple[float, float, float, float]:
    """Scale density, value, and kernel argmin at one frontier state."""
    if st <= 0.0 or mt <= 0.0:
        raise ValidationError(f"state collapsed at i={i}: s~={st}, m~={mt}")
    bi = float(bfun(i))
    if bi <= 0.0:
        raise ValidationError(f"metric coordinate vanished at i={i}")
    rho_i = float(rho_fun(i))
    bp = math.sqrt(rho_i)
    delta = k / st
    r = mt * st / (bi * bi)
    conj = psi_star(delta, r, z_hint=hint)
    big_r = conj.argmin_R
    psi_val = conj.value - big_r * r
    sp = st * big_r * bp / (bi * psi_val)
    value = kappa + st * c + bi * bi * conj.value
    return sp, value, big_r, rho_i


def _integrate(
    spec: ProblemSpec,
    bfun: GridFunction,
    rho_fun: GridFunction,
    kappa: float,
    c: float,
    k: float,
    levels: np.ndarray,
    st0: float,
    mt0: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Classical 4th-order sweep down the level grid; per-step halving on
    kernel-bracket failures, which occur when the argmin pins at the edge."""
    m = levels.size
    sp_arr = np.empty(m)
    st_arr = np.empty(m)
    mt_arr = np.empty(m)
    val_arr = np.empty(m)
    r_arr = np.empty(m)
    st, mt = st0, mt0
    hint: float | None = None

    def rhs(i, st_c, mt_c, hint_c):
        sp, _, big_r, rho_i = _feedback(
            spec, bfun, rho_fun, kappa, c, k, i, st_c, mt_c, hint_c
        )
        return -sp, -rho_i / sp, big_r

    for j in range(m):
        i = levels[j]
        sp, val, big_r, _ = _feedback(spec, bfun, rho_fun, kappa, c, k, i, st, mt, hint)
        sp_arr[j] = sp
        st_arr[j] = st
        mt_arr[j] = mt
        val_arr[j] = val
        r_arr[j] = big_r
        hint = big_r
        if j == m - 1:
            break
        step = levels[j + 1] - levels[j]
        pieces = 1
        while True:
            try:
                st_try, mt_try = st, mt
                sub = step / pieces
                start = i
                for _ in range(pieces):
                    d1s, d1m, _ = rhs(start, st_try, mt_try, hint)
                    d2s, d2m, _ = rhs(start + 0.5 * sub, st_try + 0.5 * sub * d1s,
                                      mt_try + 0.5 * sub * d1m, hint)
                    d3s, d3m, _ = rhs(start + 0.5 * sub, st_try + 0.5 * sub * d2s,
                                      mt_try + 0.5 * sub * d2m, hint)
                    d4s, d4m, hr = rhs(start + sub, st_try + sub * d3s,
                                       mt_try + sub * d3m, hint)
                    st_try += sub / 6.0 * (d1s + 2.0 * d2s + 2.0 * d3s + d4s)
                    mt_try += sub / 6.0 * (d1m + 2.0 * d2m + 2.0 * d3m + d4m)
                    start += sub
                    hint = hr
                st, mt = st_try, mt_try
                break
            except (ValidationError, DomainError):
                pieces *= 2
                if pieces > 16:
                    raise ValidationError(
                        f"optimal-scale integration failed near level i={i}"
                    )
    return sp_arr, st_arr, mt_arr, val_arr, r_arr


def optimal_scale(
    spec: ProblemSpec, max_step: float | None = None
) -> OptimalScaleResult:
    """Construct the optimal scale density on the free interval.

    Integrates the frontier state (tail scale mass, tail weighted speed mass)
    downward from i0, assigning at each level the density that attains the
    pointwise optimality bound.  A halved-step pass gives the Richardson
    error estimate; the residual column is recomputed from the stitched
    profile by quadrature.  max_step caps the level spacing of the sweep;
    the default ties it to the working grid.
    """
    s0 = spec.s0()
    consts = boundary_constants(s0, spec, spec.ell, spec.i0)
    kappa, c, k = consts.kappa, consts.c, consts.k
    bfun = beta(spec)
    rho_fun = GridFunction(0.0, 1.0, spec.rho_values, "log-linear")
    n_free = int(round((spec.i0 - spec.ell) * (spec.n - 1)))
    m = max(65, n_free)
    if max_step is not None:
        if not max_step > 0.0:
            raise ValidationError(f"level step must be positive, got {max_step}")
        m = max(m, int(math.ceil((spec.i0 - spec.ell) / max_step)))
    # nodes from i0 down to the first level above ell
    levels = np.linspace(spec.i0, spec.ell, m + 1)[:-1]
    st0 = s0.s_tilde(spec.i0)
    _, mtilde0 = mf_measures(s0, spec)
    mt0 = float(mtilde0(spec.i0))

    sp_f, st_f, mt_f, val_f, r_f = _integrate(
        spec, bfun, rho_fun, kappa, c, k, levels, st0, mt0
    )
    coarse = levels[::2]
    _, _, _, val_c, _ = _integrate(
        spec, bfun, rho_fun, kappa, c, k, coarse, st0, mt0
    )
    err = float(np.max(np.abs(val_f[::2][: val_c.size] - val_c)) / 15.0)

    lo = float(levels[-1])
    hi = float(levels[0])
    order = slice(None, None, -1)
    result = OptimalScaleResult(
        s_hat_prime=GridFunction(lo, hi, sp_f[order], "log-linear"),
        s_tilde=GridFunction(lo, hi, st_f[order]),
        value_at=GridFunction(lo, hi, val_f[order]),
        residual=GridFunction(lo, hi, np.zeros(m)),
        argmin_R=GridFunction(lo, hi, r_f[order]),
        ode_error_estimate=err,
    )
    stitched = stitch_optimal_scale(spec, result)
    res_vals = np.array(
        [delta_residual(stitched, spec, float(v)) for v in result.s_hat_prime.nodes[:-1]]
    )
    res_vals = np.append(res_vals, res_vals[-1])
    return OptimalScaleResult(
        s_hat_prime=result.s_hat_prime,
        s_tilde=result.s_tilde,
        value_at=result.value_at,
        residual=GridFunction(lo, hi, res_vals),
        argmin_R=result.argmin_R,
        ode_error_estimate=err,
    )


def stitch_optimal_scale(spec: ProblemSpec, result: OptimalScaleResult) -> ScaleFunction:
    """Full-interval scale: pinned boundary data outside (ell, i0), the
    constructed density strictly inside."""
    vals = spec.s0_prime.values.copy()
    nodes = spec.s0_prime.nodes
    inner = (nodes > spec.ell + _EDGE_SLACK) & (nodes < spec.i0 - _EDGE_SLACK)
    xs = np.clip(nodes[inner], result.s_hat_prime.lo, result.s_hat_prime.hi)
    vals[inner] = result.s_hat_prime(xs)
    return ScaleFunction(GridFunction(0.0, 1.0, vals, "log-linear"))


def delta_residual(s: ScaleFunction, spec: ProblemSpec, i: float) -> float:
    """Pointwise optimality residual of a scale at frontier level i.

    Nonpositive for every admissible scale; zero exactly when the density at
    i attains the arithmetic-geometric equality, which is the defining
    property of the constructed optimum.
    """
    if not spec.ell < i < spec.i0:
        raise DomainError(f"residual defined on the open free interval, got {i}")
    bfun = beta(spec)
    bi = float(bfun(i))
    rho_i = float(GridFunction(0.0, 1.0, spec.rho_values, "log-linear")(i))
    bp = math.sqrt(rho_i)
    consts = boundary_constants(s, spec, spec.ell, i)
    delta = consts.k / consts.b
    r = consts.a * consts.b / (bi * bi)
    conj = psi_star(delta, r)
    big_r = conj.argmin_R
    psi_val = conj.value - big_r * r
    x = s.s_prime(i) / s.s_tilde(i)
    return (
        2.0 * bi * bp * psi_val
        - x * bi * bi * psi_val * psi_val / big_r
        - rho_i * big_r / x
    )


def value_surface(
    s: ScaleFunction, spec: ProblemSpec, i: float, x: float, flag: str
) -> float:
    """Value of the controlled problem as a function of current position.

    flag="pre_top": frontier at i, position x >= i, top boundary not yet
    visited.  flag="post_top": frontier frozen at i, descending; three
    branches split at the frontier and at the lower constraint level.
    """
    if flag not in ("pre_top", "post_top"):
        raise DomainError(f"unknown phase flag {flag!r}")
    _, mtilde = mf_measures(s, spec)
    prod = GridFunction(0.0, 1.0, s.s_prime.values * mtilde.values)
    if flag == "pre_top":
        if not spec.ell <= i <= x <= 1.0:
            raise DomainError(
                f"pre-top surface needs ell <= i <= x <= 1, got i={i}, x={x}"
            )
        kappa = 0.0
        if spec.ell > 0.0:
            kappa = boundary_constants(s, spec, spec.ell, spec.i0).kappa
        if i <= spec.ell + _EDGE_SLACK:
            v_i = _frontier_floor(s, spec)
        else:
            v_i = value_V(spec, s, i)
        if x == i:
            return v_i
        ratio = s.s_tilde(x) / s.s_tilde(i)
        return prod.integrate(i, x) + ratio * (v_i - kappa) + kappa
    # post_top
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"position must lie in [0,1], got {x}")
    kappa = 0.0
    if spec.ell > 0.0:
        kappa = boundary_constants(s, spec, spec.ell, spec.i0).kappa
    if x > i:
        return prod.integrate(i, x) + kappa
    if x > spec.ell:
        return kappa
    mf, _ = mf_measures(s, spec)
    c = float(mf(spec.ell))
    integrand = GridFunction(0.0, 1.0, s.s_prime.values * (c - mf.values))
    return integrand.integral_to(x)


def _frontier_floor(s: ScaleFunction, spec: ProblemSpec) -> float:
    # value with the frontier resting exactly on the lower constraint level
    mf, mtilde = mf_measures(s, spec)
    kappa = 0.0
    if spec.ell > 0.0:
        kappa = boundary_constants(s, spec, spec.ell, spec.i0).kappa
    c = float(mf(spec.ell))
    a = float(mtilde(spec.ell))
    b = s.s_tilde(spec.ell)
    k = s.s(spec.ell)
    return kappa + b * c + gamma_delta(k / b) * a * b
