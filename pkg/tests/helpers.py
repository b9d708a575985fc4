"""Shared builders for test problem instances."""

from __future__ import annotations

import numpy as np

from commute_control import GridFunction, ProblemSpec, ScaleFunction


def constant_spec(
    ell: float = 0.25,
    i0: float = 0.75,
    sigma: float = 1.0,
    f: float = 1.0,
    n: int = 2049,
) -> ProblemSpec:
    """Flat-coefficient instance; every derived quantity has a closed form."""
    return ProblemSpec(
        sigma=GridFunction.constant(sigma, 0.0, 1.0, n, "log-linear"),
        f=GridFunction.constant(f, 0.0, 1.0, n, "log-linear"),
        ell=ell,
        i0=i0,
        s0_prime=GridFunction.constant(1.0, 0.0, 1.0, n, "log-linear"),
    )


def smooth_spec(
    ell: float = 0.2,
    i0: float = 0.8,
    n: int = 2049,
    sigma_amp: float = 0.3,
    f_amp: float = 0.5,
    logs_amp: float = 0.6,
    seed: int = 0,
) -> ProblemSpec:
    """Smooth, strictly positive coefficients with mild low-order wiggles."""
    rng = np.random.default_rng(seed)
    a1, a2, a3 = rng.uniform(-1.0, 1.0, size=3)
    x = np.linspace(0.0, 1.0, n)
    sigma = 1.0 + sigma_amp * (0.5 * np.sin(2.3 * x + a1) + 0.3 * np.cos(4.1 * x))
    f = 1.0 + f_amp * (0.4 * np.cos(3.0 * x + a2) + 0.3 * np.sin(1.7 * x))
    logs = logs_amp * (0.6 * np.sin(2.0 * x + a3) - 0.4 * x)
    return ProblemSpec(
        sigma=GridFunction(0.0, 1.0, sigma, "log-linear"),
        f=GridFunction(0.0, 1.0, f, "log-linear"),
        ell=ell,
        i0=i0,
        s0_prime=GridFunction(0.0, 1.0, np.exp(logs), "log-linear"),
    )


def natural_scale(n: int = 2049) -> ScaleFunction:
    return ScaleFunction.natural(n)
