#!/usr/bin/env python3
"""Sweep the steep-policy rate and watch the cost approach the reset limit.

For each rate n the steep policy chases the descending frontier with a
downward log-slope of n; as n grows the Monte Carlo cost should decrease
toward the cost of the instantaneous-reset policy on the same scale, which
in turn sits just above the closed-form value (Euler bias only).
"""

from __future__ import annotations

import argparse
import math

import numpy as np

from commute_control import GridFunction, ProblemSpec
from commute_control.optimizer import optimal_scale, stitch_optimal_scale, value_V
from commute_control.simulate import (
    Policy,
    mc_expected_cost,
    resolve_for_simulation,
    warm_up,
)


def flat_spec(n: int = 2049) -> ProblemSpec:
    one = GridFunction(0.0, 1.0, np.ones(n), "log-linear")
    return ProblemSpec(sigma=one, f=one, ell=0.25, i0=0.75, s0_prime=one)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n-paths", type=int, default=4000)
    parser.add_argument("--dt", type=float, default=2.5e-4)
    parser.add_argument("--seed", type=int, default=13)
    parser.add_argument(
        "--rates", type=float, nargs="+", default=[2.0, 4.0, 8.0, 16.0, 32.0]
    )
    args = parser.parse_args()

    warm_up()
    spec = flat_spec()
    result = optimal_scale(spec)
    resolved = resolve_for_simulation(spec, stitch_optimal_scale(spec, result))
    closed_form = value_V(spec, resolved, spec.i0)
    print(f"closed-form value at i0: {closed_form:.6f}")

    # dt must resolve the steepest drift or the Euler step overshoots
    max_rate = max(args.rates)
    dt_cap = (2.0 / max_rate) ** 2
    dt = min(args.dt, 0.5 * dt_cap)
    if dt < args.dt:
        print(f"capping dt at {dt:g} for rate {max_rate:g}")

    prev = math.inf
    for rate in sorted(args.rates):
        policy = Policy("steep", resolved, steep_n=rate)
        est = mc_expected_cost(
            spec, policy, spec.i0, args.n_paths, dt, args.seed
        )
        trend = "down" if est.mean <= prev + 3.0 * est.stderr else "UP?"
        print(f"steep {rate:6.1f}: {est.mean:.5f} +- {est.stderr:.5f}  {trend}")
        prev = est.mean

    reset = mc_expected_cost(
        spec, Policy("dynamic-optimal", resolved), spec.i0, args.n_paths, dt, args.seed
    )
    print(f"reset limit : {reset.mean:.5f} +- {reset.stderr:.5f}")


if __name__ == "__main__":
    main()
