#!/usr/bin/env python3
"""Run the four CLI commands on the reference instance and print headlines.

Exits nonzero as soon as any command fails, so this doubles as a smoke test
for a fresh checkout.
"""

from __future__ import annotations

import argparse
import json
import pathlib
import sys

from commute_control.cli import main as cli_main

ROOT = pathlib.Path(__file__).resolve().parent.parent


def run(command: str, config: str, out: str) -> dict:
    code = cli_main([command, "--config", config, "--out", out])
    if code != 0:
        print(f"{command}: exit code {code}", file=sys.stderr)
        raise SystemExit(code)
    name = command.replace("-", "_") + ".json"
    with open(pathlib.Path(out) / name) as fh:
        return json.load(fh)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--config", default=str(ROOT / "configs" / "reference.json")
    )
    parser.add_argument("--out", default=str(ROOT / "out" / "reference"))
    args = parser.parse_args()

    value = run("value", args.config, args.out)
    head = value["value_at_i0"]
    print(
        f"value at i0={value['config']['i0']:g}:"
        f" conjugate={head['conjugate_route']:.9f}"
    )
    print(f"  static-scale payoff there: {head['static_payoff_s0']:.9f}")
    print(f"  route gap at i0: {head['route_gap']:.3e}")
    front = value["degenerate_frontier"]
    print(
        f"  frontier limit: kappa_plus_bc={front['kappa_plus_bc']:.6f}"
        f" value_limit={front['value_limit']:.6f}"
    )

    scale = run("optimal-scale", args.config, args.out)
    tol = scale["tolerances"]
    print(
        f"optimal scale: residual_max={tol['residual_max']:.3e}"
        f" achieved={tol['achieved']}"
    )

    sim = run("simulate", args.config, args.out)
    for row in sim["policies"]:
        print(
            f"simulate {row['policy']:>16s}: {row['mean']:.5f}"
            f" +- {row['stderr']:.5f}"
        )

    verify = run("verify", args.config, args.out)
    for chk in verify["checks"]:
        mark = "ok" if chk["passed"] else "FAIL"
        print(f"verify {chk['name']:>17s}: {mark}  gap={chk['gap']:.3e}")
    if not verify["all_pass"]:
        raise SystemExit(1)
    print(f"all checks passed; reports in {args.out}")


if __name__ == "__main__":
    main()
