"""Run configuration: strict parsing and validation of JSON config files.

Every field is validated before any computation starts, and unknown keys are
rejected with their full dotted path, so a typo never falls back silently to
a default.  Problem coefficients come either as parametric families or as
tabulated samples interpolated onto the working grid.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .grid import GridFunction
from .measures import ProblemSpec


class ConfigError(ValueError):
    """Malformed or out-of-contract run configuration."""


POLICY_KINDS = ("static", "reset-sstar", "dynamic-optimal", "steep")

CHECK_NAMES = (
    "commute_identity",
    "dual_payoff",
    "dual_value",
    "infimum_law",
    "delta_residual",
    "submartingale",
)

FORMATS = ("json", "csv")


def _mapping(raw, path: str) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected an object, got {type(raw).__name__}")
    return dict(raw)


def _no_unknown(raw: dict, allowed, path: str) -> None:
    extra = sorted(set(raw) - set(allowed))
    if extra:
        raise ConfigError(
            f"{path}: unknown keys {extra}; allowed keys are {sorted(allowed)}"
        )


def _number(raw, path: str, lo=None, hi=None, strict_lo: bool = False) -> float:
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {raw!r}")
    v = float(raw)
    if not math.isfinite(v):
        raise ConfigError(f"{path}: must be finite, got {v}")
    if lo is not None:
        if strict_lo and not v > lo:
            raise ConfigError(f"{path}: must be greater than {lo}, got {v}")
        if not strict_lo and v < lo:
            raise ConfigError(f"{path}: must be at least {lo}, got {v}")
    if hi is not None and v > hi:
        raise ConfigError(f"{path}: must be at most {hi}, got {v}")
    return v


def _integer(raw, path: str, lo=None, hi=None) -> int:
    if isinstance(raw, bool) or not isinstance(raw, int):
        raise ConfigError(f"{path}: expected an integer, got {raw!r}")
    if lo is not None and raw < lo:
        raise ConfigError(f"{path}: must be at least {lo}, got {raw}")
    if hi is not None and raw > hi:
        raise ConfigError(f"{path}: must be at most {hi}, got {raw}")
    return raw


def _boolean(raw, path: str) -> bool:
    if not isinstance(raw, bool):
        raise ConfigError(f"{path}: expected true or false, got {raw!r}")
    return raw


def _string(raw, path: str) -> str:
    if not isinstance(raw, str):
        raise ConfigError(f"{path}: expected a string, got {raw!r}")
    return raw


@dataclass(frozen=True)
class CoefficientSpec:
    """One positive coefficient of the problem, parametric or tabulated."""

    family: str
    params: tuple

    def sample(self, n: int) -> np.ndarray:
        x = np.linspace(0.0, 1.0, n)
        if self.family == "constant":
            (v,) = self.params
            return np.full(n, v)
        if self.family == "affine":
            left, right = self.params
            return left + (right - left) * x
        if self.family == "exponential":
            left, rate = self.params
            return left * np.exp(rate * x)
        xs, vs = self.params
        return np.interp(x, np.asarray(xs), np.asarray(vs))

    def grid_function(self, n: int) -> GridFunction:
        return GridFunction(0.0, 1.0, self.sample(n), "log-linear")


def _coefficient(raw, path: str) -> CoefficientSpec:
    # bare numbers are shorthand for a constant coefficient
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        return CoefficientSpec("constant", (_number(raw, path, lo=0.0, strict_lo=True),))
    raw = _mapping(raw, path)
    family = raw.get("family")
    if family == "constant":
        _no_unknown(raw, ("family", "value"), path)
        if "value" not in raw:
            raise ConfigError(f"{path}: constant family needs 'value'")
        return CoefficientSpec(
            "constant", (_number(raw["value"], f"{path}.value", lo=0.0, strict_lo=True),)
        )
    if family == "affine":
        _no_unknown(raw, ("family", "left", "right"), path)
        for key in ("left", "right"):
            if key not in raw:
                raise ConfigError(f"{path}: affine family needs 'left' and 'right'")
        return CoefficientSpec(
            "affine",
            (
                _number(raw["left"], f"{path}.left", lo=0.0, strict_lo=True),
                _number(raw["right"], f"{path}.right", lo=0.0, strict_lo=True),
            ),
        )
    if family == "exponential":
        _no_unknown(raw, ("family", "left", "rate"), path)
        for key in ("left", "rate"):
            if key not in raw:
                raise ConfigError(f"{path}: exponential family needs 'left' and 'rate'")
        return CoefficientSpec(
            "exponential",
            (
                _number(raw["left"], f"{path}.left", lo=0.0, strict_lo=True),
                _number(raw["rate"], f"{path}.rate", lo=-50.0, hi=50.0),
            ),
        )
    if family == "table":
        _no_unknown(raw, ("family", "x", "values"), path)
        xs = raw.get("x")
        vs = raw.get("values")
        if not isinstance(xs, list) or not isinstance(vs, list):
            raise ConfigError(f"{path}: table family needs 'x' and 'values' arrays")
        if len(xs) != len(vs) or len(xs) < 2:
            raise ConfigError(
                f"{path}: 'x' and 'values' must have equal length >= 2, "
                f"got {len(xs)} and {len(vs)}"
            )
        x_arr = tuple(_number(v, f"{path}.x[{j}]") for j, v in enumerate(xs))
        v_arr = tuple(
            _number(v, f"{path}.values[{j}]", lo=0.0, strict_lo=True)
            for j, v in enumerate(vs)
        )
        if any(b <= a for a, b in zip(x_arr, x_arr[1:])):
            raise ConfigError(f"{path}.x: must be strictly increasing")
        if x_arr[0] != 0.0 or x_arr[-1] != 1.0:
            raise ConfigError(f"{path}.x: must start at 0.0 and end at 1.0")
        return CoefficientSpec("table", (x_arr, v_arr))
    raise ConfigError(
        f"{path}.family: expected one of ['constant', 'affine', 'exponential', "
        f"'table'], got {family!r}"
    )


@dataclass(frozen=True)
class PolicySpec:
    kind: str
    steep_n: float = 0.0

    def label(self) -> str:
        return f"steep-{self.steep_n:g}" if self.kind == "steep" else self.kind


def _policy(raw, path: str) -> PolicySpec:
    raw = _mapping(raw, path)
    kind = raw.get("kind")
    if kind not in POLICY_KINDS:
        raise ConfigError(
            f"{path}.kind: expected one of {list(POLICY_KINDS)}, got {kind!r}"
        )
    if kind == "steep":
        _no_unknown(raw, ("kind", "steep_n"), path)
        if "steep_n" not in raw:
            raise ConfigError(f"{path}: steep policy needs a positive 'steep_n' rate")
        rate = _number(raw["steep_n"], f"{path}.steep_n", lo=0.0, strict_lo=True)
        return PolicySpec(kind, rate)
    _no_unknown(raw, ("kind",), path)
    return PolicySpec(kind)


@dataclass(frozen=True)
class McConfig:
    n_paths: int = 20_000
    dt: float = 1e-4
    seed: int = 0
    x0: float = 0.0
    dump_paths: bool = False


@dataclass(frozen=True)
class OdeConfig:
    step: float | None = None
    tolerance: float = 1e-6


@dataclass(frozen=True)
class OutputConfig:
    directory: str | None = None
    formats: tuple = ("json", "csv")


@dataclass(frozen=True)
class VerifyConfig:
    checks: tuple = CHECK_NAMES
    perturb_scale: float = 0.0


@dataclass(frozen=True)
class ValueConfig:
    i_points: int = 33


@dataclass(frozen=True)
class RunConfig:
    """Fully validated run configuration for the command-line entry points."""

    ell: float
    i0: float
    sigma: CoefficientSpec
    cost_rate: CoefficientSpec
    scale_density: CoefficientSpec
    grid_n: int = 2049
    mc: McConfig = McConfig()
    ode: OdeConfig = OdeConfig()
    output: OutputConfig = OutputConfig()
    verify: VerifyConfig = VerifyConfig()
    value: ValueConfig = ValueConfig()
    policies: tuple = (PolicySpec("static"),)

    def snapped_interval(self) -> tuple[float, float]:
        """Constraint levels moved to the nearest working-grid nodes.

        The optimizer stitches its profile onto grid cells, so ell and i0
        must be nodes; at least eight cells must separate them or the free
        interval cannot carry a meaningful level sweep.
        """
        h = 1.0 / (self.grid_n - 1)
        ell = round(self.ell / h) * h
        i0 = round(self.i0 / h) * h
        if i0 - ell < 8.0 * h - 1e-12:
            raise ConfigError(
                f"problem: free interval ({ell}, {i0}) spans fewer than 8 grid "
                f"cells at grid_n={self.grid_n}; widen it or refine the grid"
            )
        if i0 >= 1.0:
            raise ConfigError(
                f"problem.i0: must snap strictly below 1, got {i0} at "
                f"grid_n={self.grid_n}"
            )
        return ell, i0

    def build_spec(self) -> ProblemSpec:
        ell, i0 = self.snapped_interval()
        return ProblemSpec(
            sigma=self.sigma.grid_function(self.grid_n),
            f=self.cost_rate.grid_function(self.grid_n),
            ell=ell,
            i0=i0,
            s0_prime=self.scale_density.grid_function(self.grid_n),
        )

    def with_overrides(
        self,
        seed: int | None = None,
        grid_n: int | None = None,
        out_dir: str | None = None,
    ) -> "RunConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, mc=replace(cfg.mc, seed=_integer(seed, "--seed", lo=0)))
        if grid_n is not None:
            cfg = replace(cfg, grid_n=_integer(grid_n, "--grid", lo=33, hi=1_000_001))
        if out_dir is not None:
            cfg = replace(cfg, output=replace(cfg.output, directory=out_dir))
        cfg.snapped_interval()
        return cfg


def _parse_mc(raw, path: str) -> McConfig:
    raw = _mapping(raw, path)
    _no_unknown(raw, ("n_paths", "dt", "seed", "x0", "dump_paths"), path)
    base = McConfig()
    return McConfig(
        n_paths=_integer(raw.get("n_paths", base.n_paths), f"{path}.n_paths", lo=2, hi=10**8),
        dt=_number(raw.get("dt", base.dt), f"{path}.dt", lo=0.0, hi=0.1, strict_lo=True),
        seed=_integer(raw.get("seed", base.seed), f"{path}.seed", lo=0, hi=2**63 - 1),
        x0=_number(raw.get("x0", base.x0), f"{path}.x0", lo=0.0, hi=1.0),
        dump_paths=_boolean(raw.get("dump_paths", base.dump_paths), f"{path}.dump_paths"),
    )


def _parse_ode(raw, path: str) -> OdeConfig:
    raw = _mapping(raw, path)
    _no_unknown(raw, ("step", "tolerance"), path)
    step = raw.get("step")
    if step is not None:
        step = _number(step, f"{path}.step", lo=0.0, hi=0.5, strict_lo=True)
    tol = _number(raw.get("tolerance", 1e-6), f"{path}.tolerance", lo=0.0, strict_lo=True)
    return OdeConfig(step=step, tolerance=tol)


def _parse_output(raw, path: str) -> OutputConfig:
    raw = _mapping(raw, path)
    _no_unknown(raw, ("directory", "formats"), path)
    directory = raw.get("directory")
    if directory is not None:
        directory = _string(directory, f"{path}.directory")
    formats = raw.get("formats", list(FORMATS))
    if not isinstance(formats, list) or not formats:
        raise ConfigError(f"{path}.formats: expected a nonempty list")
    for j, f in enumerate(formats):
        if f not in FORMATS:
            raise ConfigError(
                f"{path}.formats[{j}]: expected one of {list(FORMATS)}, got {f!r}"
            )
    if len(set(formats)) != len(formats):
        raise ConfigError(f"{path}.formats: duplicate entries")
    return OutputConfig(directory=directory, formats=tuple(formats))


def _parse_verify(raw, path: str) -> VerifyConfig:
    raw = _mapping(raw, path)
    _no_unknown(raw, ("checks", "perturb_scale"), path)
    checks = raw.get("checks", list(CHECK_NAMES))
    if not isinstance(checks, list):
        raise ConfigError(f"{path}.checks: expected a list of check names")
    for j, name in enumerate(checks):
        if name not in CHECK_NAMES:
            raise ConfigError(
                f"{path}.checks[{j}]: expected one of {list(CHECK_NAMES)}, got {name!r}"
            )
    if len(set(checks)) != len(checks):
        raise ConfigError(f"{path}.checks: duplicate entries")
    perturb = _number(raw.get("perturb_scale", 0.0), f"{path}.perturb_scale", lo=0.0, hi=5.0)
    return VerifyConfig(checks=tuple(checks), perturb_scale=perturb)


def _parse_value(raw, path: str) -> ValueConfig:
    raw = _mapping(raw, path)
    _no_unknown(raw, ("i_points",), path)
    return ValueConfig(
        i_points=_integer(raw.get("i_points", 33), f"{path}.i_points", lo=2, hi=4097)
    )


def _parse_problem(raw, path: str) -> dict:
    raw = _mapping(raw, path)
    _no_unknown(raw, ("ell", "i0", "sigma", "cost_rate", "scale_density"), path)
    if "ell" not in raw or "i0" not in raw:
        raise ConfigError(f"{path}: 'ell' and 'i0' are required")
    ell = _number(raw["ell"], f"{path}.ell", lo=0.0, hi=1.0)
    i0 = _number(raw["i0"], f"{path}.i0", lo=0.0, hi=1.0)
    if not ell < i0:
        raise ConfigError(f"{path}: need ell < i0, got ell={ell}, i0={i0}")
    return {
        "ell": ell,
        "i0": i0,
        "sigma": _coefficient(raw.get("sigma", 1.0), f"{path}.sigma"),
        "cost_rate": _coefficient(raw.get("cost_rate", 1.0), f"{path}.cost_rate"),
        "scale_density": _coefficient(raw.get("scale_density", 1.0), f"{path}.scale_density"),
    }


def parse_config(raw: dict) -> RunConfig:
    raw = _mapping(raw, "config")
    _no_unknown(
        raw,
        ("problem", "grid_n", "mc", "ode", "output", "verify", "value", "policies"),
        "config",
    )
    if "problem" not in raw:
        raise ConfigError("config: 'problem' block is required")
    problem = _parse_problem(raw["problem"], "config.problem")
    grid_n = _integer(raw.get("grid_n", 2049), "config.grid_n", lo=33, hi=1_000_001)
    policies_raw = raw.get("policies", [{"kind": "static"}])
    if not isinstance(policies_raw, list) or not policies_raw:
        raise ConfigError("config.policies: expected a nonempty list")
    policies = tuple(
        _policy(p, f"config.policies[{j}]") for j, p in enumerate(policies_raw)
    )
    cfg = RunConfig(
        grid_n=grid_n,
        mc=_parse_mc(raw.get("mc", {}), "config.mc"),
        ode=_parse_ode(raw.get("ode", {}), "config.ode"),
        output=_parse_output(raw.get("output", {}), "config.output"),
        verify=_parse_verify(raw.get("verify", {}), "config.verify"),
        value=_parse_value(raw.get("value", {}), "config.value"),
        policies=policies,
        **problem,
    )
    cfg.snapped_interval()
    return cfg


def load_config(path: str | Path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(
            f"{p}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}"
        ) from None
    return parse_config(raw)
