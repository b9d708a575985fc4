"""Optimal commute-cost control of a reflecting diffusion on [0, 1]."""

from .config import ConfigError, RunConfig, load_config, parse_config
from .expint import exp_integral_diff, exp_integral_e1, exp_integral_inverse
from .grid import DomainError, GridFunction, product_grid
from .measures import (
    ProblemSpec,
    ScaleFunction,
    ValidationError,
    beta,
    commute_identity_gap,
    rho,
    mf_measures,
    phi_cost,
    scale_from_drift,
)
from .optimizer import (
    OptimalScaleResult,
    delta_residual,
    optimal_scale,
    psi,
    psi_star,
    stitch_optimal_scale,
    value_V,
    value_V_tgrid,
    value_surface,
)
from .payoff import (
    BoundaryConstants,
    boundary_constants,
    h_transform,
    infimum_law_cdf,
    payoff_sstar,
    payoff_sstar_expansion,
)
from .simulate import (
    MCEstimate,
    PathResult,
    Policy,
    PolicyState,
    StabilityError,
    mc_expected_cost,
    path_minima,
    path_records,
    resolve_for_simulation,
    simulate_path,
    verify_submartingale,
)

__all__ = [
    "BoundaryConstants",
    "ConfigError",
    "DomainError",
    "GridFunction",
    "MCEstimate",
    "OptimalScaleResult",
    "PathResult",
    "Policy",
    "PolicyState",
    "ProblemSpec",
    "RunConfig",
    "ScaleFunction",
    "StabilityError",
    "ValidationError",
    "beta",
    "boundary_constants",
    "commute_identity_gap",
    "delta_residual",
    "exp_integral_diff",
    "exp_integral_e1",
    "exp_integral_inverse",
    "h_transform",
    "infimum_law_cdf",
    "load_config",
    "mc_expected_cost",
    "mf_measures",
    "optimal_scale",
    "parse_config",
    "path_minima",
    "path_records",
    "payoff_sstar",
    "payoff_sstar_expansion",
    "phi_cost",
    "product_grid",
    "psi",
    "psi_star",
    "resolve_for_simulation",
    "rho",
    "scale_from_drift",
    "simulate_path",
    "stitch_optimal_scale",
    "value_V",
    "value_V_tgrid",
    "value_surface",
]
