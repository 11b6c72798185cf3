"""Hybrid stochastic/deterministic axon simulator with Sobolev diagnostics.

A membrane-potential PDE on the interval couples either to nodal proportion
fields (the fluid model) or to a lattice of individually jumping channels
(the particle model).  The package measures how the particle model
approaches the fluid model as the channel density grows, in the norms the
models are naturally posed in.
"""

__version__ = "0.1.0"

from .errors import InvariantViolation, TruncationError
from .grid import (
    Functional,
    Grid,
    GridFunction,
    NodalField,
    build_grid,
    delta_functional,
    density_functional,
    eval_at,
    h10_norm,
    hminus1_norm,
    l2_norm,
    pairing,
)
from .heat import KernelParams, absorbed_kernel, apply_semigroup, source_response
from .kinetics import (
    ChannelKinetics,
    exit_rate,
    generator_matrix,
    make_kinetics,
    rate,
    rate_lipschitz,
)
from .deterministic import (
    DeterministicState,
    DetTrajectory,
    reaction_coefficients,
    run_det,
    step_det,
)
from .stochastic import (
    ChannelConfig,
    JumpRecord,
    StochasticState,
    StochTrajectory,
    channel_source,
    empirical_distribution,
    init_channels,
    run_stoch,
    step_stoch,
)
from .decomposition import (
    CompensatorAccumulator,
    MartingaleSeries,
    drift_term,
    martingale_norm_series,
    martingale_series,
    martingale_variance_bound,
    path_log_likelihood,
    predicted_variance,
    write_martingale_norm_csv,
)
from .harness import DeviationMetrics, RunConfig, deviation_metrics, fit_rate, run_sweep

__all__ = [
    "ChannelConfig",
    "ChannelKinetics",
    "CompensatorAccumulator",
    "DeterministicState",
    "DetTrajectory",
    "DeviationMetrics",
    "Functional",
    "Grid",
    "GridFunction",
    "InvariantViolation",
    "JumpRecord",
    "KernelParams",
    "MartingaleSeries",
    "NodalField",
    "RunConfig",
    "StochasticState",
    "StochTrajectory",
    "TruncationError",
    "absorbed_kernel",
    "apply_semigroup",
    "build_grid",
    "channel_source",
    "delta_functional",
    "density_functional",
    "deviation_metrics",
    "drift_term",
    "empirical_distribution",
    "eval_at",
    "exit_rate",
    "fit_rate",
    "generator_matrix",
    "h10_norm",
    "hminus1_norm",
    "init_channels",
    "l2_norm",
    "make_kinetics",
    "martingale_norm_series",
    "martingale_series",
    "martingale_variance_bound",
    "pairing",
    "write_martingale_norm_csv",
    "path_log_likelihood",
    "predicted_variance",
    "rate",
    "rate_lipschitz",
    "reaction_coefficients",
    "run_det",
    "run_stoch",
    "run_sweep",
    "source_response",
    "step_det",
    "step_stoch",
]
