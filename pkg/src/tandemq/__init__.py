"""Optimal service-resource allocation for a two-node tandem queue.

Solve the long-run average-cost control problem on a truncated state box by
uniformized relative value iteration, evaluate policies exactly or by
simulation, enumerate tiny instances exhaustively, and verify the
structural properties of the optimal policy numerically.
"""

from .dp import (
    PolicyTable,
    Solution,
    SolverOptions,
    TruncationSpec,
    apply_T,
    apply_T1,
    apply_T2,
    extract_marginals,
    rvi_solve,
    span,
)
from .evaluation import (
    NotConvergedError,
    SimEstimate,
    StationaryDistribution,
    TooLargeError,
    average_cost,
    brute_force_optimal,
    policy_chain,
    simulate,
    stationary_distribution,
)
from .model import (
    ConfigError,
    LengthMismatchError,
    MissingKeyError,
    ModelConfig,
    NodeSpec,
    NonMonotoneGridError,
    NonzeroOriginError,
    TandemModel,
    UnstableError,
    build_model,
    stability_margin,
    stage_cost,
    transition_rates,
    validate_config,
)
from .structure import CheckReport, Violation, run_all_checks

__all__ = [
    "PolicyTable", "Solution", "SolverOptions", "TruncationSpec",
    "apply_T", "apply_T1", "apply_T2", "extract_marginals", "rvi_solve",
    "span",
    "NotConvergedError", "SimEstimate", "StationaryDistribution",
    "TooLargeError", "average_cost", "brute_force_optimal", "policy_chain",
    "simulate", "stationary_distribution",
    "ConfigError", "LengthMismatchError", "MissingKeyError", "ModelConfig",
    "NodeSpec", "NonMonotoneGridError", "NonzeroOriginError", "TandemModel",
    "UnstableError", "build_model", "stability_margin", "stage_cost",
    "transition_rates", "validate_config",
    "CheckReport", "Violation", "run_all_checks",
]

__version__ = "0.1.0"
