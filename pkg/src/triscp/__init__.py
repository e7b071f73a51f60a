"""Unbalanced three-phase AC optimal power flow by sequential convex programming.

Subproblems combine McCormick envelopes of the voltage-current products with
affine surrogates and an adaptive second-order-cone trust region; solutions
are verified against an independent fixed-point power-flow oracle.
"""

from .convex import (
    InvalidLinearisationPoint,
    LinearisationPoint,
    McCormickBounds,
    SubproblemError,
    VariableMap,
    build_subproblem,
    default_bounds,
    mccormick_envelope,
    surrogate,
)
from .ingest import (
    FeederFormatError,
    RandomizationSpec,
    generate_feeder,
    parse_feeder,
    randomize_loads,
    to_feeder,
    to_network,
    write_feeder,
)
from .netmodel import (
    Branch,
    Bus,
    Generator,
    Load,
    Network,
    NetworkError,
    PhaseMask,
    assemble_ybus,
    build_index,
    nominal_phasors,
)
from .pfcore import OracleResult, PowerFlowError, power_balance_residual, solve_power_flow
from .scp import (
    IterationRecord,
    ScpError,
    Solution,
    TrustRegionConfig,
    flat_start,
    injections_from_solution,
    solve_opf,
    update_radius,
    voltage_deviation,
)
from .verify import (
    ReferenceInfeasible,
    ReferenceTooLarge,
    VerificationReport,
    optimality_gap,
    power_flow_roots,
    reference_optimum_tiny,
    verify_solution,
)

__version__ = "0.1.0"

__all__ = [
    "Branch",
    "Bus",
    "FeederFormatError",
    "Generator",
    "InvalidLinearisationPoint",
    "IterationRecord",
    "LinearisationPoint",
    "Load",
    "McCormickBounds",
    "Network",
    "NetworkError",
    "OracleResult",
    "PhaseMask",
    "PowerFlowError",
    "RandomizationSpec",
    "ReferenceInfeasible",
    "ReferenceTooLarge",
    "ScpError",
    "Solution",
    "SubproblemError",
    "TrustRegionConfig",
    "VariableMap",
    "VerificationReport",
    "assemble_ybus",
    "build_index",
    "build_subproblem",
    "default_bounds",
    "flat_start",
    "generate_feeder",
    "injections_from_solution",
    "mccormick_envelope",
    "nominal_phasors",
    "optimality_gap",
    "parse_feeder",
    "power_balance_residual",
    "power_flow_roots",
    "randomize_loads",
    "reference_optimum_tiny",
    "solve_opf",
    "solve_power_flow",
    "surrogate",
    "to_feeder",
    "to_network",
    "update_radius",
    "verify_solution",
    "voltage_deviation",
    "write_feeder",
]
