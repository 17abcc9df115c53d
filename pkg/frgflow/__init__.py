"""frg-flow

Numerical engine for regulated measures, effective average actions and
their Wetterich flow in finite dimensions.
"""

from .config import RunConfig, load_config
from .conjugate import ConjugateResult, TiltedState, conjugate, normalizer, solve_tilt, v
from .exceptions import (
    AssumptionError,
    ConfigError,
    ConvergenceError,
    DomainError,
    EstimationError,
    EvaluationError,
    FlowAborted,
    FrgFlowError,
    IllConditionedError,
    OutsideDomainError,
    PreconditionError,
    PropertyViolation,
    SamplerError,
)
from .flow import FlowGrid, FlowRecord, run_flow, wetterich_rhs
from .measure import EstimatorConfig, MeasureModel, expect, sample
from .onsager import (
    SmallBallEstimate,
    admissibility_ratio,
    boundary_check,
    nu_k_profile,
    om_bar_estimate,
    om_estimate,
    small_ball,
    small_ball_sweep,
)
from .regulator import RegulatorFamily, omega_frame, q, q_prime

__version__ = "1.0.0"
__all__ = [
    "ConjugateResult",
    "TiltedState",
    "conjugate",
    "normalizer",
    "solve_tilt",
    "v",
    "AssumptionError",
    "ConfigError",
    "ConvergenceError",
    "DomainError",
    "EstimationError",
    "EvaluationError",
    "FlowAborted",
    "FrgFlowError",
    "IllConditionedError",
    "OutsideDomainError",
    "PreconditionError",
    "PropertyViolation",
    "SamplerError",
    "FlowGrid",
    "FlowRecord",
    "run_flow",
    "wetterich_rhs",
    "EstimatorConfig",
    "MeasureModel",
    "expect",
    "sample",
    "RunConfig",
    "load_config",
    "SmallBallEstimate",
    "admissibility_ratio",
    "boundary_check",
    "nu_k_profile",
    "om_bar_estimate",
    "om_estimate",
    "small_ball",
    "small_ball_sweep",
    "RegulatorFamily",
    "omega_frame",
    "q",
    "q_prime",
]
