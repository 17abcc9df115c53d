"""Gaussian closed-form invariant suite behind ``frg-flow check``"""

from __future__ import annotations

import logging
from typing import Callable, List, NamedTuple, Tuple

import numpy as np

from . import gaussian
from .conjugate import (
    conjugate,
    conjugate_monotonicity_check,
    exp_minus_gamma_identity,
    fenchel_young_check,
    normalizer_derivative_check,
)
from .exceptions import ConfigError, FrgFlowError
from .flow import FlowGrid, propagator_identity_experiment, run_flow
from .measure import QUADRATURE, EstimatorConfig, MeasureModel
from .onsager import admissibility_ratio, admissibility_trend
from .regulator import RegulatorFamily

logger = logging.getLogger(__name__)

ORACLE_TOL = 1e-8
FLOW_TOL = 1e-6
K_VALUES = (0.5, 1.0, 2.0)
ADMISSIBILITY_K = (1.0, 2.0, 4.0, 8.0)

Case = Tuple[str, MeasureModel, RegulatorFamily]


class CheckResult(NamedTuple):
    check: str
    case: str
    passed: bool
    value: float
    tolerance: float
    message: str = ""


def default_cases(dim: int = 1) -> List[Case]:
    """N(0, I) with the regulator anchored off the mean and at the mean"""
    model = MeasureModel.gaussian(np.zeros(dim), np.eye(dim))
    return [
        ("standard", model, RegulatorFamily(np.eye(dim), np.ones(dim))),
        ("centered", model, RegulatorFamily(np.eye(dim), np.zeros(dim))),
    ]


def _evaluation_points(model: MeasureModel) -> List[np.ndarray]:
    offsets = (np.zeros(model.dim), 0.7 * np.ones(model.dim), -1.3 * np.ones(model.dim))
    return [model.mean + o for o in offsets]


def check_conjugate_oracle(model, fam, cfg) -> Tuple[float, float]:
    worst = 0.0
    for k in K_VALUES:
        for y in _evaluation_points(model):
            exact = gaussian.vstar(k, y, model, fam)
            value = conjugate(k, y, model, fam, cfg).value
            worst = max(worst, abs(value - exact) / max(1.0, abs(exact)))
    return worst, ORACLE_TOL


def check_normalizer_derivative(model, fam, cfg) -> Tuple[float, float]:
    result = normalizer_derivative_check(1.0, model, fam, cfg)
    exact = gaussian.normalizer_derivative(1.0, model, fam)
    return abs(result.analytic - exact), ORACLE_TOL


def check_constant_flow(model, fam, cfg) -> Tuple[float, float]:
    anchored = fam.with_base_point(model.mean)
    grid = FlowGrid.linspace(0.5, 4.0, 30, model.mean + 0.7)
    records = run_flow(grid, model, anchored, cfg)
    gammas = [r.gamma for r in records]
    spread = max(gammas) - min(gammas)
    return max(spread, max(abs(r.rhs_wetterich) for r in records)), ORACLE_TOL


def check_flow_residual(model, fam, cfg) -> Tuple[float, float]:
    y = model.mean + 0.5
    records = run_flow(FlowGrid.linspace(0.5, 4.0, 16, y), model, fam, cfg)
    gamma_error = max(abs(r.gamma - gaussian.gamma(r.k, y, model, fam)) for r in records)
    return max(max(r.residual for r in records), gamma_error), FLOW_TOL


def check_f_y_monotone(model, fam, cfg) -> Tuple[float, float]:
    rows = conjugate_monotonicity_check(model.mean + 0.7, np.linspace(0.0, 8.0, 17), model, fam,
                                        cfg)
    drops = [max(0.0, a.f_y - b.f_y) for a, b in zip(rows, rows[1:])]
    return max(drops), FLOW_TOL


def check_propagator_identity(model, fam, cfg) -> Tuple[float, float]:
    return propagator_identity_experiment(1.0, model.mean + 0.3, model, fam, cfg).deviation, 1e-8


def check_exp_minus_gamma(model, fam, cfg) -> Tuple[float, float]:
    return exp_minus_gamma_identity(2.0, model.mean + 0.4, model, fam, cfg).gap, ORACLE_TOL


def check_fenchel_young(model, fam, cfg) -> Tuple[float, float]:
    result = conjugate(1.5, model.mean - 0.6, model, fam, cfg)
    gap = fenchel_young_check(result, model, fam, cfg).gap
    return max(0.0, -gap), ORACLE_TOL


def check_admissibility_symmetric(model, fam, cfg) -> Tuple[float, float]:
    result = admissibility_ratio(2.0, model.mean, model, fam, cfg)
    return abs(1.0 - result.inf_ratio) + float(np.abs(result.argmin_phi).max()), 0.0


def check_admissibility_trend(model, fam, cfg) -> Tuple[float, float]:
    anchored = fam.with_base_point(model.mean)
    y = model.mean + 1.0
    trend = admissibility_trend(y, ADMISSIBILITY_K, model, anchored, cfg, tol=0.0)
    ratios = [row.inf_ratio for row in trend.rows]
    strict = all(b > a for a, b in zip(ratios, ratios[1:])) and ratios[-1] < 1.0
    error = max(
        abs(row.inf_ratio - gaussian.inf_ratio(row.k, y, model, anchored)) for row in trend.rows
    )
    return (error if strict else float("inf")), ORACLE_TOL


CHECKS: List[Tuple[str, Callable]] = [
    ("conjugate_oracle", check_conjugate_oracle),
    ("normalizer_derivative", check_normalizer_derivative),
    ("constant_flow", check_constant_flow),
    ("flow_residual", check_flow_residual),
    ("f_y_monotone", check_f_y_monotone),
    ("propagator_identity", check_propagator_identity),
    ("exp_minus_gamma", check_exp_minus_gamma),
    ("fenchel_young", check_fenchel_young),
    ("admissibility_symmetric", check_admissibility_symmetric),
    ("admissibility_trend", check_admissibility_trend),
]


def gaussian_suite(cases: List[Case], cfg: EstimatorConfig) -> List[CheckResult]:
    """Run every closed-form check on every case in quadrature mode

    Failures raised by the library are recorded as failed checks; only
    configuration errors propagate.
    """
    quadrature = cfg.with_mode(QUADRATURE)
    results = []
    for case, model, fam in cases:
        if model.perturbation is not None:
            raise ConfigError(f"check case {case!r} is not Gaussian")
        for name, check in CHECKS:
            try:
                value, tolerance = check(model, fam, quadrature)
            except ConfigError:
                raise
            except FrgFlowError as exc:
                results.append(CheckResult(name, case, False, float("nan"), 0.0, str(exc)))
                logger.warning("check %s on %s raised: %s", name, case, exc)
                continue
            passed = bool(value <= tolerance)
            results.append(CheckResult(name, case, passed, float(value), tolerance))
            logger.info("check %s on %s: %s (%.3e)", name, case, passed, value)
    return results
