"""Effective average action along a flow grid and pointwise checks of Wetterich's equation"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import linalg
from scipy.integrate import trapezoid

from .conjugate import TiltedState, conjugate, log_normalizer, regulated_reference, solve_tilt
from .exceptions import (
    ConfigError,
    FlowAborted,
    FrgFlowError,
    OutsideDomainError,
    PreconditionError,
)
from .measure import EstimatorConfig, MeasureModel, expect
from .regulator import RegulatorFamily, check_derivative_bound, omega_frame, q, q_prime

logger = logging.getLogger(__name__)

HESSIAN_STEP = 1e-3
MAX_CONDITION = 1e12


@dataclass(frozen=True)
class FlowRecord:
    """One grid point of a flow run"""

    k: float
    gamma: float
    lhs_fd: float
    rhs_wetterich: float
    residual: float
    trace_term: float
    subtract_term: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class FlowGrid:
    """Increasing k-values, the target y and the base finite-difference step

    The step used at k is fd_step * (1 + k).
    """

    k_values: tuple
    y: tuple
    fd_step: float = 1e-4

    def __post_init__(self):
        ks = tuple(float(k) for k in self.k_values)
        object.__setattr__(self, "k_values", ks)
        object.__setattr__(self, "y", tuple(float(c) for c in np.atleast_1d(self.y)))
        if not ks:
            raise ConfigError("flow grid is empty")
        if any(b <= a for a, b in zip(ks, ks[1:])):
            raise ConfigError("flow grid k-values must be strictly increasing")
        if self.fd_step <= 0:
            raise ConfigError("fd_step must be positive")
        if ks[0] - self.step(ks[0]) < 0:
            raise ConfigError("the first grid point must exceed its finite-difference step")
        if len(ks) > 1:
            min_gap = min(b - a for a, b in zip(ks, ks[1:]))
            if self.step(ks[-1]) >= 0.5 * min_gap:
                raise ConfigError("fd_step must be below half the minimum grid gap")

    @classmethod
    def linspace(cls, kmin: float, kmax: float, points: int, y, fd_step: float = 1e-4):
        if kmax <= kmin:
            raise ConfigError("kmax must exceed kmin")
        if points < 2:
            raise ConfigError("points must be at least 2")
        return cls(tuple(np.linspace(kmin, kmax, points)), y, fd_step)

    def step(self, k: float) -> float:
        return self.fd_step * (1.0 + k)


class WetterichTerms(NamedTuple):
    rhs: float
    trace_term: float
    subtract_term: float
    tilt: TiltedState


class IntegratedFlow(NamedTuple):
    gamma_end_direct: float
    gamma_end_integrated: float
    gap: float


class PropagatorExperiment(NamedTuple):
    cov_tilted: np.ndarray
    inverse_sum: Optional[np.ndarray]
    deviation: float
    condition: float


def wetterich_rhs(
    k: float,
    y,
    model: MeasureModel,
    fam: RegulatorFamily,
    cfg: EstimatorConfig,
    phi0=None,
) -> WetterichTerms:
    """Right-hand side of the flow equation at (k, y)

    trace_term = 1/2 sum_a Var(v_a . x) under the tilted regulated measure,
    subtract_term = 1/2 E[Q'_k] under the untilted regulated measure.
    """
    tilt = solve_tilt(k, y, model, fam, cfg, phi0=phi0)
    frame = omega_frame(fam, k)
    trace_term = 0.5 * frame.variance_sum(tilt.cov)
    zero = np.zeros(model.dim)
    integral = expect(
        model,
        cfg,
        lambda x: q_prime(fam, k, x),
        lambda x: -0.5 * q(fam, k, x),
        regulated_reference(k, zero, model, fam),
    )
    subtract_term = 0.5 * integral.estimate / math.exp(log_normalizer(float(k), model, fam, cfg))
    return WetterichTerms(trace_term - subtract_term, trace_term, subtract_term, tilt)


def run_flow(
    grid: FlowGrid, model: MeasureModel, fam: RegulatorFamily, cfg: EstimatorConfig
) -> List[FlowRecord]:
    """Gamma_k, its central difference and the Wetterich right-hand side on every grid point

    Tilts are warm-started from the previous grid point. Records are produced
    even when the residual is large; thresholds belong to the caller.

    Raises:
        FlowAborted: If y leaves the numeric domain interior or the solver
            fails; the records computed so far are attached
    """
    y = np.asarray(grid.y)
    records: List[FlowRecord] = []
    phi = None
    for k in grid.k_values:
        h = grid.step(k)
        try:
            check_derivative_bound(fam, k + h, model, cfg)
            terms = wetterich_rhs(k, y, model, fam, cfg, phi0=phi)
            phi = terms.tilt.phi
            gamma = conjugate(k, y, model, fam, cfg, phi0=phi).gamma
            upper = conjugate(k + h, y, model, fam, cfg, phi0=phi).gamma
            lower = conjugate(k - h, y, model, fam, cfg, phi0=phi).gamma
        except OutsideDomainError as exc:
            raise FlowAborted(str(exc), records, k, exc.details) from exc
        except FrgFlowError as exc:
            raise FlowAborted(f"flow stopped at k={k}: {exc}", records, k, exc.details) from exc
        lhs = (upper - lower) / (2.0 * h)
        record = FlowRecord(
            k=k,
            gamma=gamma,
            lhs_fd=lhs,
            rhs_wetterich=terms.rhs,
            residual=abs(lhs - terms.rhs),
            trace_term=terms.trace_term,
            subtract_term=terms.subtract_term,
            iterations=terms.tilt.iterations,
            converged=terms.tilt.converged,
        )
        logger.debug("flow k=%g gamma=%.10g residual=%.3e", k, gamma, record.residual)
        records.append(record)
    logger.info(
        "flow finished: %d points, max residual %.3e",
        len(records),
        max(r.residual for r in records),
    )
    return records


def records_frame(records: Sequence[FlowRecord]) -> pd.DataFrame:
    """Flow records as a table with columns k, gamma, lhs, rhs, residual, trace, subtract"""
    frame = pd.DataFrame([asdict(r) for r in records])
    frame = frame.rename(
        columns={
            "lhs_fd": "lhs",
            "rhs_wetterich": "rhs",
            "trace_term": "trace",
            "subtract_term": "subtract",
        }
    )
    return frame[["k", "gamma", "lhs", "rhs", "residual", "trace", "subtract"]]


def integrated_flow_check(records: Sequence[FlowRecord]) -> IntegratedFlow:
    """Integrate the right-hand side by the trapezoid rule and compare endpoint Gammas"""
    if len(records) < 3:
        raise PreconditionError("integrated flow check needs at least 3 records")
    ks = np.array([r.k for r in records])
    rhs = np.array([r.rhs_wetterich for r in records])
    integrated = records[0].gamma + float(trapezoid(rhs, ks))
    direct = records[-1].gamma
    return IntegratedFlow(direct, integrated, abs(direct - integrated))


def _gamma_hessian(k, y, model, fam, cfg, phi, step) -> np.ndarray:
    n = model.dim

    def gamma(point):
        return conjugate(k, point, model, fam, cfg, phi0=phi).gamma

    center = gamma(y)
    hess = np.empty((n, n))
    basis = np.eye(n) * step
    for i in range(n):
        hess[i, i] = (gamma(y + basis[i]) - 2.0 * center + gamma(y - basis[i])) / step**2
        for j in range(i + 1, n):
            hess[i, j] = hess[j, i] = (
                gamma(y + basis[i] + basis[j])
                - gamma(y + basis[i] - basis[j])
                - gamma(y - basis[i] + basis[j])
                + gamma(y - basis[i] - basis[j])
            ) / (4.0 * step**2)
    return hess


def propagator_identity_experiment(
    k: float,
    y,
    model: MeasureModel,
    fam: RegulatorFamily,
    cfg: EstimatorConfig,
    step: float = HESSIAN_STEP,
) -> PropagatorExperiment:
    """Compare the tilted covariance with (Hess Gamma_k(y) + R_k)^-1

    The deviation is reported, never asserted. A numerically singular sum is
    reported with its condition number and a NaN deviation.

    Raises:
        PreconditionError: If cfg is not in quadrature mode
    """
    if cfg.monte_carlo:
        raise PreconditionError("the propagator experiment needs quadrature mode")
    y = np.atleast_1d(np.asarray(y, dtype=float))
    tilt = solve_tilt(k, y, model, fam, cfg)
    hess = _gamma_hessian(k, y, model, fam, cfg, tilt.phi, step)
    total = 0.5 * (hess + hess.T) + fam.matrix(k)
    condition = float(np.linalg.cond(total))
    if not condition < MAX_CONDITION:
        logger.warning("propagator sum is singular at k=%g (condition %.2e)", k, condition)
        return PropagatorExperiment(tilt.cov, None, math.nan, condition)
    inverse = linalg.inv(total)
    deviation = float(np.linalg.norm(tilt.cov - inverse) / np.linalg.norm(tilt.cov))
    logger.info("propagator deviation at k=%g: %.3e", k, deviation)
    return PropagatorExperiment(tilt.cov, inverse, deviation, condition)
