"""Separable regulator families R_k = r(k)^2 * R0 anchored at a base point w"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Dict, List, NamedTuple, Sequence

import numpy as np
from scipy import linalg

from .exceptions import (
    AssumptionError,
    ConfigError,
    EvaluationError,
    PreconditionError,
    PropertyViolation,
)
from .measure import (
    EstimatorConfig,
    MeasureModel,
    as_points,
    check_positive_definite,
    check_symmetric_matrix,
    laplace_reference,
    log_expect,
)

logger = logging.getLogger(__name__)

FRAME_TOL = 1e-10
DERIVATIVE_BOUND_TRIALS = tuple(2.0**i for i in range(11))


@dataclass(frozen=True)
class Schedule:
    """Scale function r with r(0) = 0, strictly increasing, unbounded"""

    name: str
    r: Callable[[float], float]
    rdot: Callable[[float], float]


SCHEDULES: Dict[str, Schedule] = {
    "linear": Schedule("linear", lambda k: k, lambda k: 1.0),
    "quadratic": Schedule("quadratic", lambda k: k * k, lambda k: 2.0 * k),
    "expm1": Schedule("expm1", math.expm1, math.exp),
}


@dataclass(frozen=True, eq=False)
class RegulatorFamily:
    """Monotone family k -> R_k of PSD quadratic forms

    I_k(u, v) = u' R_k v with R_k = r(k)^2 R0 and Q_k(x) = I_k(x - w, x - w).
    The scaled form J_k = I_k / r(k)^2 equals R0 for every k > 0.
    """

    r0: np.ndarray
    w: np.ndarray
    schedule: str = "linear"

    def __post_init__(self):
        r0 = check_symmetric_matrix(self.r0, "regulator.r0")
        check_positive_definite(r0, "regulator.r0", semidefinite=True)
        w = np.atleast_1d(np.asarray(self.w, dtype=float)).copy()
        if w.shape != (r0.shape[0],) or not np.all(np.isfinite(w)):
            raise ConfigError(f"regulator.w must be a finite vector of length {r0.shape[0]}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(
                f"regulator.schedule must be one of {sorted(SCHEDULES)}, got {self.schedule!r}"
            )
        r0.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "r0", r0)
        object.__setattr__(self, "w", w)

    @property
    def dim(self) -> int:
        return self.w.shape[0]

    @property
    def scale(self) -> Schedule:
        return SCHEDULES[self.schedule]

    @cached_property
    def fingerprint(self) -> str:
        digest = hashlib.sha256(self.r0.tobytes())
        digest.update(self.w.tobytes())
        digest.update(self.schedule.encode())
        return digest.hexdigest()

    def __eq__(self, other):
        return isinstance(other, RegulatorFamily) and self.fingerprint == other.fingerprint

    def __hash__(self):
        return hash(self.fingerprint)

    def r(self, k: float) -> float:
        _check_k(k)
        return float(self.scale.r(k))

    def matrix(self, k: float) -> np.ndarray:
        """R_k"""
        return self.r(k) ** 2 * self.r0

    def derivative_matrix(self, k: float) -> np.ndarray:
        """dR_k/dk = 2 r(k) r'(k) R0"""
        return 2.0 * self.r(k) * float(self.scale.rdot(k)) * self.r0

    def scaled_metric(self, k: float) -> np.ndarray:
        """J_k = I_k / r(k)^2; constant R0 for separable schedules"""
        if k <= 0:
            raise PreconditionError("J_k is defined for k > 0")
        return self.r0

    def with_base_point(self, w) -> "RegulatorFamily":
        return RegulatorFamily(self.r0, w, self.schedule)


def _check_k(k: float) -> None:
    if not (k >= 0 and math.isfinite(k)):
        raise PreconditionError(f"flow parameter must be finite and >= 0, got {k!r}")


def _quadratic(matrix: np.ndarray, fam: RegulatorFamily, x):
    points, single = as_points(x, fam.dim)
    centered = points - fam.w
    values = np.einsum("ij,jk,ik->i", centered, matrix, centered)
    values = np.maximum(values, 0.0)
    return float(values[0]) if single else values


def q(fam: RegulatorFamily, k: float, x):
    """Q_k(x) = (x - w)' R_k (x - w); vectorized over rows of x"""
    return _quadratic(fam.matrix(k), fam, x)


def q_prime(fam: RegulatorFamily, k: float, x):
    """Q'_k(x) = (x - w)' (2 r r' R0) (x - w) = dQ_k(x)/dk"""
    return _quadratic(fam.derivative_matrix(k), fam, x)


@dataclass(frozen=True)
class OmegaFrame:
    """Vectors v_a with sum_a v_a v_a' = dR_k/dk"""

    k: float
    vectors: np.ndarray

    def reconstruction(self) -> np.ndarray:
        if self.vectors.size == 0:
            return np.zeros((0, 0))
        return self.vectors.T @ self.vectors

    def frame_sum(self, u) -> float:
        """sum_a (v_a . u)^2"""
        return float(np.sum((self.vectors @ np.asarray(u, dtype=float)) ** 2))

    def variance_sum(self, cov: np.ndarray) -> float:
        """sum_a v_a' cov v_a = Tr[(dR_k/dk) cov]"""
        return float(np.einsum("ai,ij,aj->", self.vectors, cov, self.vectors))


def omega_frame(fam: RegulatorFamily, k: float) -> OmegaFrame:
    """Eigenframe of dR_k/dk: v_a = sqrt(lambda_a) e_a for lambda_a > 0

    Raises:
        EvaluationError: If the derivative matrix has a significantly negative
            eigenvalue or the frame does not reconstruct it to 1e-10
    """
    derivative = fam.derivative_matrix(k)
    values, vectors = linalg.eigh(derivative)
    scale = max(1.0, float(np.abs(values).max(initial=0.0)))
    if values.min(initial=0.0) < -FRAME_TOL * scale:
        raise EvaluationError(
            "regulator derivative is not positive semidefinite",
            {"k": k, "smallest_eigenvalue": float(values.min())},
        )
    keep = values > FRAME_TOL * scale
    frame = OmegaFrame(k, (vectors[:, keep] * np.sqrt(values[keep])).T)
    error = float(np.linalg.norm(frame.reconstruction() - derivative)) if keep.any() else float(
        np.linalg.norm(derivative)
    )
    if error > FRAME_TOL * scale:
        raise EvaluationError("omega frame does not reconstruct dR_k/dk", {"error": error})
    return frame


def check_derivative_bound(
    fam: RegulatorFamily, k: float, model: MeasureModel, cfg: EstimatorConfig
) -> float:
    """Find R with a finite integral of exp[Q'_k/(2R) - Q_k/2] against the model

    Trial values R = 1, 2, 4, ..., 1024 are attempted in turn.

    Returns:
        The first R for which the integral is finite

    Raises:
        AssumptionError: If the integral overflows for every trial R
    """
    matrix = fam.matrix(k)
    derivative = fam.derivative_matrix(k)
    failures = []
    for trial in DERIVATIVE_BOUND_TRIALS:
        effective = matrix - derivative / trial
        # Without a confining perturbation the Gaussian part must stay integrable.
        confined = linalg.eigh(effective + model.precision, eigvals_only=True)[0] > 0
        if not confined and model.perturbation is None:
            failures.append(trial)
            continue
        try:
            if confined:
                reference = laplace_reference(model, effective, effective @ fam.w)
            else:
                reference = laplace_reference(model)
            value = log_expect(
                model,
                cfg,
                lambda x: 0.5 * q_prime(fam, k, x) / trial - 0.5 * q(fam, k, x),
                reference,
            )
        except EvaluationError:
            failures.append(trial)
            continue
        if math.isfinite(value):
            logger.debug("derivative bound holds at k=%g with R=%g", k, trial)
            return trial
        failures.append(trial)
    raise AssumptionError(
        f"integral of exp[Q'_k/(2R) - Q_k/2] diverges at k={k} for every trial R",
        {"k": k, "trials": failures},
    )


class BallLimit(NamedTuple):
    limit: float
    sequence: List[float]
    limit_stderr: float


def ball_measure_limit_check(
    model: MeasureModel,
    cfg: EstimatorConfig,
    metrics: Sequence[np.ndarray],
    limit_metric: np.ndarray,
    center,
    eps: float,
    tol_stderr: float = 4.0,
) -> BallLimit:
    """Ball measures along an increasing PSD sequence J_1 <= J_2 <= ... and at its limit

    All balls are evaluated on one shared sample, so the sequence of
    probabilities is deterministically nonincreasing.

    Raises:
        PreconditionError: If the metric sequence is not increasing or exceeds
            the limit metric
        PropertyViolation: If the last probability is not within tol_stderr
            standard errors of the limit probability
    """
    from .onsager import small_ball

    if eps <= 0:
        raise PreconditionError("eps must be positive")
    chain = [check_symmetric_matrix(m, f"metrics[{i}]") for i, m in enumerate(metrics)]
    chain.append(check_symmetric_matrix(limit_metric, "limit_metric"))
    for index, (lower, upper) in enumerate(zip(chain, chain[1:])):
        gap = linalg.eigh(upper - lower, eigvals_only=True)[0]
        if gap < -1e-12 * max(1.0, float(np.abs(upper).max())):
            raise PreconditionError(
                f"metric sequence is not increasing at position {index + 1}",
                {"position": index + 1, "smallest_eigenvalue": float(gap)},
            )

    estimates = [small_ball(model, cfg, m, center, eps, method="plain") for m in chain]
    sequence = [e.probability for e in estimates[:-1]]
    limit = estimates[-1]
    if any(b > a for a, b in zip(sequence, sequence[1:] + [limit.probability])):
        raise PropertyViolation("ball probabilities increased along the metric sequence")
    if sequence:
        spread = abs(sequence[-1] - limit.probability)
        bound = tol_stderr * max(estimates[-2].stderr, limit.stderr, 1.0 / limit.samples)
        if spread > bound:
            raise PropertyViolation(
                f"ball probabilities do not approach the limit ({spread:.3e} > {bound:.3e})"
            )
    return BallLimit(limit.probability, sequence, limit.stderr)
