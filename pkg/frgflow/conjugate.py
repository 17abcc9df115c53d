"""Regulated cumulant generating functions and their convex conjugates

In R^n the optimal tilt of the conjugate is always a linear functional
phi . x, so V*_k(y) is computed by Newton mean-matching over phi: the tilted
regulated measure exp[phi . x] mu_k is renormalized and its mean driven to y.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from .exceptions import (
    ConvergenceError,
    DomainError,
    IllConditionedError,
    OutsideDomainError,
    PreconditionError,
    PropertyViolation,
)
from .measure import (
    EstimatorConfig,
    GaussianReference,
    MeasureModel,
    expect,
    laplace_reference,
    log_expect,
    tilted_moments,
)
from .regulator import RegulatorFamily, check_derivative_bound, q, q_prime

logger = logging.getLogger(__name__)

QUADRATURE_TOL = 1e-10
MC_TOL_STDERR = 10.0
MIN_RCOND = 1e-12
DIVERGENCE_NORM = 1e6
ARMIJO_C = 1e-4
MAX_BACKTRACKS = 40


@dataclass(frozen=True, eq=False)
class TiltedState:
    """The tilted regulated measure exp[phi . x] mu_k, renormalized

    ``log_z`` is V_k(phi); ``mean`` and ``cov`` are the tilted moments.
    """

    k: float
    phi: np.ndarray
    log_z: float
    mean: np.ndarray
    cov: np.ndarray
    ess: float
    converged: bool = False
    iterations: int = 0
    trace: Tuple[dict, ...] = field(default=(), repr=False)


@dataclass(frozen=True, eq=False)
class ConjugateResult:
    """V*_k(y), the tilt realizing it, and Gamma_k(y)"""

    k: float
    y: np.ndarray
    value: float
    gamma: float
    tilt: TiltedState

    @property
    def diagnostics(self) -> Tuple[dict, ...]:
        return self.tilt.trace


class DerivativeCheck(NamedTuple):
    analytic: float
    fd: float
    residual: float
    stderr: float


class MonotonicityRow(NamedTuple):
    k: float
    vstar: float
    f_y: float


class FenchelYoung(NamedTuple):
    value: float
    best_lower_bound: float
    gap: float


class IdentityCheck(NamedTuple):
    gamma: float
    gamma_from_identity: float
    gap: float


def _vector(y, dim: int, name: str = "y") -> np.ndarray:
    vec = np.atleast_1d(np.asarray(y, dtype=float))
    if vec.shape != (dim,):
        raise DomainError(f"{name} must have length {dim}, got shape {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise DomainError(f"{name} must be finite", {name: vec.tolist()})
    return vec


def regulated_reference(
    k: float, phi: np.ndarray, model: MeasureModel, fam: RegulatorFamily
) -> GaussianReference:
    """Gaussian reference of exp[phi . x - Q_k(x)/2] mu"""
    matrix = fam.matrix(k)
    return laplace_reference(model, matrix, matrix @ fam.w + phi)


def _weight(fam: RegulatorFamily, k: float, phi: np.ndarray):
    return lambda x: x @ phi - 0.5 * q(fam, k, x)


@lru_cache(maxsize=512)
def log_normalizer(
    k: float, model: MeasureModel, fam: RegulatorFamily, cfg: EstimatorConfig
) -> float:
    """ln N_k, cached per (k, model, family, estimator)

    Evaluated on the same rule and reference as the untilted ``tilted_state``,
    so V_k(0) = 0 holds exactly for every k including 0.
    """
    phi = np.zeros(model.dim)
    return log_expect(model, cfg, _weight(fam, k, phi), regulated_reference(k, phi, model, fam))


def normalizer(k: float, model: MeasureModel, fam: RegulatorFamily, cfg: EstimatorConfig) -> float:
    """N_k = integral of exp[-Q_k/2] against mu; N_0 = 1 up to the estimator error"""
    return math.exp(log_normalizer(float(k), model, fam, cfg))


def tilted_state(
    k: float, phi, model: MeasureModel, fam: RegulatorFamily, cfg: EstimatorConfig
) -> TiltedState:
    """Evaluate V_k(phi) with the tilted mean and covariance

    In quadrature mode the nodes follow the tilt; in Monte Carlo mode one
    proposal per k is reused for every phi, so V_k is a smooth deterministic
    function of phi across Newton iterations.
    """
    phi = _vector(phi, model.dim, "phi")
    center = np.zeros(model.dim) if cfg.monte_carlo else phi
    moments = tilted_moments(
        model, cfg, _weight(fam, k, phi), regulated_reference(k, center, model, fam)
    )
    log_z = moments.log_mass - log_normalizer(float(k), model, fam, cfg)
    return TiltedState(k, phi, log_z, moments.mean, moments.cov, moments.ess)


def v(k: float, phi, model: MeasureModel, fam: RegulatorFamily, cfg: EstimatorConfig) -> float:
    """V_k(phi) = ln of the integral of exp[phi . x] against mu_k"""
    return tilted_state(k, phi, model, fam, cfg).log_z


def normalizer_derivative_check(
    k: float,
    model: MeasureModel,
    fam: RegulatorFamily,
    cfg: EstimatorConfig,
    step: Optional[float] = None,
) -> DerivativeCheck:
    """Compare N'_k = -1/2 * integral of Q'_k exp[-Q_k/2] with a central difference

    Raises:
        PreconditionError: If k <= 0
        AssumptionError: If the derivative bound fails at k
        PropertyViolation: If the residual exceeds max(1e-6, 5 stderr)
    """
    if k <= 0:
        raise PreconditionError("the normalizer derivative check needs k > 0")
    check_derivative_bound(fam, k, model, cfg)
    phi = np.zeros(model.dim)
    integral = expect(
        model,
        cfg,
        lambda x: q_prime(fam, k, x),
        lambda x: -0.5 * q(fam, k, x),
        regulated_reference(k, phi, model, fam),
    )
    analytic = -0.5 * integral.estimate
    stderr = 0.5 * integral.stderr
    h = step if step is not None else min(1e-4 * (1.0 + k), 0.5 * k)
    fd = (normalizer(k + h, model, fam, cfg) - normalizer(k - h, model, fam, cfg)) / (2.0 * h)
    residual = abs(analytic - fd)
    if residual > max(1e-6, 5.0 * stderr):
        raise PropertyViolation(
            f"normalizer derivative mismatch at k={k}: analytic {analytic:.8g}, fd {fd:.8g}",
            {"k": k, "analytic": analytic, "fd": fd, "residual": residual},
        )
    return DerivativeCheck(analytic, fd, residual, stderr)


def _default_tol(state: TiltedState, cfg: EstimatorConfig) -> float:
    if not cfg.monte_carlo:
        return QUADRATURE_TOL
    return MC_TOL_STDERR * math.sqrt(max(float(np.trace(state.cov)), 0.0) / state.ess)


def solve_tilt(
    k: float,
    y,
    model: MeasureModel,
    fam: RegulatorFamily,
    cfg: EstimatorConfig,
    tol: Optional[float] = None,
    max_iter: int = 100,
    phi0=None,
) -> TiltedState:
    """Find the tilt whose tilted regulated mean equals y

    Newton's method on phi -> V_k(phi) - phi . y with the tilted covariance as
    Hessian and Armijo backtracking (factor 1/2, c = 1e-4). A step is also
    accepted when it reduces the mean residual.

    Args:
        k: Flow parameter
        y: Target mean
        model, fam, cfg: Problem definition
        tol: Residual tolerance; 1e-10 in quadrature, 10 stderr in Monte Carlo
        max_iter: Newton iteration cap
        phi0: Warm start

    Returns:
        The converged TiltedState, with the Newton trace attached

    Raises:
        ConvergenceError: If max_iter is exceeded or backtracking fails
        IllConditionedError: If the tilted covariance is numerically singular
        OutsideDomainError: If the tilt diverges without reducing the residual
    """
    y = _vector(y, model.dim)
    phi = np.zeros(model.dim) if phi0 is None else _vector(phi0, model.dim, "phi0")
    state = tilted_state(k, phi, model, fam, cfg)
    trace: List[dict] = []
    step_length = 0.0
    for iteration in range(max_iter + 1):
        residual = state.mean - y
        norm = float(np.linalg.norm(residual))
        threshold = tol if tol is not None else _default_tol(state, cfg)
        trace.append(
            {
                "iteration": iteration,
                "residual": norm,
                "phi_norm": float(np.linalg.norm(state.phi)),
                "objective": float(state.log_z - state.phi @ y),
                "step": step_length,
            }
        )
        logger.debug("newton k=%g it=%d residual=%.3e", k, iteration, norm)
        if norm <= threshold:
            return replace(state, converged=True, iterations=iteration, trace=tuple(trace))
        if iteration == max_iter:
            break

        rcond = 1.0 / np.linalg.cond(state.cov)
        if not rcond >= MIN_RCOND:
            raise IllConditionedError(
                f"tilted covariance is ill-conditioned at k={k} (rcond {rcond:.2e})",
                {"k": k, "rcond": float(rcond), "trace": trace},
            )
        step = -linalg.solve(state.cov, residual, assume_a="pos")
        objective = state.log_z - state.phi @ y
        slope = float(residual @ step)
        scale = 1.0
        for _ in range(MAX_BACKTRACKS):
            candidate = tilted_state(k, state.phi + scale * step, model, fam, cfg)
            value = candidate.log_z - candidate.phi @ y
            improved = np.linalg.norm(candidate.mean - y) < norm
            if value <= objective + ARMIJO_C * scale * slope or improved:
                break
            scale *= 0.5
        else:
            raise ConvergenceError(
                f"line search failed at k={k}", {"k": k, "y": y.tolist(), "trace": trace}
            )
        step_length = scale * float(np.linalg.norm(step))
        if (
            np.linalg.norm(candidate.phi) > DIVERGENCE_NORM
            and np.linalg.norm(candidate.mean - y) >= norm
        ):
            raise OutsideDomainError(
                f"y lies outside the numeric interior of the mean domain at k={k}",
                {"k": k, "y": y.tolist(), "trace": trace},
            )
        state = candidate
    raise ConvergenceError(
        f"tilt did not converge in {max_iter} iterations at k={k}",
        {"k": k, "y": y.tolist(), "trace": trace},
    )


def conjugate(
    k: float,
    y,
    model: MeasureModel,
    fam: RegulatorFamily,
    cfg: EstimatorConfig,
    phi0=None,
    tol: Optional[float] = None,
    max_iter: int = 100,
) -> ConjugateResult:
    """V*_k(y) and the effective average action Gamma_k(y) = V*_k(y) - I_k(y - w, y - w)/2"""
    y = _vector(y, model.dim)
    tilt = solve_tilt(k, y, model, fam, cfg, tol=tol, max_iter=max_iter, phi0=phi0)
    value = float(tilt.phi @ y - tilt.log_z)
    gamma = value - 0.5 * q(fam, k, y)
    return ConjugateResult(float(k), y, value, gamma, tilt)


def fenchel_young_check(
    result: ConjugateResult,
    model: MeasureModel,
    fam: RegulatorFamily,
    cfg: EstimatorConfig,
    trials: int = 20,
    seed: int = 0,
    tol: float = 1e-8,
) -> FenchelYoung:
    """Check V*_k(y) >= y . phi - V_k(phi) at random tilts

    Raises:
        PropertyViolation: If a lower bound exceeds the conjugate value
    """
    rng = np.random.default_rng(seed)
    spread = 1.0 + float(np.linalg.norm(result.tilt.phi))
    best = -math.inf
    for _ in range(trials):
        phi = result.tilt.phi + spread * rng.standard_normal(model.dim)
        best = max(best, float(result.y @ phi - v(result.k, phi, model, fam, cfg)))
    gap = result.value - best
    if gap < -tol * (1.0 + abs(result.value)):
        raise PropertyViolation(
            f"Fenchel-Young inequality violated at k={result.k}: gap {gap:.3e}",
            {"k": result.k, "value": result.value, "bound": best},
        )
    return FenchelYoung(result.value, best, gap)


def conjugate_monotonicity_check(
    y,
    k_grid: Sequence[float],
    model: MeasureModel,
    fam: RegulatorFamily,
    cfg: EstimatorConfig,
    tol: float = 1e-6,
) -> List[MonotonicityRow]:
    """Tabulate f_y(k) = V*_k(y) - ln N_k and check it is nondecreasing

    Raises:
        PreconditionError: If k_grid decreases
        PropertyViolation: If f_y decreases by more than tol
    """
    grid = [float(k) for k in k_grid]
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise PreconditionError("k_grid must be nondecreasing")
    rows: List[MonotonicityRow] = []
    phi = None
    for k in grid:
        result = conjugate(k, y, model, fam, cfg, phi0=phi)
        phi = result.tilt.phi
        f_y = result.value - log_normalizer(k, model, fam, cfg)
        rows.append(MonotonicityRow(k, result.value, f_y))
    for before, after in zip(rows, rows[1:]):
        if after.f_y < before.f_y - tol:
            raise PropertyViolation(
                f"f_y decreased between k={before.k} and k={after.k}",
                {"rows": [row._asdict() for row in rows]},
            )
    return rows


def exp_minus_gamma_identity(
    k: float, y, model: MeasureModel, fam: RegulatorFamily, cfg: EstimatorConfig
) -> IdentityCheck:
    """Recompute Gamma_k(y) from the infimum over tilts of the y-centered regulated mass

    exp[-Gamma_k(y)] = inf_phi (1/N_k) * integral of exp[phi(x) - I_k(x, x)/2]
    against mu shifted by -y. The infimum equals exp[-V*(y)] N_k(y) for the
    family re-anchored at y, where N_k(y) is its normalizer.
    """
    y = _vector(y, model.dim)
    direct = conjugate(k, y, model, fam, cfg)
    anchored = fam.with_base_point(y)
    centered = conjugate(k, y, model, anchored, cfg)
    from_identity = (
        centered.value
        - log_normalizer(float(k), model, anchored, cfg)
        + log_normalizer(float(k), model, fam, cfg)
    )
    return IdentityCheck(direct.gamma, from_identity, abs(direct.gamma - from_identity))
