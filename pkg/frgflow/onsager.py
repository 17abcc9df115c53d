"""Small-ball probabilities, Onsager-Machlup functions and the k -> infinity boundary value"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.integrate import simpson, trapezoid

from .conjugate import conjugate, log_normalizer, regulated_reference
from .exceptions import (
    ConvergenceError,
    EstimationError,
    OutsideDomainError,
    PreconditionError,
    PropertyViolation,
)
from .measure import (
    MONTE_CARLO,
    EstimatorConfig,
    MeasureModel,
    as_points,
    check_symmetric_matrix,
    expect,
    sample,
    standard_normals,
)
from .regulator import RegulatorFamily, q

logger = logging.getLogger(__name__)

PLAIN_MIN_HITS = 1000
FIT_MIN_HITS = 100
ZERO_HIT_STDERR = 3.0
SMALL_BALL_METHODS = ("auto", "plain", "importance")


@dataclass(frozen=True, eq=False)
class SmallBallEstimate:
    """Monte Carlo estimate of mu({x : (x - c)' J (x - c) <= radius^2})"""

    center: np.ndarray
    radius: float
    metric: np.ndarray
    probability: float
    stderr: float
    samples: int
    hits: int
    method: str
    low_confidence: bool = False


@dataclass(frozen=True, eq=False)
class OMEstimate:
    """Log ratios of small-ball probabilities and their s -> 0 extrapolation"""

    a: np.ndarray
    b: np.ndarray
    radius_grid: Tuple[float, ...]
    log_ratios: Tuple[float, ...]
    log_ratio_stderr: Tuple[float, ...]
    extrapolated: float
    extrapolation_stderr: float
    fit_radii: Tuple[float, ...]
    fit_residual: float
    fit_slope: float = 0.0
    undefined: Tuple[float, ...] = ()
    method: str = "plain"


@dataclass(frozen=True, eq=False)
class NuProfile:
    k: float
    s_grid: np.ndarray
    density: np.ndarray
    density_stderr: np.ndarray
    total_mass: float
    mass_tolerance: float
    mass_tail: Callable[[float], float] = field(repr=False)


class AdmissibilityResult(NamedTuple):
    k: float
    inf_ratio: float
    argmin_phi: np.ndarray
    converged: bool


class AdmissibilityTrend(NamedTuple):
    rows: List[AdmissibilityResult]
    increasing: bool


class SymmetryLevel(NamedTuple):
    level: float
    samples_in_ball: int


@dataclass(frozen=True, eq=False)
class BoundaryResult:
    gamma_limit: float
    om_value: float
    gap: float
    gammas: Tuple[Tuple[float, float], ...]
    om: OMEstimate
    admissible_trend: bool


def _monte_carlo(cfg: EstimatorConfig) -> EstimatorConfig:
    return cfg if cfg.monte_carlo else cfg.with_mode(MONTE_CARLO)


def _metric_distance(points: np.ndarray, center: np.ndarray, metric: np.ndarray) -> np.ndarray:
    centered = points - center
    return np.einsum("ij,jk,ik->i", centered, metric, centered)


def _local_curvature(model: MeasureModel, center: np.ndarray) -> np.ndarray:
    curvature = model.precision
    if model.perturbation is not None:
        curvature = curvature + model.perturbation.hessian(center)
    values, vectors = linalg.eigh(0.5 * (curvature + curvature.T))
    floor = float(linalg.eigh(model.precision, eigvals_only=True)[0])
    return (vectors * np.maximum(values, floor)) @ vectors.T


def small_ball(
    model: MeasureModel,
    cfg: EstimatorConfig,
    metric,
    center,
    radius: float,
    method: str = "auto",
    proposal_radius: Optional[float] = None,
) -> SmallBallEstimate:
    """Estimate the mu-measure of a metric ball

    ``plain`` counts hits in the model's shared sample (with antithetic pairs
    through the symmetry center when the model is symmetric). ``importance``
    draws fixed standard normals through a Gaussian proposal centered at the
    ball, whose precision is the local curvature of the model plus
    n/proposal_radius^2 * J. ``auto`` uses plain counting when it finds at
    least 1000 hits.

    For a fixed method and proposal radius, estimates at different radii
    share every draw and are exactly monotone in the radius. A single
    ``auto`` call picks its method from its own radius; ``small_ball_sweep``
    fixes the method and proposal for a whole radius grid.

    Raises:
        PreconditionError: If radius is not positive or method is unknown
    """
    if not radius > 0:
        raise PreconditionError("radius must be positive")
    if proposal_radius is not None and not proposal_radius > 0:
        raise PreconditionError("proposal_radius must be positive")
    if method not in SMALL_BALL_METHODS:
        raise PreconditionError(f"unknown small-ball method {method!r}")
    mc = _monte_carlo(cfg)
    metric = check_symmetric_matrix(metric, "metric")
    center_vec, _ = as_points(center, model.dim)
    center_vec = center_vec[0]
    limit = radius * radius

    if method == "auto":
        method = _resolve_method(model, mc, metric, [center_vec], radius)
    if method == "plain":
        points = sample(model, mc, mc.samples)
        inside = _metric_distance(points, center_vec, metric) <= limit
        values = inside.astype(float)
        mirror = model.symmetry_center
        if mirror is not None:
            mirrored = 2.0 * mirror - points
            values = 0.5 * (values + (_metric_distance(mirrored, center_vec, metric) <= limit))
        return _ball_estimate(center_vec, radius, metric, values, int(inside.sum()), "plain")

    scale = radius if proposal_radius is None else proposal_radius
    precision = _local_curvature(model, center_vec) + (model.dim / (scale * scale)) * metric
    chol = linalg.cholesky(linalg.inv(precision), lower=True)
    z = standard_normals(model.dim, mc)
    proposal = center_vec + z @ chol.T
    log_q = (
        -0.5 * np.sum(z**2, axis=1)
        - 0.5 * model.dim * math.log(2.0 * math.pi)
        - float(np.sum(np.log(np.diag(chol))))
    )
    inside = _metric_distance(proposal, center_vec, metric) <= limit
    values = np.zeros(z.shape[0])
    values[inside] = np.exp(model.log_density(proposal[inside]) - log_q[inside])
    return _ball_estimate(center_vec, radius, metric, values, int(inside.sum()), "importance")


def _plain_hits(model, mc, metric, center, radius) -> int:
    points = sample(model, mc, mc.samples)
    return int(np.sum(_metric_distance(points, center, metric) <= radius * radius))


def _resolve_method(model, mc, metric, centers, radius) -> str:
    """plain when every center has at least PLAIN_MIN_HITS sample hits at radius"""
    hits = min(_plain_hits(model, mc, metric, c, radius) for c in centers)
    return "plain" if hits >= PLAIN_MIN_HITS else "importance"


def small_ball_sweep(
    model: MeasureModel,
    cfg: EstimatorConfig,
    metric,
    center,
    radius_grid: Sequence[float],
    method: str = "auto",
) -> List[SmallBallEstimate]:
    """Small-ball estimates over a radius grid with one method and one proposal

    ``auto`` resolves to plain counting when the smallest radius has at least
    1000 hits and to importance sampling otherwise. The importance proposal is
    scaled by the largest radius, so the estimates are exactly monotone in the
    radius for every seed.
    """
    radii = [float(s) for s in radius_grid]
    if not radii or any(not s > 0 for s in radii):
        raise PreconditionError("radius_grid must contain positive radii")
    if method not in SMALL_BALL_METHODS:
        raise PreconditionError(f"unknown small-ball method {method!r}")
    mc = _monte_carlo(cfg)
    metric = check_symmetric_matrix(metric, "metric")
    center_vec = as_points(center, model.dim)[0][0]
    if method == "auto":
        method = _resolve_method(model, mc, metric, [center_vec], min(radii))
    return [
        small_ball(model, mc, metric, center_vec, s, method, proposal_radius=max(radii))
        for s in radii
    ]


def _ball_estimate(center, radius, metric, values, hits, method) -> SmallBallEstimate:
    count = values.shape[0]
    if hits == 0:
        return SmallBallEstimate(
            center, radius, metric, 0.0, ZERO_HIT_STDERR / count, count, 0, method, True
        )
    probability = float(np.mean(values))
    stderr = float(np.std(values, ddof=1)) / math.sqrt(count)
    return SmallBallEstimate(
        center, radius, metric, min(probability, 1.0), stderr, count, hits, method
    )


def _log_ratio(first: SmallBallEstimate, second: SmallBallEstimate) -> Tuple[float, float]:
    if first.probability == 0.0 and second.probability == 0.0:
        return math.nan, math.nan
    if second.probability == 0.0:
        return math.inf, math.nan
    if first.probability == 0.0:
        return -math.inf, math.nan
    value = math.log(first.probability / second.probability)
    stderr = math.hypot(first.stderr / first.probability, second.stderr / second.probability)
    return value, stderr


def _om_from_metrics(
    model, cfg, metric_at, a, b, radius_grid, fit_points, min_hits, method
) -> OMEstimate:
    radii = tuple(float(s) for s in radius_grid)
    if not radii or any(s <= 0 for s in radii):
        raise PreconditionError("radius_grid must contain positive radii")
    if any(t >= s for s, t in zip(radii, radii[1:])):
        raise PreconditionError("radius_grid must be strictly decreasing")
    if method not in SMALL_BALL_METHODS:
        raise PreconditionError(f"unknown small-ball method {method!r}")
    a_vec = as_points(a, model.dim)[0][0]
    b_vec = as_points(b, model.dim)[0][0]
    mc = _monte_carlo(cfg)
    if method == "auto":
        smallest = radii[-1]
        method = _resolve_method(model, mc, metric_at(smallest), [a_vec, b_vec], smallest)

    # Every radius uses one method and one proposal scale, so ratios move monotonically.
    ratios, errors, usable, undefined = [], [], [], []
    for s in radii:
        metric = metric_at(s)
        first = small_ball(model, mc, metric, a_vec, s, method, proposal_radius=radii[0])
        second = small_ball(model, mc, metric, b_vec, s, method, proposal_radius=radii[0])
        value, stderr = _log_ratio(first, second)
        ratios.append(value)
        errors.append(stderr)
        if math.isnan(value):
            undefined.append(s)
        elif math.isfinite(value) and min(first.hits, second.hits) >= min_hits:
            usable.append(len(ratios) - 1)

    if not usable:
        raise EstimationError(
            "too few small-ball hits at every radius; use importance sampling "
            "(method='importance') or more samples",
            {"radii": list(radii)},
        )
    window = sorted(usable, key=lambda i: radii[i])[:fit_points]
    s2 = np.array([radii[i] ** 2 for i in window])
    values = np.array([ratios[i] for i in window])
    sigma = np.maximum(np.array([errors[i] for i in window]), 1e-12)
    if len(window) >= 2:
        coeffs, cov = np.polyfit(s2, values, 1, w=1.0 / sigma, cov="unscaled")
        intercept, intercept_stderr = float(coeffs[1]), math.sqrt(max(float(cov[1, 1]), 0.0))
        slope = float(coeffs[0])
        residual = float(np.sqrt(np.mean((np.polyval(coeffs, s2) - values) ** 2)))
    else:
        intercept, intercept_stderr, residual = float(values[0]), float(sigma[0]), 0.0
        slope = 0.0
    logger.debug("OM fit over radii %s: %.6g +- %.2g", [radii[i] for i in window], intercept,
                 intercept_stderr)
    return OMEstimate(
        a=a_vec,
        b=b_vec,
        radius_grid=radii,
        log_ratios=tuple(ratios),
        log_ratio_stderr=tuple(errors),
        extrapolated=intercept,
        extrapolation_stderr=intercept_stderr,
        fit_radii=tuple(radii[i] for i in window),
        fit_residual=residual,
        fit_slope=slope,
        undefined=tuple(undefined),
        method=method,
    )


def om_estimate(
    model: MeasureModel,
    cfg: EstimatorConfig,
    metric,
    a,
    b,
    radius_grid: Sequence[float],
    fit_points: int = 4,
    min_hits: int = FIT_MIN_HITS,
    method: str = "auto",
) -> OMEstimate:
    """Onsager-Machlup function F(a, b) = lim ln mu(K_s(a)) / mu(K_s(b))

    The log ratio is fitted linearly against s^2 over the smallest
    ``fit_points`` radii with at least ``min_hits`` hits at both centers, and
    the intercept is reported. Radii where both balls are empty are recorded
    as undefined. ``auto`` picks one method for the whole grid from the hits
    at the smallest radius; importance proposals are scaled by the largest.

    Raises:
        PreconditionError: If radius_grid is not strictly decreasing
        EstimationError: If no radius has enough hits
    """
    metric = check_symmetric_matrix(metric, "metric")
    return _om_from_metrics(
        model, cfg, lambda s: metric, a, b, radius_grid, fit_points, min_hits, method
    )


def om_bar_estimate(
    model: MeasureModel,
    cfg: EstimatorConfig,
    fam: RegulatorFamily,
    a,
    b,
    radius_grid: Sequence[float],
    fit_points: int = 4,
    min_hits: int = FIT_MIN_HITS,
    method: str = "auto",
) -> OMEstimate:
    """Generalised OM function along the diagonal k_i = 1/s_i^2 with metrics J_{k_i}"""
    return _om_from_metrics(
        model,
        cfg,
        lambda s: fam.scaled_metric(1.0 / (s * s)),
        a,
        b,
        radius_grid,
        fit_points,
        min_hits,
        method,
    )


def nu_k_profile(
    k: float,
    model: MeasureModel,
    fam: RegulatorFamily,
    cfg: EstimatorConfig,
    s_grid: Sequence[float],
) -> NuProfile:
    """Density of nu_k on s_grid, its total mass and the tail function eps -> nu_k([eps, inf))

    The density is (r_k^2 / N_k) mu(K^{J_k}_s(w)) s exp[-r_k^2 s^2 / 2].

    Raises:
        PreconditionError: If k <= 0 or s_grid is not increasing from 0
        PropertyViolation: If the total mass misses 1 by more than 5 stderr
            plus the quadrature and truncation errors
    """
    if k <= 0:
        raise PreconditionError("nu_k is defined for k > 0")
    grid = np.asarray(s_grid, dtype=float)
    if grid.ndim != 1 or grid.size < 3 or grid[0] < 0 or np.any(np.diff(grid) <= 0):
        raise PreconditionError("s_grid must be increasing, nonnegative and have >= 3 points")
    mc = _monte_carlo(cfg)
    metric = fam.scaled_metric(k)
    r2 = fam.r(k) ** 2
    norm = math.exp(log_normalizer(float(k), model, fam, cfg))

    points = sample(model, mc, mc.samples)
    distances = np.sqrt(_metric_distance(points, fam.w, metric))
    ordered = np.sort(distances)
    fractions = np.searchsorted(ordered, grid, side="right") / ordered.size
    stderr_p = np.sqrt(fractions * (1.0 - fractions) / ordered.size)
    profile = (r2 / norm) * grid * np.exp(-0.5 * r2 * grid**2)
    density = profile * fractions
    density_stderr = profile * stderr_p

    total_mass = float(trapezoid(density, grid))
    quadrature_error = abs(total_mass - float(simpson(density, x=grid)))
    truncation = math.exp(-0.5 * r2 * grid[-1] ** 2) / norm
    # Layer cake: the mass is the sample mean of exp[-Q_k/2] divided by N_k.
    mass_stderr = float(np.std(np.exp(-0.5 * r2 * distances**2), ddof=1)) / (
        math.sqrt(distances.size) * norm
    )
    tolerance = 5.0 * mass_stderr + quadrature_error + truncation
    if abs(total_mass - 1.0) > tolerance:
        raise PropertyViolation(
            f"nu_k total mass {total_mass:.6f} deviates from 1 beyond {tolerance:.2e}",
            {"k": k, "total_mass": total_mass, "tolerance": tolerance},
        )

    reference = regulated_reference(k, np.zeros(model.dim), model, fam)

    # nu_k([eps, inf)) = E[exp(-r_k^2 max(d, eps)^2 / 2)] / N_k with d the J_k distance to w.
    def mass_tail(eps: float) -> float:
        tail = expect(
            model,
            cfg,
            lambda x: np.exp(
                -0.5 * r2 * np.maximum(eps * eps - _metric_distance(x, fam.w, metric), 0.0)
            ),
            lambda x: -0.5 * q(fam, k, x),
            reference,
        )
        return tail.estimate / norm

    return NuProfile(k, grid, density, density_stderr, total_mass, tolerance, mass_tail)


def admissibility_ratio(
    k: float, y, model: MeasureModel, fam: RegulatorFamily, cfg: EstimatorConfig
) -> AdmissibilityResult:
    """inf over tilts of the y-centered regulated mass ratio

    The ratio integral exp[phi(x) - I_k(x, x)/2] d mu_{-y} over integral
    exp[-I_k(x, x)/2] d mu_{-y} is minimized by mean-matching the family
    re-anchored at y, so the infimum is exp[-V*_k(y)] for that family. On
    solver failure the best value seen is returned as an upper bound with
    converged = False.
    """
    if k <= 0:
        raise PreconditionError("the admissibility ratio needs k > 0")
    anchored = fam.with_base_point(y)
    try:
        result = conjugate(k, y, model, anchored, cfg)
    except (ConvergenceError, OutsideDomainError) as exc:
        objectives = [entry["objective"] for entry in exc.details.get("trace", [])]
        bound = min([1.0] + [math.exp(value) for value in objectives])
        logger.warning("admissibility solver failed at k=%g; reporting upper bound %.6g", k, bound)
        return AdmissibilityResult(float(k), bound, np.zeros(model.dim), False)
    return AdmissibilityResult(
        float(k), min(math.exp(-result.value), 1.0), result.tilt.phi, True
    )


def admissibility_trend(
    y,
    k_grid: Sequence[float],
    model: MeasureModel,
    fam: RegulatorFamily,
    cfg: EstimatorConfig,
    tol: float = 1e-9,
) -> AdmissibilityTrend:
    """Admissibility ratios over k_grid and whether they are nondecreasing toward 1"""
    rows = [admissibility_ratio(k, y, model, fam, cfg) for k in k_grid]
    increasing = all(b.inf_ratio >= a.inf_ratio - tol for a, b in zip(rows, rows[1:]))
    return AdmissibilityTrend(rows, increasing)


def symmetry_level(
    model: MeasureModel, cfg: EstimatorConfig, y, metric, radius: float
) -> SymmetryLevel:
    """Empirical 1 - eps of the approximate-symmetry criterion

    For samples u of mu shifted by -y inside the J-ball of the given radius
    around 0, reports min over u of min(rho(u), rho(-u)) / rho(u), where rho is
    the density of the shifted measure. NaN when no sample falls in the ball.
    """
    mc = _monte_carlo(cfg)
    y_vec = as_points(y, model.dim)[0][0]
    metric = check_symmetric_matrix(metric, "metric")
    shifted = sample(model, mc, mc.samples) - y_vec
    inside = shifted[_metric_distance(shifted, np.zeros(model.dim), metric) <= radius**2]
    if inside.shape[0] == 0:
        return SymmetryLevel(math.nan, 0)
    here = model.log_density_unnormalized(inside + y_vec)
    mirrored = model.log_density_unnormalized(y_vec - inside)
    level = float(np.min(np.exp(np.minimum(here, mirrored) - here)))
    return SymmetryLevel(level, int(inside.shape[0]))


def boundary_check(
    y,
    model: MeasureModel,
    fam: RegulatorFamily,
    cfg: EstimatorConfig,
    k_grid: Sequence[float],
    radius_grid: Sequence[float],
    fit_points: int = 3,
    om_method: str = "auto",
) -> BoundaryResult:
    """Compare the k -> infinity limit of Gamma_k(y) with the OM value F(w, y)

    Gamma_k(y) is fitted linearly against 1/r_k^2 over the largest
    ``fit_points`` grid values and extrapolated to 0. The OM value uses the
    limit metric J = R0.
    """
    grid = sorted(float(k) for k in k_grid)
    if len(grid) < 2 or grid[0] <= 0:
        raise PreconditionError("k_grid needs at least two positive values")
    y_vec = as_points(y, model.dim)[0][0]

    gammas = []
    phi = None
    for k in grid:
        result = conjugate(k, y_vec, model, fam, cfg, phi0=phi)
        phi = result.tilt.phi
        gammas.append((k, result.gamma))
    tail = gammas[-fit_points:]
    inverse = np.array([1.0 / fam.r(k) ** 2 for k, _ in tail])
    values = np.array([g for _, g in tail])
    gamma_limit = float(np.polyfit(inverse, values, 1)[1]) if len(tail) >= 2 else float(values[0])

    trend = admissibility_trend(y_vec, [k for k, _ in tail], model, fam, cfg)
    if not trend.increasing:
        logger.warning("admissibility ratio is not increasing over k=%s", [k for k, _ in tail])

    om = om_estimate(model, cfg, fam.scaled_metric(grid[-1]), fam.w, y_vec, radius_grid,
                     method=om_method)
    gap = abs(gamma_limit - om.extrapolated)
    logger.info("boundary: gamma limit %.6g, OM %.6g, gap %.3g", gamma_limit, om.extrapolated, gap)
    return BoundaryResult(gamma_limit, om.extrapolated, gap, tuple(gammas), om, trend.increasing)
