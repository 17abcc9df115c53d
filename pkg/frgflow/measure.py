"""Probability measures on R^n and the expectation engine

Every integral in the package reduces to ``expect`` / ``log_expect`` /
``tilted_moments`` over a ``MeasureModel``. Quadrature places tensorized
Gauss-Hermite nodes in the whitened coordinates of a Gaussian reference;
Monte Carlo draws either from the model itself or from the reference as an
importance proposal. All reductions run through a max-shifted log-sum-exp.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from functools import cached_property, lru_cache
from typing import Callable, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy import linalg, optimize
from scipy.special import logsumexp

from .exceptions import ConfigError, DomainError, EvaluationError, SamplerError

logger = logging.getLogger(__name__)

QUADRATURE = "quadrature"
MONTE_CARLO = "monte_carlo"

SYMMETRY_TOL = 1e-12
MIN_ACCEPTANCE = 1e-4
EXP_LIMIT = 700.0

# Nonnegativity check of perturbations.
NONNEGATIVE_TOL = 1e-9
CHECK_RADIUS = 10.0
CHECK_GRID = 41
CHECK_RANDOM_POINTS = 20_000
CHECK_STARTS = 8

# Node counts used once per model for the perturbation normalizer.
_NORMALIZER_NODES = {1: 200, 2: 120, 3: 64}
_NORMALIZER_MC_SAMPLES = 1 << 20

VectorFn = Callable[[np.ndarray], np.ndarray]


class Estimate(NamedTuple):
    """An integral estimate; stderr is 0 for quadrature"""

    estimate: float
    stderr: float


class Moments(NamedTuple):
    """Mass, mean and covariance of an exponentially reweighted model"""

    log_mass: float
    mean: np.ndarray
    cov: np.ndarray
    ess: float


def check_symmetric_matrix(matrix, name: str, tol: float = SYMMETRY_TOL) -> np.ndarray:
    """Validate a square symmetric matrix, naming the offending entry on failure

    Args:
        matrix: Array-like square matrix
        name: Dotted name used in diagnostics

    Returns:
        The matrix as a float array

    Raises:
        ConfigError: If the matrix is not square, not finite or not symmetric
    """
    array = np.atleast_2d(np.asarray(matrix, dtype=float))
    if array.ndim != 2 or array.shape[0] != array.shape[1]:
        raise ConfigError(f"{name} must be a square matrix, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        i, j = np.argwhere(~np.isfinite(array))[0]
        raise ConfigError(f"{name}[{i}][{j}] is not finite")
    asym = np.abs(array - array.T)
    if asym.max(initial=0.0) > tol:
        i, j = np.unravel_index(np.argmax(asym), asym.shape)
        raise ConfigError(
            f"{name}[{i}][{j}] = {array[i, j]!r} differs from {name}[{j}][{i}] = {array[j, i]!r}",
            {"entry": [int(i), int(j)]},
        )
    return 0.5 * (array + array.T)


def check_positive_definite(matrix: np.ndarray, name: str, semidefinite: bool = False) -> None:
    """Raise ConfigError unless matrix is positive (semi)definite"""
    smallest = float(linalg.eigh(matrix, eigvals_only=True)[0])
    scale = max(1.0, float(np.abs(matrix).max(initial=0.0)))
    if semidefinite and smallest < -SYMMETRY_TOL * scale:
        raise ConfigError(
            f"{name} is not positive semidefinite (smallest eigenvalue {smallest:.3e})",
            {"smallest_eigenvalue": smallest},
        )
    if not semidefinite and smallest <= 0.0:
        raise ConfigError(
            f"{name} is not positive definite (smallest eigenvalue {smallest:.3e})",
            {"smallest_eigenvalue": smallest},
        )


def as_points(x, dim: int) -> Tuple[np.ndarray, bool]:
    """Coerce x to an (N, dim) array; the flag tells whether x was a single vector"""
    points = np.asarray(x, dtype=float)
    single = points.ndim <= 1
    points = points.reshape(1, -1) if single else points
    if points.shape[1] != dim:
        raise DomainError(f"expected points of dimension {dim}, got {points.shape[1]}")
    if not np.all(np.isfinite(points)):
        bad = points[~np.all(np.isfinite(points), axis=1)][0]
        raise DomainError("x must be finite", {"x": bad.tolist()})
    return points, single


@dataclass(frozen=True)
class Monomial:
    """A term coeff * prod_j x_j ** powers[j]"""

    coeff: float
    powers: Tuple[int, ...]

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        return self.coeff * np.prod(points ** np.asarray(self.powers), axis=1)

    def _lowered(self, x: np.ndarray, lower: Sequence[int]) -> float:
        powers = list(self.powers)
        factor = self.coeff
        for axis in lower:
            if powers[axis] == 0:
                return 0.0
            factor *= powers[axis]
            powers[axis] -= 1
        return factor * float(np.prod(x ** np.asarray(powers)))


@dataclass(frozen=True)
class Perturbation:
    """Nonnegative polynomial p acting as density exp(-p) relative to a Gaussian base

    The leading total degree must be even and p >= 0 must hold, so exp(-p) <= 1
    serves as the rejection envelope. Nonnegativity is checked numerically:
    on a grid over [-10, 10]^n (random points above three dimensions) and by
    local minimization from the lowest grid points.
    """

    terms: Tuple[Monomial, ...]

    def __post_init__(self):
        if not self.terms:
            raise ConfigError("measure.perturbation must contain at least one term")
        dims = {len(term.powers) for term in self.terms}
        if len(dims) != 1:
            raise ConfigError("measure.perturbation terms must share one dimension")
        for index, term in enumerate(self.terms):
            if not math.isfinite(term.coeff):
                raise ConfigError(f"measure.perturbation[{index}].coeff must be finite")
            if any(p < 0 for p in term.powers):
                raise ConfigError(f"measure.perturbation[{index}].powers must be nonnegative")
        if self.degree % 2:
            raise ConfigError(
                f"measure.perturbation has leading degree {self.degree}; it must be even"
            )
        tol = NONNEGATIVE_TOL * (1.0 + sum(abs(term.coeff) for term in self.terms))
        value, x = self._lower_bound(tol)
        if not value >= -tol:
            raise ConfigError(
                f"measure.perturbation must be nonnegative; it reaches {value:.6g}",
                {"x": x.tolist(), "value": value},
            )

    @property
    def degree(self) -> int:
        return max((sum(t.powers) for t in self.terms if t.coeff != 0.0), default=0)

    @property
    def is_even(self) -> bool:
        """Whether p(-x) = p(x)"""
        return all(sum(t.powers) % 2 == 0 for t in self.terms if t.coeff != 0.0)

    def _lower_bound(self, tol: float) -> Tuple[float, np.ndarray]:
        n = self.dim
        if n <= 3:
            axis = np.linspace(-CHECK_RADIUS, CHECK_RADIUS, CHECK_GRID)
            grids = np.meshgrid(*([axis] * n), indexing="ij")
            points = np.stack([g.ravel() for g in grids], axis=1)
        else:
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(0)))
            points = rng.uniform(-CHECK_RADIUS, CHECK_RADIUS, (CHECK_RANDOM_POINTS, n))
        values = self.evaluate(points)
        order = np.argsort(values)
        low, argmin = float(values[order[0]]), points[order[0]]
        if low < -tol:
            return low, argmin
        for start in points[order[:CHECK_STARTS]]:
            result = optimize.minimize(
                lambda x: float(self.evaluate(x.reshape(1, -1))[0]),
                start,
                jac=self.gradient,
                method="BFGS",
            )
            value = float(result.fun)
            if not value >= low:
                low, argmin = value, np.asarray(result.x)
            if not low >= -tol:
                break
        return low, argmin

    @classmethod
    def from_terms(cls, terms) -> "Perturbation":
        """Build from an iterable of (coeff, powers) pairs or {coeff, powers} dicts"""
        monomials = []
        for term in terms:
            if isinstance(term, Monomial):
                monomials.append(term)
                continue
            if isinstance(term, dict):
                coeff, powers = term["coeff"], term["powers"]
            else:
                coeff, powers = term
            monomials.append(Monomial(float(coeff), tuple(int(p) for p in powers)))
        return cls(tuple(monomials))

    @property
    def dim(self) -> int:
        return len(self.terms[0].powers)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        values = np.zeros(points.shape[0])
        for term in self.terms:
            values += term.evaluate(points)
        return values

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return np.array([sum(t._lowered(x, (a,)) for t in self.terms) for a in range(self.dim)])

    def hessian(self, x: np.ndarray) -> np.ndarray:
        n = self.dim
        out = np.empty((n, n))
        for a in range(n):
            for b in range(a, n):
                out[a, b] = out[b, a] = sum(t._lowered(x, (a, b)) for t in self.terms)
        return out


@dataclass(frozen=True, eq=False)
class MeasureModel:
    """A Gaussian or perturbed Gaussian probability measure on R^n

    Instances are immutable and compare and hash by content, so they can key
    the normalizer and sample caches.
    """

    mean: np.ndarray
    covariance: np.ndarray
    perturbation: Optional[Perturbation] = None

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        if mean.ndim != 1 or not np.all(np.isfinite(mean)):
            raise ConfigError("measure.mean must be a finite vector")
        cov = check_symmetric_matrix(self.covariance, "measure.covariance")
        if cov.shape[0] != mean.shape[0]:
            raise ConfigError(
                f"measure.covariance is {cov.shape[0]}x{cov.shape[0]} "
                f"but measure.mean has length {mean.shape[0]}"
            )
        check_positive_definite(cov, "measure.covariance")
        if self.perturbation is not None and self.perturbation.dim != mean.shape[0]:
            raise ConfigError("measure.perturbation powers must match the dimension")
        mean.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @classmethod
    def gaussian(cls, mean, covariance) -> "MeasureModel":
        return cls(mean, covariance)

    @classmethod
    def perturbed_gaussian(cls, mean, covariance, terms) -> "MeasureModel":
        return cls(mean, covariance, Perturbation.from_terms(terms))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def kind(self) -> str:
        return "gaussian" if self.perturbation is None else "perturbed_gaussian"

    @cached_property
    def cholesky(self) -> np.ndarray:
        return linalg.cholesky(self.covariance, lower=True)

    @cached_property
    def precision(self) -> np.ndarray:
        return linalg.cho_solve((self.cholesky, True), np.eye(self.dim))

    @cached_property
    def log_det(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.cholesky))))

    @cached_property
    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.mean.tobytes())
        digest.update(self.covariance.tobytes())
        digest.update(repr(self.perturbation).encode())
        return digest.hexdigest()

    def __eq__(self, other):
        return isinstance(other, MeasureModel) and self.fingerprint == other.fingerprint

    def __hash__(self):
        return hash(self.fingerprint)

    def is_symmetric(self) -> bool:
        """Whether the model is invariant under reflection through its mean"""
        if self.perturbation is None:
            return True
        return bool(np.all(self.mean == 0.0)) and self.perturbation.is_even

    @property
    def symmetry_center(self) -> Optional[np.ndarray]:
        """The reflection center when the model is symmetric, else None"""
        return self.mean if self.is_symmetric() else None

    def log_density_unnormalized(self, x):
        """Log of the unnormalized density

        Args:
            x: A point (n,) or a batch of points (N, n)

        Returns:
            A float for a single point, otherwise an (N,) array

        Raises:
            DomainError: If x is not finite
        """
        points, single = as_points(x, self.dim)
        white = linalg.solve_triangular(self.cholesky, (points - self.mean).T, lower=True)
        values = -0.5 * np.sum(white**2, axis=0)
        if self.perturbation is not None:
            values = values - self.perturbation.evaluate(points)
        return float(values[0]) if single else values

    def log_density(self, x):
        """Normalized log density with respect to Lebesgue measure"""
        offset = 0.5 * (self.dim * math.log(2.0 * math.pi) + self.log_det)
        return self.log_density_unnormalized(x) - offset - self.log_perturbation_normalizer

    @cached_property
    def log_perturbation_normalizer(self) -> float:
        """ln E_base[exp(-p)], which is also the rejection acceptance rate"""
        if self.perturbation is None:
            return 0.0
        nodes = _NORMALIZER_NODES.get(self.dim)
        if nodes is not None:
            return rule_log_normalizer(self, nodes)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(0)))
        z = rng.standard_normal((_NORMALIZER_MC_SAMPLES, self.dim))
        points = self.mean + z @ self.cholesky.T
        value = float(logsumexp(-self.perturbation.evaluate(points))) - math.log(z.shape[0])
        logger.debug("perturbation normalizer for %s: %.6e", self.fingerprint[:8], value)
        return value


@dataclass(frozen=True)
class EstimatorConfig:
    """Configuration of the expectation engine"""

    mode: str = QUADRATURE
    nodes: int = 64
    samples: int = 100_000
    seed: int = 0
    streams: int = 1
    dim_switch: int = 3

    def __post_init__(self):
        if self.mode not in (QUADRATURE, MONTE_CARLO):
            raise ConfigError(f"estimator.mode must be {QUADRATURE!r} or {MONTE_CARLO!r}")
        for name in ("nodes", "samples", "streams", "dim_switch"):
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"estimator.{name} must be a positive integer")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("estimator.seed must be a 64-bit unsigned integer")

    @property
    def monte_carlo(self) -> bool:
        return self.mode == MONTE_CARLO

    def with_mode(self, mode: str) -> "EstimatorConfig":
        return replace(self, mode=mode)


@dataclass(frozen=True, eq=False)
class GaussianReference:
    """Gaussian N(mean, cov) used to place quadrature nodes or draw importance proposals"""

    mean: np.ndarray
    cov: np.ndarray

    @cached_property
    def cholesky(self) -> np.ndarray:
        return linalg.cholesky(0.5 * (self.cov + self.cov.T), lower=True)

    @cached_property
    def log_det(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.cholesky))))


def laplace_reference(
    model: MeasureModel,
    weight_precision: Optional[np.ndarray] = None,
    shift: Optional[np.ndarray] = None,
    max_iter: int = 50,
) -> GaussianReference:
    """Gaussian reference of the reweighted model exp(-x'Ax/2 + b'x) * mu

    For a Gaussian model the result is the reweighted measure itself. For a
    perturbed model the mean is the mode of the reweighted density and the
    covariance the inverse curvature there, projected to be positive definite.

    Args:
        model: The base measure
        weight_precision: A, a PSD matrix (zero if omitted)
        shift: b, the linear coefficient (zero if omitted)
    """
    n = model.dim
    weight_precision = np.zeros((n, n)) if weight_precision is None else weight_precision
    shift = np.zeros(n) if shift is None else np.asarray(shift, dtype=float)
    precision = model.precision + weight_precision
    linear = model.precision @ model.mean + shift
    mode = linalg.solve(precision, linear, assume_a="pos")
    if model.perturbation is None:
        return GaussianReference(mode, linalg.inv(precision))

    def objective(x):
        return (
            0.5 * x @ precision @ x
            - linear @ x
            + float(model.perturbation.evaluate(x.reshape(1, -1))[0])
        )

    curvature = precision
    for _ in range(max_iter):
        gradient = precision @ mode - linear + model.perturbation.gradient(mode)
        curvature = precision + _psd_part(model.perturbation.hessian(mode))
        step = -linalg.solve(curvature, gradient, assume_a="pos")
        current = objective(mode)
        scale = 1.0
        while scale > 1e-10 and objective(mode + scale * step) > current + 1e-14 * abs(current):
            scale *= 0.5
        mode = mode + scale * step
        if np.linalg.norm(scale * step) <= 1e-13 * (1.0 + np.linalg.norm(mode)):
            break
    curvature = precision + _psd_part(model.perturbation.hessian(mode))
    return GaussianReference(mode, linalg.inv(curvature))


def _psd_part(matrix: np.ndarray) -> np.ndarray:
    values, vectors = linalg.eigh(0.5 * (matrix + matrix.T))
    return (vectors * np.maximum(values, 0.0)) @ vectors.T


@lru_cache(maxsize=16)
def standard_nodes(dim: int, nodes: int) -> Tuple[np.ndarray, np.ndarray]:
    """Tensorized probabilists' Gauss-Hermite nodes and log weights for exp(-|z|^2/2)"""
    z1, w1 = hermegauss(nodes)
    keep = w1 > 0
    z1, log_w1 = z1[keep], np.log(w1[keep])
    grids = np.meshgrid(*([z1] * dim), indexing="ij")
    log_grids = np.meshgrid(*([log_w1] * dim), indexing="ij")
    z = np.stack([g.ravel() for g in grids], axis=1)
    log_w = np.sum([g.ravel() for g in log_grids], axis=0)
    z.flags.writeable = False
    log_w.flags.writeable = False
    return z, log_w


@lru_cache(maxsize=64)
def rule_log_normalizer(model: MeasureModel, nodes: int) -> float:
    """ln E_base[exp(-p)] on the tensor Gauss-Hermite rule of the Gaussian base

    Quadrature with the same node count divides by this value, so the model
    integrates to 1 on its base-centered rule up to rounding.
    """
    if model.perturbation is None:
        return 0.0
    z, log_w = standard_nodes(model.dim, nodes)
    points = model.mean + z @ model.cholesky.T
    value = float(logsumexp(log_w - model.perturbation.evaluate(points)))
    value -= 0.5 * model.dim * math.log(2.0 * math.pi)
    logger.debug("perturbation normalizer for %s on %d nodes: %.6e", model.fingerprint[:8],
                 nodes, value)
    return value


def _stream_counts(total: int, streams: int) -> np.ndarray:
    counts = np.full(streams, total // streams)
    counts[: total % streams] += 1
    return counts


def _worker_count(streams: int) -> int:
    cap = os.environ.get("FRGFLOW_THREADS")
    if not cap:
        return max(1, min(streams, os.cpu_count() or 1))
    try:
        limit = int(cap)
    except ValueError as exc:
        raise ConfigError(f"FRGFLOW_THREADS must be a positive integer, got {cap!r}") from exc
    if limit <= 0:
        raise ConfigError(f"FRGFLOW_THREADS must be a positive integer, got {cap!r}")
    return min(streams, limit)


def _run_streams(cfg: EstimatorConfig, draw: Callable, total: int) -> np.ndarray:
    seeds = np.random.SeedSequence(int(cfg.seed)).spawn(cfg.streams)
    counts = _stream_counts(total, cfg.streams)
    with ThreadPoolExecutor(max_workers=_worker_count(cfg.streams)) as pool:
        parts = list(pool.map(draw, seeds, counts))
    out = np.concatenate(parts, axis=0)
    out.flags.writeable = False
    return out


@lru_cache(maxsize=16)
def standard_normals(dim: int, cfg: EstimatorConfig) -> np.ndarray:
    """Fixed standard normal draws shared by every proposal built from cfg"""

    def draw(seed_seq, count):
        rng = np.random.Generator(np.random.PCG64(seed_seq))
        return rng.standard_normal((int(count), dim))

    return _run_streams(cfg, draw, cfg.samples)


def _draw_model(model: MeasureModel, seed_seq, count: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    if model.perturbation is None:
        z = rng.standard_normal((int(count), model.dim))
        return model.mean + z @ model.cholesky.T
    acceptance = math.exp(model.log_perturbation_normalizer)
    parts, accepted = [], 0
    while accepted < count:
        batch = int(1.1 * (count - accepted) / acceptance) + 64
        x = model.mean + rng.standard_normal((batch, model.dim)) @ model.cholesky.T
        keep = np.log(rng.random(batch)) <= -model.perturbation.evaluate(x)
        parts.append(x[keep])
        accepted += int(keep.sum())
    return np.concatenate(parts, axis=0)[: int(count)]


@lru_cache(maxsize=16)
def _cached_sample(model: MeasureModel, cfg: EstimatorConfig, count: int) -> np.ndarray:
    return _run_streams(cfg, lambda seed_seq, n: _draw_model(model, seed_seq, n), count)


def sample(model: MeasureModel, cfg: EstimatorConfig, count: int) -> np.ndarray:
    """Draw i.i.d. points from the model

    Gaussian models are sampled through the covariance factor; perturbed
    models by rejection against the Gaussian base with envelope constant 1.
    The output is deterministic given (seed, streams, count).

    Args:
        model: Measure to sample
        cfg: Monte Carlo estimator configuration
        count: Number of draws

    Returns:
        A read-only (count, n) array

    Raises:
        ConfigError: If cfg is not in Monte Carlo mode or count is not positive
        SamplerError: If the rejection acceptance rate is below 1e-4
    """
    if not cfg.monte_carlo:
        raise ConfigError("sampling requires estimator.mode = 'monte_carlo'")
    if count <= 0:
        raise ConfigError("count must be a positive integer")
    if model.perturbation is not None:
        acceptance = math.exp(model.log_perturbation_normalizer)
        if acceptance < MIN_ACCEPTANCE:
            raise SamplerError(
                f"rejection acceptance rate {acceptance:.2e} is below {MIN_ACCEPTANCE:.0e}; "
                "reparameterize the model so the Gaussian base absorbs more of the perturbation",
                {"acceptance": acceptance},
            )
    return _cached_sample(model, cfg, int(count))


@dataclass(frozen=True)
class _Rule:
    points: np.ndarray
    log_weights: np.ndarray
    monte_carlo: bool


def _rule(model: MeasureModel, cfg: EstimatorConfig, reference: Optional[GaussianReference]):
    if cfg.monte_carlo:
        if reference is None:
            points = sample(model, cfg, cfg.samples)
            return _Rule(points, np.full(points.shape[0], -math.log(points.shape[0])), True)
        z = standard_normals(model.dim, cfg)
        points = reference.mean + z @ reference.cholesky.T
        log_q = (
            -0.5 * np.sum(z**2, axis=1)
            - 0.5 * model.dim * math.log(2.0 * math.pi)
            - 0.5 * reference.log_det
        )
        log_w = model.log_density(points) - log_q - math.log(points.shape[0])
        return _Rule(points, log_w, True)

    if model.dim > cfg.dim_switch:
        raise ConfigError(
            f"quadrature is limited to dimension <= {cfg.dim_switch}, model has {model.dim}; "
            "use estimator.mode = 'monte_carlo'"
        )
    if reference is None:
        reference = GaussianReference(model.mean, model.covariance)
    z, log_w = standard_nodes(model.dim, cfg.nodes)
    points = reference.mean + z @ reference.cholesky.T
    log_w = log_w + 0.5 * np.sum(z**2, axis=1) + 0.5 * reference.log_det
    # Normalized on the same node count so the base-centered rule has mass 1.
    offset = 0.5 * (model.dim * math.log(2.0 * math.pi) + model.log_det)
    offset += rule_log_normalizer(model, cfg.nodes)
    return _Rule(points, log_w + model.log_density_unnormalized(points) - offset, False)


def _log_terms(rule: _Rule, weight_log: Optional[VectorFn]) -> np.ndarray:
    if weight_log is None:
        return rule.log_weights
    extra = np.asarray(weight_log(rule.points), dtype=float)
    log_terms = rule.log_weights + extra
    bad = np.isnan(log_terms) | (log_terms == np.inf)
    if bad.any():
        x = rule.points[np.argmax(bad)]
        raise EvaluationError("integrand exponent is not finite", {"x": x.tolist()})
    return log_terms


def _overflow_guard(rule: _Rule, log_terms: np.ndarray) -> float:
    shift = float(np.max(log_terms))
    if shift > EXP_LIMIT:
        x = rule.points[int(np.argmax(log_terms))]
        raise EvaluationError(
            f"integrand exponent {shift:.1f} overflows", {"x": x.tolist(), "exponent": shift}
        )
    if shift == -np.inf:
        raise EvaluationError("integrand vanishes at every node", {"x": rule.points[0].tolist()})
    return shift


def expect(
    model: MeasureModel,
    cfg: EstimatorConfig,
    f: Optional[VectorFn] = None,
    weight_log: Optional[VectorFn] = None,
    reference: Optional[GaussianReference] = None,
) -> Estimate:
    """Estimate the integral of f * exp(weight_log) against the model

    ``f`` and ``weight_log`` are vectorized: they receive an (N, n) array of
    points and return (N,) arrays. ``None`` stands for f = 1 and
    weight_log = 0.

    Args:
        model: Integrating measure
        cfg: Estimator configuration
        f: Integrand
        weight_log: Log of a nonnegative weight
        reference: Gaussian to center quadrature nodes on, or importance
            proposal in Monte Carlo mode

    Returns:
        Estimate with stderr 0 in quadrature mode

    Raises:
        ConfigError: If quadrature is requested above dim_switch
        EvaluationError: If the weighted integrand overflows
    """
    rule = _rule(model, cfg, reference)
    log_terms = _log_terms(rule, weight_log)
    shift = _overflow_guard(rule, log_terms)
    values = np.ones(log_terms.shape[0]) if f is None else np.asarray(f(rule.points), dtype=float)
    scaled = np.exp(log_terms - shift) * values
    estimate = math.exp(shift) * float(np.sum(scaled))
    if not rule.monte_carlo:
        return Estimate(estimate, 0.0)
    count = scaled.shape[0]
    stderr = math.exp(shift) * float(np.std(scaled * count, ddof=1)) / math.sqrt(count)
    return Estimate(estimate, stderr)


def log_expect(
    model: MeasureModel,
    cfg: EstimatorConfig,
    weight_log: Optional[VectorFn] = None,
    reference: Optional[GaussianReference] = None,
) -> float:
    """ln of the integral of exp(weight_log) against the model, without overflow"""
    rule = _rule(model, cfg, reference)
    return float(logsumexp(_log_terms(rule, weight_log)))


def tilted_moments(
    model: MeasureModel,
    cfg: EstimatorConfig,
    weight_log: Optional[VectorFn] = None,
    reference: Optional[GaussianReference] = None,
) -> Moments:
    """Log mass, mean and covariance of exp(weight_log) * model, renormalized"""
    rule = _rule(model, cfg, reference)
    log_terms = _log_terms(rule, weight_log)
    log_mass = float(logsumexp(log_terms))
    weights = np.exp(log_terms - log_mass)
    mean = weights @ rule.points
    centered = rule.points - mean
    cov = (centered * weights[:, None]).T @ centered
    ess = 1.0 / float(np.sum(weights**2))
    return Moments(log_mass, mean, 0.5 * (cov + cov.T), ess)
