"""Closed forms for a Gaussian model N(m, C) under a separable regulator

P_k = C^-1 + R_k is the regulated precision and
m_k = P_k^-1 (C^-1 m + R_k w) the regulated mean.
"""

from __future__ import annotations

import math
from typing import Tuple

import numpy as np
from scipy import linalg
from scipy.stats import norm

from .exceptions import PreconditionError
from .measure import MeasureModel, as_points
from .regulator import RegulatorFamily, q


def _require_gaussian(model: MeasureModel) -> None:
    if model.perturbation is not None:
        raise PreconditionError("closed forms are available for Gaussian models only")


def _vec(y, dim: int) -> np.ndarray:
    return as_points(y, dim)[0][0]


def regulated(k: float, model: MeasureModel, fam: RegulatorFamily) -> Tuple[np.ndarray, np.ndarray]:
    """(P_k, m_k)"""
    _require_gaussian(model)
    matrix = fam.matrix(k)
    precision = model.precision + matrix
    mean = linalg.solve(precision, model.precision @ model.mean + matrix @ fam.w, assume_a="pos")
    return precision, mean


def log_normalizer(k: float, model: MeasureModel, fam: RegulatorFamily) -> float:
    """ln N_k = -1/2 ln det(I + C R_k) - 1/2 (m - w)' (R_k - R_k P_k^-1 R_k) (m - w)"""
    precision, _ = regulated(k, model, fam)
    matrix = fam.matrix(k)
    shift = model.mean - fam.w
    inner = matrix - matrix @ linalg.solve(precision, matrix, assume_a="pos")
    _, log_det_p = np.linalg.slogdet(precision)
    return -0.5 * (model.log_det + log_det_p) - 0.5 * float(shift @ inner @ shift)


def normalizer(k: float, model: MeasureModel, fam: RegulatorFamily) -> float:
    return math.exp(log_normalizer(k, model, fam))


def normalizer_derivative(k: float, model: MeasureModel, fam: RegulatorFamily) -> float:
    """N'_k"""
    precision, _ = regulated(k, model, fam)
    matrix = fam.matrix(k)
    derivative = fam.derivative_matrix(k)
    inverse = linalg.inv(precision)
    side = np.eye(model.dim) - matrix @ inverse
    shift = model.mean - fam.w
    d_log = -0.5 * float(np.trace(inverse @ derivative)) - 0.5 * float(
        shift @ side @ derivative @ side.T @ shift
    )
    return normalizer(k, model, fam) * d_log


def v(k: float, phi, model: MeasureModel, fam: RegulatorFamily) -> float:
    """V_k(phi) = phi . m_k + phi' P_k^-1 phi / 2"""
    precision, mean = regulated(k, model, fam)
    phi = _vec(phi, model.dim)
    return float(phi @ mean) + 0.5 * float(phi @ linalg.solve(precision, phi, assume_a="pos"))


def vstar(k: float, y, model: MeasureModel, fam: RegulatorFamily) -> float:
    """V*_k(y) = (y - m_k)' P_k (y - m_k) / 2"""
    precision, mean = regulated(k, model, fam)
    diff = _vec(y, model.dim) - mean
    return 0.5 * float(diff @ precision @ diff)


def optimal_tilt(k: float, y, model: MeasureModel, fam: RegulatorFamily) -> np.ndarray:
    precision, mean = regulated(k, model, fam)
    return precision @ (_vec(y, model.dim) - mean)


def gamma(k: float, y, model: MeasureModel, fam: RegulatorFamily) -> float:
    return vstar(k, y, model, fam) - 0.5 * q(fam, k, _vec(y, model.dim))


def gamma_derivative(k: float, y, model: MeasureModel, fam: RegulatorFamily) -> float:
    """dGamma_k(y)/dk"""
    _, mean = regulated(k, model, fam)
    y = _vec(y, model.dim)
    derivative = fam.derivative_matrix(k)
    diff = y - mean
    return (
        0.5 * float(diff @ derivative @ diff)
        - float(diff @ derivative @ (fam.w - mean))
        - 0.5 * float((y - fam.w) @ derivative @ (y - fam.w))
    )


def f_y(k: float, y, model: MeasureModel, fam: RegulatorFamily) -> float:
    """V*_k(y) - ln N_k"""
    return vstar(k, y, model, fam) - log_normalizer(k, model, fam)


def tilted_covariance(k: float, model: MeasureModel, fam: RegulatorFamily) -> np.ndarray:
    """P_k^-1, independent of the tilt and equal to (Hess Gamma_k + R_k)^-1"""
    precision, _ = regulated(k, model, fam)
    return linalg.inv(precision)


def inf_ratio(k: float, y, model: MeasureModel, fam: RegulatorFamily) -> float:
    """Admissibility ratio exp[-V*_k(y)] for the family re-anchored at y"""
    return math.exp(-vstar(k, y, model, fam.with_base_point(y)))


def om_function(model: MeasureModel, a, b) -> float:
    """F(a, b) = (|b - m|^2 - |a - m|^2) / 2 in the C^-1 metric"""
    _require_gaussian(model)
    da = _vec(a, model.dim) - model.mean
    db = _vec(b, model.dim) - model.mean
    return 0.5 * float(db @ model.precision @ db - da @ model.precision @ da)


def interval_probability(model: MeasureModel, center: float, radius: float) -> float:
    """mu([center - radius, center + radius]) for a one-dimensional model"""
    _require_gaussian(model)
    if model.dim != 1:
        raise PreconditionError("interval probabilities need a one-dimensional model")
    scale = math.sqrt(float(model.covariance[0, 0]))
    mean = float(model.mean[0])
    return float(
        norm.cdf(center + radius, mean, scale) - norm.cdf(center - radius, mean, scale)
    )
