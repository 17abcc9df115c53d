"""Run configuration: loading, validation and echo

A run configuration is a TOML or YAML document with sections
``measure``, ``regulator``, ``estimator`` and the optional command sections
``flow``, ``om`` and ``boundary``. Loading fills defaults, so the parsed
structure returned by ``RunConfig.to_dict`` is complete and reloads to itself.
"""

from __future__ import annotations

import logging
import tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Union

import numpy as np
import yaml

from .exceptions import ConfigError
from .measure import QUADRATURE, EstimatorConfig, MeasureModel, Perturbation
from .regulator import SCHEDULES, RegulatorFamily

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

_SECTION_KEYS = {
    "measure": {"kind", "mean", "covariance", "perturbation"},
    "regulator": {"r0", "schedule", "w"},
    "estimator": {"mode", "nodes", "samples", "seed", "streams", "dim_switch"},
    "flow": {"kmin", "kmax", "points", "fd_step"},
    "om": {"radii", "fit_points", "min_hits", "method"},
    "boundary": {"kmin", "kmax", "points", "fit_points"},
}

_DEFAULTS = {
    "estimator": {
        "mode": QUADRATURE,
        "nodes": 64,
        "samples": 100_000,
        "seed": 0,
        "streams": 1,
        "dim_switch": 3,
    },
    "flow": {"kmin": 0.5, "kmax": 4.0, "points": 30, "fd_step": 1e-4},
    "om": {"radii": [0.4, 0.3, 0.2, 0.1], "fit_points": 4, "min_hits": 100, "method": "auto"},
    "boundary": {"kmin": 2.0, "kmax": 16.0, "points": 5, "fit_points": 3},
}

_MEASURE_KINDS = ("gaussian", "perturbed_gaussian")


@dataclass(frozen=True)
class RunConfig:
    """Parsed and validated run configuration"""

    measure: Dict[str, Any]
    regulator: Dict[str, Any]
    estimator: Dict[str, Any]
    flow: Dict[str, Any] = field(default_factory=dict)
    om: Dict[str, Any] = field(default_factory=dict)
    boundary: Dict[str, Any] = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": self.schema_version,
            "measure": self.measure,
            "regulator": self.regulator,
            "estimator": self.estimator,
            "flow": self.flow,
            "om": self.om,
            "boundary": self.boundary,
        }

    def model(self) -> MeasureModel:
        section = self.measure
        if section["kind"] == "gaussian":
            return MeasureModel.gaussian(section["mean"], section["covariance"])
        return MeasureModel.perturbed_gaussian(
            section["mean"], section["covariance"], section["perturbation"]
        )

    def family(self) -> RegulatorFamily:
        section = self.regulator
        return RegulatorFamily(np.array(section["r0"]), section["w"], section["schedule"])

    def estimator_config(self) -> EstimatorConfig:
        return EstimatorConfig(**self.estimator)


def _check_keys(section: Dict[str, Any], allowed, path: str) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown configuration key {path}.{key}" if path else
                              f"unknown configuration key {key}")


def _section(raw: Dict[str, Any], name: str) -> Dict[str, Any]:
    value = raw.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"{name} must be a table")
    _check_keys(value, _SECTION_KEYS[name], name)
    return {**_DEFAULTS.get(name, {}), **value}


def _vector(value, path: str) -> List[float]:
    try:
        vec = [float(v) for v in np.atleast_1d(np.asarray(value, dtype=float))]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path} must be a list of numbers") from exc
    if not vec:
        raise ConfigError(f"{path} must not be empty")
    return vec


def _matrix(value, dim: int, path: str) -> List[List[float]]:
    """Accept a flat row-major list of dim^2 numbers or a nested list"""
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path} must be a row-major list of numbers") from exc
    if arr.ndim <= 1 and arr.size == dim * dim:
        arr = arr.reshape(dim, dim)
    if arr.shape != (dim, dim):
        raise ConfigError(f"{path} must hold {dim * dim} entries for dimension {dim}")
    return arr.tolist()


def _measure(raw: Dict[str, Any]) -> Dict[str, Any]:
    if "measure" not in raw:
        raise ConfigError("missing required section measure")
    section = _section(raw, "measure")
    for key in ("kind", "mean", "covariance"):
        if key not in section:
            raise ConfigError(f"missing required key measure.{key}")
    if section["kind"] not in _MEASURE_KINDS:
        raise ConfigError(f"measure.kind must be one of {list(_MEASURE_KINDS)}")
    mean = _vector(section["mean"], "measure.mean")
    parsed = {
        "kind": section["kind"],
        "mean": mean,
        "covariance": _matrix(section["covariance"], len(mean), "measure.covariance"),
    }
    terms = section.get("perturbation")
    if section["kind"] == "perturbed_gaussian":
        if not terms:
            raise ConfigError("measure.perturbation is required for kind perturbed_gaussian")
        parsed["perturbation"] = []
        for index, term in enumerate(terms):
            if not isinstance(term, dict):
                raise ConfigError(f"measure.perturbation[{index}] must be a table")
            _check_keys(term, {"coeff", "powers"}, f"measure.perturbation[{index}]")
            try:
                parsed["perturbation"].append(
                    {"coeff": float(term["coeff"]), "powers": [int(p) for p in term["powers"]]}
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(
                    f"measure.perturbation[{index}] needs numeric coeff and integer powers"
                ) from exc
    elif terms:
        raise ConfigError("measure.perturbation is only allowed for kind perturbed_gaussian")
    return parsed


def _regulator(raw: Dict[str, Any], dim: int) -> Dict[str, Any]:
    section = _section(raw, "regulator")
    schedule = section.get("schedule", "linear")
    if schedule not in SCHEDULES:
        raise ConfigError(f"regulator.schedule must be one of {sorted(SCHEDULES)}")
    w = _vector(section.get("w", [0.0] * dim), "regulator.w")
    if len(w) != dim:
        raise ConfigError(f"regulator.w must have length {dim}")
    r0 = _matrix(section.get("r0", np.eye(dim).tolist()), dim, "regulator.r0")
    return {"r0": r0, "schedule": schedule, "w": w}


def _numbers(section: Dict[str, Any], name: str, ints=(), floats=()) -> Dict[str, Any]:
    parsed = dict(section)
    try:
        for key in ints:
            parsed[key] = int(section[key])
        for key in floats:
            parsed[key] = float(section[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} holds a non-numeric value") from exc
    return parsed


def parse_config(raw: Dict[str, Any]) -> RunConfig:
    """Validate a raw configuration mapping and fill defaults

    Raises:
        ConfigError: On unknown keys (named by dotted path), unsupported
            schema versions, or malformed or non-positive-definite matrices
    """
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    _check_keys(raw, set(_SECTION_KEYS) | {"schema_version"}, "")
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r}; supported: {SCHEMA_VERSION}")

    measure = _measure(raw)
    dim = len(measure["mean"])
    estimator = _numbers(
        _section(raw, "estimator"),
        "estimator",
        ints=("nodes", "samples", "seed", "streams", "dim_switch"),
    )
    flow = _numbers(_section(raw, "flow"), "flow", ints=("points",),
                    floats=("kmin", "kmax", "fd_step"))
    om = _numbers(_section(raw, "om"), "om", ints=("fit_points", "min_hits"))
    om["radii"] = _vector(om["radii"], "om.radii")
    if om["method"] not in ("auto", "plain", "importance"):
        raise ConfigError("om.method must be one of auto, plain, importance")
    boundary = _numbers(_section(raw, "boundary"), "boundary", ints=("points", "fit_points"),
                        floats=("kmin", "kmax"))
    if not boundary["kmin"] > 0:
        raise ConfigError("boundary.kmin must be positive")

    config = RunConfig(
        measure=measure,
        regulator=_regulator(raw, dim),
        estimator=estimator,
        flow=flow,
        om=om,
        boundary=boundary,
        schema_version=version,
    )
    # Build once so matrix and estimator errors surface at load time.
    config.model()
    config.family()
    config.estimator_config()
    if config.measure["kind"] == "perturbed_gaussian":
        Perturbation.from_terms(config.measure["perturbation"])
    return config


def load_config(path: Union[str, Path]) -> RunConfig:
    """Load a run configuration from a .toml, .yaml or .yml file

    Raises:
        ConfigError: If the file is missing, unreadable or invalid
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"configuration file not found: {path}", {"path": str(path)})
    try:
        if path.suffix in (".yaml", ".yml"):
            with open(path) as f:
                raw = yaml.safe_load(f)
        else:
            with open(path, "rb") as f:
                raw = tomllib.load(f)
    except (OSError, tomllib.TOMLDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"could not parse {path}: {exc}", {"path": str(path)}) from exc
    logger.debug("loaded configuration from %s", path)
    return parse_config(raw or {})


def dump_config(config: RunConfig, path: Union[str, Path]) -> None:
    """Write the parsed configuration as YAML; load_config reads it back unchanged"""
    with open(path, "w") as f:
        yaml.safe_dump(config.to_dict(), f, sort_keys=True)
