"""Shared fixtures"""

import textwrap

import numpy as np
import pytest

from frgflow.measure import MONTE_CARLO, EstimatorConfig, MeasureModel
from frgflow.regulator import RegulatorFamily


@pytest.fixture
def std_normal():
    return MeasureModel.gaussian([0.0], [[1.0]])


@pytest.fixture
def quartic():
    """N(0, 1) reweighted by exp(-0.1 x^4)"""
    return MeasureModel.perturbed_gaussian([0.0], [[1.0]], [{"coeff": 0.1, "powers": [4]}])


@pytest.fixture
def fam_w0():
    return RegulatorFamily(np.eye(1), [0.0])


@pytest.fixture
def fam_w1():
    return RegulatorFamily(np.eye(1), [1.0])


@pytest.fixture
def quad():
    return EstimatorConfig(nodes=64)


@pytest.fixture
def mc():
    return EstimatorConfig(mode=MONTE_CARLO, samples=200_000, seed=1234, streams=4)


@pytest.fixture
def write_config(tmp_path):
    """Write a TOML document to a temporary file and return its path"""

    def _write(text, name="run.toml"):
        path = tmp_path / name
        path.write_text(textwrap.dedent(text))
        return path

    return _write


GAUSSIAN_TOML = """
schema_version = 1

[measure]
kind = "gaussian"
mean = [0.0]
covariance = [1.0]

[regulator]
r0 = [1.0]
schedule = "linear"
w = [1.0]

[estimator]
mode = "quadrature"
nodes = 48
samples = 50000
seed = 3
"""


@pytest.fixture
def gaussian_config(write_config):
    """Path to a one-dimensional standard Gaussian run configuration"""
    return write_config(GAUSSIAN_TOML)


@pytest.fixture
def gaussian_toml():
    """Text of the one-dimensional standard Gaussian run configuration"""
    return GAUSSIAN_TOML
