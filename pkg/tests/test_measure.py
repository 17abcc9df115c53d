"""Tests for measures and the expectation engine"""

import math

import numpy as np
import pytest
from scipy import integrate

from frgflow.exceptions import ConfigError, DomainError, EvaluationError, SamplerError
from frgflow.measure import (
    MONTE_CARLO,
    EstimatorConfig,
    MeasureModel,
    _cached_sample,
    expect,
    laplace_reference,
    log_expect,
    sample,
    tilted_moments,
)


DOUBLE_WELL = [(1.0, (4,)), (-2.0, (2,)), (1.0, (0,))]


def grid_mass(f):
    """Dense-grid integral of f against N(0, 1)"""
    x = np.linspace(-12.0, 12.0, 1_000_001)
    return integrate.trapezoid(f(x) * np.exp(-0.5 * x**2) / math.sqrt(2.0 * math.pi), x)


def quartic_oracle(f, coeff=0.1):
    """Dense-grid integral of f against N(0, 1) reweighted by exp(-coeff x^4), unnormalized"""
    x = np.linspace(-12.0, 12.0, 1_000_001)
    density = np.exp(-0.5 * x**2 - coeff * x**4) / math.sqrt(2.0 * math.pi)
    return integrate.trapezoid(f(x) * density, x)


class TestDensity:
    def test_standard_normal_values(self, std_normal):
        assert std_normal.log_density_unnormalized([0.0]) == 0.0
        assert std_normal.log_density_unnormalized([2.0]) == pytest.approx(-2.0)

    def test_quartic_value(self):
        model = MeasureModel.perturbed_gaussian([0.0], [[1.0]], [(1.0, (4,))])
        assert model.log_density_unnormalized([1.0]) == pytest.approx(-1.5)

    def test_batch_returns_array(self, std_normal):
        values = std_normal.log_density_unnormalized(np.array([[0.0], [1.0], [2.0]]))
        np.testing.assert_allclose(values, [0.0, -0.5, -2.0])

    def test_non_finite_point_rejected(self, std_normal):
        with pytest.raises(DomainError):
            std_normal.log_density_unnormalized([math.nan])

    def test_normalized_density_integrates_to_one(self, quartic):
        x = np.linspace(-10, 10, 200_001)
        mass = integrate.trapezoid(np.exp(quartic.log_density(x.reshape(-1, 1))), x)
        assert mass == pytest.approx(1.0, abs=1e-8)


class TestValidation:
    def test_asymmetric_covariance_names_entry(self):
        with pytest.raises(ConfigError, match=r"measure\.covariance\[0\]\[1\]"):
            MeasureModel.gaussian([0.0, 0.0], [[1.0, 0.1], [0.2, 1.0]])

    def test_non_positive_definite_covariance(self):
        with pytest.raises(ConfigError, match="positive definite"):
            MeasureModel.gaussian([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])

    def test_odd_perturbation_power_rejected(self):
        with pytest.raises(ConfigError, match="even"):
            MeasureModel.perturbed_gaussian([0.0], [[1.0]], [(1.0, (3,))])

    def test_negative_coefficient_rejected(self):
        with pytest.raises(ConfigError):
            MeasureModel.perturbed_gaussian([0.0], [[1.0]], [(-1.0, (4,))])

    def test_negative_values_rejected(self):
        with pytest.raises(ConfigError, match="nonnegative") as info:
            MeasureModel.perturbed_gaussian([0.0], [[1.0]], [(1.0, (4,)), (-3.0, (2,))])
        assert info.value.details["value"] < 0

    def test_double_well_accepted(self):
        model = MeasureModel.perturbed_gaussian([0.0], [[1.0]], DOUBLE_WELL)
        assert model.is_symmetric()
        expected = math.log(grid_mass(lambda x: np.exp(-((x**2 - 1.0) ** 2))))
        assert model.log_perturbation_normalizer == pytest.approx(expected, abs=1e-8)

    def test_mixed_sign_quartic_form_accepted(self):
        # (x - y)^4
        terms = [(1.0, (4, 0)), (-4.0, (3, 1)), (6.0, (2, 2)), (-4.0, (1, 3)), (1.0, (0, 4))]
        model = MeasureModel.perturbed_gaussian([0.0, 0.0], np.eye(2), terms)
        assert model.is_symmetric()
        np.testing.assert_array_equal(model.symmetry_center, [0.0, 0.0])

    def test_odd_terms_break_symmetry(self):
        model = MeasureModel.perturbed_gaussian(
            [0.0], [[1.0]], [(1.0, (4,)), (-1.0, (3,)), (1.0, (0,))]
        )
        assert not model.is_symmetric()
        assert model.symmetry_center is None

    def test_models_hash_by_content(self):
        a = MeasureModel.gaussian([0.0], [[1.0]])
        b = MeasureModel.gaussian(np.zeros(1), np.eye(1))
        assert a == b
        assert hash(a) == hash(b)

    def test_estimator_rejects_unknown_mode(self):
        with pytest.raises(ConfigError):
            EstimatorConfig(mode="grid")


class TestExpect:
    def test_gaussian_second_moment(self, std_normal, quad):
        result = expect(std_normal, quad, lambda x: x[:, 0] ** 2)
        assert result.estimate == pytest.approx(1.0, abs=1e-12)
        assert result.stderr == 0.0

    def test_regulated_mass(self, std_normal, quad):
        result = expect(std_normal, quad, weight_log=lambda x: -0.5 * x[:, 0] ** 2)
        assert result.estimate == pytest.approx(1.0 / math.sqrt(2.0), abs=1e-12)

    def test_quartic_mass_matches_grid(self, quartic, quad):
        cfg = EstimatorConfig(nodes=128)
        result = expect(quartic, cfg, weight_log=lambda x: -0.1 * x[:, 0] ** 4)
        # The model density already carries exp(-p); the mass of exp(-p) against it
        # divided by the normalizer is E_base[exp(-2p)] / E_base[exp(-p)].
        expected = quartic_oracle(lambda x: np.exp(-0.1 * x**4)) / quartic_oracle(np.ones_like)
        assert result.estimate == pytest.approx(expected, abs=1e-6)

    def test_perturbation_normalizer(self, quartic):
        expected = math.log(quartic_oracle(np.ones_like))
        assert quartic.log_perturbation_normalizer == pytest.approx(expected, abs=1e-8)

    def test_log_expect_matches_expect(self, std_normal, quad):
        weight = lambda x: 0.3 * x[:, 0]  # noqa: E731
        assert log_expect(std_normal, quad, weight) == pytest.approx(
            math.log(expect(std_normal, quad, weight_log=weight).estimate)
        )

    def test_tilted_moments_of_gaussian(self, std_normal, quad):
        moments = tilted_moments(std_normal, quad, lambda x: 0.7 * x[:, 0])
        assert moments.log_mass == pytest.approx(0.5 * 0.49, abs=1e-12)
        assert moments.mean[0] == pytest.approx(0.7, abs=1e-12)
        assert moments.cov[0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_overflow_reports_point(self, std_normal, quad):
        with pytest.raises(EvaluationError) as info:
            expect(std_normal, quad, weight_log=lambda x: np.full(x.shape[0], 1000.0))
        assert "x" in info.value.details

    def test_quadrature_rejected_above_dim_switch(self, quad):
        model = MeasureModel.gaussian(np.zeros(4), np.eye(4))
        with pytest.raises(ConfigError, match="monte_carlo"):
            expect(model, quad)

    @pytest.mark.parametrize("coeff", [0.1, 1.0, 10.0])
    def test_quadrature_mass_is_one(self, quad, coeff):
        model = MeasureModel.perturbed_gaussian([0.0], [[1.0]], [(coeff, (4,))])
        assert expect(model, quad).estimate == pytest.approx(1.0, abs=1e-10)

    def test_quadrature_mass_is_one_in_three_dimensions(self, quad):
        terms = [(1.0, (4, 0, 0)), (1.0, (0, 4, 0)), (1.0, (0, 0, 4))]
        model = MeasureModel.perturbed_gaussian(np.zeros(3), np.eye(3), terms)
        assert expect(model, quad).estimate == pytest.approx(1.0, abs=1e-10)

    def test_monte_carlo_second_moment(self, std_normal, mc):
        result = expect(std_normal, mc, lambda x: x[:, 0] ** 2)
        assert abs(result.estimate - 1.0) < 5 * result.stderr
        assert result.stderr > 0


class TestLaplaceReference:
    def test_gaussian_is_exact(self):
        model = MeasureModel.gaussian([1.0, -1.0], [[2.0, 0.5], [0.5, 1.0]])
        weight = np.diag([4.0, 1.0])
        shift = np.array([0.3, 0.2])
        reference = laplace_reference(model, weight, shift)
        precision = model.precision + weight
        np.testing.assert_allclose(reference.cov @ precision, np.eye(2), atol=1e-12)
        expected = np.linalg.solve(precision, model.precision @ model.mean + shift)
        np.testing.assert_allclose(reference.mean, expected, atol=1e-12)

    def test_quartic_mode(self, quartic):
        reference = laplace_reference(quartic, np.eye(1), [1.5])
        x = reference.mean[0]
        # stationarity of x^2 + 0.1 x^4 - 1.5 x
        assert 2 * x + 0.4 * x**3 == pytest.approx(1.5, abs=1e-10)
        assert reference.cov[0, 0] == pytest.approx(1 / (2 + 1.2 * x**2), rel=1e-10)


class TestSample:
    def test_requires_monte_carlo(self, std_normal, quad):
        with pytest.raises(ConfigError):
            sample(std_normal, quad, 10)

    def test_gaussian_means(self):
        model = MeasureModel.gaussian([1.0, 2.0], np.eye(2))
        cfg = EstimatorConfig(mode=MONTE_CARLO, samples=100_000, seed=5)
        draws = sample(model, cfg, 100_000)
        assert draws.shape == (100_000, 2)
        np.testing.assert_array_less(np.abs(draws.mean(axis=0) - [1.0, 2.0]), 4 / math.sqrt(1e5))

    def test_quartic_second_moment(self, quartic):
        cfg = EstimatorConfig(mode=MONTE_CARLO, samples=100_000, seed=9, streams=2)
        draws = sample(quartic, cfg, 100_000)[:, 0]
        expected = quartic_oracle(lambda x: x**2) / quartic_oracle(np.ones_like)
        stderr = np.std(draws**2) / math.sqrt(draws.size)
        assert abs(np.mean(draws**2) - expected) < 4 * stderr

    def test_identical_seed_is_bit_identical(self, std_normal):
        first = sample(std_normal, EstimatorConfig(mode=MONTE_CARLO, seed=42, streams=3), 1000)
        second = sample(std_normal, EstimatorConfig(mode=MONTE_CARLO, seed=42, streams=3), 1000)
        assert np.array_equal(first, second)

    def test_thread_count_does_not_change_draws(self, std_normal, monkeypatch):
        cfg = EstimatorConfig(mode=MONTE_CARLO, seed=8, streams=4)
        monkeypatch.setenv("FRGFLOW_THREADS", "1")
        _cached_sample.cache_clear()
        serial = np.array(sample(std_normal, cfg, 4000))
        monkeypatch.setenv("FRGFLOW_THREADS", "4")
        _cached_sample.cache_clear()
        parallel = np.array(sample(std_normal, cfg, 4000))
        assert np.array_equal(serial, parallel)

    def test_thread_cap_must_be_an_integer(self, std_normal, monkeypatch):
        monkeypatch.setenv("FRGFLOW_THREADS", "two")
        _cached_sample.cache_clear()
        cfg = EstimatorConfig(mode=MONTE_CARLO, seed=77, streams=2)
        with pytest.raises(ConfigError, match="FRGFLOW_THREADS"):
            sample(std_normal, cfg, 100)

    def test_low_acceptance_raises(self):
        model = MeasureModel.perturbed_gaussian([0.0], [[1.0]], [(1e10, (2,))])
        with pytest.raises(SamplerError):
            sample(model, EstimatorConfig(mode=MONTE_CARLO), 100)


QUARTIC_2D = [(0.1, (4, 0)), (0.1, (0, 4)), (0.05, (2, 2))]
EXPONENTS_2D = [(a, b) for a in range(5) for b in range(5) if 0 < a + b <= 4]


class TestQuadratureAgainstMonteCarlo:
    @pytest.mark.parametrize("degree", [1, 2, 3, 4])
    def test_one_dimensional_moments(self, quartic, quad, mc, degree):
        exact = expect(quartic, quad, lambda x: x[:, 0] ** degree).estimate
        sampled = expect(quartic, mc, lambda x: x[:, 0] ** degree)
        assert abs(exact - sampled.estimate) <= 4 * sampled.stderr

    @pytest.mark.parametrize("powers", EXPONENTS_2D)
    def test_two_dimensional_moments(self, quad, mc, powers):
        model = MeasureModel.perturbed_gaussian([0.0, 0.0], [[1.0, 0.3], [0.3, 1.0]], QUARTIC_2D)
        a, b = powers
        exact = expect(model, quad, lambda x: x[:, 0] ** a * x[:, 1] ** b).estimate
        sampled = expect(model, mc, lambda x: x[:, 0] ** a * x[:, 1] ** b)
        assert abs(exact - sampled.estimate) <= 4 * sampled.stderr

    @pytest.mark.parametrize("degree", [1, 3])
    def test_odd_moments_vanish_for_symmetric_models(self, quartic, quad, degree):
        assert quartic.is_symmetric()
        assert expect(quartic, quad, lambda x: x[:, 0] ** degree).estimate == pytest.approx(
            0.0, abs=1e-12
        )
        model = MeasureModel.perturbed_gaussian([0.0, 0.0], [[1.0, 0.3], [0.3, 1.0]], QUARTIC_2D)
        for a in range(degree + 1):
            moment = expect(model, quad, lambda x: x[:, 0] ** a * x[:, 1] ** (degree - a))
            assert moment.estimate == pytest.approx(0.0, abs=1e-12)
