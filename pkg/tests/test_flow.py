"""Tests for flow grids, Wetterich right-hand sides and flow runs"""

import numpy as np
import pytest

from frgflow import gaussian
from frgflow.exceptions import ConfigError, FlowAborted, PreconditionError
from frgflow.flow import (
    FlowGrid,
    integrated_flow_check,
    propagator_identity_experiment,
    records_frame,
    run_flow,
    wetterich_rhs,
)
from frgflow.measure import EstimatorConfig, MeasureModel
from frgflow.regulator import RegulatorFamily


class TestFlowGrid:
    def test_linspace(self):
        grid = FlowGrid.linspace(0.5, 2.0, 4, [0.0])
        assert grid.k_values == (0.5, 1.0, 1.5, 2.0)
        assert grid.y == (0.0,)

    def test_kmax_below_kmin(self):
        with pytest.raises(ConfigError, match="kmax must exceed kmin"):
            FlowGrid.linspace(2.0, 1.0, 10, [0.0])

    def test_non_increasing_rejected(self):
        with pytest.raises(ConfigError):
            FlowGrid((1.0, 1.0, 2.0), [0.0])

    def test_step_too_large_for_gap(self):
        with pytest.raises(ConfigError):
            FlowGrid((1.0, 1.001), [0.0], fd_step=1e-3)

    def test_first_point_must_exceed_step(self):
        with pytest.raises(ConfigError):
            FlowGrid((0.0, 1.0), [0.0])


class TestWetterichRhs:
    def test_anchored_at_mean(self, std_normal, fam_w0, quad):
        terms = wetterich_rhs(1.0, [0.3], std_normal, fam_w0, quad)
        assert terms.trace_term == pytest.approx(0.5, abs=1e-12)
        assert terms.subtract_term == pytest.approx(0.5, abs=1e-12)
        assert abs(terms.rhs) <= 1e-12

    def test_off_mean_matches_closed_form(self, std_normal, fam_w1, quad):
        terms = wetterich_rhs(1.0, [0.0], std_normal, fam_w1, quad)
        assert terms.trace_term == pytest.approx(0.5, abs=1e-12)
        assert terms.rhs == pytest.approx(
            gaussian.gamma_derivative(1.0, [0.0], std_normal, fam_w1), abs=1e-8
        )
        assert terms.rhs == pytest.approx(-0.25, abs=1e-8)

    def test_quartic_matches_difference(self, quartic, fam_w1):
        cfg = EstimatorConfig(nodes=128)
        records = run_flow(FlowGrid((1.0,), [0.2]), quartic, fam_w1, cfg)
        assert records[0].residual <= 1e-4


class TestRunFlow:
    def test_constant_flow(self, std_normal, fam_w0, quad):
        y = [0.8]
        records = run_flow(FlowGrid.linspace(0.2, 4.0, 30, y), std_normal, fam_w0, quad)
        gammas = np.array([r.gamma for r in records])
        assert gammas.max() - gammas.min() <= 1e-8
        assert gammas[0] == pytest.approx(0.32, abs=1e-10)
        assert max(r.residual for r in records) <= 1e-8
        assert max(abs(r.rhs_wetterich) for r in records) <= 1e-8

    def test_residual_off_mean(self, std_normal, fam_w1, quad):
        records = run_flow(FlowGrid.linspace(0.2, 4.0, 20, [0.0]), std_normal, fam_w1, quad)
        assert max(r.residual for r in records) <= 1e-6
        for r in records:
            assert r.gamma == pytest.approx(gaussian.gamma(r.k, [0.0], std_normal, fam_w1),
                                            abs=1e-10)

    def test_two_dimensional_rank_one(self, quad):
        model = MeasureModel.gaussian([0.2, -0.1], [[1.0, 0.4], [0.4, 1.5]])
        fam = RegulatorFamily(np.diag([1.0, 0.0]), [1.0, 0.5], "quadratic")
        records = run_flow(FlowGrid.linspace(0.3, 2.0, 8, [0.5, 0.5]), model, fam,
                           EstimatorConfig(nodes=32))
        assert max(r.residual for r in records) <= 1e-6

    def test_quartic_flow(self, quartic, fam_w1):
        cfg = EstimatorConfig(nodes=128)
        records = run_flow(FlowGrid.linspace(0.1, 3.0, 30, [0.2]), quartic, fam_w1, cfg)
        assert len(records) == 30
        assert max(r.residual for r in records) <= 1e-3
        assert all(r.converged for r in records)

    def test_abort_keeps_partial_records(self, std_normal, quad):
        # Broad Gaussian with expm1 schedule: derivative bound fails near k = 0.
        model = MeasureModel.gaussian([0.0], [[1e8]])
        fam = RegulatorFamily(np.eye(1), [0.0], "expm1")
        grid = FlowGrid((1e-5, 3.0), [0.0], fd_step=1e-7)
        with pytest.raises(FlowAborted) as info:
            run_flow(grid, model, fam, quad)
        assert info.value.records == []
        assert info.value.k == 1e-5

    def test_records_frame_columns(self, std_normal, fam_w1, quad):
        records = run_flow(FlowGrid.linspace(0.5, 1.5, 3, [0.0]), std_normal, fam_w1, quad)
        frame = records_frame(records)
        assert list(frame.columns) == ["k", "gamma", "lhs", "rhs", "residual", "trace", "subtract"]
        assert len(frame) == 3


class TestIntegratedFlow:
    def test_constant_flow_gap(self, std_normal, fam_w0, quad):
        records = run_flow(FlowGrid.linspace(0.5, 3.0, 10, [0.4]), std_normal, fam_w0, quad)
        assert integrated_flow_check(records).gap <= 1e-8

    def test_second_order_convergence(self, std_normal, fam_w1, quad):
        coarse = run_flow(FlowGrid.linspace(0.5, 3.0, 11, [0.0]), std_normal, fam_w1, quad)
        fine = run_flow(FlowGrid.linspace(0.5, 3.0, 21, [0.0]), std_normal, fam_w1, quad)
        ratio = integrated_flow_check(coarse).gap / integrated_flow_check(fine).gap
        assert 3.0 < ratio < 5.0

    def test_needs_three_records(self, std_normal, fam_w1, quad):
        records = run_flow(FlowGrid.linspace(0.5, 1.0, 2, [0.0]), std_normal, fam_w1, quad)
        with pytest.raises(PreconditionError):
            integrated_flow_check(records)


class TestPropagatorIdentity:
    def test_gaussian_rank_one(self, quad):
        model = MeasureModel.gaussian([0.0, 0.3], [[1.0, 0.2], [0.2, 0.8]])
        fam = RegulatorFamily(np.diag([1.0, 0.0]), [1.0, 0.0])
        result = propagator_identity_experiment(1.0, [0.2, 0.1], model, fam,
                                                EstimatorConfig(nodes=24))
        assert result.deviation <= 1e-8

    def test_quartic_reported(self, quartic, fam_w1):
        result = propagator_identity_experiment(1.0, [0.2], quartic, fam_w1,
                                                EstimatorConfig(nodes=128))
        assert np.isfinite(result.deviation)

    def test_requires_quadrature(self, std_normal, fam_w1, mc):
        with pytest.raises(PreconditionError):
            propagator_identity_experiment(1.0, [0.0], std_normal, fam_w1, mc)
