"""Tests for the mean-field reference flow and its consistency checks"""
import numpy as np
import pytest

from src import oracle
from src.errors import OracleError
from src.kernels import RBFKernel, ZeroKernel
from src.metrics import sliced_w2, w2_exact
from src.oracle import (
    FLOW_FLAGS,
    FlowSnapshot,
    contraction_check,
    lyapunov_check,
    mv_reference_flow,
    ou_variance,
    self_convergence,
)
from src.targets import gaussian_mixture, standard_gaussian


@pytest.fixture(scope="module")
def ou_flow():
    """Overdamped Langevin toward N(0, 1) from N(0, 4)"""
    return mv_reference_flow(
        standard_gaussian(1), ZeroKernel(), 1.0, 2000, 0.01, 1.5, seed=0, init="gauss(2.0)"
    )


@pytest.fixture(scope="module")
def stationary_flow():
    return mv_reference_flow(
        standard_gaussian(1), RBFKernel(1.0), 0.5, 1000, 0.01, 0.5, seed=1, init="target", snapshot_every=5
    )


class TestReferenceFlow:
    def test_snapshot_times(self, ou_flow):
        np.testing.assert_allclose(ou_flow.times(), np.arange(16) * 0.1, atol=1e-12)
        assert ou_flow.flags == FLOW_FLAGS
        assert ou_flow[0].positions.shape == (2000, 1)

    def test_matches_ou_variance(self, ou_flow):
        for snapshot in ou_flow:
            expected = ou_variance(snapshot.t, 4.0)
            assert snapshot.positions.var() == pytest.approx(expected, rel=0.12)

    def test_ou_variance_formula(self):
        assert ou_variance(0.0, 4.0) == 4.0
        assert ou_variance(10.0, 4.0) == pytest.approx(1.0, abs=1e-8)
        assert ou_variance(1.0, 3.0, lam=0.5) == pytest.approx(1.0 + 2.0 * np.exp(-1.0))

    def test_deterministic(self):
        kwargs = dict(lam=0.5, n_ref=50, dt=0.05, horizon=0.5, seed=3)
        a = mv_reference_flow(standard_gaussian(2), RBFKernel(1.0), **kwargs)
        b = mv_reference_flow(standard_gaussian(2), RBFKernel(1.0), **kwargs)
        np.testing.assert_array_equal(a[-1].positions, b[-1].positions)

    def test_array_init(self):
        start = np.zeros((20, 1))
        flow = mv_reference_flow(standard_gaussian(1), ZeroKernel(), 0.0, 999, 0.1, 0.5, seed=0, init=start)
        assert flow.n_ref == 20
        np.testing.assert_array_equal(flow[-1].positions, start)

    def test_to_frame(self):
        flow = mv_reference_flow(standard_gaussian(2), ZeroKernel(), 1.0, 10, 0.1, 0.2, seed=0, snapshot_every=1)
        frame = flow.to_frame()
        assert list(frame.columns) == ["t", "particle", "x0", "x1"]
        assert len(frame) == 3 * 10

    @pytest.mark.parametrize("lam,dt,horizon", [(-0.1, 0.1, 1.0), (1.0, 0.0, 1.0), (1.0, 0.1, -1.0)])
    def test_rejects_bad_settings(self, lam, dt, horizon):
        with pytest.raises(OracleError):
            mv_reference_flow(standard_gaussian(1), ZeroKernel(), lam, 10, dt, horizon, seed=0)


class TestLyapunov:
    def test_gaussian_flow_dissipates_kl(self, ou_flow):
        report = lyapunov_check(ou_flow, standard_gaussian(1), ZeroKernel(), 1.0)
        assert report.burn_in_index == 1
        assert report.noise_level == pytest.approx(3 / 2000)
        assert report.decrement > 0.4
        assert 0.8 <= report.ratio <= 1.25
        assert report.violations <= 1
        assert np.all(report.ksd_squared == 0.0)

    def test_stationary_start(self, stationary_flow):
        report = lyapunov_check(stationary_flow, standard_gaussian(1), RBFKernel(1.0), 0.5)
        assert report.status == "stationary within noise"
        assert "status: stationary within noise" in report.summary()

    def test_frame_columns(self, stationary_flow):
        frame = lyapunov_check(stationary_flow, standard_gaussian(1), RBFKernel(1.0), 0.5).to_frame()
        assert list(frame.columns) == ["t", "proxy_kl", "proxy_fisher", "ksd_squared", "dissipation"]
        assert len(frame) == len(stationary_flow)

    def test_needs_three_snapshots(self):
        snapshots = [FlowSnapshot(0.0, np.zeros((3, 1))), FlowSnapshot(0.1, np.ones((3, 1)))]
        with pytest.raises(OracleError, match="3 snapshots"):
            lyapunov_check(snapshots, standard_gaussian(1), ZeroKernel(), 1.0)

    def test_needs_moments(self, stationary_flow):
        mixture = gaussian_mixture([[0.0]], [1.0], 1.0)
        with pytest.raises(OracleError):
            lyapunov_check(stationary_flow, mixture, RBFKernel(1.0), 0.5)

    @pytest.mark.slow
    def test_svgd_flow_dissipates_kl(self):
        target, kernel = standard_gaussian(1), RBFKernel(1.0)
        flow = mv_reference_flow(target, kernel, 0.5, 2000, 0.01, 5.0, seed=0, init="gauss(2.0)")
        report = lyapunov_check(flow, target, kernel, 0.5)
        assert report.status == "consistent with KL dissipation"


class TestContraction:
    def test_gaussian_flow_meets_bound(self, ou_flow):
        report = contraction_check(ou_flow, standard_gaussian(1), 1.0)
        assert report.kl_rate_bound == 2.0
        assert report.fitted_rate >= 1.4
        assert report.status == "meets bound"
        assert report.points >= 3

    def test_bound_scales_with_lambda(self, ou_flow):
        half = contraction_check(ou_flow, standard_gaussian(1), 0.5)
        full = contraction_check(ou_flow, standard_gaussian(1), 1.0)
        assert full.kl_rate_bound == 2 * half.kl_rate_bound
        assert (half.w2_rate_bound, full.w2_rate_bound) == (0.5, 1.0)

    def test_vacuous_without_noise(self, ou_flow):
        report = contraction_check(ou_flow, standard_gaussian(1), 0.0)
        assert report.status == "bound vacuous at lambda=0"
        assert report.fitted_rate is None

    def test_converged_too_fast(self, stationary_flow):
        with pytest.raises(OracleError, match="converged too fast"):
            contraction_check(stationary_flow, standard_gaussian(1), 0.5)

    def test_report_dict(self, ou_flow):
        data = contraction_check(ou_flow, standard_gaussian(1), 1.0).to_dict()
        assert data["status"] == "meets bound"
        assert data["window_start"] < data["window_end"]


def test_self_convergence_halves_gap():
    report = self_convergence(standard_gaussian(1), ZeroKernel(), 1.0, 500, 0.1, 1.0, seed=0, init="gauss(2.0)")
    assert report.coarse_gap > report.fine_gap > 0
    assert report.ratio >= 1.3


def test_terminal_gap_switches_at_support_cap(monkeypatch, rng):
    a = rng.standard_normal((30, 2))
    b = rng.standard_normal((30, 2)) + 0.5
    assert oracle._terminal_gap(a, b) == pytest.approx(w2_exact(a, b), rel=1e-12)
    monkeypatch.setattr(oracle, "W2_SUPPORT_CAP", 40)
    assert oracle._terminal_gap(a, b) == sliced_w2(a, b)
