"""
Tests for the evaluation harness, the bound verifiers and the statistics helpers
"""
import numpy as np
import pytest

from analysis import (
    BOUND_HEADER, REPORT_HEADER, BoundReport, BoundRow, EvalProtocol, convergence_order,
    energy_distance, energy_test, evaluate_bounds, log_t_grid, run_eval, standard_error,
    trial_point, verify_theorem1, verify_theorem2,
)
from analysis.evaluation import _TimeSlice
from db import DatasetStore, SyntheticSpec, generate
from diffusion.oracle import posterior_variance_diag
from diffusion.schedules import DiffusionSchedule, ScheduleKind
from errors import ArgumentError, ConfigError, EvaluationError
from estimators import EstimatorSpec, UniformSNISEstimator, build_estimator, expand_specs
from index.exact import build


def _small_protocol(**overrides):
    values = dict(
        t_grid=[0.1, 1.0],
        m_points=8,
        reps=3,
        estimators=[
            EstimatorSpec.parse("knn", n=16, k=8),
            EstimatorSpec.parse("uniform", n=16),
            EstimatorSpec.parse("stf", n=4),
        ],
        master_seed=17,
    )
    values.update(overrides)
    return EvalProtocol(**values)


class TestTimeGrid:

    def test_endpoints(self):
        grid = log_t_grid(1e-2, 80.0, 24)
        assert grid[0] == 1e-2
        assert grid[-1] == 80.0
        assert np.all(np.diff(grid) > 0)

    def test_bad_grid(self):
        with pytest.raises(ConfigError):
            log_t_grid(1.0, 0.5, 4)


class TestRunEval:

    def test_exact_oracle_has_no_error(self, edm, gmm64):
        protocol = _small_protocol(estimators=[EstimatorSpec.parse("exact")])
        report = run_eval(gmm64, edm, protocol)
        assert len(report.rows) == 4
        for row in report.rows:
            assert row.bias_sq == pytest.approx(0.0, abs=1e-20)
            assert row.variance == pytest.approx(0.0, abs=1e-20)

    def test_mse_decomposition(self, edm, gmm64):
        report = run_eval(gmm64, edm, _small_protocol())
        assert len(report.rows) == 2 * 3 * 2
        for row in report.rows:
            assert row.mse == row.bias_sq + row.variance
            assert row.variance >= 0.0

    def test_report_fields(self, edm, gmm64):
        protocol = _small_protocol(estimators=[EstimatorSpec.parse("mc_single"), EstimatorSpec.parse("knn", n=16, k=8)])
        report = run_eval(gmm64, edm, protocol)
        single = report.select("mc_single")[0]
        knn = report.select("knn", "score")[0]
        assert (single.n, single.k) == (1, 0)
        assert (knn.n, knn.k) == (16, 8)
        assert knn.analytic_variance is not None
        lines = report.to_csv_text().splitlines()
        assert lines[0] == ",".join(REPORT_HEADER)
        assert len(lines) == 1 + len(report.rows)

    def test_worker_count_irrelevant(self, edm, gmm64):
        index = build(gmm64)
        serial = run_eval(gmm64, edm, _small_protocol(), index=index, workers=1)
        threaded = run_eval(gmm64, edm, _small_protocol(), index=index, workers=4)
        assert serial.to_csv_text() == threaded.to_csv_text()

    def test_needs_two_reps(self, edm, gmm64):
        with pytest.raises(ConfigError):
            run_eval(gmm64, edm, _small_protocol(reps=1))

    def test_estimator_failure_is_located(self, edm, gmm64, monkeypatch):
        def broken(self, z, t, rng, x_ref=None):
            raise ArgumentError("boom")

        monkeypatch.setattr(UniformSNISEstimator, "estimate", broken)
        protocol = _small_protocol(estimators=[EstimatorSpec.parse("uniform", n=4)])
        with pytest.raises(EvaluationError) as err:
            run_eval(gmm64, edm, protocol)
        assert err.value.t == 0.1
        assert err.value.point == 0

    def test_one_row_set_per_setting(self, edm, gmm64):
        specs = expand_specs(["mc_posterior", "stf", "knn"], ns=[4, 8], ks=[4, 16])
        report = run_eval(gmm64, edm, _small_protocol(estimators=specs))
        expected = [
            ('mc_posterior', 4, 0), ('mc_posterior', 8, 0),
            ('stf', 4, 0), ('stf', 8, 0),
            ('knn', 4, 4), ('knn', 4, 16), ('knn', 8, 4), ('knn', 8, 16),
        ]
        assert report.settings() == expected
        assert len(report.rows) == 2 * len(expected) * 2
        for name, n, k in expected:
            assert len(report.select(name, "mean", n=n, k=k)) == 2
            assert len(report.select(name, "score", n=n, k=k)) == 2

    @pytest.mark.slow
    def test_knn_wins_at_intermediate_t(self, edm):
        data = generate(SyntheticSpec(n=2048, dim=8, components=2, seed=0))
        protocol = EvalProtocol(
            t_grid=list(log_t_grid(1e-2, 80.0, 24)),
            m_points=30,
            reps=10,
            estimators=expand_specs(["knn", "uniform", "stf"], ns=[256], ks=[64]),
            master_seed=0,
        )
        report = run_eval(data, edm, protocol, workers=4)
        knn, uniform, stf = (report.select(name) for name in ("knn", "uniform", "stf"))

        run, longest = 0, 0
        for a, b, c in zip(knn, uniform, stf):
            if a.mse < 0.5 * b.mse and a.bias_sq < c.bias_sq:
                run += 1
                longest = max(longest, run)
            else:
                run = 0
        assert longest >= 5

    def test_single_sample_variance_is_posterior_variance(self, edm, gmm64):
        t = 0.2
        spec = EstimatorSpec.parse("mc_single")
        protocol = EvalProtocol(t_grid=[t], m_points=200, reps=50, estimators=[spec], master_seed=5)
        index = build(gmm64)
        time_slice = _TimeSlice(gmm64, edm, [build_estimator(spec, gmm64, edm, index)], protocol, index, 0, t)
        empirical = np.mean([time_slice.evaluate_point(j)[0, 1] for j in range(protocol.m_points)])
        expected = np.mean([
            posterior_variance_diag(gmm64, edm, z, t).sum() / gmm64.dim for z in time_slice.z
        ])
        assert empirical == pytest.approx(expected, rel=0.10)


class TestBounds:

    @pytest.mark.parametrize("verify", [verify_theorem1, verify_theorem2])
    def test_no_violations(self, edm, gmm64, verify):
        report = verify(gmm64, edm, trials=200, k=8, n=4, seed=0)
        assert len(report.rows) == 200
        assert report.violations == 0
        assert report.min_rho >= 1.0 - 1e-10
        assert report.summary() == "0 violations / 200 trials"

    def test_full_neighbour_set(self, edm, gmm64, rng):
        index = build(gmm64)
        z = rng.standard_normal(gmm64.dim) * 0.5
        terms = evaluate_bounds(gmm64, edm, index, z, 0.3, gmm64.n, 4)
        assert terms.rho == pytest.approx(1.0, abs=1e-9)
        assert terms.knn_trace == pytest.approx(terms.theorem1_rhs, rel=1e-8)
        assert terms.coefficient == pytest.approx(1.0, abs=1e-12)
        assert terms.tail_fraction == 0.0
        assert terms.theorem2_rhs == pytest.approx(terms.mc_trace, rel=1e-12)

    def test_concentrated_posterior(self, edm, gmm64):
        gap = gmm64.min_gap()
        z = gmm64.points[3] + 0.01 * gap
        terms = evaluate_bounds(gmm64, edm, build(gmm64), z, gap / 20, 4, 8)
        assert terms.knn_trace < 1e-20
        assert terms.mc_trace < 1e-20
        assert terms.rho == pytest.approx(1.0, abs=1e-9)

    def test_uniform_posterior_coefficient(self, edm):
        # every atom is at distance 1 from the origin
        data = DatasetStore.from_array(np.vstack([np.eye(4), -np.eye(4)]))
        terms = evaluate_bounds(data, edm, build(data), np.zeros(4), 1.0, 3, 2)
        assert terms.coefficient == pytest.approx(3 / 8, rel=1e-12)
        assert terms.tail_fraction == 5 / 8
        assert terms.rho == pytest.approx(1.0, rel=1e-12)

    def test_trial_points(self, vp, gmm64):
        a = trial_point(gmm64, vp, 9, 4)
        b = trial_point(gmm64, vp, 9, 4)
        np.testing.assert_array_equal(a[0], b[0])
        assert a[1] == b[1]
        assert vp.t_min <= a[1] <= vp.t_max

    def test_bad_k(self, edm, gmm64):
        with pytest.raises(ArgumentError):
            verify_theorem1(gmm64, edm, trials=3, k=65, n=4, seed=0)

    def test_workers_do_not_change_rows(self, edm, gmm64):
        index = build(gmm64)
        serial = verify_theorem2(gmm64, edm, trials=30, k=8, n=4, seed=3, index=index)
        threaded = verify_theorem2(gmm64, edm, trials=30, k=8, n=4, seed=3, index=index, workers=4)
        assert serial.to_csv_text() == threaded.to_csv_text()

    def test_csv(self):
        report = BoundReport(theorem=1, rows=[
            BoundRow.from_sides(0, 0.5, 8, 1.0, 2.0, 1.5),
            BoundRow.from_sides(1, 0.7, 8, 3.0, 2.0, 1.1),
        ])
        lines = report.to_csv_text().splitlines()
        assert lines[0] == ",".join(BOUND_HEADER)
        assert lines[1].split(",")[6] == "true"
        assert lines[2].split(",")[6] == "false"
        assert report.violations == 1
        assert report.min_rho == 1.1

    @pytest.mark.slow
    @pytest.mark.parametrize("verify", [verify_theorem1, verify_theorem2])
    @pytest.mark.parametrize("kind", [ScheduleKind.EDM, ScheduleKind.VP])
    @pytest.mark.parametrize("k", [1, 16, 64, 256])
    def test_many_trials(self, verify, kind, k, gmm256, gmm256_index):
        schedule = DiffusionSchedule(kind=kind, t_min=1e-3, t_max=1.0 if kind is ScheduleKind.VP else 80.0)
        report = verify(gmm256, schedule, trials=1000, k=k, n=64, seed=1, index=gmm256_index, workers=4)
        assert report.violations == 0
        assert report.min_rho >= 1.0 - 1e-9
        if k == gmm256.n:
            assert all(row.rho == pytest.approx(1.0, abs=1e-9) for row in report.rows)


class TestStatistics:

    def test_energy_distance_of_two_atoms(self):
        assert energy_distance([[0.0]], [[1.0]]) == pytest.approx(2.0)

    def test_identical_samples(self):
        X = np.random.default_rng(0).standard_normal((60, 2))
        statistic, p_value = energy_test(X, X.copy(), n_perm=200)
        assert statistic == pytest.approx(0.0, abs=1e-12)
        assert p_value > 0.5

    def test_shifted_samples(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((100, 2))
        Y = rng.standard_normal((100, 2)) + 1.0
        _, p_value = energy_test(X, Y, n_perm=500)
        assert p_value < 0.01

    def test_convergence_order(self):
        steps = [10, 20, 40, 80]
        errors = [1.0 / s ** 2 for s in steps]
        assert convergence_order(steps, errors) == pytest.approx(2.0)

    def test_convergence_order_needs_positive_errors(self):
        with pytest.raises(ArgumentError):
            convergence_order([1, 2], [0.1, 0.0])

    def test_standard_error(self):
        assert np.isnan(standard_error(np.array([1.0])))
        assert standard_error(np.array([1.0, 3.0])) == pytest.approx(np.sqrt(2.0) / np.sqrt(2.0))

