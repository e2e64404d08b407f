"""
Tests unitaires pour evaluation.py

Modèles de référence, fenêtre croissante, métriques et tables relatives.
"""

import math

import numpy as np
import pytest

from src.errors import EmptyRecordSetError, InsufficientSampleError, RankDeficiencyError, SpecValidationError
from src.evaluation import (
    DIVERGED_MARK,
    NO_DENSITY_MARK,
    ExternalForecastRunner,
    MaiRunner,
    PoolRunner,
    RandomWalkRunner,
    VarOlsRunner,
    alpl,
    compute_metrics,
    expanding_window_forecast,
    fit_var_ols,
    format_cell,
    mafe,
    relative_table,
    render_table,
    rmsfe,
    var_forecast,
    variant_runner
)
from src.models import DgpSpec, ForecastRecord, GroupTemplate, MetricRow, ModelSpec
from src.simulation import simulate_mai


def _record(actual, point, log_score=-1.0, model="A", variable="x", horizon=1, origin="2000Q1", **extra):
    return ForecastRecord(origin=origin, horizon=horizon, variable=variable, model=model,
                          point=point, pred_var=1.0, log_score=log_score, actual=actual, **extra)


@pytest.fixture
def var_one_panel():
    """VAR(1) bivarié simulé sur T=550 (q = N, ω = I)"""
    A = np.array([[0.5, 0.1], [-0.2, 0.3]])
    spec = DgpSpec(N=2, q=2, T=550, burn_in=50, seed=22, omega_true=np.eye(2), beta=A[None],
                   h_matrix=np.eye(2))
    panel, _ = simulate_mai(spec)
    return panel


class TestRandomWalkRunner:
    """Tests pour RandomWalkRunner"""

    def test_point_is_last_observation(self, make_panel, rng):
        panel = make_panel(rng.normal(size=(10, 2)))

        records = expanding_window_forecast(panel, RandomWalkRunner(), h_max=1, first_origin=9)

        assert len(records) == 2
        for record, i in zip(records, (0, 1)):
            assert record.point == pytest.approx(panel.values[8, i], abs=1e-12)
            assert record.actual == panel.values[9, i]
            assert record.origin == panel.dates[8]

    def test_same_variance_at_every_horizon(self, make_panel, rng):
        """Variance des premières différences, identique pour h = 1..3"""
        panel = make_panel(rng.normal(size=(30, 2)))

        forecasts, _ = RandomWalkRunner().forecast(panel, 3)

        expected = np.diag(np.var(np.diff(panel.values, axis=0), axis=0, ddof=1))
        for forecast in forecasts:
            np.testing.assert_allclose(forecast.covariance, expected, atol=1e-12)
            np.testing.assert_array_equal(forecast.mean, panel.values[-1])

    def test_without_density_scores_are_missing(self, make_panel, rng):
        panel = make_panel(rng.normal(size=(12, 1)))

        records = expanding_window_forecast(panel, RandomWalkRunner(), h_max=1, first_origin=10)

        assert all(not r.has_density and math.isnan(r.log_score) for r in records)
        assert all(r.pred_var > 0 for r in records)

    def test_with_density(self, make_panel, rng):
        panel = make_panel(rng.normal(size=(12, 1)))

        records = expanding_window_forecast(panel, RandomWalkRunner(density=True), h_max=1, first_origin=10)

        assert all(math.isfinite(r.log_score) for r in records)


class TestVarOls:
    """Tests pour fit_var_ols / var_forecast / VarOlsRunner"""

    def test_recovers_var_one_coefficient(self):
        A = np.array([[0.5, 0.1], [-0.2, 0.3]])
        panel, _ = simulate_mai(DgpSpec(N=2, q=2, T=5000, burn_in=100, seed=13, omega_true=np.eye(2),
                                        beta=A[None], h_matrix=np.eye(2)))

        lags, const, sigma = fit_var_ols(panel.values, 1)

        assert const is None
        np.testing.assert_allclose(lags[0], A, atol=0.03)
        np.testing.assert_allclose(sigma, np.eye(2), atol=0.1)

    def test_too_many_regressors(self, rng):
        """N·p ≥ T: rang insuffisant"""
        with pytest.raises(RankDeficiencyError):
            fit_var_ols(rng.normal(size=(10, 3)), 4)

    def test_iterated_forecast(self):
        """A = 0.5 I: moyennes 0.5^h y_T, covariances Σ (1 + 0.25 + ...)"""
        lags = [0.5 * np.eye(2)]
        values = np.array([[0.0, 0.0], [2.0, -4.0]])

        means, covs = var_forecast(values, lags, None, np.eye(2), h_max=3)

        np.testing.assert_allclose(means, [[1.0, -2.0], [0.5, -1.0], [0.25, -0.5]])
        np.testing.assert_allclose(covs[:, 0, 0], [1.0, 1.25, 1.3125])

    def test_rank_deficiency_gives_diverged_records(self, make_panel, rng):
        panel = make_panel(rng.normal(size=(12, 3)))

        records = expanding_window_forecast(panel, VarOlsRunner(4, "M11"), h_max=1, first_origin=8)

        assert records and all(r.diverged for r in records)
        rows = compute_metrics(records)
        assert all(row.diverged and row.rmsfe is None for row in rows)
        assert format_cell(rows[0], 'rmsfe', relative=False) == DIVERGED_MARK


class TestMaiRunner:
    """Tests pour MaiRunner"""

    def test_identity_weights_encompass_the_var(self, var_one_panel):
        """ω = I, λ = κ = 1, prior diffus: même prévision à un pas que le VAR(1) par OLS sur 50 origines"""
        mai = MaiRunner(ModelSpec(q=2, beta0_var_scale=1e6), tag="MAI", fixed_omega=np.eye(2))
        panel = var_one_panel

        mai_records = expanding_window_forecast(panel, mai, h_max=1, first_origin=500)
        var_records = expanding_window_forecast(panel, VarOlsRunner(1, "VAR1"), h_max=1, first_origin=500)

        assert len(mai_records) == len(var_records) == 2 * 50
        for a, b in zip(mai_records, var_records):
            assert (a.origin, a.variable) == (b.origin, b.variable)
        gaps = np.array([a.point - b.point for a, b in zip(mai_records, var_records)])
        assert np.sqrt(np.mean(gaps ** 2)) <= 1e-4

    def test_switching_runner(self, simulated_panel):
        runner = MaiRunner(ModelSpec(q=1, lam=0.99, kappa=0.97), max_iter=5)

        records = expanding_window_forecast(simulated_panel, runner, h_max=2, first_origin=115)

        assert len(records) == 3 * (5 + 4)
        assert not any(r.diverged for r in records)


class TestPoolRunner:
    """Tests pour PoolRunner et variant_runner"""

    def test_record_count_and_determinism(self, simulated_panel):
        """T - h - first_origin + 1 enregistrements par (variable, h)"""
        runner = variant_runner("M3", [1], [1.0], [0.97], max_iter=5)

        first = expanding_window_forecast(simulated_panel, runner, h_max=2, first_origin=110)
        second = expanding_window_forecast(simulated_panel, runner, h_max=2, first_origin=110)

        T = simulated_panel.T
        for h in (1, 2):
            count = sum(1 for r in first if r.horizon == h and r.variable == "y1")
            assert count == T - h - 110 + 1
        assert [r.point for r in first] == [r.point for r in second]
        assert [r.log_score for r in first] == [r.log_score for r in second]

    def test_dms_variant(self, simulated_panel):
        runner = variant_runner("M2", [1, 2], [0.99], [0.97], max_iter=5)

        records = expanding_window_forecast(simulated_panel, runner, h_max=1, first_origin=117)

        assert runner.mode == "DMS"
        assert len(records) == 3 * 3
        assert all(math.isfinite(r.log_score) for r in records)

    def test_empty_pool(self):
        with pytest.raises(SpecValidationError):
            PoolRunner([])

    def test_variant_mapping(self):
        m2 = variant_runner("M2", [1, 2], [0.98, 1.0], [0.96, 1.0])
        m4 = variant_runner("M4", [1, 2], [0.98, 1.0], [0.96, 1.0])
        m7 = variant_runner("M7", [1, 2], [0.98, 1.0], [0.96, 1.0])

        assert isinstance(variant_runner("M9", [1], [1.0], [1.0]), RandomWalkRunner)
        assert variant_runner("M10", [1], [1.0], [1.0]).p == 1
        assert variant_runner("M11", [1], [1.0], [1.0]).p == 4
        assert m2.mode == "DMS" and len(m2.specs) == 8
        assert all(s.lam == 1.0 for s in m4.specs) and len(m4.specs) == 4
        assert len(m7.specs) == 2
        assert all(s.lam == 1.0 and s.kappa == 1.0 and s.h0_mode == "ols" for s in m7.specs)

    def test_restriction_reaches_the_grid(self):
        template = GroupTemplate(group_sizes=[2, 1])

        runner = variant_runner("M5", [1, 2], [0.99], [0.97], restriction=template)

        by_q = {spec.q: spec.restriction for spec in runner.specs}
        assert by_q[2] == template
        assert by_q[1] is None

    def test_unknown_variant(self):
        with pytest.raises(SpecValidationError, match="M12"):
            variant_runner("M12", [1], [1.0], [1.0])


class TestExternalForecastRunner:
    """Tests pour ExternalForecastRunner"""

    def test_lookup_and_missing_entries(self, make_panel, write_csv):
        panel = make_panel(np.arange(12.0).reshape(6, 2))
        path = write_csv("origin,variable,h,point,pred_var\n2000Q4,s1,1,7.5,0.25\n", "dfm.csv")
        runner = ExternalForecastRunner("DFM", path)

        records = expanding_window_forecast(panel, runner, h_max=1, first_origin=4)

        assert len(records) == 4
        found = [r for r in records if r.origin == "2000Q4" and r.variable == "s1"][0]
        assert found.point == 7.5
        assert found.actual == 8.0
        assert found.log_score == pytest.approx(-0.5 * (math.log(2 * math.pi * 0.25) + 0.25 / 0.25))
        assert sum(r.diverged for r in records) == 3

    def test_point_only_file(self, make_panel, write_csv):
        panel = make_panel(np.arange(6.0))
        path = write_csv("origin,variable,h,point\n2000Q4,s1,1,3.0\n2001Q1,s1,1,4.0\n", "ext.csv")

        records = expanding_window_forecast(panel, ExternalForecastRunner("EXT", path), h_max=1, first_origin=4)

        assert [r.point for r in records] == [3.0, 4.0]
        assert all(not r.has_density for r in records)

    def test_missing_columns(self, write_csv):
        path = write_csv("origin,variable,point\n2000Q1,s1,1.0\n", "bad.csv")

        with pytest.raises(SpecValidationError, match="lack columns"):
            ExternalForecastRunner("BAD", path)


class TestExpandingWindow:
    """Tests pour expanding_window_forecast"""

    def test_single_origin(self, make_panel, rng):
        """Une origine et h_max=1 -> N enregistrements"""
        panel = make_panel(rng.normal(size=(8, 3)))

        records = expanding_window_forecast(panel, RandomWalkRunner(), h_max=1, first_origin=7)

        assert len(records) == 3

    @pytest.mark.parametrize("first_origin", [1, 8])
    def test_invalid_first_origin(self, make_panel, rng, first_origin):
        panel = make_panel(rng.normal(size=(8, 2)))

        with pytest.raises(InsufficientSampleError):
            expanding_window_forecast(panel, RandomWalkRunner(), h_max=1, first_origin=first_origin)

    def test_unknown_target(self, make_panel, rng):
        panel = make_panel(rng.normal(size=(8, 2)))

        with pytest.raises(SpecValidationError):
            expanding_window_forecast(panel, RandomWalkRunner(), h_max=1, first_origin=5, targets=["GDP"])

    def test_targets_subset(self, make_panel, rng):
        panel = make_panel(rng.normal(size=(10, 3)))

        records = expanding_window_forecast(panel, RandomWalkRunner(), h_max=2, first_origin=6, targets=["s2"])

        assert {r.variable for r in records} == {"s2"}
        assert len(records) == 4 + 3

    def test_parallel_origins_match_sequential(self, make_panel, rng):
        panel = make_panel(rng.normal(size=(15, 2)))

        sequential = expanding_window_forecast(panel, VarOlsRunner(1), h_max=2, first_origin=10)
        parallel = expanding_window_forecast(panel, VarOlsRunner(1), h_max=2, first_origin=10,
                                             warm_start=False, workers=2)

        assert [r.point for r in sequential] == [r.point for r in parallel]

    def test_records_are_sorted(self, make_panel, rng):
        panel = make_panel(rng.normal(size=(10, 2)))

        records = expanding_window_forecast(panel, RandomWalkRunner(), h_max=2, first_origin=6)

        keys = [(r.origin, r.model, r.variable, r.horizon) for r in records]
        assert keys == sorted(keys)


class TestMetrics:
    """Tests pour rmsfe, mafe et alpl"""

    def test_two_errors(self):
        """Erreurs (3, -4): RMSFE = √12.5, MAFE = 3.5"""
        records = [_record(3.0, 0.0), _record(0.0, 4.0)]

        assert rmsfe(records) == pytest.approx(3.5355339, abs=1e-6)
        assert mafe(records) == pytest.approx(3.5)

    def test_constant_error(self):
        records = [_record(a + 2.0, a) for a in (0.0, 1.0, -3.0)]

        assert rmsfe(records) == pytest.approx(2.0)
        assert mafe(records) == pytest.approx(2.0)

    def test_perfect_forecasts(self):
        records = [_record(1.0, 1.0), _record(-2.0, -2.0)]

        assert rmsfe(records) == 0.0
        assert mafe(records) == 0.0

    def test_standard_normal_log_score(self):
        records = [_record(0.0, 0.0, log_score=-0.5 * math.log(2 * math.pi))]

        assert alpl(records) == pytest.approx(-0.9189385, abs=1e-6)

    def test_duplicated_records_keep_the_average(self):
        records = [_record(1.0, 0.0, log_score=-1.0), _record(2.0, 0.0, log_score=-3.0)]

        assert alpl(records * 2) == pytest.approx(alpl(records))
        assert rmsfe(records * 2) == pytest.approx(rmsfe(records))

    def test_empty_record_set(self):
        with pytest.raises(EmptyRecordSetError):
            rmsfe([])

    def test_divergence_is_undefined(self):
        records = [_record(1.0, 0.0), ForecastRecord(origin="2000Q1", horizon=1, variable="x", model="A",
                                                     point=math.nan, pred_var=math.nan, log_score=math.nan,
                                                     actual=1.0, diverged=True)]

        assert math.isnan(rmsfe(records))
        assert math.isnan(alpl(records))


class TestRelativeTable:
    """Tests pour compute_metrics, relative_table et render_table"""

    def test_benchmark_ratio_is_one(self):
        records = [_record(1.0, 0.0, model="M9"), _record(3.0, 0.0, model="M1")]

        table = relative_table(compute_metrics(records), benchmark="M9")

        benchmark = [r for r in table.rows if r.model == "M9"][0]
        other = [r for r in table.rows if r.model == "M1"][0]
        assert benchmark.rmsfe_ratio == 1.0
        assert other.rmsfe_ratio == pytest.approx(3.0)
        assert other.alpl_ratio == pytest.approx(1.0)

    def test_missing_benchmark(self):
        with pytest.raises(SpecValidationError, match="Benchmark"):
            relative_table(compute_metrics([_record(1.0, 0.0)]), benchmark="M9")

    def test_diverged_benchmark_leaves_cells_undefined(self):
        rows = [
            MetricRow(model="M9", variable="x", horizon=1, count=3, diverged=True),
            MetricRow(model="M1", variable="x", horizon=1, count=3, rmsfe=1.0, mafe=1.0, alpl=-1.0)
        ]

        table = relative_table(rows, benchmark="M9")

        assert all(row.rmsfe_ratio is None for row in table.rows)

    def test_rendering_marks(self):
        rows = [
            MetricRow(model="M9", variable="GDP", horizon=1, count=2, rmsfe=1.5, mafe=1.0,
                      density_available=False),
            MetricRow(model="M1", variable="GDP", horizon=1, count=2, diverged=True)
        ]

        text = render_table(relative_table(rows, benchmark="M9"))

        assert "Variable: GDP (relative to M9)" in text
        assert DIVERGED_MARK in text
        assert NO_DENSITY_MARK in text
        assert "RMSFE" in text and "MAFE" in text and "ALPL" in text

    def test_absolute_values_use_six_significant_digits(self):
        row = MetricRow(model="M1", variable="x", horizon=1, count=1, rmsfe=1.23456789)

        assert format_cell(row, 'rmsfe', relative=False) == "1.23457"
