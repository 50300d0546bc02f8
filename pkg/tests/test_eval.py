"""Forecast metrics, cross-validation folds and report tables"""

import math
from types import SimpleNamespace

import numpy as np
import pytest

from riskgrid.services import eval_service, forest_service
from riskgrid.utils.errors import LengthMismatchError, ParameterError, UndefinedMetricError
from tests.conftest import lattice_centroids

A = [1.0, 2.0, 4.0]
F = [1.0, 1.0, 5.0]


@pytest.mark.unit
class TestMetrics:

    def test_fixture_values(self):
        assert eval_service.mape(A, F) == pytest.approx(25.0)
        assert eval_service.mae(A, F) == pytest.approx(2 / 3)
        assert eval_service.rmse(A, F) == pytest.approx(math.sqrt(2 / 3))

    def test_mape_skips_zero_actuals(self):
        value, skipped = eval_service.mape([0.0, 1.0], [5.0, 1.0], return_skipped=True)
        assert value == 0.0
        assert skipped == 1

    def test_mape_all_zero(self):
        with pytest.raises(UndefinedMetricError):
            eval_service.mape([0.0, 0.0], [1.0, 2.0])

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatchError):
            eval_service.mae([1.0, 2.0], [1.0])

    def test_mae_never_exceeds_rmse(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            a, f = rng.normal(size=(2, 20))
            assert eval_service.mae(a, f) <= eval_service.rmse(a, f) + 1e-12

    def test_permutation_invariant(self):
        rng = np.random.default_rng(1)
        a = rng.poisson(3, 50).astype(float) + 1
        f = rng.uniform(0.5, 6, 50)
        perm = rng.permutation(50)
        for metric in (eval_service.mape, eval_service.mae, eval_service.rmse, eval_service.r_squared):
            assert metric(a[perm], f[perm]) == pytest.approx(metric(a, f), rel=1e-12)

    def test_r_squared(self):
        assert eval_service.r_squared([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 1.0
        assert eval_service.r_squared([1.0, 2.0, 3.0], [2.0, 2.0, 2.0]) == 0.0
        with pytest.raises(UndefinedMetricError):
            eval_service.r_squared([2.0, 2.0], [1.0, 3.0])

    def test_log_deviance_values(self):
        assert eval_service.log_deviance([0], [1.0]) == pytest.approx(1.0)
        assert eval_service.log_deviance([1], [1.0]) == pytest.approx(1.0)
        assert eval_service.log_deviance([2], [2.0]) == pytest.approx(2 - 2 * math.log(2) + math.log(2))

    def test_log_deviance_minimized_at_mean(self):
        y = np.array([0, 1, 3, 4, 7])
        grid = np.linspace(0.5, 8, 751)
        values = [eval_service.log_deviance(y, np.full(5, c)) for c in grid]
        assert grid[int(np.argmin(values))] == pytest.approx(y.mean(), abs=0.01)

    def test_log_deviance_clamps_rates(self):
        warnings = []
        value = eval_service.log_deviance([0, 1], [0.0, 1.0], warnings=warnings)
        assert np.isfinite(value)
        assert len(warnings) == 1

    def test_log_deviance_negative_counts(self):
        with pytest.raises(ParameterError):
            eval_service.log_deviance([-1], [1.0])

    def test_metric_set_records_undefined(self):
        metrics = eval_service.metric_set([0.0, 0.0, 0.0], [1.0, 1.0, 1.0])
        assert math.isnan(metrics.mape) and math.isnan(metrics.r2)
        assert metrics.mae == 1.0
        assert len(metrics.notes) == 2


@pytest.mark.unit
class TestFolds:

    def test_balanced_sizes(self):
        folds = eval_service.make_folds(11, 5, seed=3)
        assert sorted(np.bincount(folds, minlength=5)) == [2, 2, 2, 2, 3]

    def test_deterministic(self):
        np.testing.assert_array_equal(eval_service.make_folds(40, 5, 7), eval_service.make_folds(40, 5, 7))
        assert not np.array_equal(eval_service.make_folds(40, 5, 7), eval_service.make_folds(40, 5, 8))

    def test_invalid_k(self):
        with pytest.raises(ParameterError):
            eval_service.make_folds(4, 5)
        with pytest.raises(ParameterError):
            eval_service.make_folds(10, 1)

    def test_spatial_blocks_are_contiguous_columns(self):
        centroids = lattice_centroids(6)
        folds = eval_service.make_spatial_folds(centroids, 3)
        for fold in range(3):
            xs = np.unique(centroids[folds == fold, 0])
            assert len(xs) == 2
            assert xs[1] - xs[0] == 1.0


@pytest.mark.unit
class TestCrossValidation:

    @staticmethod
    def data(n=200, seed=0):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(n, 2))
        y = rng.poisson(np.exp(1.0 + 0.4 * X[:, 0]))
        return X, y

    def test_intercept_only_baseline(self):
        _, y = self.data()
        report = eval_service.cross_validate('poisson', np.zeros((len(y), 0)), y, k=5, seed=1)
        r2 = np.array([f.r2 for f in report.folds])
        assert np.all(r2 <= 1e-12)
        assert np.all(r2 > -0.2)
        assert report.mean['rmse'] == pytest.approx(y.std(), rel=0.15)

    def test_partition_and_leakage(self):
        X, y = self.data()
        report = eval_service.cross_validate('poisson', X, y, k=4, seed=2)
        assert report.leak_free
        assert report.k == 4
        assert sorted(np.unique(report.assignment)) == [0, 1, 2, 3]
        assert report.predictions.shape == y.shape

    def test_same_seed_same_report(self):
        X, y = self.data()
        first = eval_service.cross_validate('poisson', X, y, k=5, seed=3, threads=1)
        second = eval_service.cross_validate('poisson', X, y, k=5, seed=3, threads=4)
        assert first.mean == second.mean
        np.testing.assert_array_equal(first.predictions, second.predictions)

    def test_forest_folds(self):
        X, y = self.data(n=80)
        report = eval_service.cross_validate('forest', X, y, k=3, seed=4,
                                             forest_params={'B': 5, 'min_node': 5, 'seed': 1})
        assert report.k == 3
        assert np.all(np.isfinite(report.predictions))

    def test_blocked_scheme_needs_centroids(self):
        X, y = self.data(n=36)
        with pytest.raises(ParameterError):
            eval_service.cross_validate('poisson', X, y, k=3, scheme='blocked')
        report = eval_service.cross_validate('poisson', X, y, k=3, scheme='blocked', centroids=lattice_centroids(6))
        assert report.k == 3

    def test_collinear_fold_is_skipped(self):
        X, y = self.data(n=60, seed=5)
        X[:, 1] = X[:, 0]
        X[7, 1] += 1.0
        report = eval_service.cross_validate('poisson', X, y, k=3, seed=6)
        failed = report.assignment[7]
        for fold, metrics in enumerate(report.folds):
            if fold == failed:
                assert math.isnan(metrics.mae) and metrics.n_used == 0
            else:
                assert math.isfinite(metrics.mae)
        assert np.all(np.isnan(report.predictions[report.assignment == failed]))
        assert math.isfinite(report.mean['mae'])
        assert any('fit failed' in note for note in report.notes)

    def test_spatial_models_not_cross_validated(self):
        X, y = self.data(n=20)
        with pytest.raises(ParameterError):
            eval_service.cross_validate('sdem', X, y)

    def test_single_fit_report(self):
        report = eval_service.single_fit_report('sdem', A, F)
        assert not report.cross_validated
        assert math.isnan(report.sd['mae'])
        assert report.mean['mae'] == pytest.approx(2 / 3)

    def test_next_epoch(self):
        reports = eval_service.evaluate_epoch({'poisson': F, 'forest': A}, A)
        assert reports['forest'].mean['mae'] == 0.0
        assert set(reports) == {'poisson', 'forest'}


@pytest.mark.unit
class TestTables:

    def test_table1_rows_and_missing_sd(self):
        X, y = TestCrossValidation.data(n=60)
        reports = {
            'manski': eval_service.single_fit_report('manski', y, np.full(len(y), y.mean())),
            'poisson': eval_service.cross_validate('poisson', X, y, k=3, seed=0),
            'sdem': eval_service.single_fit_report('sdem', y, np.full(len(y), y.mean())),
        }
        frame = eval_service.table1_frame(reports)
        assert list(frame['model']) == ['poisson', 'sdem', 'manski']
        assert list(frame.columns) == ['model', 'mape_mean', 'mape_sd', 'mae_mean', 'mae_sd', 'rmse_mean', 'rmse_sd']
        assert frame['mae_sd'].isna().tolist() == [False, True, True]
        assert list(eval_service.table2_frame(reports).columns) == ['model', 'r2_mean', 'r2_sd',
                                                                   'logdev_mean', 'logdev_sd']

    def test_importance_ranking(self):
        poisson = SimpleNamespace(terms=['(Intercept)', 'agg_A', 'ed_B', 'NN_C'], p=[1e-9, 0.001, 0.2, 0.001])
        sdem = SimpleNamespace(terms=['(Intercept)', 'agg_A', 'lag_agg_A', 'lambda'], p=[0.0, 0.04, 0.01, 0.0])
        forest = forest_service.Forest(trees=[], m=1, min_node=1, seed=0, bootstrap=True,
                                       importance=np.array([5.0, 1.0, 3.0]), names=['agg_A', 'ed_B', 'NN_C'])
        table = eval_service.importance_table({'sdem': sdem, 'poisson': poisson, 'forest': forest}, k=2)

        assert list(table.ranked) == ['poisson', 'forest', 'sdem']
        assert table.ranked['poisson'] == [('NN_C', pytest.approx(3.0)), ('agg_A', pytest.approx(3.0))]
        assert [name for name, _ in table.ranked['forest']] == ['agg_A', 'NN_C']
        assert [name for name, _ in table.ranked['sdem']] == ['lag_agg_A', 'agg_A']
        assert table.common == ['agg_A']

    def test_k_larger_than_feature_count(self):
        fit = SimpleNamespace(terms=['(Intercept)', 'x'], p=[0.5, 0.5])
        table = eval_service.importance_table({'poisson': fit}, k=10)
        assert [name for name, _ in table.ranked['poisson']] == ['x']

    def test_table4_padding(self):
        table = eval_service.ImportanceTable(ranked={'poisson': [('a', 2.0), ('b', 1.0)], 'forest': [('a', 1.0)]},
                                             common=['a'], k=2)
        frame = eval_service.table4_frame(table)
        assert list(frame.columns) == ['rank', 'poisson', 'forest']
        assert frame['forest'].tolist() == ['a', '']

    def test_prediction_frame(self):
        frame = eval_service.prediction_frame([1, 2], {'forest': [1.5, 2.5], 'poisson': [1.0, 2.0]})
        assert list(frame.columns) == ['cell_id', 'observed', 'poisson', 'forest']
