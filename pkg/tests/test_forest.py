"""Regression trees, bootstrap forests, importance and pruning"""

import numpy as np
import pytest

from riskgrid.services import forest_service
from riskgrid.utils.errors import ParameterError, SchemaMismatchError
from riskgrid.utils.parallel import stream_rng
from tests.conftest import replicates


def reference_cart(X, y, idx):
    """Exhaustive CART in preorder: (feature, threshold, value) per node, leaves as (-1, 0.0, mean)"""
    ys = y[idx]
    mean = float(ys.mean())
    node_rss = float(np.sum((ys - mean) ** 2))
    if len(idx) < 2 or np.ptp(ys) == 0:
        return [(-1, 0.0, mean)]
    best = (np.inf, -1, 0.0)
    for f in range(X.shape[1]):
        values = np.unique(X[idx, f])
        for lo, hi in zip(values[:-1], values[1:]):
            thr = (lo + hi) / 2.0
            goes_left = X[idx, f] <= thr
            left, right = ys[goes_left], ys[~goes_left]
            rss = np.sum((left - left.mean()) ** 2) + np.sum((right - right.mean()) ** 2)
            if rss < best[0]:
                best = (rss, f, thr)
    rss, f, thr = best
    if f < 0 or not rss < node_rss - 1e-12 * max(node_rss, 1.0):
        return [(-1, 0.0, mean)]
    goes_left = X[idx, f] <= thr
    return [(f, thr, mean)] + reference_cart(X, y, idx[goes_left]) + reference_cart(X, y, idx[~goes_left])


def step_data(n=200, p=3, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, (n, p))
    return X, (X[:, 0] > 0).astype(float)


@pytest.mark.unit
class TestTree:

    def test_constant_response_is_one_leaf(self):
        tree = forest_service.fit_cart(np.arange(10.0).reshape(-1, 1), np.full(10, 3.0))
        assert tree.n_nodes == 1
        assert tree.value[0] == 3.0

    def test_step_function(self):
        X = np.array([[-1.0], [-1.0], [1.0], [1.0]])
        y = np.array([0.0, 0.0, 1.0, 1.0])
        tree = forest_service.fit_cart(X, y)
        assert tree.n_nodes == 3
        assert tree.feature[0] == 0
        assert tree.threshold[0] == 0.0
        np.testing.assert_array_equal(tree.value[tree.is_leaf], [0.0, 1.0])
        assert np.sum(tree.rss[tree.is_leaf]) == 0.0

    def test_matches_exhaustive_search(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            X = rng.normal(size=(30, 3))
            y = rng.normal(size=30)
            tree = forest_service.fit_cart(X, y, min_node=1)
            expected = reference_cart(X, y, np.arange(30))
            assert tree.n_nodes == len(expected)
            for node, (f, thr, value) in enumerate(expected):
                assert tree.feature[node] == f
                assert tree.threshold[node] == pytest.approx(thr, abs=1e-12)
                if f == -1:
                    assert tree.value[node] == value

    def test_min_node_respected(self):
        X, y = step_data(n=60)
        y = y + np.random.default_rng(1).normal(0, 0.1, 60)
        tree = forest_service.fit_cart(X, y, min_node=7)
        assert np.all(tree.n_node[tree.is_leaf] >= 7)

    def test_dump_names_features(self):
        X = np.array([[-1.0], [-1.0], [1.0], [1.0]])
        text = forest_service.dump_tree(forest_service.fit_cart(X, np.array([0.0, 0.0, 1.0, 1.0])), ['agg_Liquor'])
        assert text.splitlines()[0].startswith('agg_Liquor <= 0')
        assert text.count('leaf') == 2


@pytest.mark.unit
class TestPruning:

    @staticmethod
    def noisy_tree():
        rng = np.random.default_rng(4)
        X = rng.normal(size=(80, 2))
        y = X[:, 0] + rng.normal(0, 0.5, 80)
        return forest_service.fit_cart(X, y, min_node=2)

    def test_zero_alpha_keeps_tree(self):
        tree = self.noisy_tree()
        assert forest_service.cost_complexity_prune(tree, 0.0).n_nodes == tree.n_nodes

    def test_large_alpha_collapses_to_root(self):
        tree = self.noisy_tree()
        pruned = forest_service.cost_complexity_prune(tree, 1e9)
        assert pruned.n_nodes == 1
        assert pruned.value[0] == pytest.approx(tree.value[0])

    def test_path_is_monotone(self):
        path = forest_service.pruning_path(self.noisy_tree())
        alphas = [a for a, _, _ in path]
        leaves = [n for _, n, _ in path]
        assert leaves[-1] == 1
        assert all(b >= a for a, b in zip(alphas, alphas[1:]))
        assert all(b < a for a, b in zip(leaves, leaves[1:]))

    def test_negative_alpha(self):
        with pytest.raises(ParameterError):
            forest_service.cost_complexity_prune(self.noisy_tree(), -1.0)


@pytest.mark.unit
class TestForest:

    def test_single_shallow_tree_is_bootstrap_mean(self):
        X, y = step_data(n=40)
        forest = forest_service.fit_forest(X, y, B=1, min_node=40, seed=5)
        rows = stream_rng(5, 0).integers(0, 40, size=40)
        np.testing.assert_allclose(forest_service.predict_forest(forest, X), y[rows].mean())

    def test_default_metadata(self):
        X, y = step_data(n=40, p=4)
        forest = forest_service.fit_forest(X, y, seed=1)
        assert forest.metadata() == {'n_trees': 500, 'm': 2, 'min_node': 5, 'seed': 1, 'bootstrap': True,
                                     'n_features': 4}

    def test_prediction_is_tree_average(self):
        X, y = step_data(n=50)
        forest = forest_service.fit_forest(X, y, B=10, seed=2)
        expected = np.mean([tree.predict(X) for tree in forest.trees], axis=0)
        np.testing.assert_allclose(forest_service.predict_forest(forest, X), expected, atol=1e-12)

    def test_thread_count_does_not_change_result(self):
        X, y = step_data(n=80)
        one = forest_service.fit_forest(X, y, B=20, seed=3, threads=1)
        four = forest_service.fit_forest(X, y, B=20, seed=3, threads=4)
        np.testing.assert_array_equal(forest_service.predict_forest(one, X), forest_service.predict_forest(four, X))
        np.testing.assert_array_equal(one.importance, four.importance)

    def test_deep_forest_fits_step(self):
        X, y = step_data()
        forest = forest_service.fit_forest(X, y, B=50, min_node=1, seed=0)
        fitted = forest_service.predict_forest(forest, X)
        r2 = 1 - np.sum((y - fitted) ** 2) / np.sum((y - y.mean()) ** 2)
        assert r2 >= 0.95

    def test_single_feature_ranked_first(self):
        X, y = step_data(p=1)
        forest = forest_service.fit_forest(X, y, B=5, seed=0, names=['agg_Only'])
        assert forest_service.forest_importance(forest)[0][::2] == ('agg_Only', 1)

    def test_importance_frame(self):
        X, y = step_data()
        frame = forest_service.importance_frame(forest_service.fit_forest(X, y, B=10, seed=0, names=['a', 'b', 'c']))
        assert list(frame.columns) == ['feature', 'importance', 'rank']
        assert frame['feature'].iloc[0] == 'a'
        assert list(frame['rank']) == [1, 2, 3]

    def test_invalid_m(self):
        X, y = step_data()
        with pytest.raises(ParameterError):
            forest_service.fit_forest(X, y, B=2, m=4)

    def test_predict_shape_check(self):
        X, y = step_data()
        forest = forest_service.fit_forest(X, y, B=2)
        with pytest.raises(SchemaMismatchError):
            forest_service.predict_forest(forest, X[:, :2])

    @pytest.mark.slow
    def test_planted_signal_ranks_first(self):
        n_rep = replicates(50, 15)
        hits = 0
        for seed in range(n_rep):
            rng = stream_rng(seed, 9)
            X = rng.normal(size=(200, 5))
            y = 3.0 * X[:, 0] + rng.normal(0, 0.5, 200)
            forest = forest_service.fit_forest(X, y, B=50, seed=seed, names=[f"f{j}" for j in range(5)])
            hits += forest_service.forest_importance(forest)[0][0] == 'f0'
        assert hits / n_rep >= 0.95

    @pytest.mark.slow
    def test_pure_noise_has_no_dominant_feature(self):
        n_rep = replicates(50, 10)
        flat = 0
        for seed in range(n_rep):
            rng = stream_rng(seed, 10)
            X = rng.normal(size=(200, 5))
            y = rng.normal(size=200)
            forest = forest_service.fit_forest(X, y, B=100, seed=seed)
            flat += forest.importance.max() <= 3 * np.median(forest.importance)
        assert flat / n_rep >= 0.9
