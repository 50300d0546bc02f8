"""Global and local Moran's I, Bonferroni adjustment and cluster labels"""

import numpy as np
import pytest

from riskgrid.services import autocorr_service, grid_service, synthetic_service, weights_service
from riskgrid.services.autocorr_service import LocalMoranResult
from riskgrid.utils import constants
from riskgrid.utils.errors import ParameterError, ZeroVarianceError
from riskgrid.utils.parallel import stream_rng
from tests.conftest import X0, Y0, lattice_centroids, replicates


@pytest.mark.unit
class TestGlobalMoran:

    def test_ring_value(self, ring_weights):
        assert autocorr_service.global_moran([1.0, 2.0, 3.0, 4.0], ring_weights) == pytest.approx(-0.2)

    def test_constant_variable(self, ring_weights):
        with pytest.raises(ZeroVarianceError):
            autocorr_service.global_moran([2.0, 2.0, 2.0, 2.0], ring_weights)

    def test_gradient_surface_is_clustered(self):
        W = weights_service.build_weights(lattice_centroids(20), 8)
        y = lattice_centroids(20)[:, 0]
        result = autocorr_service.moran_permutation_test(y, W, n_sims=999, seed=1)
        assert result.I > 0.5
        assert result.pseudo_p == pytest.approx(1 / 1000)
        assert result.expected == pytest.approx(-1 / 399)

    def test_ties_count_as_extreme(self, ring_weights):
        result = autocorr_service.moran_permutation_test([1.0, 2.0, 3.0, 4.0], ring_weights, n_sims=99, seed=4)
        assert result.n_extreme > 0
        assert result.pseudo_p == pytest.approx((result.n_extreme + 1) / 100)

    def test_same_seed_any_thread_count(self):
        W = weights_service.build_weights(lattice_centroids(8), 4)
        y = np.random.default_rng(2).poisson(3.0, 64).astype(float)
        one = autocorr_service.moran_permutation_test(y, W, n_sims=199, seed=9, threads=1)
        four = autocorr_service.moran_permutation_test(y, W, n_sims=199, seed=9, threads=4)
        assert one == four

    def test_invariant_under_affine_transform(self):
        W = weights_service.build_weights(lattice_centroids(9), 4)
        for r in range(replicates(100, 20)):
            rng = stream_rng(77, r)
            y = rng.poisson(4.0, 81).astype(float)
            a = rng.uniform(0.1, 50.0) * rng.choice([-1.0, 1.0])
            b = rng.uniform(-1000.0, 1000.0)
            assert autocorr_service.global_moran(a * y + b, W) == pytest.approx(
                autocorr_service.global_moran(y, W), rel=1e-9, abs=1e-12)

    def test_too_few_permutations(self, ring_weights):
        with pytest.raises(ParameterError):
            autocorr_service.moran_permutation_test([1.0, 2.0, 3.0, 4.0], ring_weights, n_sims=50)

    @pytest.mark.slow
    def test_iid_surfaces_rarely_significant(self):
        W = weights_service.build_weights(lattice_centroids(10), 8)
        n_rep = replicates(500, 200)
        significant = 0
        for r in range(n_rep):
            y = stream_rng(2024, r).normal(size=100)
            result = autocorr_service.moran_permutation_test(y, W, n_sims=99, seed=r)
            significant += result.pseudo_p <= 0.05
        assert significant / n_rep <= (0.08 if n_rep >= 500 else 0.10)

    def test_clustered_synthetic_city(self):
        boundary = synthetic_service.rectangle_boundary((X0, Y0), 20000.0, 20000.0)
        parents = synthetic_service.uniform_points(boundary, 3, stream_rng(5, 0))
        events = synthetic_service.clustered_points(boundary, parents, 1500, 1500.0, stream_rng(5, 1))
        fishnet = grid_service.build_fishnet(boundary, 1000.0)
        counts = grid_service.aggregate_points(fishnet, grid_service.PointLayer('Events', events)).values
        W = weights_service.build_weights(fishnet.centroids, 8)
        result = autocorr_service.moran_permutation_test(counts, W, n_sims=999, seed=3)
        assert result.pseudo_p == pytest.approx(0.001)


@pytest.mark.unit
class TestLocalMoran:

    def test_ring_values(self, ring_weights):
        result = autocorr_service.local_moran([1.0, 2.0, 3.0, 4.0], ring_weights)
        np.testing.assert_allclose(result.local_i, [-0.6, 0.2, 0.2, -0.6])
        assert result.local_i.sum() == pytest.approx(-0.8)

    def test_sum_equals_scaled_global(self):
        for r in range(100):
            rng = stream_rng(77, r)
            centroids = rng.uniform(0, 100, (30, 2))
            W = weights_service.build_weights(centroids, 4)
            y = rng.normal(size=30)
            local = autocorr_service.local_moran(y, W)
            assert local.local_i.sum() == pytest.approx(W.s0 * autocorr_service.global_moran(y, W), abs=1e-10)

    def test_expected_value_and_pvalues(self, lattice_weights):
        W = lattice_weights(6, 4)
        y = np.random.default_rng(1).normal(size=36)
        result = autocorr_service.local_moran(y, W)
        np.testing.assert_allclose(result.expected, -1 / 35)
        assert np.all((result.p >= 0) & (result.p <= 1))

    def test_permutation_pvalues(self, lattice_weights):
        W = lattice_weights(6, 4)
        y = np.random.default_rng(1).normal(size=36)
        first = autocorr_service.local_moran_permutation(y, W, n_sims=99, seed=3)
        second = autocorr_service.local_moran_permutation(y, W, n_sims=99, seed=3)
        np.testing.assert_array_equal(first.p, second.p)
        assert np.all(first.p >= 1 / 100) and np.all(first.p <= 1)
        assert first.method == 'permutation'

    def test_moran_scatter_slope_is_global(self, lattice_weights):
        W = lattice_weights(6, 4)
        y = np.random.default_rng(6).normal(size=36)
        x, lag = autocorr_service.moran_scatter(y, W)
        slope = float(x @ lag) / float(x @ x)
        assert slope == pytest.approx(autocorr_service.global_moran(y, W))


@pytest.mark.unit
class TestAdjustment:

    def test_bonferroni_scaling(self):
        np.testing.assert_allclose(autocorr_service.bonferroni_adjust([0.001, 0.5], m=10), [0.01, 1.0])

    def test_single_test_is_identity(self):
        np.testing.assert_allclose(autocorr_service.bonferroni_adjust([0.03], m=1), [0.03])

    def test_default_m_is_length(self):
        np.testing.assert_allclose(autocorr_service.bonferroni_adjust([0.01] * 4), [0.04] * 4)

    def test_neighbor_method(self):
        adjusted = autocorr_service.bonferroni_adjust([0.001, 0.001], method='neighbors', neighbor_counts=[8, 4])
        np.testing.assert_allclose(adjusted, [0.009, 0.005])

    def test_invalid_pvalues(self):
        with pytest.raises(ParameterError):
            autocorr_service.bonferroni_adjust([1.5])


@pytest.mark.unit
class TestClassification:

    def test_nothing_significant(self):
        y = np.array([1.0, 2.0, 3.0, 4.0])
        result = LocalMoranResult(local_i=np.zeros(4), p=np.ones(4), z=y - y.mean(), lag=np.ones(4),
                                  p_adj=np.ones(4))
        assert set(autocorr_service.classify_clusters(y, result)) == {constants.NOT_SIGNIFICANT}

    def test_quadrants(self):
        y = np.array([1.0, 1.0, 9.0, 9.0])
        lag = np.array([-2.0, 3.0, 3.0, -2.0])
        result = LocalMoranResult(local_i=np.zeros(4), p=np.full(4, 0.001), z=y - y.mean(), lag=lag,
                                  p_adj=np.full(4, 0.001))
        labels = autocorr_service.classify_clusters(y, result, alpha=0.05)
        assert labels == (constants.LOW_LOW, constants.LOW_HIGH, constants.HIGH_HIGH, constants.HIGH_LOW)

    def test_alpha_range(self):
        y = np.array([1.0, 2.0, 3.0])
        result = LocalMoranResult(local_i=np.zeros(3), p=np.ones(3), z=y, lag=y)
        with pytest.raises(ParameterError):
            autocorr_service.classify_clusters(y, result, alpha=1.0)

    def test_cluster_records(self, ring_weights):
        y = [1, 2, 3, 4]
        result = autocorr_service.analyse_clusters(y, ring_weights)
        records = autocorr_service.cluster_map_records(y, result)
        assert [r['cell_id'] for r in records] == [0, 1, 2, 3]
        assert set(records[0]) == {'cell_id', 'count', 'local_i', 'p', 'p_adj', 'label'}

    @pytest.mark.slow
    def test_planted_hotspot_recovered(self):
        boundary = synthetic_service.rectangle_boundary((X0, Y0), 20000.0, 20000.0)
        fishnet = grid_service.build_fishnet(boundary, 1000.0)
        W = weights_service.build_weights(fishnet.centroids, 8)
        parent = np.array([[X0 + 10000.0, Y0 + 10000.0]])
        mask = synthetic_service.hotspot_mask(fishnet, parent, 1.5 * 1500.0).astype(bool)

        recall, false_positive = [], []
        for seed in range(replicates(20, 5)):
            events = synthetic_service.clustered_points(boundary, parent, 1500, 1500.0, stream_rng(seed, 1))
            counts = grid_service.aggregate_points(fishnet, grid_service.PointLayer('Events', events)).values
            labels = np.array(autocorr_service.analyse_clusters(counts, W).labels)
            high = labels == constants.HIGH_HIGH
            recall.append(np.mean(high[mask]))
            false_positive.append(np.mean(high[~mask]))
        assert np.mean(recall) >= 0.9
        assert np.mean(false_positive) <= 0.05
