"""Poisson GLM fitted by IRLS"""

import numpy as np
import pytest

from riskgrid.services import glm_service
from riskgrid.services.glm_service import PoissonFit
from riskgrid.utils.errors import CollinearityError, ParameterError, SchemaMismatchError
from riskgrid.utils.parallel import stream_rng
from tests.conftest import replicates


def simulated(seed, n=2000, beta=(0.5, 0.3)):
    rng = stream_rng(seed, 0)
    x = rng.normal(size=n)
    y = rng.poisson(np.exp(beta[0] + beta[1] * x))
    return x.reshape(-1, 1), y


def fixed_fit(beta, se):
    beta = np.asarray(beta, dtype=float)
    se = np.asarray(se, dtype=float)
    return PoissonFit(names=[f"x{j}" for j in range(len(beta) - 1)], beta=beta, se=se,
                      z=np.zeros_like(se), p=np.ones_like(se), iterations=1, converged=True, loglik=0.0)


@pytest.mark.unit
class TestFit:

    def test_intercept_only_is_log_mean(self):
        fit = glm_service.fit_poisson(np.zeros((3, 0)), [1, 2, 3])
        assert fit.beta[0] == pytest.approx(np.log(2.0), abs=1e-10)
        assert fit.converged
        assert fit.terms == ['(Intercept)']

    def test_all_zero_response_is_boundary(self):
        fit = glm_service.fit_poisson(np.zeros((4, 0)), [0, 0, 0, 0])
        assert fit.boundary
        assert not fit.converged
        assert any('boundary' in w for w in fit.warnings)

    def test_recovers_coefficients(self):
        X, y = simulated(1)
        fit = glm_service.fit_poisson(X, y, names=['x'])
        assert fit.converged
        assert abs(fit.beta[0] - 0.5) < 3 * fit.se[0]
        assert abs(fit.beta[1] - 0.3) < 3 * fit.se[1]

        design = np.column_stack([np.ones(len(y)), X[:, 0]])
        score = design.T @ (y - glm_service.predict_poisson(fit, X))
        assert np.max(np.abs(score)) < 1e-6

    def test_loglik_never_decreases(self):
        X, y = simulated(2, n=500)
        fit = glm_service.fit_poisson(X, y)
        assert np.all(np.diff(fit.loglik_path) >= -1e-9)

    def test_mean_prediction_matches_mean_response(self):
        X, y = simulated(3, n=500)
        fit = glm_service.fit_poisson(X, y)
        assert glm_service.predict_poisson(fit, X).mean() == pytest.approx(y.mean(), abs=1e-8)

    def test_collinear_columns_named(self):
        x = np.random.default_rng(0).normal(size=50)
        with pytest.raises(CollinearityError) as excinfo:
            glm_service.fit_poisson(np.column_stack([x, 2 * x]), np.ones(50, dtype=int), names=['a', 'b'])
        assert 'a' in str(excinfo.value) or 'b' in str(excinfo.value)

    def test_constant_column(self):
        X = np.column_stack([np.ones(10), np.arange(10.0)])
        with pytest.raises(CollinearityError):
            glm_service.fit_poisson(X, np.arange(10), names=['c', 'x'])

    def test_non_integer_response(self):
        with pytest.raises(ParameterError):
            glm_service.fit_poisson(np.arange(3.0).reshape(-1, 1), [0.5, 1.0, 2.0])

    def test_negative_response(self):
        with pytest.raises(ParameterError):
            glm_service.fit_poisson(np.arange(3.0).reshape(-1, 1), [-1, 1, 2])

    def test_predictions_unchanged_under_affine_rescaling(self):
        for seed in range(replicates(40, 8)):
            rng = stream_rng(seed, 1)
            X = rng.normal(size=(400, 2))
            y = rng.poisson(np.exp(0.4 + 0.3 * X[:, 0] - 0.2 * X[:, 1]))
            scale = rng.uniform(0.1, 100.0, 2) * rng.choice([-1.0, 1.0], 2)
            shift = rng.uniform(-1e4, 1e4, 2)
            rescaled = X * scale + shift
            fit = glm_service.fit_poisson(X, y, names=['a', 'b'])
            refit = glm_service.fit_poisson(rescaled, y, names=['a', 'b'])
            np.testing.assert_allclose(glm_service.predict_poisson(refit, rescaled),
                                       glm_service.predict_poisson(fit, X), rtol=1e-6)
            assert refit.loglik == pytest.approx(fit.loglik, rel=1e-8)
            np.testing.assert_allclose(refit.beta[1:] * scale, fit.beta[1:], rtol=1e-6)

    @pytest.mark.slow
    def test_coefficients_within_three_se(self):
        n_rep = replicates(100, 30)
        covered = 0
        for seed in range(n_rep):
            X, y = simulated(100 + seed)
            fit = glm_service.fit_poisson(X, y)
            covered += bool(np.all(np.abs(fit.beta - np.array([0.5, 0.3])) < 3 * fit.se))
        assert covered / n_rep >= 0.95


@pytest.mark.unit
class TestPredictAndInference:

    def test_zero_coefficients_predict_one(self):
        np.testing.assert_allclose(glm_service.predict_poisson(fixed_fit([0.0], [1.0]), np.zeros((5, 0))), 1.0)

    def test_log_two_intercept(self):
        fit = fixed_fit([np.log(2.0), 0.0, 0.0], [1.0, 1.0, 1.0])
        X = np.random.default_rng(0).normal(size=(4, 2))
        np.testing.assert_allclose(glm_service.predict_poisson(fit, X), 2.0)

    def test_wrong_column_count(self):
        with pytest.raises(SchemaMismatchError):
            glm_service.predict_poisson(fixed_fit([0.0, 1.0], [1.0, 1.0]), np.zeros((3, 2)))

    def test_wrong_names(self):
        with pytest.raises(SchemaMismatchError):
            glm_service.predict_poisson(fixed_fit([0.0, 1.0], [1.0, 1.0]), np.zeros((3, 1)), names=['other'])

    def test_wald_pvalues(self):
        p = glm_service.wald_pvalues(fixed_fit([0.0, 1.959964, -1.959964], [1.0, 1.0, 1.0]))
        assert p[0] == pytest.approx(1.0)
        assert p[1] == pytest.approx(0.05, abs=1e-6)
        assert p[1] == p[2]

    def test_zero_se_gives_missing_pvalue(self):
        p = glm_service.wald_pvalues(fixed_fit([0.0, 1.0], [1.0, 0.0]))
        assert np.isnan(p[1])

    def test_coefficient_table(self):
        X, y = simulated(4, n=300)
        table = glm_service.coefficient_table(glm_service.fit_poisson(X, y, names=['x']))
        assert list(table.columns) == ['term', 'estimate', 'se', 'z', 'p']
        assert list(table['term']) == ['(Intercept)', 'x']
