"""
Model service - one entry point for the four count models
- Poisson GLM and random forest need only the feature matrix
- SDEM and Manski also need the spatial weights and their spectrum
- Per-model output tables: coefficients, forest importance, first-tree dump
"""

import logging

from ..utils import constants
from ..utils.errors import ParameterError
from . import forest_service, glm_service, spatial_econ_service, weights_service

logger = logging.getLogger(__name__)


class ModelService:
    """Fits, predicts and tabulates the count models on one feature matrix"""

    def __init__(self, weights=None, spectrum=None, forest_params=None, threads=None):
        self.weights = weights
        self._spectrum = spectrum
        self.forest_params = dict(forest_params or {})
        self.threads = threads

    @property
    def spectrum(self):
        if self._spectrum is None:
            self._spectrum = weights_service.spectrum(self.weights)
        return self._spectrum

    def _check(self, model):
        if model not in constants.MODEL_KEYS:
            raise ParameterError(f"Unknown model {model!r}; use {constants.MODEL_KEYS}", stage='models')
        if model in constants.SPATIAL_MODELS and self.weights is None:
            raise ParameterError(f"Model {model} needs spatial weights", stage='models')

    def fit(self, model, X, y, names=None):
        """Estimate one model; returns (fit, in-sample prediction per cell)"""
        self._check(model)
        logger.info(f"Fitting {model}")
        if model == 'poisson':
            fit = glm_service.fit_poisson(X, y, names=names)
        elif model == 'forest':
            fit = forest_service.fit_forest(X, y, names=names, threads=self.threads, **self.forest_params)
        elif model == 'sdem':
            fit = spatial_econ_service.fit_sdem(X, y, self.weights, names=names, spec=self.spectrum)
        else:
            fit = spatial_econ_service.fit_manski(X, y, self.weights, names=names, spec=self.spectrum,
                                                  threads=self.threads)
        return fit, self.predict(model, fit, X)

    def predict(self, model, fit, X):
        self._check(model)
        if model == 'poisson':
            return glm_service.predict_poisson(fit, X)
        if model == 'forest':
            return forest_service.predict_forest(fit, X)
        return spatial_econ_service.predict_spatial(fit, W=self.weights)

    def tables(self, model, fit):
        """File name -> DataFrame or text for the per-model outputs"""
        self._check(model)
        if model == 'forest':
            return {
                constants.IMPORTANCE_FILE: forest_service.importance_frame(fit),
                constants.FOREST_DUMP_FILE: forest_service.dump_tree(fit.trees[0], fit.names),
            }
        if model == 'poisson':
            return {f"coefficients_{model}.csv": glm_service.coefficient_table(fit)}
        return {f"coefficients_{model}.csv": spatial_econ_service.coefficient_table(fit)}
