"""
Pipeline service - orchestrates a full risk-terrain run
- ingest -> features -> weights -> moran -> fit -> evaluate -> report
- Each stage failure is re-raised tagged with the stage name
- Every emitted file is listed in the manifest with its digest
"""

import logging
import platform
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Dict, List, Optional

import joblib
import matplotlib
import numpy as np
import pandas as pd
import scipy
import shapely

from ..repositories.layer_repository import LayerRepository
from ..repositories.report_repository import ReportRepository
from ..repositories.weights_repository import WeightsRepository
from ..utils import constants
from ..utils.errors import IngestError, RiskGridError
from ..utils.logging_utils import WarningLog
from ..utils.parallel import stream_rng
from . import (
    autocorr_service,
    eval_service,
    forest_service,
    grid_service,
    render_service,
    spatial_econ_service,
    synthetic_service,
    weights_service,
)
from .model_service import ModelService

logger = logging.getLogger(__name__)

SIMULATION_STREAM = 999


@dataclass
class RunReport:
    config_hash: str
    fishnet: Optional[grid_service.Fishnet] = None
    matrix: Optional[grid_service.FeatureMatrix] = None
    boundary: Optional[grid_service.Boundary] = None
    events: Optional[np.ndarray] = None
    simulated_events: Optional[np.ndarray] = None
    test_counts: Optional[np.ndarray] = None
    weights: Optional[weights_service.SpatialWeights] = None
    moran: Optional[autocorr_service.GlobalMoranResult] = None
    local: Optional[autocorr_service.LocalMoranResult] = None
    fits: Dict[str, object] = field(default_factory=dict)
    predictions: Dict[str, np.ndarray] = field(default_factory=dict)
    cv: Dict[str, eval_service.CvReport] = field(default_factory=dict)
    next_epoch: Dict[str, eval_service.CvReport] = field(default_factory=dict)
    importance: Optional[eval_service.ImportanceTable] = None
    files: Dict[str, str] = field(default_factory=dict)
    provenance: Dict[str, object] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)

    @property
    def counts(self):
        return self.matrix.response if self.matrix is not None else None


def library_versions():
    return {
        'python': platform.python_version(),
        'numpy': np.__version__,
        'scipy': scipy.__version__,
        'pandas': pd.__version__,
        'shapely': shapely.__version__,
        'matplotlib': matplotlib.__version__,
        'joblib': joblib.__version__,
    }


class PipelineService:
    """Runs the analysis stages for one PipelineConfig"""

    def __init__(self, config, reproducible=None, threads=None):
        self.config = config
        self.reproducible = config.reproducible if reproducible is None else bool(reproducible)
        self.threads = threads if threads is not None else config.threads
        self.output = ReportRepository(config.resolve(config.output_dir))
        self.layers = LayerRepository(config.base_dir)
        self.warning_log = WarningLog(logger)
        self.report = RunReport(config_hash=config.config_hash(), warnings=self.warning_log.messages)
        self._inputs = {}

    def _stage(self, name, func):
        logger.info(f"Stage {name}")
        try:
            return func()
        except RiskGridError as e:
            e.stage = name
            raise

    def run(self):
        """Full pipeline; returns the RunReport"""
        self._stage('ingest', self.ingest)
        self._stage('features', self.build_features)
        self._stage('weights', self.build_weights)
        self._stage('moran', self.analyse_autocorrelation)
        self._stage('fit', self.fit_models)
        self._stage('evaluate', self.evaluate)
        self._stage('report', self.write_report)
        return self.report

    def run_moran(self):
        """Autocorrelation only, on the feature matrix and weights of an earlier run"""
        self._stage('ingest', self.load_features)
        self._stage('weights', self.load_weights)
        self._stage('moran', self.analyse_autocorrelation)
        self._stage('report', self.write_manifest)
        return self.report

    def run_fit(self):
        """Models and evaluation tables on the feature matrix and weights of an earlier run"""
        self._stage('ingest', self.load_features)
        self._stage('weights', self.load_weights)
        self._stage('fit', self.fit_models)
        self._stage('evaluate', self.evaluate)
        self._stage('report', self.write_manifest)
        return self.report

    def run_report(self):
        """Maps and manifest from the tables of an earlier run"""
        self._stage('ingest', self.load_features)
        self._stage('ingest', self.load_run_tables)
        self._stage('report', self.write_report)
        return self.report

    # Stages

    def _layer_specs(self):
        if self.config.layers:
            return self.config.layers
        if self.config.synthetic is not None:
            return synthetic_service.layer_specs(self.config.synthetic)
        return []

    def ingest(self):
        config = self.config
        self.report.boundary = self.layers.load_boundary(config.resolve(config.boundary_path))
        self._inputs['events'] = self.layers.load_point_layer(config.resolve(config.events_path), 'events')
        self.report.events = self._inputs['events'].points
        if config.test_events_path:
            path = config.resolve(config.test_events_path)
            if path.exists():
                self._inputs['test_events'] = self.layers.load_point_layer(path, 'events')
            else:
                self.warning_log.warn(f"Test epoch file {path} not found; next-epoch scoring skipped")

        layer_dir = config.resolve(config.layer_dir)
        self._inputs['specs'] = self._layer_specs()
        self._inputs['layers'] = {
            spec.name: self.layers.load_point_layer(layer_dir / (spec.path or f"{spec.name}.csv"), spec.name)
            for spec in self._inputs['specs']
        }
        logger.info(f"Ingested {len(self.report.events)} events and {len(self._inputs['layers'])} layers")

    def build_features(self):
        fishnet = grid_service.build_fishnet(self.report.boundary, self.config.cell_size)
        if self.config.min_coverage > 0:
            fishnet = grid_service.filter_by_coverage(fishnet, self.config.min_coverage)
        agg, nn, ed, soc, nn_k = grid_service.layer_families(self._inputs['specs'], self._inputs['layers'])
        matrix = grid_service.assemble_feature_matrix(fishnet, agg, nn, ed, response=self._inputs['events'],
                                                      social_layers=soc, nn_k=nn_k)
        self.warning_log.extend(matrix.warnings)
        self.report.fishnet = fishnet
        self.report.matrix = matrix
        if 'test_events' in self._inputs:
            self.report.test_counts = grid_service.aggregate_points(fishnet, self._inputs['test_events']).values
        self.output.export_feature_matrix(matrix, fishnet)

    def load_features(self):
        self.report.fishnet, self.report.matrix = self.output.load_feature_matrix(self.config.cell_size)

    def build_weights(self):
        self.report.weights = weights_service.build_weights(self.report.fishnet.centroids, self.config.k_neighbors)
        WeightsRepository(self.output.root).save(constants.WEIGHTS_FILE, self.report.weights)

    def load_weights(self):
        if self.output.exists(constants.WEIGHTS_FILE):
            self.report.weights = WeightsRepository(self.output.root).load(constants.WEIGHTS_FILE)
        else:
            self.build_weights()

    def analyse_autocorrelation(self):
        config = self.config
        counts = self.report.counts
        W = self.report.weights
        self.report.moran = autocorr_service.moran_permutation_test(
            counts, W, n_sims=config.n_sims, seed=config.seeds.permutation, threads=self.threads,
        )
        self.report.local = autocorr_service.analyse_clusters(
            counts, W, alpha=config.alpha, method=config.local_p_method, adjust=config.bonferroni_method,
            n_sims=config.n_sims, seed=config.seeds.permutation,
        )
        self.output.put_json(constants.MORAN_FILE, self.report.moran.to_dict())
        records = autocorr_service.cluster_map_records(counts, self.report.local)
        self.output.write_clusters(self.report.fishnet, records)

    def _forest_params(self):
        forest = self.config.forest
        return {'B': forest.n_trees, 'm': forest.m, 'min_node': forest.min_node, 'seed': self.config.seeds.forest}

    def fit_models(self):
        matrix = self.report.matrix
        X, y = matrix.values, matrix.response.astype(float)
        models = ModelService(self.report.weights, forest_params=self._forest_params(), threads=self.threads)
        for model in [m for m in constants.MODEL_KEYS if m in self.config.models]:
            fit, prediction = models.fit(model, X, y, matrix.names)
            self.warning_log.extend(getattr(fit, 'warnings', []))
            self.report.fits[model] = fit
            self.report.predictions[model] = prediction
            for name, table in models.tables(model, fit).items():
                if isinstance(table, str):
                    self.output.put_text(name, table)
                else:
                    self.output.write_table(name, table)

        if 'sdem' in self.report.fits and 'manski' in self.report.fits:
            lr = spatial_econ_service.likelihood_ratio(self.report.fits['manski'], self.report.fits['sdem'])
            logger.info(f"Likelihood ratio Manski vs SDEM: {lr:.4f}")

    def evaluate(self):
        config = self.config
        matrix = self.report.matrix
        y = matrix.response.astype(float)
        for model, fit in self.report.fits.items():
            if model in constants.CROSS_VALIDATED_MODELS:
                report = eval_service.cross_validate(
                    model, matrix.values, y, k=config.cv_folds, seed=config.seeds.cv, names=matrix.names,
                    scheme=config.cv_scheme, centroids=self.report.fishnet.centroids,
                    forest_params=self._forest_params(), threads=self.threads,
                )
            else:
                report = eval_service.single_fit_report(model, y, self.report.predictions[model])
            self.warning_log.extend(f"{model}: {note}" for note in report.notes)
            self.report.cv[model] = report

        self.output.write_table(constants.TABLE1_FILE, eval_service.table1_frame(self.report.cv))
        self.output.write_table(constants.TABLE2_FILE, eval_service.table2_frame(self.report.cv))

        self.report.importance = eval_service.importance_table(self.report.fits, k=config.top_k)
        self.output.write_table(constants.TABLE4_FILE, eval_service.table4_frame(self.report.importance))
        self.output.write_table(constants.PREDICTIONS_FILE,
                                eval_service.prediction_frame(matrix.response, self.report.predictions))

        if self.report.test_counts is not None:
            self.report.next_epoch = eval_service.evaluate_epoch(self.report.predictions, self.report.test_counts)
            self.output.write_table(constants.TABLE1_EPOCH_FILE, eval_service.table1_frame(self.report.next_epoch))

    def load_run_tables(self):
        """Cluster labels and predictions written by earlier stages"""
        clusters = self.output.get_frame(constants.CLUSTERS_CSV_FILE).sort_values('cell_id')
        self.report.local = autocorr_service.LocalMoranResult(
            local_i=clusters['local_i'].to_numpy(dtype=float),
            p=clusters['p'].to_numpy(dtype=float),
            z=np.zeros(len(clusters)),
            lag=np.zeros(len(clusters)),
            p_adj=clusters['p_adj'].to_numpy(dtype=float),
            labels=tuple(clusters['label']),
        )
        if self.output.exists(constants.PREDICTIONS_FILE):
            frame = self.output.get_frame(constants.PREDICTIONS_FILE).sort_values('cell_id')
            self.report.predictions = {m: frame[m].to_numpy(dtype=float)
                                       for m in constants.MODEL_KEYS if m in frame.columns}
        try:
            self.report.boundary = self.layers.load_boundary(self.config.resolve(self.config.boundary_path))
            self.report.events = self.layers.load_point_layer(
                self.config.resolve(self.config.events_path), 'events').points
        except IngestError as e:
            self.warning_log.warn(f"Incident dot maps skipped: {e.message}")
            self.report.boundary = self.report.events = None

    def write_report(self):
        report = self.report
        if report.boundary is not None and report.events is not None:
            rng = stream_rng(self.config.seeds.global_seed, SIMULATION_STREAM)
            report.simulated_events = synthetic_service.uniform_points(report.boundary, len(report.events), rng)
        render_service.render_maps(report, self.output, reproducible=self.reproducible)
        self.output.put_json(constants.RUN_SUMMARY_FILE, self.summary())
        self.write_manifest()

    def summary(self):
        report = self.report
        models = {}
        for model, fit in report.fits.items():
            entry = {}
            for attribute in ('loglik', 'converged', 'iterations', 'lam', 'delta', 'sigma2', 'condition'):
                if hasattr(fit, attribute):
                    entry[attribute] = getattr(fit, attribute)
            if isinstance(fit, forest_service.Forest):
                entry.update(fit.metadata())
            models[model] = entry
        return {
            'config_hash': report.config_hash,
            'n_cells': report.fishnet.n if report.fishnet is not None else None,
            'features': report.matrix.names if report.matrix is not None else [],
            'dropped_columns': report.matrix.dropped_columns if report.matrix is not None else [],
            'moran': report.moran.to_dict() if report.moran is not None else None,
            'models': models,
            'cv': {m: {'mean': r.mean, 'sd': r.sd, 'leak_free': r.leak_free, 'cross_validated': r.cross_validated}
                   for m, r in report.cv.items()},
            'common_features': report.importance.common if report.importance is not None else [],
            'warnings': list(report.warnings),
        }

    def write_manifest(self):
        seeds = self.config.seeds
        provenance = {
            'config_hash': self.report.config_hash,
            'seeds': {'global': seeds.global_seed, 'cv': seeds.cv, 'forest': seeds.forest,
                      'permutation': seeds.permutation},
            'versions': library_versions(),
        }
        if not self.reproducible:
            provenance['timestamp'] = datetime.now(timezone.utc).isoformat()
        self.report.provenance = provenance
        self.report.files = self.output.write_manifest(provenance)
        logger.info(f"Run complete: {len(self.report.files)} files in {self.output.root}")


def run_pipeline(config, reproducible=None, threads=None):
    """Execute the full pipeline for a config"""
    return PipelineService(config, reproducible=reproducible, threads=threads).run()
