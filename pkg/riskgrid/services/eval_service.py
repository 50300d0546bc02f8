"""
Evaluation service
- Forecast error metrics (MAPE, MAE, RMSE) and goodness of fit (R^2, log deviance)
- k-fold cross-validation harness for the Poisson GLM and the random forest
- Cross-model feature-importance ranking
- Report tables: accuracy, goodness of fit, top features, predicted vs observed
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from scipy.special import gammaln

from ..utils import constants
from ..utils.errors import CollinearityError, LengthMismatchError, ParameterError, UndefinedMetricError
from ..utils.parallel import run_parallel, stream_rng
from . import forest_service, glm_service

logger = logging.getLogger(__name__)

METRIC_NAMES = ('mape', 'mae', 'rmse', 'r2', 'log_dev')


def _pair(actual, forecast):
    actual = np.asarray(actual, dtype=float).reshape(-1)
    forecast = np.asarray(forecast, dtype=float).reshape(-1)
    if len(actual) != len(forecast):
        raise LengthMismatchError(f"actual has {len(actual)} values, forecast {len(forecast)}", stage='eval')
    if len(actual) == 0:
        raise UndefinedMetricError("Metrics need at least one value")
    return actual, forecast


def mape(actual, forecast, return_skipped=False):
    """Mean absolute percentage error over cells with nonzero actuals, times 100"""
    actual, forecast = _pair(actual, forecast)
    used = actual != 0
    skipped = int(np.count_nonzero(~used))
    if not np.any(used):
        raise UndefinedMetricError("MAPE is undefined when every actual value is zero")
    value = float(np.mean(np.abs(actual[used] - forecast[used]) / np.abs(actual[used])) * 100.0)
    return (value, skipped) if return_skipped else value


def mae(actual, forecast):
    actual, forecast = _pair(actual, forecast)
    return float(np.mean(np.abs(actual - forecast)))


def rmse(actual, forecast):
    actual, forecast = _pair(actual, forecast)
    return float(np.sqrt(np.mean((forecast - actual) ** 2)))


def r_squared(actual, predicted):
    """1 - SS_res / SS_tot; negative when the model is worse than the mean"""
    actual, predicted = _pair(actual, predicted)
    ss_tot = float(np.sum((actual - actual.mean()) ** 2))
    if ss_tot == 0.0:
        raise UndefinedMetricError("R^2 is undefined for a constant response")
    return 1.0 - float(np.sum((actual - predicted) ** 2)) / ss_tot


def log_deviance(actual, predicted_rate, warnings=None):
    """Mean negative Poisson log-probability: mean(rate - y ln rate + ln y!)"""
    actual, rate = _pair(actual, predicted_rate)
    if np.any(actual < 0):
        raise ParameterError("log deviance needs non-negative counts", stage='eval')
    bad = ~(rate > 0)
    if np.any(bad):
        message = (f"{int(np.count_nonzero(bad))} non-positive predicted rates clamped to "
                   f"{constants.MIN_RATE:g} for log deviance")
        logger.warning(message)
        if warnings is not None:
            warnings.append(message)
        rate = np.where(bad, constants.MIN_RATE, rate)
    return float(np.mean(rate - actual * np.log(rate) + gammaln(actual + 1.0)))


@dataclass
class MetricSet:
    mape: float
    mae: float
    rmse: float
    r2: float
    log_dev: float
    n_used: int
    n_skipped_mape: int
    notes: List[str] = field(default_factory=list)

    def as_dict(self):
        return {name: getattr(self, name) for name in METRIC_NAMES}


def metric_set(actual, forecast, rate=None):
    """
    All five metrics for one prediction vector.

    rate defaults to the forecast itself; undefined metrics become NaN with a note.
    """
    actual, forecast = _pair(actual, forecast)
    rate = forecast if rate is None else np.asarray(rate, dtype=float)
    notes = []
    try:
        mape_value, skipped = mape(actual, forecast, return_skipped=True)
    except UndefinedMetricError as e:
        mape_value, skipped = float('nan'), len(actual)
        notes.append(e.message)
    try:
        r2 = r_squared(actual, forecast)
    except UndefinedMetricError as e:
        r2 = float('nan')
        notes.append(e.message)
    return MetricSet(
        mape=mape_value,
        mae=mae(actual, forecast),
        rmse=rmse(actual, forecast),
        r2=r2,
        log_dev=log_deviance(actual, rate, warnings=notes),
        n_used=len(actual),
        n_skipped_mape=skipped,
        notes=notes,
    )


def make_folds(n, k=constants.DEFAULT_CV_FOLDS, seed=0):
    """Random balanced partition of n cells into k folds (sizes floor/ceil of n/k)"""
    if k < 2:
        raise ParameterError(f"Cross-validation needs k >= 2 folds, got {k}", stage='eval')
    if k > n:
        raise ParameterError(f"Cannot split {n} cells into {k} folds", stage='eval')
    perm = stream_rng(seed, 0).permutation(n)
    folds = np.empty(n, dtype=np.int64)
    folds[perm] = np.arange(n) % k
    return folds


def make_spatial_folds(centroids, k=constants.DEFAULT_CV_FOLDS):
    """Contiguous column-block folds: cells ordered west to east, then cut into k runs"""
    centroids = np.asarray(centroids, dtype=float).reshape(-1, 2)
    n = len(centroids)
    if k < 2 or k > n:
        raise ParameterError(f"Cannot split {n} cells into {k} spatial blocks", stage='eval')
    order = np.lexsort((centroids[:, 1], centroids[:, 0]))
    folds = np.empty(n, dtype=np.int64)
    for fold, block in enumerate(np.array_split(order, k)):
        folds[block] = fold
    return folds


@dataclass
class CvReport:
    model: str
    folds: List[MetricSet]
    mean: Dict[str, float]
    sd: Dict[str, float]
    seed: Optional[int] = None
    assignment: Optional[np.ndarray] = None
    predictions: Optional[np.ndarray] = None
    leak_free: bool = True
    cross_validated: bool = True
    notes: List[str] = field(default_factory=list)

    @property
    def k(self):
        return len(self.folds)


def _summarize(folds):
    mean, sd = {}, {}
    for name in METRIC_NAMES:
        values = np.array([getattr(f, name) for f in folds], dtype=float)
        finite = values[np.isfinite(values)]
        mean[name] = float(finite.mean()) if len(finite) else float('nan')
        sd[name] = float(finite.std(ddof=1)) if len(finite) >= 2 else float('nan')
    return mean, sd


def _failed_metrics(n, note):
    nan = float('nan')
    return MetricSet(mape=nan, mae=nan, rmse=nan, r2=nan, log_dev=nan, n_used=0, n_skipped_mape=n, notes=[note])


def _drop_constant(X_train, names):
    keep = np.ptp(X_train, axis=0) > 0 if X_train.shape[1] else np.zeros(0, dtype=bool)
    return keep, [name for name, k in zip(names, keep) if not k]


def _fit_predict(model, X_train, y_train, X_test, names, forest_params, fold):
    """Train on one fold's training cells and predict its held-out cells"""
    notes = []
    if model == 'poisson':
        keep, dropped = _drop_constant(X_train, names)
        if dropped:
            notes.append(f"fold {fold}: dropped training-constant columns {', '.join(dropped)}")
        fit = glm_service.fit_poisson(X_train[:, keep], y_train, names=[n for n, k in zip(names, keep) if k])
        notes.extend(f"fold {fold}: {w}" for w in fit.warnings)
        return glm_service.predict_poisson(fit, X_test[:, keep]), notes
    if model == 'forest':
        params = dict(forest_params or {})
        forest = forest_service.fit_forest(X_train, y_train, names=names, threads=1, **params)
        return forest_service.predict_forest(forest, X_test), notes
    raise ParameterError(f"Model {model!r} is not cross-validated; use {constants.CROSS_VALIDATED_MODELS}",
                         stage='eval')


def cross_validate(model, X, y, k=constants.DEFAULT_CV_FOLDS, seed=0, names=None, scheme='random',
                   centroids=None, forest_params=None, threads=None):
    """
    k-fold cross-validation of the Poisson GLM or the random forest.

    Folds train in parallel; every fold's metrics are computed on its held-out
    cells only and the per-metric mean/SD are reduced in fold order.
    """
    if model not in constants.CROSS_VALIDATED_MODELS:
        raise ParameterError(f"Model {model!r} is not cross-validated; use {constants.CROSS_VALIDATED_MODELS}",
                             stage='eval')
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    X = X.reshape(len(y), -1) if X.size else np.zeros((len(y), 0))
    names = list(names) if names is not None else [f"x{j}" for j in range(X.shape[1])]

    if scheme == 'blocked':
        if centroids is None:
            raise ParameterError("Blocked cross-validation needs cell centroids", stage='eval')
        assignment = make_spatial_folds(centroids, k)
    elif scheme == 'random':
        assignment = make_folds(len(y), k, seed)
    else:
        raise ParameterError(f"Unknown cv scheme {scheme!r}; use {constants.CV_SCHEMES}", stage='eval')

    def run_fold(fold):
        test = np.flatnonzero(assignment == fold)
        train = np.flatnonzero(assignment != fold)
        leak = np.intersect1d(train, test).size > 0
        try:
            prediction, notes = _fit_predict(model, X[train], y[train], X[test], names, forest_params, fold)
        except CollinearityError as e:
            note = f"fold {fold}: fit failed, metrics set to NaN ({e.message})"
            return test, np.full(len(test), np.nan), _failed_metrics(len(test), note), [note], leak
        metrics = metric_set(y[test], prediction)
        notes.extend(f"fold {fold}: {note}" for note in metrics.notes)
        return test, prediction, metrics, notes, leak

    results = run_parallel(run_fold, range(k), threads)

    predictions = np.empty(len(y))
    folds, notes, leak_free = [], [], True
    for test, prediction, metrics, fold_notes, leak in results:
        predictions[test] = prediction
        folds.append(metrics)
        notes.extend(fold_notes)
        leak_free = leak_free and not leak
    for note in notes:
        logger.warning(f"{model} CV: {note}")

    mean, sd = _summarize(folds)
    logger.info(f"{model} {k}-fold CV: MAE {mean['mae']:.4f} (sd {sd['mae']:.4f}), "
                f"RMSE {mean['rmse']:.4f} (sd {sd['rmse']:.4f})")
    return CvReport(model=model, folds=folds, mean=mean, sd=sd, seed=int(seed), assignment=assignment,
                    predictions=predictions, leak_free=leak_free, notes=notes)


def single_fit_report(model, actual, forecast, rate=None):
    """Report for a model scored without cross-validation; SD is NA"""
    metrics = metric_set(actual, forecast, rate)
    mean = metrics.as_dict()
    sd = {name: float('nan') for name in METRIC_NAMES}
    return CvReport(model=model, folds=[metrics], mean=mean, sd=sd, predictions=np.asarray(forecast, dtype=float),
                    cross_validated=False, notes=list(metrics.notes))


def evaluate_epoch(predictions, actual_next):
    """Score each model's cell predictions against the next epoch's counts"""
    return {model: single_fit_report(model, actual_next, prediction)
            for model, prediction in predictions.items()}


@dataclass
class ImportanceTable:
    ranked: Dict[str, List[tuple]]
    common: List[str]
    k: int


def _parametric_ranking(fit):
    excluded = {'(Intercept)', 'lambda', 'delta'}
    rows = []
    for term, p in zip(fit.terms, fit.p):
        if term in excluded or not np.isfinite(p):
            continue
        rows.append((term, -math.log10(max(float(p), constants.MIN_PVALUE))))
    return rows


def importance_table(fits, k=constants.DEFAULT_TOP_K):
    """
    Per-model top-k features in decreasing significance, plus the features
    common to every model's top-k list.

    Parametric fits rank by -log10 p (intercept and spatial parameters excluded,
    lag_ terms kept as their own entries); the forest ranks by impurity importance.
    """
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}", stage='eval')
    ranked = {}
    for model in [m for m in constants.MODEL_KEYS if m in fits] + [m for m in fits if m not in constants.MODEL_KEYS]:
        fit = fits[model]
        if isinstance(fit, forest_service.Forest):
            rows = [(name, score) for name, score, _ in forest_service.forest_importance(fit)]
        else:
            rows = _parametric_ranking(fit)
        rows.sort(key=lambda item: (-item[1], item[0]))
        ranked[model] = rows[:k]

    sets = [{name for name, _ in rows} for rows in ranked.values()]
    common = sorted(set.intersection(*sets)) if sets else []
    logger.info(f"Features common to every top-{k} list: {common}")
    return ImportanceTable(ranked=ranked, common=common, k=int(k))


def _ordered(reports):
    return [m for m in constants.MODEL_KEYS if m in reports] + [m for m in reports if m not in constants.MODEL_KEYS]


def table1_frame(reports):
    """model,mape_mean,mape_sd,mae_mean,mae_sd,rmse_mean,rmse_sd"""
    rows = []
    for model in _ordered(reports):
        r = reports[model]
        rows.append({
            'model': model,
            'mape_mean': r.mean['mape'], 'mape_sd': r.sd['mape'],
            'mae_mean': r.mean['mae'], 'mae_sd': r.sd['mae'],
            'rmse_mean': r.mean['rmse'], 'rmse_sd': r.sd['rmse'],
        })
    return pd.DataFrame(rows, columns=['model', 'mape_mean', 'mape_sd', 'mae_mean', 'mae_sd',
                                       'rmse_mean', 'rmse_sd'])


def table2_frame(reports):
    """model,r2_mean,r2_sd,logdev_mean,logdev_sd"""
    rows = [
        {
            'model': model,
            'r2_mean': reports[model].mean['r2'], 'r2_sd': reports[model].sd['r2'],
            'logdev_mean': reports[model].mean['log_dev'], 'logdev_sd': reports[model].sd['log_dev'],
        }
        for model in _ordered(reports)
    ]
    return pd.DataFrame(rows, columns=['model', 'r2_mean', 'r2_sd', 'logdev_mean', 'logdev_sd'])


def table4_frame(importance):
    """rank,<model columns>; shorter lists are padded with blanks"""
    models = list(importance.ranked)
    depth = max((len(rows) for rows in importance.ranked.values()), default=0)
    data = {'rank': list(range(1, depth + 1))}
    for model in models:
        names = [name for name, _ in importance.ranked[model]]
        data[model] = names + [''] * (depth - len(names))
    return pd.DataFrame(data, columns=['rank'] + models)


def prediction_frame(actual, predictions, cell_ids=None):
    """Observed count and each model's prediction per cell"""
    actual = np.asarray(actual)
    frame = pd.DataFrame({'cell_id': np.arange(len(actual)) if cell_ids is None else cell_ids,
                          'observed': actual})
    for model in _ordered(predictions):
        frame[model] = np.asarray(predictions[model], dtype=float)
    return frame
