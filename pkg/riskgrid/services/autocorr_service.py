"""
Spatial autocorrelation service
- Global Moran's I with permutation-bootstrap pseudo p-values
- Local Moran's I (LISA) with analytical or conditional-permutation p-values
- Bonferroni adjustment and HighHigh/LowLow/HighLow/LowHigh classification
"""

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.stats import norm

from ..utils import constants
from ..utils.errors import LengthMismatchError, ParameterError, ZeroVarianceError
from ..utils.parallel import chunked, get_thread_count, run_parallel, stream_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GlobalMoranResult:
    I: float
    expected: float
    pseudo_p: float
    n_sims: int
    seed: int
    alternative: str = 'greater'
    n_extreme: int = 0
    sim_mean: float = float('nan')
    sim_sd: float = float('nan')

    def to_dict(self):
        return {
            'I': self.I,
            'expected': self.expected,
            'pseudo_p': self.pseudo_p,
            'n_sims': self.n_sims,
            'n_extreme': self.n_extreme,
            'seed': self.seed,
            'alternative': self.alternative,
            'sim_mean': self.sim_mean,
            'sim_sd': self.sim_sd,
        }


@dataclass(frozen=True)
class LocalMoranResult:
    local_i: np.ndarray
    p: np.ndarray
    z: np.ndarray
    lag: np.ndarray
    expected: Optional[np.ndarray] = None
    variance: Optional[np.ndarray] = None
    p_adj: Optional[np.ndarray] = None
    labels: Optional[tuple] = None
    method: str = 'analytical'


def _centered(y, W):
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or len(y) != W.n:
        raise LengthMismatchError(f"y has length {len(y)} but W covers {W.n} cells", stage='autocorr')
    if len(y) < 3:
        raise LengthMismatchError("Moran's I needs at least 3 cells", stage='autocorr')
    z = y - y.mean()
    denom = float(z @ z)
    if denom == 0.0:
        raise ZeroVarianceError("Moran's I is undefined for a constant variable")
    return z, denom


def _moran_from_centered(z, denom, W):
    return (W.n / W.s0) * float(z @ W.lag(z)) / denom


def global_moran(y, W):
    """Global Moran's I = (n/S0) * sum_ij w_ij z_i z_j / sum_i z_i^2"""
    z, denom = _centered(y, W)
    return _moran_from_centered(z, denom, W)


def _count_extreme(simulated, observed, expected, alternative):
    if alternative == 'greater':
        return int(np.count_nonzero(simulated >= observed))
    if alternative == 'less':
        return int(np.count_nonzero(simulated <= observed))
    return int(np.count_nonzero(np.abs(simulated - expected) >= np.abs(observed - expected)))


def moran_permutation_test(y, W, n_sims=constants.DEFAULT_N_SIMS, seed=0, alternative='greater', threads=None):
    """
    Permutation bootstrap for global Moran's I.

    Each replicate relabels all n values with its own random stream keyed by
    (seed, replicate), so the pseudo p-value does not depend on thread count.
    """
    if n_sims < constants.MIN_N_SIMS:
        raise ParameterError(f"n_sims must be at least {constants.MIN_N_SIMS}, got {n_sims}", stage='autocorr')
    if alternative not in constants.ALTERNATIVES:
        raise ParameterError(f"alternative must be one of {constants.ALTERNATIVES}", stage='autocorr')

    z, denom = _centered(y, W)
    observed = _moran_from_centered(z, denom, W)
    expected = -1.0 / (W.n - 1)

    def run_chunk(indices):
        out = np.empty(len(indices))
        for pos, r in enumerate(indices):
            permuted = stream_rng(seed, r).permutation(z)
            out[pos] = _moran_from_centered(permuted, denom, W)
        return out

    chunks = chunked(n_sims, get_thread_count(threads) * 4)
    simulated = np.concatenate(run_parallel(run_chunk, chunks, threads))

    n_extreme = _count_extreme(simulated, observed, expected, alternative)
    pseudo_p = (n_extreme + 1) / (n_sims + 1)
    logger.info(f"Global Moran's I = {observed:.5f} (E = {expected:.5f}), pseudo p = {pseudo_p:.4g} "
                f"over {n_sims} permutations")
    return GlobalMoranResult(
        I=observed, expected=expected, pseudo_p=pseudo_p, n_sims=int(n_sims), seed=int(seed),
        alternative=alternative, n_extreme=n_extreme,
        sim_mean=float(simulated.mean()), sim_sd=float(simulated.std(ddof=1)),
    )


def local_moran(y, W):
    """
    Local Moran's I_i = z_i * (Wz)_i / (sum z^2 / n) with two-sided p-values
    from the normal approximation under randomization (conditional moments).
    """
    z, denom = _centered(y, W)
    n = W.n
    m2 = denom / n
    lag = W.lag(z)
    local_i = z * lag / m2

    m4 = float(np.sum(z ** 4)) / n
    b2 = m4 / (m2 * m2)
    w_row = W.weights.sum(axis=1)
    w_sq = np.sum(W.weights ** 2, axis=1)
    w_kh = w_row ** 2 - w_sq

    expected = -w_row / (n - 1)
    variance = (
        w_sq * (n - b2) / (n - 1)
        + w_kh * (2.0 * b2 - n) / ((n - 1) * (n - 2))
        - expected ** 2
    )
    with np.errstate(divide='ignore', invalid='ignore'):
        z_score = np.where(variance > 0, (local_i - expected) / np.sqrt(variance), 0.0)
    p = np.clip(2.0 * norm.sf(np.abs(z_score)), 0.0, 1.0)
    return LocalMoranResult(local_i=local_i, p=p, z=z, lag=lag, expected=expected,
                            variance=variance, method='analytical')


def local_moran_permutation(y, W, n_sims=constants.DEFAULT_N_SIMS, seed=0):
    """
    Local Moran's I with conditional-permutation pseudo p-values.

    For cell i the other n-1 values are shuffled into its k neighbour slots;
    one table of index draws is shared by all cells.
    """
    if n_sims < constants.MIN_N_SIMS:
        raise ParameterError(f"n_sims must be at least {constants.MIN_N_SIMS}, got {n_sims}", stage='autocorr')
    base = local_moran(y, W)
    z = base.z
    n, k = W.n, W.k
    m2 = float(z @ z) / n

    rng = stream_rng(seed, 0)
    draws = np.stack([rng.permutation(n - 1)[:k] for _ in range(n_sims)])

    p = np.empty(n)
    for i in range(n):
        idx = draws + (draws >= i)
        sim = z[i] * np.sum(W.weights[i] * z[idx], axis=1) / m2
        larger = np.count_nonzero(sim >= base.local_i[i])
        extreme = min(larger, n_sims - larger)
        p[i] = (extreme + 1) / (n_sims + 1)
    return replace(base, p=p, method='permutation')


def bonferroni_adjust(p, m=None, method='n', neighbor_counts=None):
    """
    p_adj = min(1, m * p).

    method='n' multiplies by m (default: number of cells); method='neighbors'
    multiplies each cell by its neighbour-set size + 1.
    """
    p = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise ParameterError("p-values must lie in [0, 1]", stage='autocorr')
    if method == 'neighbors':
        if neighbor_counts is None:
            raise ParameterError("neighbor_counts required for the neighbors method", stage='autocorr')
        multiplier = np.asarray(neighbor_counts, dtype=float) + 1.0
    elif method == 'n':
        multiplier = float(len(p) if m is None else m)
        if multiplier < 1:
            raise ParameterError(f"m must be >= 1, got {m}", stage='autocorr')
    else:
        raise ParameterError(f"Unknown adjustment method {method!r}", stage='autocorr')
    return np.minimum(1.0, multiplier * p)


def classify_clusters(y, result, alpha=constants.DEFAULT_ALPHA):
    """Quadrant labels for cells with adjusted p below alpha, NotSignificant elsewhere"""
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}", stage='autocorr')
    y = np.asarray(y, dtype=float)
    z = y - y.mean()
    p = result.p_adj if result.p_adj is not None else result.p
    labels = []
    for zi, lag_i, pi in zip(z, result.lag, p):
        if pi >= alpha:
            labels.append(constants.NOT_SIGNIFICANT)
        elif zi > 0 and lag_i > 0:
            labels.append(constants.HIGH_HIGH)
        elif zi <= 0 and lag_i <= 0:
            labels.append(constants.LOW_LOW)
        elif zi > 0:
            labels.append(constants.HIGH_LOW)
        else:
            labels.append(constants.LOW_HIGH)
    return tuple(labels)


def moran_scatter(y, W):
    """Standardized values and their spatial lags; the OLS slope is global I"""
    z, _ = _centered(y, W)
    standardized = z / z.std()
    return standardized, W.lag(standardized)


def analyse_clusters(y, W, alpha=constants.DEFAULT_ALPHA, method='analytical',
                     adjust='n', n_sims=constants.DEFAULT_N_SIMS, seed=0):
    """Local Moran, Bonferroni adjustment and labels in one pass"""
    if method == 'permutation':
        result = local_moran_permutation(y, W, n_sims=n_sims, seed=seed)
    else:
        result = local_moran(y, W)
    counts = np.full(W.n, W.k)
    p_adj = bonferroni_adjust(result.p, method=adjust, neighbor_counts=counts)
    result = replace(result, p_adj=p_adj)
    labels = classify_clusters(y, result, alpha)
    result = replace(result, labels=labels)
    summary = {label: labels.count(label) for label in constants.CLUSTER_LABELS}
    logger.info(f"LISA clusters at alpha={alpha}: {summary}")
    return result


def cluster_map_records(y, result):
    """Per-cell records for the cluster map export"""
    labels = result.labels or (constants.NOT_SIGNIFICANT,) * len(y)
    p_adj = result.p_adj if result.p_adj is not None else result.p
    return [
        {
            'cell_id': i,
            'count': int(count),
            'local_i': float(li),
            'p': float(p),
            'p_adj': float(pa),
            'label': label,
        }
        for i, (count, li, p, pa, label) in enumerate(zip(y, result.local_i, result.p, p_adj, labels))
    ]
