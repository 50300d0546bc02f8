"""
Worker pool and random streams

Parallel work is keyed by (seed, index) so results do not depend on how many
workers ran them or in which order they finished.
"""

import logging
import os

import numpy as np
from joblib import Parallel, delayed

logger = logging.getLogger(__name__)


def get_thread_count(threads=None):
    """Worker cap: explicit value, else RISKGRID_THREADS, else 1"""
    if threads is None:
        raw = os.environ.get('RISKGRID_THREADS', '1')
        try:
            threads = int(raw)
        except ValueError:
            logger.warning(f"Ignoring non-integer RISKGRID_THREADS={raw!r}")
            threads = 1
    return max(1, int(threads))


def stream_rng(seed, index):
    """Independent generator for replicate `index` of a run seeded with `seed`"""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def run_parallel(func, items, threads=None):
    """Map func over items, preserving input order in the result list"""
    items = list(items)
    n_jobs = min(get_thread_count(threads), max(1, len(items)))
    if n_jobs == 1:
        return [func(item) for item in items]
    return Parallel(n_jobs=n_jobs, prefer='threads')(delayed(func)(item) for item in items)


def chunked(n, n_chunks):
    """Split range(n) into contiguous chunks"""
    n_chunks = max(1, min(n_chunks, n))
    return [chunk for chunk in np.array_split(np.arange(n), n_chunks) if len(chunk)]
