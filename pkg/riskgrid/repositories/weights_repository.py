"""
Weights repository
- i,j,w edge list CSV (k rows per cell, neighbours in id order of the graph)
- JSON sidecar with n, k and the weighting style
"""

import logging
from pathlib import Path

import numpy as np
import pandas as pd

from ..services.weights_service import NeighborGraph, SpatialWeights
from ..utils.errors import SchemaMismatchError
from .base_repository import BaseRepository

logger = logging.getLogger(__name__)


def sidecar_name(name):
    return Path(name).with_suffix('.json')


class WeightsRepository(BaseRepository):

    def save(self, name, W):
        rows = np.repeat(np.arange(W.n), W.k)
        frame = pd.DataFrame({'i': rows, 'j': W.graph.neighbors.ravel(), 'w': W.weights.ravel()})
        path = self.put_frame(name, frame)
        self.put_json(sidecar_name(name), {'n': W.n, 'k': W.k, 'style': W.style})
        return path

    def load(self, name):
        meta = self.get_json(sidecar_name(name), stage='weights')
        frame = self.get_frame(name, stage='weights')
        n, k = int(meta['n']), int(meta['k'])
        if len(frame) != n * k:
            raise SchemaMismatchError(f"{self.path(name)} has {len(frame)} edges, expected n*k = {n * k}",
                                      stage='weights')
        frame = frame.sort_values('i', kind='stable')
        neighbors = frame['j'].to_numpy(dtype=np.int64).reshape(n, k)
        weights = frame['w'].to_numpy(dtype=float).reshape(n, k)
        logger.debug(f"Loaded weights {self.path(name)}: n={n}, k={k}")
        return SpatialWeights(graph=NeighborGraph(k=k, neighbors=neighbors), weights=weights, style=meta['style'])


def save_weights(W, path):
    """Write W as an i,j,w CSV plus a .json sidecar next to it"""
    return WeightsRepository().save(path, W)


def load_weights(path):
    return WeightsRepository().load(path)
