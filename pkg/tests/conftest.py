"""Shared fixtures for the riskgrid test suite"""

import json
import os

import numpy as np
import pytest

from riskgrid.services import grid_service, weights_service

# Projected-meter origin used by every geometry fixture (well clear of the lon/lat guard)
X0, Y0 = 500000.0, 3800000.0

FULL_ACCEPTANCE = os.environ.get('RISKGRID_FULL_ACCEPTANCE') == '1'


def replicates(full, reduced):
    """Replicate count for Monte-Carlo checks: full under RISKGRID_FULL_ACCEPTANCE=1"""
    return full if FULL_ACCEPTANCE else reduced


def rectangle(width, height, x0=X0, y0=Y0):
    return [(x0, y0), (x0 + width, y0), (x0 + width, y0 + height), (x0, y0 + height), (x0, y0)]


def lattice_centroids(n_side, spacing=1.0):
    """Row-major (row, col) lattice: id = row * n_side + col, x = col, y = row"""
    rows, cols = np.divmod(np.arange(n_side * n_side), n_side)
    return np.column_stack([cols * spacing, rows * spacing]).astype(float)


@pytest.fixture
def ring_weights():
    """4-cell ring, each cell's two ring-adjacent neighbours, w = 1/2"""
    return weights_service.weights_from_neighbors([[1, 3], [0, 2], [1, 3], [0, 2]])


@pytest.fixture
def lattice():
    return lattice_centroids


@pytest.fixture
def lattice_weights():
    def build(n_side, k=8):
        return weights_service.build_weights(lattice_centroids(n_side), k)
    return build


@pytest.fixture
def rectangle_fishnet():
    """2000 m x 3000 m rectangle on a 1000 m grid: 6 fully covered cells"""
    boundary = grid_service.make_boundary([rectangle(2000.0, 3000.0)])
    return grid_service.build_fishnet(boundary, 1000.0)


@pytest.fixture
def city_config(tmp_path):
    """Writes a small synthetic-city config and returns (path, dict)"""
    def write(**overrides):
        data = {
            'boundary_path': 'data/boundary.geojson',
            'events_path': 'data/events_epoch0.csv',
            'test_events_path': 'data/events_epoch1.csv',
            'layer_dir': 'data/layers',
            'output_dir': 'output',
            'cell_size': 1000,
            'k_neighbors': 8,
            'n_sims': 99,
            'cv_folds': 3,
            'top_k': 5,
            'forest': {'n_trees': 5, 'min_node': 5},
            'seeds': {'global_seed': 7, 'cv': 1, 'forest': 2, 'permutation': 3},
            'synthetic': {
                'n_events': 400,
                'mode': 'clustered',
                'n_hotspots': 2,
                'hotspot_sd': 900,
                'epochs': 2,
                'origin': [X0, Y0],
                'width': 8000,
                'height': 8000,
                'layers': [
                    {'name': 'LiquorStores', 'n_points': 60, 'mode': 'hotspot', 'sd': 1200,
                     'families': ['agg', 'ed']},
                    {'name': 'BusStops', 'n_points': 80, 'mode': 'uniform', 'families': ['NN', 'ed'],
                     'nn_k': 4},
                ],
                'social': [{'name': 'PovertyRate', 'n_sites': 30, 'scale': 0.3, 'noise_sd': 0.02}],
            },
        }
        data.update(overrides)
        path = tmp_path / 'city.json'
        path.write_text(json.dumps(data), encoding='utf-8')
        return path, data
    return write
