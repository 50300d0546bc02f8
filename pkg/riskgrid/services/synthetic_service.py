"""
Synthetic city generator
- Rectangular study area in projected meters
- Event epochs: uniform, or parent-offspring clusters around shared hotspots
- Feature layers (uniform or hotspot-correlated) and social covariate sites
- Ground-truth hotspot mask per fishnet cell
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List

import numpy as np
import pandas as pd
import shapely

from ..repositories.layer_repository import LayerRepository
from ..utils import constants
from ..utils.config import LayerSpec
from ..utils.errors import ConfigError, GenerationError
from ..utils.parallel import stream_rng
from . import grid_service

logger = logging.getLogger(__name__)

HOTSPOT_MASK_FILE = 'hotspot_mask.csv'
BOUNDARY_FILE = 'boundary.geojson'

# stream offsets keep each random component independent of the others
PARENT_STREAM = 0
EVENT_STREAM = 100
LAYER_STREAM = 200
SOCIAL_STREAM = 300


@dataclass
class SyntheticDataset:
    boundary: grid_service.Boundary
    parents: np.ndarray
    epochs: List[np.ndarray]
    layers: Dict[str, grid_service.PointLayer]
    hotspot_mask: np.ndarray
    paths: Dict[str, str] = field(default_factory=dict)


def rectangle_boundary(origin, width, height):
    x0, y0 = origin
    ring = [(x0, y0), (x0 + width, y0), (x0 + width, y0 + height), (x0, y0 + height), (x0, y0)]
    return grid_service.make_boundary([ring])


def uniform_points(boundary, n, rng):
    """n i.i.d. points uniform inside the boundary (rejection from its bounding box)"""
    minx, miny, maxx, maxy = boundary.bounds
    accepted = []
    count = rejections = 0
    while count < n:
        batch = max(16, 2 * (n - count))
        xs = rng.uniform(minx, maxx, batch)
        ys = rng.uniform(miny, maxy, batch)
        inside = shapely.contains_xy(boundary.geometry, xs, ys)
        rejections += int(np.count_nonzero(~inside))
        if rejections > constants.MAX_REJECTIONS:
            raise GenerationError(f"Uniform sampling made no progress after {rejections} rejections")
        take = np.column_stack([xs[inside], ys[inside]])[: n - count]
        accepted.append(take)
        count += len(take)
    return np.vstack(accepted) if accepted else np.zeros((0, 2))


def clustered_points(boundary, parents, n, sd, rng):
    """
    Parent-offspring process: each point picks a parent uniformly and is
    displaced by an isotropic Gaussian of the given sd, rejection-sampled
    into the boundary.
    """
    accepted = []
    count = rejections = 0
    while count < n:
        batch = max(16, 2 * (n - count))
        which = rng.integers(0, len(parents), batch)
        offsets = rng.normal(0.0, 1.0, (batch, 2)) * sd
        candidates = parents[which] + offsets
        inside = shapely.contains_xy(boundary.geometry, candidates[:, 0], candidates[:, 1])
        rejections += int(np.count_nonzero(~inside))
        if rejections > constants.MAX_REJECTIONS:
            raise GenerationError(
                f"Clustered sampling made no progress after {rejections} rejections "
                f"(hotspot sd {sd:g} is too large for the boundary)"
            )
        take = candidates[inside][: n - count]
        accepted.append(take)
        count += len(take)
    return np.vstack(accepted) if accepted else np.zeros((0, 2))


def social_values(sites, parents, scale, spread, noise_sd, rng):
    """Smooth surface of Gaussian bumps at the hotspot parents plus noise, floored at 0"""
    d2 = np.sum((sites[:, None, :] - parents[None, :, :]) ** 2, axis=2)
    surface = scale * np.exp(-d2 / (2.0 * spread ** 2)).sum(axis=1)
    return np.clip(surface + rng.normal(0.0, noise_sd, len(sites)), 0.0, None)


def hotspot_mask(fishnet, parents, radius):
    """1 for cells whose centroid lies within radius of a hotspot parent"""
    if len(parents) == 0 or radius <= 0:
        return np.zeros(fishnet.n, dtype=np.int64)
    d2 = np.sum((fishnet.centroids[:, None, :] - parents[None, :, :]) ** 2, axis=2)
    return (d2.min(axis=1) <= radius ** 2).astype(np.int64)


def layer_specs(synthetic):
    """LayerSpecs matching the files the generator writes"""
    specs = [LayerSpec(name=s.name, path=f"{s.name}.csv", families=list(s.families), nn_k=s.nn_k)
             for s in synthetic.layers]
    specs += [LayerSpec(name=s.name, path=f"{s.name}.csv", families=['soc']) for s in synthetic.social]
    return specs


def epoch_path(config, epoch):
    """Event file of an epoch: epoch 0 trains, epoch 1 tests, later epochs sit beside them"""
    if epoch == 0:
        return config.resolve(config.events_path)
    if epoch == 1 and config.test_events_path:
        return config.resolve(config.test_events_path)
    return config.resolve(config.events_path).parent / f"events_epoch{epoch}.csv"


def generate_synthetic(config, seed=None):
    """
    Write a synthetic city to the paths named in the config:
    boundary, one event CSV per epoch, layer CSVs and the hotspot mask.
    """
    synthetic = config.synthetic
    if synthetic is None:
        raise ConfigError("The config has no synthetic block", stage='generate')
    seed = config.seeds.global_seed if seed is None else int(seed)

    boundary = rectangle_boundary(synthetic.origin, synthetic.width, synthetic.height)
    parents = uniform_points(boundary, synthetic.n_hotspots, stream_rng(seed, PARENT_STREAM))

    epochs = []
    for epoch in range(synthetic.epochs):
        rng = stream_rng(seed, EVENT_STREAM + epoch)
        if synthetic.mode == 'uniform':
            events = uniform_points(boundary, synthetic.n_events, rng)
        else:
            events = clustered_points(boundary, parents, synthetic.n_events, synthetic.hotspot_sd, rng)
        epochs.append(events)

    layers = {}
    for j, spec in enumerate(synthetic.layers):
        rng = stream_rng(seed, LAYER_STREAM + j)
        if spec.mode == 'hotspot':
            points = clustered_points(boundary, parents, spec.n_points, spec.sd, rng)
        else:
            points = uniform_points(boundary, spec.n_points, rng)
        layers[spec.name] = grid_service.PointLayer(name=spec.name, points=points)
    for j, spec in enumerate(synthetic.social):
        rng = stream_rng(seed, SOCIAL_STREAM + j)
        sites = uniform_points(boundary, spec.n_sites, rng)
        spread = 3.0 * max(synthetic.hotspot_sd, config.cell_size)
        values = social_values(sites, parents, spec.scale, spread, spec.noise_sd, rng)
        layers[spec.name] = grid_service.PointLayer(name=spec.name, points=sites, values=values)

    fishnet = grid_service.build_fishnet(boundary, config.cell_size)
    if synthetic.mode == 'clustered':
        mask = hotspot_mask(fishnet, parents, synthetic.mask_radius_sd * synthetic.hotspot_sd)
    else:
        mask = np.zeros(fishnet.n, dtype=np.int64)

    repository = LayerRepository(config.base_dir)
    paths = {'boundary': repository.save_boundary(config.resolve(config.boundary_path), boundary.geometry)}
    for epoch, events in enumerate(epochs):
        frame = pd.DataFrame({'x': events[:, 0], 'y': events[:, 1]})
        paths[f"events_epoch{epoch}"] = repository.put_frame(epoch_path(config, epoch), frame)
    layer_dir = config.resolve(config.layer_dir)
    for name, layer in layers.items():
        paths[f"layer_{name}"] = repository.save_point_layer(layer_dir / f"{name}.csv", layer)
    mask_path = Path(config.resolve(config.boundary_path)).parent / HOTSPOT_MASK_FILE
    paths['hotspot_mask'] = repository.put_frame(mask_path, pd.DataFrame({'cell_id': np.arange(fishnet.n),
                                                                           'hotspot': mask}))

    logger.info(f"Generated synthetic city ({synthetic.mode}, seed {seed}): {synthetic.epochs} epoch(s) of "
                f"{synthetic.n_events} events, {len(layers)} layers, {int(mask.sum())} hotspot cells")
    return SyntheticDataset(boundary=boundary, parents=parents, epochs=epochs, layers=layers,
                            hotspot_mask=mask, paths={k: str(v) for k, v in paths.items()})
