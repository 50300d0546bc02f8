"""
Map rendering service
- Three-panel cluster figure: counts, local Moran's I, significant clusters
- Incident dot maps: observed events next to a uniform simulation
- Predicted vs observed scatter per model
- Top-ranked features, one horizontal-bar panel per model
All figures are written as SVG without a display server. Colour-scale bounds
are stored in the SVG metadata description as riskgrid:vmin / riskgrid:vmax.
"""

import io
import logging

import matplotlib
from matplotlib.cm import ScalarMappable
from matplotlib.colors import Normalize
from matplotlib.figure import Figure
from matplotlib.patches import Patch, Rectangle

import numpy as np

from ..utils import constants

logger = logging.getLogger(__name__)

SVG_HASH_SALT = 'riskgrid'

CLUSTER_COLORS = {
    constants.HIGH_HIGH: '#d7191c',
    constants.LOW_LOW: '#2c7bb6',
    constants.HIGH_LOW: '#fdae61',
    constants.LOW_HIGH: '#abd9e9',
    constants.NOT_SIGNIFICANT: '#eeeeee',
}


def svg_bytes(fig, description='', reproducible=False):
    """Serialize a figure to SVG; the Date field is dropped when reproducible"""
    metadata = {'Description': description}
    if reproducible:
        metadata['Date'] = None
    buffer = io.BytesIO()
    with matplotlib.rc_context({'svg.hashsalt': SVG_HASH_SALT, 'svg.fonttype': 'none'}):
        fig.savefig(buffer, format='svg', metadata=metadata)
    return buffer.getvalue()


def _bounds(values):
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return 0.0, 1.0
    return float(np.min(values)), float(np.max(values))


def _draw_cells(ax, fishnet, colors, panel):
    half = fishnet.cell_size / 2.0
    for cell, color in zip(fishnet.cells, colors):
        cx, cy = cell.centroid
        ax.add_patch(Rectangle((cx - half, cy - half), fishnet.cell_size, fishnet.cell_size,
                               facecolor=color, edgecolor='white', linewidth=0.2,
                               gid=f"cell-{panel}-{cell.id}"))
    if fishnet.n:
        xs, ys = fishnet.centroids[:, 0], fishnet.centroids[:, 1]
        ax.set_xlim(xs.min() - half, xs.max() + half)
        ax.set_ylim(ys.min() - half, ys.max() + half)
    ax.set_aspect('equal')
    ax.set_xticks([])
    ax.set_yticks([])


def render_cluster_figure(fishnet, counts, local, reproducible=False):
    """Counts, local I and cluster labels side by side, one rectangle per cell and panel"""
    counts = np.asarray(counts, dtype=float)
    labels = local.labels or (constants.NOT_SIGNIFICANT,) * fishnet.n
    count_min, count_max = _bounds(counts)
    local_min, local_max = _bounds(local.local_i)

    fig = Figure(figsize=(15, 5))
    axes = fig.subplots(1, 3)

    norm = Normalize(vmin=count_min, vmax=count_max)
    cmap = matplotlib.colormaps['viridis']
    _draw_cells(axes[0], fishnet, cmap(norm(counts)), 'counts')
    axes[0].set_title('Observed incidents per cell')
    fig.colorbar(ScalarMappable(norm=norm, cmap=cmap), ax=axes[0], shrink=0.7)

    local_norm = Normalize(vmin=local_min, vmax=local_max)
    local_cmap = matplotlib.colormaps['RdBu_r']
    _draw_cells(axes[1], fishnet, local_cmap(local_norm(local.local_i)), 'local')
    axes[1].set_title("Local Moran's I")
    fig.colorbar(ScalarMappable(norm=local_norm, cmap=local_cmap), ax=axes[1], shrink=0.7)

    _draw_cells(axes[2], fishnet, [CLUSTER_COLORS[label] for label in labels], 'clusters')
    axes[2].set_title('Significant clusters')
    present = [label for label in constants.CLUSTER_LABELS if label in labels]
    axes[2].legend(handles=[Patch(facecolor=CLUSTER_COLORS[label], edgecolor='grey', label=label)
                            for label in present], loc='lower right', fontsize='small')

    description = (f"riskgrid:vmin={count_min!r};riskgrid:vmax={count_max!r};"
                   f"riskgrid:local_vmin={local_min!r};riskgrid:local_vmax={local_max!r}")
    return svg_bytes(fig, description, reproducible)


def render_dot_maps(boundary, observed, simulated, reproducible=False):
    """Observed incident locations next to a uniform simulation of the same size"""
    fig = Figure(figsize=(10, 5))
    axes = fig.subplots(1, 2)
    for ax, points, title in ((axes[0], observed, 'Observed incidents'),
                              (axes[1], simulated, 'Uniform simulation')):
        for polygon in getattr(boundary.geometry, 'geoms', [boundary.geometry]):
            xs, ys = polygon.exterior.xy
            ax.plot(xs, ys, color='black', linewidth=0.8)
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        ax.scatter(points[:, 0], points[:, 1], s=2, color='#b2182b')
        ax.set_title(f"{title} (n={len(points)})")
        ax.set_aspect('equal')
        ax.set_xticks([])
        ax.set_yticks([])
    return svg_bytes(fig, f"riskgrid:n_observed={len(observed)};riskgrid:n_simulated={len(simulated)}",
                     reproducible)


def render_scatter(observed, predicted, model, reproducible=False):
    """Predicted against observed counts with the identity line"""
    observed = np.asarray(observed, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    lo = float(min(observed.min(), predicted.min())) if observed.size else 0.0
    hi = float(max(observed.max(), predicted.max())) if observed.size else 1.0

    fig = Figure(figsize=(5, 5))
    ax = fig.subplots()
    ax.scatter(observed, predicted, s=6, alpha=0.6)
    ax.plot([lo, hi], [lo, hi], color='grey', linestyle='--', linewidth=0.8)
    ax.set_xlabel('Observed')
    ax.set_ylabel('Predicted')
    ax.set_title(model)
    return svg_bytes(fig, f"riskgrid:vmin={lo!r};riskgrid:vmax={hi!r}", reproducible)


def render_importance(importance, reproducible=False):
    """
    One horizontal-bar panel per model with its top-ranked features, highest
    score on top. Parametric models are scored by -log10 p, the forest by
    impurity importance.
    """
    models = list(importance.ranked)
    fig = Figure(figsize=(4.5 * max(len(models), 1), 0.5 * max(importance.k, 4) + 1.5))
    axes = np.atleast_1d(fig.subplots(1, max(len(models), 1)))
    for ax, model in zip(axes, models):
        ax.set_gid(f"panel-{model}")
        rows = importance.ranked[model]
        if rows:
            bars = ax.barh(np.arange(len(rows)), [score for _, score in rows], color='#4d4d4d')
            for rank, bar in enumerate(bars):
                bar.set_gid(f"bar-{model}-{rank}")
            ax.set_yticks(np.arange(len(rows)), labels=[name for name, _ in rows], fontsize='small')
            ax.invert_yaxis()
        else:
            ax.text(0.5, 0.5, 'no ranked features', ha='center', va='center', transform=ax.transAxes)
            ax.set_yticks([])
        ax.set_xlabel('Impurity importance' if model == 'forest' else '-log10 p')
        ax.set_title(model)
    fig.tight_layout()
    return svg_bytes(fig, f"riskgrid:models={','.join(models)};riskgrid:k={importance.k}", reproducible)


def render_maps(run, repository, reproducible=False):
    """
    Write every map of a completed run under the maps directory.

    run needs fishnet, counts, local, boundary, events, simulated_events and
    predictions (model -> per-cell prediction); the importance figure is
    written when run.importance is set.
    """
    paths = [repository.put_bytes(f"{constants.MAPS_DIR}/clusters.svg",
                                  render_cluster_figure(run.fishnet, run.counts, run.local, reproducible))]
    if run.boundary is not None and run.events is not None:
        paths.append(repository.put_bytes(f"{constants.MAPS_DIR}/incidents.svg",
                                          render_dot_maps(run.boundary, run.events, run.simulated_events,
                                                          reproducible)))
    for model, predicted in run.predictions.items():
        paths.append(repository.put_bytes(f"{constants.MAPS_DIR}/scatter_{model}.svg",
                                          render_scatter(run.counts, predicted, model, reproducible)))
    if getattr(run, 'importance', None) is not None:
        paths.append(repository.put_bytes(f"{constants.MAPS_DIR}/importance.svg",
                                          render_importance(run.importance, reproducible)))
    logger.info(f"Rendered {len(paths)} SVG maps")
    return paths
