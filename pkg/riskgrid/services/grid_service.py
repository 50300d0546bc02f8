"""
Fishnet grid service
- Build the square-cell fishnet over a study-area polygon
- Aggregate point layers into cells (agg_ columns)
- Distance features from cell centroids (NN_ and ed_ columns)
- Social covariates sampled at centroids (soc_ columns)
- Assemble the per-cell feature matrix
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import shapely
from scipy.spatial import cKDTree
from shapely.geometry import MultiPolygon, Polygon

from ..utils import constants
from ..utils.errors import (
    InsufficientPointsError,
    InvalidGeometryError,
    NamingConflictError,
    ProjectionError,
    SchemaMismatchError,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Boundary:
    """Study area: one or more polygons (shell + holes) in projected meters"""

    polygons: Tuple[Tuple[np.ndarray, Tuple[np.ndarray, ...]], ...]
    geometry: object

    @property
    def area(self):
        return self.geometry.area

    @property
    def bounds(self):
        return self.geometry.bounds


@dataclass(frozen=True)
class Cell:
    id: int
    centroid: Tuple[float, float]
    coverage: float
    row: int = 0
    col: int = 0


@dataclass(frozen=True)
class Fishnet:
    cell_size: float
    origin: Tuple[float, float]
    cells: Tuple[Cell, ...]
    n_rows: int = 0
    n_cols: int = 0

    @property
    def n(self):
        return len(self.cells)

    @property
    def centroids(self):
        return np.array([cell.centroid for cell in self.cells], dtype=float).reshape(-1, 2)

    @property
    def coverage(self):
        return np.array([cell.coverage for cell in self.cells], dtype=float)

    @property
    def rows(self):
        return np.array([cell.row for cell in self.cells], dtype=int)

    @property
    def cols(self):
        return np.array([cell.col for cell in self.cells], dtype=int)

    def cell_bounds(self, cell):
        """(xmin, ymin, xmax, ymax) of a cell square"""
        half = self.cell_size / 2.0
        cx, cy = cell.centroid
        return cx - half, cy - half, cx + half, cy + half

    def cell_lookup(self):
        """Dense (row, col) -> cell id table, -1 where the lattice square was excluded"""
        table = np.full((max(self.n_rows, 1), max(self.n_cols, 1)), -1, dtype=np.int64)
        for cell in self.cells:
            table[cell.row, cell.col] = cell.id
        return table


@dataclass(frozen=True)
class PointLayer:
    name: str
    points: np.ndarray
    values: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.name:
            raise SchemaMismatchError("Point layer name must be nonempty", stage='ingest')
        points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(points)):
            raise SchemaMismatchError(f"Layer {self.name} has non-finite coordinates", stage='ingest')
        object.__setattr__(self, 'points', points)
        if self.values is not None:
            values = np.asarray(self.values, dtype=float).reshape(-1)
            if len(values) != len(points):
                raise SchemaMismatchError(f"Layer {self.name}: values and points differ in length", stage='ingest')
            object.__setattr__(self, 'values', values)

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class FeatureColumn:
    name: str
    values: np.ndarray
    dropped: int = 0


@dataclass
class FeatureMatrix:
    names: List[str]
    values: np.ndarray
    response: np.ndarray
    dropped_columns: List[str] = field(default_factory=list)
    dropped_points: Dict[str, int] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)

    @property
    def n(self):
        return len(self.response)

    @property
    def p(self):
        return len(self.names)

    def column(self, name):
        try:
            return self.values[:, self.names.index(name)]
        except ValueError:
            raise SchemaMismatchError(f"Unknown feature column {name!r}")

    def subset(self, rows):
        rows = np.asarray(rows)
        return replace(self, values=self.values[rows], response=self.response[rows])

    def to_frame(self):
        frame = pd.DataFrame(self.values, columns=self.names)
        frame['response'] = self.response
        return frame


def check_projection(xs, ys, what):
    """Refuse raw lon/lat input: every |x| <= 360 and |y| <= 90 means unprojected"""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size and np.all(np.abs(xs) <= constants.LONLAT_MAX_X) and np.all(np.abs(ys) <= constants.LONLAT_MAX_Y):
        raise ProjectionError(
            f"{what} looks like unprojected lon/lat (all |x| <= 360 and |y| <= 90); "
            "re-project to a planar CRS in meters first"
        )


def _as_ring(ring):
    ring = np.asarray(ring, dtype=float).reshape(-1, 2)
    if len(ring) < 4:
        raise InvalidGeometryError(f"Ring has {len(ring)} vertices; at least 4 required")
    if not np.array_equal(ring[0], ring[-1]):
        raise InvalidGeometryError("Ring is not closed (first vertex != last vertex)")
    return ring


def make_boundary(polygons, check_lonlat=True):
    """
    Build a Boundary from a list of polygons.

    Each polygon is either a single closed ring or a (shell, [holes...]) pair.
    """
    parts = []
    shapes = []
    for polygon in polygons:
        if isinstance(polygon, tuple) and len(polygon) == 2 and not np.isscalar(polygon[0][0]):
            shell, holes = polygon
        else:
            shell, holes = polygon, []
        shell = _as_ring(shell)
        holes = tuple(_as_ring(h) for h in holes)
        parts.append((shell, holes))
        shapes.append(Polygon(shell, holes))

    if not shapes:
        raise InvalidGeometryError("Boundary has no polygons")
    geometry = shapes[0] if len(shapes) == 1 else MultiPolygon(shapes)
    if not geometry.is_valid:
        geometry = shapely.make_valid(geometry)
    if geometry.area <= 0:
        raise InvalidGeometryError("Boundary has zero area")
    if check_lonlat:
        coords = np.vstack([shell for shell, _ in parts])
        check_projection(coords[:, 0], coords[:, 1], 'Boundary')
    return Boundary(polygons=tuple(parts), geometry=geometry)


def _lattice_count(extent, cell_size):
    # round before ceil so 2000/1000 stays 2 despite representation error
    return max(1, int(math.ceil(round(extent / cell_size, 9))))


def build_fishnet(boundary, cell_size=constants.DEFAULT_CELL_SIZE):
    """All lattice squares intersecting the boundary, origin at the bbox lower-left corner"""
    if cell_size <= 0:
        raise InvalidGeometryError(f"cell_size must be positive, got {cell_size}")
    if boundary.area <= 0:
        raise InvalidGeometryError("Boundary has zero area")

    minx, miny, maxx, maxy = boundary.bounds
    n_cols = _lattice_count(maxx - minx, cell_size)
    n_rows = _lattice_count(maxy - miny, cell_size)

    rows, cols = np.divmod(np.arange(n_rows * n_cols), n_cols)
    x0 = minx + cols * cell_size
    y0 = miny + rows * cell_size
    squares = shapely.box(x0, y0, x0 + cell_size, y0 + cell_size)
    overlap = shapely.area(shapely.intersection(squares, boundary.geometry))
    coverage = np.clip(overlap / (cell_size * cell_size), 0.0, 1.0)

    cells = []
    for idx in np.flatnonzero(coverage > 0):
        cells.append(Cell(
            id=len(cells),
            centroid=(float(x0[idx] + cell_size / 2.0), float(y0[idx] + cell_size / 2.0)),
            coverage=float(coverage[idx]),
            row=int(rows[idx]),
            col=int(cols[idx]),
        ))

    logger.info(f"Built fishnet: {len(cells)} cells of {cell_size:g} m ({n_rows} x {n_cols} lattice)")
    return Fishnet(cell_size=float(cell_size), origin=(float(minx), float(miny)),
                   cells=tuple(cells), n_rows=n_rows, n_cols=n_cols)


def filter_by_coverage(fishnet, min_coverage):
    """Keep cells with coverage >= min_coverage, re-indexing ids from 0"""
    kept = [cell for cell in fishnet.cells if cell.coverage >= min_coverage]
    cells = tuple(replace(cell, id=i) for i, cell in enumerate(kept))
    if len(cells) < fishnet.n:
        logger.info(f"Coverage filter {min_coverage:g} removed {fishnet.n - len(cells)} cells")
    return replace(fishnet, cells=cells)


def locate_points(fishnet, points):
    """Cell id per point under half-open [xmin, xmax) x [ymin, ymax) intervals, -1 if outside"""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(points) == 0:
        return np.zeros(0, dtype=np.int64)
    ox, oy = fishnet.origin
    col = np.floor((points[:, 0] - ox) / fishnet.cell_size).astype(np.int64)
    row = np.floor((points[:, 1] - oy) / fishnet.cell_size).astype(np.int64)
    inside = (col >= 0) & (col < fishnet.n_cols) & (row >= 0) & (row < fishnet.n_rows)

    ids = np.full(len(points), -1, dtype=np.int64)
    table = fishnet.cell_lookup()
    ids[inside] = table[row[inside], col[inside]]
    return ids


def aggregate_points(fishnet, layer):
    """Per-cell point counts; points outside every cell go to the dropped tally"""
    ids = locate_points(fishnet, layer.points)
    hit = ids >= 0
    counts = np.bincount(ids[hit], minlength=fishnet.n).astype(np.int64)
    dropped = int(np.count_nonzero(~hit))
    if dropped:
        logger.debug(f"Layer {layer.name}: {dropped} points fell outside the fishnet")
    return FeatureColumn(name=f"agg_{layer.name}", values=counts, dropped=dropped)


def _mean_knn_distance(centroids, points, k):
    distances, _ = cKDTree(points).query(centroids, k=k)
    distances = np.asarray(distances, dtype=float).reshape(len(centroids), -1)
    return distances.mean(axis=1)


def nn_average_distance(fishnet, layer, k=constants.DEFAULT_NN_K):
    """Mean distance from each centroid to its k nearest layer points"""
    if k < 1:
        raise InsufficientPointsError(f"k must be >= 1 for layer {layer.name}")
    if len(layer) < k:
        raise InsufficientPointsError(
            f"Layer {layer.name} has {len(layer)} points; NN_ feature needs at least k={k}"
        )
    values = _mean_knn_distance(fishnet.centroids, layer.points, k)
    return FeatureColumn(name=f"NN_{layer.name}", values=values)


def euclidean_nearest_distance(fishnet, layer):
    """Distance from each centroid to the closest layer point"""
    if len(layer) == 0:
        raise InsufficientPointsError(f"Layer {layer.name} is empty; ed_ feature needs at least one point")
    values = _mean_knn_distance(fishnet.centroids, layer.points, 1)
    return FeatureColumn(name=f"ed_{layer.name}", values=values)


def social_covariate(fishnet, layer):
    """
    Areal social covariate: each cell takes the value of the nearest site
    (e.g. a census tract centroid carrying a survey estimate).
    """
    if len(layer) == 0 or layer.values is None:
        raise InsufficientPointsError(f"Social layer {layer.name} needs sites with values")
    _, nearest = cKDTree(layer.points).query(fishnet.centroids, k=1)
    return FeatureColumn(name=f"soc_{layer.name}", values=layer.values[np.asarray(nearest)])


def assemble_feature_matrix(fishnet, agg_layers=(), nn_layers=(), ed_layers=(), response=None,
                            social_layers=(), nn_k=constants.DEFAULT_NN_K):
    """
    Feature matrix with columns ordered agg, NN, ed, soc.

    nn_k is either one k for every NN_ layer or a {layer name: k} mapping.
    Zero-variance columns are dropped with a warning.
    """
    if response is None:
        raise SchemaMismatchError("A response (event) layer is required", stage='features')

    families = [
        ('agg', agg_layers, aggregate_points),
        ('NN', nn_layers, None),
        ('ed', ed_layers, euclidean_nearest_distance),
        ('soc', social_layers, social_covariate),
    ]
    for prefix, layers, _ in families:
        seen = set()
        for layer in layers:
            if layer.name in seen:
                raise NamingConflictError(f"Duplicate {prefix} layer name {layer.name!r}")
            seen.add(layer.name)

    columns = []
    dropped_points = {}
    for prefix, layers, builder in families:
        for layer in layers:
            if prefix == 'NN':
                k = nn_k.get(layer.name, constants.DEFAULT_NN_K) if isinstance(nn_k, dict) else nn_k
                column = nn_average_distance(fishnet, layer, k)
            else:
                column = builder(fishnet, layer)
            if prefix == 'agg':
                dropped_points[layer.name] = column.dropped
            columns.append(column)

    if not columns:
        raise SchemaMismatchError("At least one feature column is required", stage='features')

    names = [column.name for column in columns]
    if len(set(names)) != len(names):
        duplicates = sorted({name for name in names if names.count(name) > 1})
        raise NamingConflictError(f"Duplicate feature columns: {', '.join(duplicates)}")

    kept, dropped_columns, warnings = [], [], []
    for column in columns:
        if np.ptp(column.values) == 0:
            message = f"Dropping zero-variance column {column.name}"
            logger.warning(message)
            warnings.append(message)
            dropped_columns.append(column.name)
        else:
            kept.append(column)

    events = aggregate_points(fishnet, response)
    dropped_points['response'] = events.dropped
    values = np.column_stack([c.values.astype(float) for c in kept]) if kept else np.zeros((fishnet.n, 0))

    logger.info(f"Feature matrix: {fishnet.n} cells x {len(kept)} columns ({len(dropped_columns)} dropped)")
    return FeatureMatrix(
        names=[c.name for c in kept],
        values=values,
        response=events.values,
        dropped_columns=dropped_columns,
        dropped_points=dropped_points,
        warnings=warnings,
    )


def fishnet_metadata(fishnet):
    """Lattice facts the feature CSV cannot carry: origin and full lattice shape"""
    return {'cell_size': fishnet.cell_size, 'origin': list(fishnet.origin),
            'n_rows': fishnet.n_rows, 'n_cols': fishnet.n_cols}


def fishnet_from_frame(frame, cell_size, metadata=None):
    """
    Rebuild a fishnet from an exported feature matrix (cell_id, centroid_x, centroid_y, coverage).

    With the metadata written beside the export the lattice origin and shape
    are restored exactly; without it the origin falls back to the lowest centroid.
    """
    frame = frame.sort_values('cell_id')
    xs = frame['centroid_x'].to_numpy(dtype=float)
    ys = frame['centroid_y'].to_numpy(dtype=float)
    if metadata is not None:
        cell_size = float(metadata['cell_size'])
        ox, oy = (float(v) for v in metadata['origin'])
    else:
        ox = float(xs.min() - cell_size / 2.0) if len(xs) else 0.0
        oy = float(ys.min() - cell_size / 2.0) if len(ys) else 0.0
    cols = np.rint((xs - cell_size / 2.0 - ox) / cell_size).astype(int)
    rows = np.rint((ys - cell_size / 2.0 - oy) / cell_size).astype(int)
    cells = tuple(
        Cell(id=int(i), centroid=(float(x), float(y)), coverage=float(c), row=int(r), col=int(k))
        for i, x, y, c, r, k in zip(frame['cell_id'], xs, ys, frame['coverage'], rows, cols)
    )
    n_rows = int(rows.max()) + 1 if len(rows) else 0
    n_cols = int(cols.max()) + 1 if len(cols) else 0
    if metadata is not None:
        n_rows, n_cols = max(n_rows, int(metadata['n_rows'])), max(n_cols, int(metadata['n_cols']))
    return Fishnet(cell_size=float(cell_size), origin=(ox, oy), cells=cells, n_rows=n_rows, n_cols=n_cols)


def matrix_from_frame(frame):
    """Rebuild a FeatureMatrix from an exported CSV frame"""
    meta = {'cell_id', 'centroid_x', 'centroid_y', 'coverage', 'response'}
    names = [c for c in frame.columns if c not in meta]
    frame = frame.sort_values('cell_id')
    return FeatureMatrix(
        names=names,
        values=frame[names].to_numpy(dtype=float) if names else np.zeros((len(frame), 0)),
        response=frame['response'].to_numpy(dtype=np.int64),
    )


def feature_frame(matrix, fishnet):
    """Export layout: cell_id, centroid_x, centroid_y, coverage, <columns...>, response"""
    centroids = fishnet.centroids
    frame = pd.DataFrame({
        'cell_id': np.arange(fishnet.n),
        'centroid_x': centroids[:, 0],
        'centroid_y': centroids[:, 1],
        'coverage': fishnet.coverage,
    })
    for j, name in enumerate(matrix.names):
        column = matrix.values[:, j]
        frame[name] = column.astype(np.int64) if name.startswith('agg_') else column
    frame['response'] = matrix.response
    return frame


def layer_families(specs: Sequence, layers: Dict[str, PointLayer]):
    """Split loaded layers into (agg, NN, ed, soc) lists according to their specs"""
    out = {prefix: [] for prefix in constants.FEATURE_PREFIXES}
    nn_k = {}
    for spec in specs:
        layer = layers[spec.name]
        for family in spec.families:
            out[family].append(layer)
        nn_k[spec.name] = spec.nn_k
    return out['agg'], out['NN'], out['ed'], out['soc'], nn_k
