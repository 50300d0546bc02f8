"""
Layer repository
- Study-area boundary from GeoJSON (Polygon / MultiPolygon, holes kept)
- Point layers from CSV (x, y[, value]) or GeoJSON Point features
- Writers for the synthetic generator
"""

import logging
from pathlib import Path

import numpy as np
import pandas as pd
import shapely
from shapely.geometry import mapping, shape

from ..services.grid_service import PointLayer, check_projection, make_boundary
from ..utils.errors import IngestError, SchemaMismatchError
from .base_repository import BaseRepository

logger = logging.getLogger(__name__)


def _geometries(document):
    """Yield (geometry dict, properties) pairs from a FeatureCollection, Feature or bare geometry"""
    kind = document.get('type') if isinstance(document, dict) else None
    if kind == 'FeatureCollection':
        for feature in document.get('features', []):
            yield feature.get('geometry'), feature.get('properties') or {}
    elif kind == 'Feature':
        yield document.get('geometry'), document.get('properties') or {}
    elif kind is not None:
        yield document, {}
    else:
        raise IngestError("Not a GeoJSON document (missing 'type')", stage='ingest')


class LayerRepository(BaseRepository):
    """Reads and writes the spatial inputs of a run"""

    def load_boundary(self, name):
        document = self.get_json(name)
        polygons = []
        for geometry, _ in _geometries(document):
            if geometry is None:
                continue
            try:
                geom = shape(geometry)
            except (ValueError, AttributeError, TypeError, shapely.errors.GEOSException) as e:
                raise IngestError(f"{self.path(name)}: unreadable geometry ({e})", stage='ingest')
            if geom.geom_type == 'Polygon':
                parts = [geom]
            elif geom.geom_type == 'MultiPolygon':
                parts = list(geom.geoms)
            else:
                raise IngestError(f"{self.path(name)}: boundary must be Polygon or MultiPolygon, "
                                  f"got {geom.geom_type}", stage='ingest')
            for part in parts:
                shell = np.asarray(part.exterior.coords)
                holes = [np.asarray(ring.coords) for ring in part.interiors]
                polygons.append((shell, holes))
        if not polygons:
            raise IngestError(f"{self.path(name)} contains no polygons", stage='ingest')
        boundary = make_boundary(polygons)
        logger.info(f"Loaded boundary {self.path(name)}: {len(polygons)} polygon(s), area {boundary.area:.0f} m^2")
        return boundary

    def load_point_layer(self, name, layer_name=None):
        path = Path(name)
        layer_name = layer_name or path.stem
        if path.suffix.lower() in ('.geojson', '.json'):
            points, values = self._points_from_geojson(name)
        else:
            points, values = self._points_from_csv(name)
        if len(points):
            check_projection(points[:, 0], points[:, 1], f"Layer {layer_name}")
        logger.debug(f"Loaded layer {layer_name}: {len(points)} points")
        return PointLayer(name=layer_name, points=points, values=values)

    def _points_from_csv(self, name):
        frame = self.get_frame(name)
        missing = [c for c in ('x', 'y') if c not in frame.columns]
        if missing:
            raise SchemaMismatchError(f"{self.path(name)} lacks columns {', '.join(missing)}", stage='ingest')
        try:
            points = frame[['x', 'y']].to_numpy(dtype=float)
            values = frame['value'].to_numpy(dtype=float) if 'value' in frame.columns else None
        except ValueError as e:
            raise SchemaMismatchError(f"{self.path(name)} has non-numeric coordinates: {e}", stage='ingest')
        return points.reshape(-1, 2), values

    def _points_from_geojson(self, name):
        coords, values = [], []
        for geometry, properties in _geometries(self.get_json(name)):
            if not geometry or geometry.get('type') != 'Point':
                raise IngestError(f"{self.path(name)}: point layers hold Point features only", stage='ingest')
            coords.append(geometry['coordinates'][:2])
            values.append(properties.get('value'))
        points = np.asarray(coords, dtype=float).reshape(-1, 2)
        has_values = any(v is not None for v in values)
        return points, (np.asarray([np.nan if v is None else v for v in values], dtype=float)
                        if has_values else None)

    def save_boundary(self, name, geometry):
        document = {
            'type': 'FeatureCollection',
            'features': [{'type': 'Feature', 'properties': {}, 'geometry': mapping(geometry)}],
        }
        return self.put_json(name, document)

    def save_point_layer(self, name, layer):
        frame = pd.DataFrame({'x': layer.points[:, 0], 'y': layer.points[:, 1]})
        if layer.values is not None:
            frame['value'] = layer.values
        return self.put_frame(name, frame)


def load_boundary(path):
    """Boundary from a GeoJSON file"""
    return LayerRepository().load_boundary(path)


def load_point_layer(path, name=None):
    """Point layer from a CSV or GeoJSON file; the name defaults to the file stem"""
    return LayerRepository().load_point_layer(path, name)
