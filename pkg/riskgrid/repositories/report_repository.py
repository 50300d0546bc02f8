"""
Report repository
- Output directory of a run: tables, JSON summaries, cluster layers, maps
- Manifest with the SHA-256 digest of every file in the directory
"""

import logging
from pathlib import Path

import pandas as pd
import shapely
from shapely.geometry import mapping

from ..services.grid_service import feature_frame, fishnet_from_frame, fishnet_metadata, matrix_from_frame
from ..utils import constants
from .base_repository import BaseRepository, sha256_file

logger = logging.getLogger(__name__)


class ReportRepository(BaseRepository):
    """Writes the analyst-facing outputs of a run"""

    def write_table(self, name, frame):
        path = self.put_frame(name, frame)
        logger.info(f"Wrote {path.name} ({len(frame)} rows)")
        return path

    def export_feature_matrix(self, matrix, fishnet, name=constants.FEATURE_MATRIX_FILE):
        """Feature matrix in the cell_id, centroid, coverage, features, response layout, plus lattice sidecar"""
        path = self.write_table(name, feature_frame(matrix, fishnet))
        self.put_json(self._sidecar(name), fishnet_metadata(fishnet))
        return path

    def load_feature_matrix(self, cell_size, name=constants.FEATURE_MATRIX_FILE):
        """(fishnet, matrix) from an earlier export; the sidecar is optional"""
        frame = self.get_frame(name)
        sidecar = self._sidecar(name)
        metadata = self.get_json(sidecar) if self.exists(sidecar) else None
        return fishnet_from_frame(frame, cell_size, metadata), matrix_from_frame(frame)

    @staticmethod
    def _sidecar(name):
        return str(Path(name).with_suffix('.json'))

    def write_clusters(self, fishnet, records):
        """Cluster layer as CSV and as GeoJSON cell polygons"""
        frame = pd.DataFrame(records, columns=['cell_id', 'count', 'local_i', 'p', 'p_adj', 'label'])
        csv_path = self.put_frame(constants.CLUSTERS_CSV_FILE, frame)

        half = fishnet.cell_size / 2.0
        features = []
        for cell, record in zip(fishnet.cells, records):
            cx, cy = cell.centroid
            geometry = shapely.box(cx - half, cy - half, cx + half, cy + half)
            features.append({'type': 'Feature', 'properties': record, 'geometry': mapping(geometry)})
        geojson_path = self.put_json(constants.CLUSTERS_GEOJSON_FILE,
                                     {'type': 'FeatureCollection', 'features': features})
        return csv_path, geojson_path

    def scan_digests(self):
        """sha256 of every file under the root except the manifest itself"""
        digests = {}
        if not self.root.exists():
            return digests
        for path in sorted(p for p in self.root.rglob('*') if p.is_file()):
            key = path.relative_to(self.root).as_posix()
            if key == constants.MANIFEST_FILE:
                continue
            digests[key] = sha256_file(path)
        return digests

    def write_manifest(self, provenance):
        files = self.scan_digests()
        path = self.put_json(constants.MANIFEST_FILE, {'files': files, 'provenance': provenance})
        files[constants.MANIFEST_FILE] = self.digests[self.key(path)]
        logger.info(f"Manifest lists {len(files) - 1} files")
        return files
