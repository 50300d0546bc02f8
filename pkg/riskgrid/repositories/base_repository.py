"""
Base repository for file-backed storage
- Every write records the SHA-256 digest of the bytes written
- CSV/JSON/text encodings are fixed so identical inputs give identical files
"""

import hashlib
import io
import json
import logging
from pathlib import Path

import pandas as pd

from ..utils.errors import IngestError
from ..utils.json_encoder import canonical_dumps

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = '%.12g'
CSV_NA = 'NA'


def sha256_bytes(data):
    return hashlib.sha256(data).hexdigest()


def sha256_file(path):
    return sha256_bytes(Path(path).read_bytes())


def frame_to_csv(frame):
    """CSV text with fixed float formatting, NA for missing values and LF line endings"""
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, float_format=CSV_FLOAT_FORMAT, na_rep=CSV_NA, lineterminator='\n')
    return buffer.getvalue()


class BaseRepository:
    """Base repository with common put/get operations on a directory"""

    def __init__(self, root='.'):
        self.root = Path(root)
        self.digests = {}

    def path(self, name):
        return self.root / name

    def key(self, path):
        path = Path(path)
        try:
            return path.resolve().relative_to(self.root.resolve()).as_posix()
        except ValueError:
            return path.as_posix()

    def put_bytes(self, name, data):
        """Write bytes and remember their digest"""
        path = self.path(name)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(data)
        except OSError as e:
            raise IngestError(f"Cannot write {path}: {e}", stage='report')
        digest = sha256_bytes(data)
        self.digests[self.key(path)] = digest
        logger.debug(f"Wrote {path} ({len(data)} bytes, sha256 {digest[:12]})")
        return path

    def put_text(self, name, text):
        return self.put_bytes(name, text.encode('utf-8'))

    def put_json(self, name, obj):
        return self.put_text(name, canonical_dumps(obj))

    def put_frame(self, name, frame):
        return self.put_text(name, frame_to_csv(frame))

    def exists(self, name):
        return self.path(name).exists()

    def get_bytes(self, name, stage='ingest'):
        path = self.path(name)
        if not path.exists():
            raise IngestError(f"File not found: {path}", stage=stage)
        try:
            return path.read_bytes()
        except OSError as e:
            raise IngestError(f"Cannot read {path}: {e}", stage=stage)

    def get_text(self, name, stage='ingest'):
        return self.get_bytes(name, stage).decode('utf-8')

    def get_json(self, name, stage='ingest'):
        try:
            return json.loads(self.get_text(name, stage))
        except json.JSONDecodeError as e:
            raise IngestError(f"{self.path(name)} is not valid JSON: {e}", stage=stage)

    def get_frame(self, name, stage='ingest'):
        text = self.get_text(name, stage)
        try:
            return pd.read_csv(io.StringIO(text), na_values=[CSV_NA], keep_default_na=False)
        except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise IngestError(f"{self.path(name)} is not a readable CSV: {e}", stage=stage)
