"""
JSON encoding utilities
"""

import dataclasses
import json
import math

import numpy as np


class NumpyEncoder(json.JSONEncoder):
    """Custom JSON encoder for numpy scalars/arrays and dataclasses"""

    def default(self, obj):
        if isinstance(obj, np.integer):
            return int(obj)
        if isinstance(obj, np.floating):
            return _finite_or_none(float(obj))
        if isinstance(obj, np.bool_):
            return bool(obj)
        if isinstance(obj, np.ndarray):
            return _sanitize(obj.tolist())
        if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
            return dataclasses.asdict(obj)
        return super().default(obj)

    def iterencode(self, obj, _one_shot=False):
        return super().iterencode(_sanitize(obj), _one_shot)


def _finite_or_none(value):
    return value if math.isfinite(value) else None


def _sanitize(obj):
    # NaN/inf are not valid JSON; report them as null
    if isinstance(obj, float):
        return _finite_or_none(obj)
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _sanitize(obj.tolist())
    if isinstance(obj, np.floating):
        return _finite_or_none(float(obj))
    return obj


def canonical_dumps(obj):
    """Stable JSON text: sorted keys, fixed indentation, trailing newline"""
    return json.dumps(obj, cls=NumpyEncoder, sort_keys=True, indent=2) + '\n'
