"""
Pipeline configuration

A run is described by one JSON document. Values missing from the document
fall back to riskgrid.utils.constants; CLI flags override both.
"""

import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

from . import constants
from .errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass
class LayerSpec:
    name: str
    path: Optional[str] = None
    families: List[str] = field(default_factory=lambda: ['agg', 'NN', 'ed'])
    nn_k: int = constants.DEFAULT_NN_K


@dataclass
class SyntheticLayerSpec:
    name: str
    n_points: int = 200
    mode: str = 'uniform'
    sd: float = 2000.0
    families: List[str] = field(default_factory=lambda: ['agg', 'NN', 'ed'])
    nn_k: int = constants.DEFAULT_NN_K


@dataclass
class SyntheticSocialSpec:
    name: str
    n_sites: int = 60
    scale: float = 1.0
    noise_sd: float = 0.1


@dataclass
class SyntheticConfig:
    n_events: int = 1500
    mode: str = 'clustered'
    n_hotspots: int = 3
    hotspot_sd: float = 1500.0
    epochs: int = 2
    origin: List[float] = field(default_factory=lambda: [500000.0, 3800000.0])
    width: float = 20000.0
    height: float = 20000.0
    mask_radius_sd: float = 1.0
    layers: List[SyntheticLayerSpec] = field(default_factory=list)
    social: List[SyntheticSocialSpec] = field(default_factory=list)


@dataclass
class ForestConfig:
    n_trees: int = constants.DEFAULT_N_TREES
    min_node: int = constants.DEFAULT_MIN_NODE
    m: Optional[int] = None


@dataclass
class SeedConfig:
    global_seed: int = 0
    cv: int = 1
    forest: int = 2
    permutation: int = 3


@dataclass
class PipelineConfig:
    boundary_path: str = 'data/boundary.geojson'
    events_path: str = 'data/events_epoch0.csv'
    test_events_path: Optional[str] = None
    layer_dir: str = 'data/layers'
    output_dir: str = 'output'
    layers: List[LayerSpec] = field(default_factory=list)
    cell_size: float = constants.DEFAULT_CELL_SIZE
    min_coverage: float = 0.0
    k_neighbors: int = constants.DEFAULT_K_NEIGHBORS
    n_sims: int = constants.DEFAULT_N_SIMS
    alpha: float = constants.DEFAULT_ALPHA
    local_p_method: str = 'analytical'
    bonferroni_method: str = 'n'
    cv_folds: int = constants.DEFAULT_CV_FOLDS
    cv_scheme: str = 'random'
    top_k: int = constants.DEFAULT_TOP_K
    models: List[str] = field(default_factory=lambda: list(constants.MODEL_KEYS))
    seeds: SeedConfig = field(default_factory=SeedConfig)
    forest: ForestConfig = field(default_factory=ForestConfig)
    synthetic: Optional[SyntheticConfig] = None
    threads: Optional[int] = None
    reproducible: bool = False
    base_dir: str = '.'

    def resolve(self, path):
        """Resolve a config path relative to the config file's directory"""
        if path is None:
            return None
        candidate = Path(path)
        if candidate.is_absolute():
            return candidate
        return Path(self.base_dir) / candidate

    def to_dict(self):
        data = dataclasses.asdict(self)
        data.pop('base_dir')
        data.pop('threads')
        data.pop('reproducible')
        return data

    def config_hash(self):
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode('utf-8')).hexdigest()


def _build(cls, data, where):
    """Instantiate a config dataclass from a dict, rejecting unknown keys"""
    if data is None:
        return None
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"Unknown keys in {where}: {', '.join(unknown)}")

    nested = {
        'layers': LayerSpec if cls is PipelineConfig else SyntheticLayerSpec,
        'social': SyntheticSocialSpec,
        'seeds': SeedConfig,
        'forest': ForestConfig,
        'synthetic': SyntheticConfig,
    }
    kwargs = {}
    for key, value in data.items():
        target = nested.get(key)
        if target is None:
            kwargs[key] = value
        elif isinstance(value, list):
            kwargs[key] = [_build(target, item, f"{where}.{key}[{i}]") for i, item in enumerate(value)]
        else:
            kwargs[key] = _build(target, value, f"{where}.{key}")
    if cls is SeedConfig and 'global' in data:
        raise ConfigError("Use 'global_seed' rather than 'global' in seeds")
    return cls(**kwargs)


def validate_config(config):
    """Check counts, probabilities and enumerations; raise ConfigError on the first problem"""
    positive = {
        'cell_size': config.cell_size,
        'k_neighbors': config.k_neighbors,
        'n_sims': config.n_sims,
        'cv_folds': config.cv_folds,
        'top_k': config.top_k,
        'forest.n_trees': config.forest.n_trees,
        'forest.min_node': config.forest.min_node,
    }
    for name, value in positive.items():
        if value is None or value <= 0:
            raise ConfigError(f"{name} must be positive, got {value}")
    if not 0.0 < config.alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {config.alpha}")
    if not 0.0 <= config.min_coverage <= 1.0:
        raise ConfigError(f"min_coverage must lie in [0, 1], got {config.min_coverage}")
    if config.n_sims < constants.MIN_N_SIMS:
        raise ConfigError(f"n_sims must be at least {constants.MIN_N_SIMS}")
    if config.cv_folds < 2:
        raise ConfigError("cv_folds must be at least 2")
    if config.local_p_method not in constants.LOCAL_P_METHODS:
        raise ConfigError(f"local_p_method must be one of {constants.LOCAL_P_METHODS}")
    if config.bonferroni_method not in constants.BONFERRONI_METHODS:
        raise ConfigError(f"bonferroni_method must be one of {constants.BONFERRONI_METHODS}")
    if config.cv_scheme not in constants.CV_SCHEMES:
        raise ConfigError(f"cv_scheme must be one of {constants.CV_SCHEMES}")
    if not config.models:
        raise ConfigError("models must name at least one model")
    for model in config.models:
        if model not in constants.MODEL_KEYS:
            raise ConfigError(f"Unknown model {model!r}; available: {', '.join(constants.MODEL_KEYS)}")
    for layer in config.layers:
        if not layer.name:
            raise ConfigError("Every layer needs a nonempty name")
        for family in layer.families:
            if family not in constants.FEATURE_PREFIXES:
                raise ConfigError(f"Layer {layer.name}: unknown family {family!r}")
        if layer.nn_k < 1:
            raise ConfigError(f"Layer {layer.name}: nn_k must be >= 1")

    synthetic = config.synthetic
    if synthetic is not None:
        if synthetic.mode not in constants.SYNTHETIC_MODES:
            raise ConfigError(f"synthetic.mode must be one of {constants.SYNTHETIC_MODES}")
        for name in ('n_events', 'n_hotspots', 'epochs', 'width', 'height'):
            if getattr(synthetic, name) <= 0:
                raise ConfigError(f"synthetic.{name} must be positive")
        if synthetic.hotspot_sd < 0:
            raise ConfigError("synthetic.hotspot_sd must be non-negative")
        for layer in synthetic.layers:
            if layer.mode not in ('uniform', 'hotspot'):
                raise ConfigError(f"Synthetic layer {layer.name}: mode must be uniform or hotspot")
    return config


def load_config(path, overrides=None):
    """Read a JSON config file, apply CLI overrides and validate"""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}")

    config = _build(PipelineConfig, data, 'config')
    config.base_dir = str(path.resolve().parent)
    if isinstance(data, dict) and 'output_dir' not in data and os.environ.get('RISKGRID_OUTPUT_DIR'):
        config.output_dir = os.environ['RISKGRID_OUTPUT_DIR']
    apply_overrides(config, overrides or {})
    logger.debug(f"Loaded config from {path}")
    return validate_config(config)


def apply_overrides(config, overrides):
    """Apply non-None CLI flag values onto the config"""
    for key, value in overrides.items():
        if value is None:
            continue
        if key == 'seed':
            config.seeds.global_seed = int(value)
        elif key == 'output_dir':
            config.output_dir = os.fspath(Path(value).resolve())
        elif hasattr(config, key):
            setattr(config, key, value)
        else:
            raise ConfigError(f"Unknown override {key!r}")
    return config


def config_from_dict(data, base_dir='.'):
    """Build and validate a config from an in-memory dict (tests, notebooks)"""
    config = _build(PipelineConfig, data, 'config')
    config.base_dir = str(base_dir)
    return validate_config(config)
