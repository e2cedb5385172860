"""
Pipeline configuration.

A run is described by a YAML (or JSON) file such as::

    vocabulary: [bicycle, motorcycle, car, bus, truck, boat]
    layers: [redundancy-containment, redundancy-overlap, cawal, hwad]
    redundancy: {rf: 0.6}
    cawal:
      threshold: 0.3
      attenuate: false
      bindings:
        - {name: water, context: [water], boost: [boat], adjust_percent: 10}
    hwad: {alpha: 0.5, gamma: 0.1, cycles: 1}
    shape_gate: {alpha: 1.0, boost_percent: 10}
    score_floor: 0.0
    paths: {detections: dets.json, ground_truth: gt.json}

Relative paths are resolved against the directory of the config file.
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import yaml

from .cawal import DEFAULT_THRESHOLD, ContextBinding
from .detections import DEFAULT_VOCABULARY, canonical_class_name
from .errors import ConfigError, PgRulesError
from .evalmetrics import DEFAULT_CLASS_GROUPS
from .hwad import DEFAULT_ALPHA, DEFAULT_GAMMA
from .redundancy import DEFAULT_RF

logger = logging.getLogger(__name__)

LAYER_CONTAINMENT = "redundancy-containment"
LAYER_OVERLAP = "redundancy-overlap"
LAYER_CAWAL = "cawal"
LAYER_HWAD = "hwad"
LAYER_SHAPE_GATE = "shape-gate"

LAYER_NAMES = (LAYER_CONTAINMENT, LAYER_OVERLAP, LAYER_CAWAL, LAYER_HWAD, LAYER_SHAPE_GATE)
DEFAULT_LAYERS = (LAYER_CONTAINMENT, LAYER_OVERLAP, LAYER_CAWAL, LAYER_HWAD)

PATH_KEYS = (
    "detections",
    "ground_truth",
    "scenes",
    "knowledge",
    "shape_knowledge",
    "shape_counts",
    "out",
)

LAND_CLASSES = ("bicycle", "motorcycle", "car", "bus", "truck")


def default_bindings(threshold: float = DEFAULT_THRESHOLD) -> Tuple[ContextBinding, ...]:
    """Water scenes favour boats, land scenes favour road vehicles."""
    return (
        ContextBinding(
            name="water",
            context_labels=frozenset({"water"}),
            boosted_classes=frozenset({"boat"}),
            attenuate_classes=frozenset(LAND_CLASSES),
            adjust_percent=10.0,
            threshold=threshold,
        ),
        ContextBinding(
            name="land",
            context_labels=frozenset({"land"}),
            boosted_classes=frozenset(LAND_CLASSES),
            attenuate_classes=frozenset({"boat"}),
            adjust_percent=10.0,
            threshold=threshold,
        ),
    )


@dataclass(frozen=True)
class PipelineConfig:
    """All knobs of a refinement run; defaults follow the published setup."""

    vocabulary: Tuple[str, ...] = DEFAULT_VOCABULARY
    layers: Tuple[str, ...] = DEFAULT_LAYERS
    rf: float = DEFAULT_RF
    cawal_threshold: float = DEFAULT_THRESHOLD
    cawal_bindings: Tuple[ContextBinding, ...] = field(default_factory=default_bindings)
    cawal_attenuate: bool = False
    hwad_alpha: float = DEFAULT_ALPHA
    hwad_gamma: float = DEFAULT_GAMMA
    hwad_cycles: int = 1
    shape_alpha: float = 1.0
    shape_boost_percent: float = 10.0
    score_floor: float = 0.0
    class_groups: Mapping[str, Tuple[str, ...]] = field(
        default_factory=lambda: dict(DEFAULT_CLASS_GROUPS)
    )
    paths: Mapping[str, Optional[Path]] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        vocabulary = tuple(canonical_class_name(c) for c in self.vocabulary)
        if not vocabulary or len(set(vocabulary)) != len(vocabulary):
            raise ConfigError("vocabulary must be a non-empty list of distinct classes")
        object.__setattr__(self, "vocabulary", vocabulary)

        layers = tuple(self.layers)
        unknown = [name for name in layers if name not in LAYER_NAMES]
        if unknown:
            raise ConfigError(f"Unknown layer(s) {unknown}; choose from {list(LAYER_NAMES)}")
        if len(set(layers)) != len(layers):
            raise ConfigError(f"Layer listed more than once: {list(layers)}")
        object.__setattr__(self, "layers", layers)

        for name in ("rf", "cawal_threshold", "hwad_alpha", "score_floor"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
        if self.hwad_gamma < 0:
            raise ConfigError(f"hwad_gamma must be >= 0, got {self.hwad_gamma}")
        if self.hwad_cycles < 1:
            raise ConfigError(f"hwad_cycles must be >= 1, got {self.hwad_cycles}")
        if not self.shape_alpha > 0:
            raise ConfigError(f"shape_alpha must be > 0, got {self.shape_alpha}")
        if self.shape_boost_percent < 0:
            raise ConfigError(
                f"shape_boost_percent must be >= 0, got {self.shape_boost_percent}"
            )

        groups = {
            str(g): tuple(canonical_class_name(c) for c in classes)
            for g, classes in self.class_groups.items()
        }
        grouped = [c for classes in groups.values() for c in classes]
        if sorted(grouped) != sorted(vocabulary):
            raise ConfigError("class_groups must partition the vocabulary")
        object.__setattr__(self, "class_groups", groups)

        for binding in self.cawal_bindings:
            for c in binding.boosted_classes | binding.attenuate_classes:
                if c not in vocabulary:
                    raise ConfigError(f"CAWAL binding '{binding.name}' names unknown class '{c}'")

        for key in self.paths:
            if key not in PATH_KEYS:
                raise ConfigError(f"Unknown path key '{key}'; choose from {list(PATH_KEYS)}")

    def is_enabled(self, layer: str) -> bool:
        return layer in self.layers

    def path(self, key: str) -> Optional[Path]:
        return self.paths.get(key)

    def with_paths(self, **overrides: Optional[Union[str, Path]]) -> "PipelineConfig":
        """Return a copy with the given paths replaced; None values are ignored."""
        paths = dict(self.paths)
        for key, value in overrides.items():
            if value is not None:
                paths[key] = Path(value)
        return replace(self, paths=paths)

    def to_dict(self) -> Dict[str, Any]:
        """Serializable form, accepted back by :func:`config_from_dict`."""
        return {
            "vocabulary": list(self.vocabulary),
            "layers": list(self.layers),
            "redundancy": {"rf": self.rf},
            "cawal": {
                "threshold": self.cawal_threshold,
                "attenuate": self.cawal_attenuate,
                "bindings": [
                    {
                        "name": b.name,
                        "context": sorted(b.context_labels),
                        "boost": sorted(b.boosted_classes),
                        "attenuate": sorted(b.attenuate_classes),
                        "adjust_percent": b.adjust_percent,
                        "threshold": b.threshold,
                    }
                    for b in self.cawal_bindings
                ],
            },
            "hwad": {
                "alpha": self.hwad_alpha,
                "gamma": self.hwad_gamma,
                "cycles": self.hwad_cycles,
            },
            "shape_gate": {
                "alpha": self.shape_alpha,
                "boost_percent": self.shape_boost_percent,
            },
            "score_floor": self.score_floor,
            "class_groups": {g: list(c) for g, c in self.class_groups.items()},
            "paths": {k: str(v) for k, v in self.paths.items() if v is not None},
            "seed": self.seed,
        }


_SECTIONS = {
    "redundancy": {"rf": "rf"},
    "cawal": {"threshold": "cawal_threshold", "attenuate": "cawal_attenuate"},
    "hwad": {"alpha": "hwad_alpha", "gamma": "hwad_gamma", "cycles": "hwad_cycles"},
    "shape_gate": {"alpha": "shape_alpha", "boost_percent": "shape_boost_percent"},
}
_TOP_LEVEL = {"vocabulary", "layers", "score_floor", "class_groups", "paths", "seed"}
_BINDING_KEYS = {"name", "context", "boost", "attenuate", "adjust_percent", "threshold"}


def _section(data: Mapping[str, Any], name: str) -> Mapping[str, Any]:
    value = data.get(name) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"'{name}' must be a mapping")
    return value


def _parse_bindings(raw: Any, threshold: float) -> Tuple[ContextBinding, ...]:
    if not isinstance(raw, list):
        raise ConfigError("'cawal.bindings' must be a list")
    bindings = []
    for i, item in enumerate(raw):
        if not isinstance(item, dict):
            raise ConfigError(f"cawal.bindings[{i}] must be a mapping")
        unknown = set(item) - _BINDING_KEYS
        if unknown:
            raise ConfigError(f"Unknown key(s) {sorted(unknown)} in cawal.bindings[{i}]")
        try:
            bindings.append(
                ContextBinding(
                    name=str(item.get("name", f"binding-{i}")),
                    context_labels=frozenset(item.get("context", [])),
                    boosted_classes=frozenset(item.get("boost", [])),
                    attenuate_classes=frozenset(item.get("attenuate", [])),
                    adjust_percent=float(item.get("adjust_percent", 10.0)),
                    threshold=float(item.get("threshold", threshold)),
                )
            )
        except (ValueError, TypeError, PgRulesError) as e:
            raise ConfigError(f"Invalid cawal.bindings[{i}]: {e}") from e
    return tuple(bindings)


def config_from_dict(
    data: Optional[Mapping[str, Any]], base_dir: Optional[Path] = None
) -> PipelineConfig:
    """
    Build a PipelineConfig from parsed YAML.

    Raises:
        ConfigError: On unknown keys or invalid values
    """
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("Configuration must be a mapping")
    unknown = set(data) - _TOP_LEVEL - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"Unknown configuration key(s): {sorted(unknown)}")

    kwargs: Dict[str, Any] = {}
    for key in ("vocabulary", "layers"):
        if key in data:
            if not isinstance(data[key], list):
                raise ConfigError(f"'{key}' must be a list")
            kwargs[key] = tuple(data[key])
    for key in ("score_floor", "seed"):
        if key in data:
            kwargs[key] = data[key]
    if "class_groups" in data:
        if not isinstance(data["class_groups"], dict):
            raise ConfigError("'class_groups' must be a mapping")
        kwargs["class_groups"] = data["class_groups"]

    for section, mapping in _SECTIONS.items():
        values = _section(data, section)
        allowed = set(mapping) | ({"bindings"} if section == "cawal" else set())
        unknown = set(values) - allowed
        if unknown:
            raise ConfigError(f"Unknown key(s) {sorted(unknown)} in '{section}'")
        for key, target in mapping.items():
            if key in values:
                kwargs[target] = values[key]

    cawal = _section(data, "cawal")
    threshold = float(kwargs.get("cawal_threshold", DEFAULT_THRESHOLD))
    if "bindings" in cawal:
        kwargs["cawal_bindings"] = _parse_bindings(cawal["bindings"], threshold)
    elif "cawal_threshold" in kwargs:
        try:
            kwargs["cawal_bindings"] = default_bindings(threshold)
        except ValueError as e:
            raise ConfigError(str(e)) from e

    paths = _section(data, "paths")
    resolved: Dict[str, Optional[Path]] = {}
    for key, value in paths.items():
        if value is None:
            continue
        path = Path(str(value))
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        resolved[key] = path
    kwargs["paths"] = resolved

    for key in ("rf", "cawal_threshold", "hwad_alpha", "hwad_gamma", "score_floor"):
        if key in kwargs and (
            not isinstance(kwargs[key], (int, float)) or isinstance(kwargs[key], bool)
        ):
            raise ConfigError(f"'{key}' must be a number, got {kwargs[key]!r}")

    try:
        return PipelineConfig(**kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError, PgRulesError) as e:
        raise ConfigError(f"Invalid configuration: {e}") from e


def load_config(path: Union[str, Path]) -> PipelineConfig:
    """
    Load a YAML or JSON configuration file.

    Raises:
        FileNotFoundError: If the file doesn't exist
        ConfigError: If the file is not valid YAML or has invalid settings
    """
    config_path = Path(path)
    if not config_path.exists():
        raise FileNotFoundError(f"Input file not found: {path}")
    try:
        with open(config_path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"Could not parse {config_path}: {e}") from e

    cfg = config_from_dict(data, base_dir=config_path.parent)
    logger.info(f"Loaded configuration from {config_path} (layers: {', '.join(cfg.layers)})")
    return cfg


def dump_config(cfg: PipelineConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, allow_unicode=True)


__all__ = [
    "LAYER_CONTAINMENT",
    "LAYER_OVERLAP",
    "LAYER_CAWAL",
    "LAYER_HWAD",
    "LAYER_SHAPE_GATE",
    "LAYER_NAMES",
    "DEFAULT_LAYERS",
    "PATH_KEYS",
    "LAND_CLASSES",
    "default_bindings",
    "PipelineConfig",
    "config_from_dict",
    "load_config",
    "dump_config",
]
