"""
Context-aware weight adjustment (CAWAL).

Scene-label grids of each image are flattened into lists of labels. When
the share of labels belonging to a binding's context (for example
``water``) is strictly above the binding's threshold, the logits of every
detection of the bound classes are multiplied by ``1 + adjust_percent/100``.

Negative logits are scaled by the same factor, which moves them further
from zero and lowers the matching score.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Sequence, Tuple, Union

import numpy as np

from .detections import DEFAULT_VOCABULARY, DetectionSet, canonical_class_name, scale_detection
from .errors import EmptySceneMap, SchemaError
from .utils import read_json

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.30


@dataclass(frozen=True)
class SceneLabelMap:
    """Predicted scene labels of one image, one list per grid row."""

    image_id: str
    labels: Tuple[Tuple[str, ...], ...]

    @classmethod
    def from_grid(
        cls, image_id: str, legend: Mapping[Any, str], grid: Sequence[Sequence[Any]]
    ) -> "SceneLabelMap":
        """
        Translate a grid of label ids through its legend.

        Raises:
            SchemaError: If a grid cell holds an id missing from the legend
        """
        names = {str(k): canonical_class_name(v) for k, v in legend.items()}
        rows = []
        for r, row in enumerate(grid):
            if not isinstance(row, (list, tuple)):
                raise SchemaError("Grid rows must be lists", field=f"grid[{r}]")
            translated = []
            for c, cell in enumerate(row):
                key = str(cell)
                if key not in names:
                    raise SchemaError(
                        f"Scene label id {cell!r} is not in the legend",
                        field=f"grid[{r}][{c}]",
                    )
                translated.append(names[key])
            rows.append(tuple(translated))
        return cls(image_id=str(image_id), labels=tuple(rows))

    @property
    def total(self) -> int:
        return sum(len(row) for row in self.labels)

    def flat(self) -> np.ndarray:
        if not self.total:
            return np.array([], dtype=object)
        return np.concatenate([np.asarray(row, dtype=object) for row in self.labels])


@dataclass(frozen=True)
class ContextBinding:
    """
    One context rule: scene labels that trigger it and the classes it boosts.

    ``attenuate_classes`` are scaled by ``1 - adjust_percent/100`` when the
    binding fires and attenuation is enabled for the run.
    """

    context_labels: FrozenSet[str]
    boosted_classes: FrozenSet[str]
    adjust_percent: float = 10.0
    threshold: float = DEFAULT_THRESHOLD
    attenuate_classes: FrozenSet[str] = field(default_factory=frozenset)
    name: str = ""

    def __post_init__(self):
        for name in ("context_labels", "boosted_classes", "attenuate_classes"):
            names = frozenset(canonical_class_name(c) for c in getattr(self, name))
            object.__setattr__(self, name, names)
        if not self.context_labels:
            raise ValueError("Context binding needs at least one context label")
        if not self.boosted_classes:
            raise ValueError("Context binding needs at least one boosted class")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"Threshold must lie in [0, 1], got {self.threshold}")
        if self.adjust_percent < 0:
            raise ValueError(f"adjust_percent must be >= 0, got {self.adjust_percent}")
        if self.attenuate_classes and self.adjust_percent > 100:
            raise ValueError("Attenuation needs adjust_percent <= 100")

    @property
    def beta(self) -> float:
        return self.adjust_percent / 100.0


def context_fraction(p: SceneLabelMap, context_labels: Iterable[str]) -> float:
    """
    Share of scene labels that belong to ``context_labels``.

    Raises:
        EmptySceneMap: If the map holds no labels

    Example:
        >>> m = SceneLabelMap("a", (("water", "water", "land"), ("water", "land", "land")))
        >>> context_fraction(m, {"water"})
        0.5
    """
    flat = p.flat()
    if flat.size == 0:
        raise EmptySceneMap(f"Scene map for '{p.image_id}' holds no labels")
    hits = int(np.isin(flat, list(context_labels)).sum())
    return hits / flat.size


def binding_fires(p: SceneLabelMap, binding: ContextBinding) -> bool:
    """True when the context share is strictly above the binding threshold."""
    return context_fraction(p, binding.context_labels) > binding.threshold


def apply_cawal(
    ds: DetectionSet,
    p: SceneLabelMap,
    binding: ContextBinding,
    vocabulary: Sequence[str] = DEFAULT_VOCABULARY,
    attenuate: bool = False,
) -> DetectionSet:
    """
    Apply one context binding to the detections of an image.

    Below or at the threshold the input set is returned as is. Above it,
    boosted detections get their whole logit row multiplied by ``1 + beta``
    and are re-scored from the own-class logit; sets without any logits
    have their scores scaled and clamped instead.

    Args:
        ds: Detections of the image
        p: Scene labels of the same image
        binding: Context rule to evaluate
        vocabulary: Class names indexing the logit rows
        attenuate: Also scale ``binding.attenuate_classes`` by ``1 - beta``

    Raises:
        EmptySceneMap: If the scene map is empty
        MissingLogits: If the set carries logits but a targeted detection does not
    """
    if not binding_fires(p, binding):
        return ds

    boost = 1.0 + binding.beta
    damp = 1.0 - binding.beta
    require_logits = ds.has_logits

    adjusted = []
    boosted = attenuated = 0
    for d in ds.detections:
        if d.label in binding.boosted_classes:
            d = scale_detection(d, boost, vocabulary, whole_row=True, require_logits=require_logits)
            boosted += 1
        elif attenuate and d.label in binding.attenuate_classes:
            d = scale_detection(d, damp, vocabulary, whole_row=True, require_logits=require_logits)
            attenuated += 1
        adjusted.append(d)

    logger.debug(
        f"{ds.image_id}: context '{binding.name or sorted(binding.context_labels)}' fired, "
        f"boosted {boosted}, attenuated {attenuated}"
    )
    return ds.with_detections(adjusted)


def apply_cawal_bindings(
    ds: DetectionSet,
    p: SceneLabelMap,
    bindings: Sequence[ContextBinding],
    vocabulary: Sequence[str] = DEFAULT_VOCABULARY,
    attenuate: bool = False,
) -> DetectionSet:
    """Evaluate each binding independently against the same scene map."""
    for binding in bindings:
        ds = apply_cawal(ds, p, binding, vocabulary, attenuate)
    return ds


def parse_scene_map(record: Any, where: str = "<scene>") -> SceneLabelMap:
    """Parse ``{"image_id", "legend", "grid"}`` into a SceneLabelMap."""
    if not isinstance(record, dict):
        raise SchemaError("Scene map must be an object", field=where)
    for key in ("image_id", "legend", "grid"):
        if key not in record:
            raise SchemaError(f"Missing required key '{key}'", field=f"{where}.{key}")
    if not isinstance(record["legend"], dict):
        raise SchemaError("'legend' must be an object", field=f"{where}.legend")
    if not isinstance(record["grid"], list):
        raise SchemaError("'grid' must be a list", field=f"{where}.grid")
    try:
        return SceneLabelMap.from_grid(record["image_id"], record["legend"], record["grid"])
    except SchemaError as e:
        raise SchemaError(str(e), field=f"{where}") from e


def parse_scene_document(data: Any) -> Dict[str, SceneLabelMap]:
    """
    Parse a scene file: one map, a list of maps, or ``{"scenes": [...]}``.

    Returns:
        Scene maps keyed by image id
    """
    if isinstance(data, dict) and "scenes" in data:
        records = data["scenes"]
    elif isinstance(data, list):
        records = data
    else:
        records = [data]
    if not isinstance(records, list):
        raise SchemaError("'scenes' must be a list", field="scenes")

    maps: Dict[str, SceneLabelMap] = {}
    for i, record in enumerate(records):
        scene = parse_scene_map(record, where=f"scenes[{i}]")
        if scene.image_id in maps:
            raise SchemaError(f"Duplicate scene map for '{scene.image_id}'", field=f"scenes[{i}]")
        maps[scene.image_id] = scene
    return maps


def read_scene_maps(path: Union[str, Path]) -> Dict[str, SceneLabelMap]:
    """Read a scene file from disk."""
    maps = parse_scene_document(read_json(path))
    logger.info(f"Loaded scene maps for {len(maps)} images from {path}")
    return maps


def scene_maps_to_document(maps: Iterable[SceneLabelMap]) -> Dict[str, List]:
    """Serialize scene maps with a legend built from the labels in use."""
    scenes = []
    for scene in maps:
        names = sorted({label for row in scene.labels for label in row})
        ids = {name: i for i, name in enumerate(names)}
        scenes.append(
            {
                "image_id": scene.image_id,
                "legend": {str(i): name for name, i in ids.items()},
                "grid": [[ids[label] for label in row] for row in scene.labels],
            }
        )
    return {"scenes": scenes}


__all__ = [
    "DEFAULT_THRESHOLD",
    "SceneLabelMap",
    "ContextBinding",
    "context_fraction",
    "binding_fires",
    "apply_cawal",
    "apply_cawal_bindings",
    "parse_scene_map",
    "parse_scene_document",
    "read_scene_maps",
    "scene_maps_to_document",
]
