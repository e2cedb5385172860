"""
Hybrid weight adjustment (HWAD) for size rules.

Rules such as "car isSmallerThan bus" are checked on every image holding
both classes, comparing mean box areas. The satisfaction counts feed a
Bayesian update of the rule's truth value, which is blended with the
weight the LLM originally assigned:

    P(E|T)  = c_sat / n          P(E|not T) = c_not_sat / n
    P(E)    = P(E|T) P(T) + P(E|not T) (1 - P(T))
    P(T|E)  = P(E|T) P(T) / P(E)
    weight  = (1 - alpha) * initial_llm_weight + alpha * P(T|E)

With these definitions P(E|T) + P(E|not T) is always 1; the update keeps
that form exactly.

Detections are then adjusted per image: a detection whose own box area
agrees with a rule against the co-detected object class has its own-class
logit multiplied by ``1 + weight*gamma``, a disagreeing one by
``1 - weight*gamma``.
"""

import enum
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .detections import DEFAULT_VOCABULARY, DetectionSet, scale_detection
from .errors import DegenerateEvidence, NoEvidence
from .geometry import areas
from .knowledge import IS_SMALLER, KnowledgeGraph, SizeRule

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.50
DEFAULT_GAMMA = 0.10


class RuleOutcome(enum.Enum):
    SATISFIED = "satisfied"
    VIOLATED = "violated"
    NOT_APPLICABLE = "not_applicable"


@dataclass(frozen=True)
class RuleStats:
    """Per-rule counters: images with the subject, satisfactions, violations."""

    c_obj: int = 0
    c_sat: int = 0
    c_not_sat: int = 0

    @property
    def n(self) -> int:
        return self.c_sat + self.c_not_sat

    def __add__(self, other: "RuleStats") -> "RuleStats":
        return RuleStats(
            self.c_obj + other.c_obj,
            self.c_sat + other.c_sat,
            self.c_not_sat + other.c_not_sat,
        )


@dataclass(frozen=True)
class PosteriorUpdate:
    likelihood_sat: float
    likelihood_not: float
    evidence: float
    posterior: float
    blended: Optional[float] = None


@dataclass(frozen=True)
class RuleUpdate:
    """Trace entry for one rule in one update cycle."""

    rule: SizeRule
    stats: RuleStats
    prior: float
    update: Optional[PosteriorUpdate]
    weight: float

    @property
    def status(self) -> str:
        if self.update is not None:
            return "updated"
        return "zero_prior" if self.prior == 0 and self.stats.n else "no_evidence"

    def to_dict(self) -> Dict[str, Any]:
        record: Dict[str, Any] = {
            "subject": self.rule.subject,
            "relation": self.rule.relation,
            "object": self.rule.object,
            "c_obj": self.stats.c_obj,
            "c_sat": self.stats.c_sat,
            "c_not_sat": self.stats.c_not_sat,
            "prior": self.prior,
            "status": self.status,
            "weight": self.weight,
        }
        if self.update is not None:
            record.update(
                {
                    "likelihood_sat": self.update.likelihood_sat,
                    "likelihood_not": self.update.likelihood_not,
                    "evidence": self.update.evidence,
                    "posterior": self.update.posterior,
                }
            )
        return record


def class_mean_areas(ds: DetectionSet) -> Dict[str, float]:
    """Mean box area per class present in the set."""
    if not len(ds):
        return {}
    box_areas = areas(ds.boxes_array())
    labels = np.asarray(ds.labels, dtype=object)
    return {
        label: float(box_areas[labels == label].mean()) for label in dict.fromkeys(ds.labels)
    }


def _agrees(rule: SizeRule, subject_size: float, object_size: float) -> bool:
    if rule.relation == IS_SMALLER:
        return subject_size < object_size
    return subject_size > object_size


def evaluate_rule_on_image(rule: SizeRule, ds: DetectionSet) -> RuleOutcome:
    """
    Check a size rule on one image using mean box area per class.

    Example:
        >>> from pgrules.detections import Detection
        >>> from pgrules.geometry import Box
        >>> rule = SizeRule("car", "isSmallerThan", "bus", 0.9, 0.9)
        >>> ds = DetectionSet("img", (
        ...     Detection("a", Box(0, 0, 3, 4), "car", 0.9),
        ...     Detection("b", Box(0, 0, 10, 20), "bus", 0.9),
        ... ))
        >>> evaluate_rule_on_image(rule, ds)
        <RuleOutcome.SATISFIED: 'satisfied'>
    """
    means = class_mean_areas(ds)
    if rule.subject not in means or rule.object not in means:
        return RuleOutcome.NOT_APPLICABLE
    if _agrees(rule, means[rule.subject], means[rule.object]):
        return RuleOutcome.SATISFIED
    return RuleOutcome.VIOLATED


def accumulate_rule_stats(rule: SizeRule, dataset: Sequence[DetectionSet]) -> RuleStats:
    """
    Count rule outcomes over a dataset.

    Images holding the subject but not the object count toward ``c_obj``
    only.
    """
    c_obj = c_sat = c_not_sat = 0
    for ds in dataset:
        if rule.subject not in ds.labels:
            continue
        c_obj += 1
        outcome = evaluate_rule_on_image(rule, ds)
        if outcome is RuleOutcome.SATISFIED:
            c_sat += 1
        elif outcome is RuleOutcome.VIOLATED:
            c_not_sat += 1
    return RuleStats(c_obj=c_obj, c_sat=c_sat, c_not_sat=c_not_sat)


def _check_unit(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")


def posterior_update(stats: RuleStats, prior: float) -> PosteriorUpdate:
    """
    Bayesian update of a rule's truth value from its counters.

    Args:
        stats: Accumulated rule counters
        prior: Current truth value P(T)

    Returns:
        Likelihoods, evidence and posterior

    Raises:
        NoEvidence: If no image satisfied or violated the rule
        DegenerateEvidence: If P(E) is zero
        ValueError: If prior is outside (0, 1]

    Example:
        >>> u = posterior_update(RuleStats(4, 3, 1), 0.8)
        >>> round(u.evidence, 6), round(u.posterior, 6)
        (0.65, 0.923077)
    """
    if not 0.0 < prior <= 1.0:
        raise ValueError(f"prior must lie in (0, 1], got {prior}")
    n = stats.n
    if n == 0:
        raise NoEvidence("Rule has no satisfied or violated observations")

    likelihood_sat = stats.c_sat / n
    likelihood_not = stats.c_not_sat / n
    evidence = likelihood_sat * prior + likelihood_not * (1.0 - prior)
    if evidence == 0:
        raise DegenerateEvidence(
            f"Total evidence is zero (c_sat={stats.c_sat}, c_not_sat={stats.c_not_sat}, "
            f"prior={prior})"
        )
    posterior = min(1.0, max(0.0, likelihood_sat * prior / evidence))
    return PosteriorUpdate(
        likelihood_sat=likelihood_sat,
        likelihood_not=likelihood_not,
        evidence=evidence,
        posterior=posterior,
    )


def blend_weight(
    initial_llm_weight: float, posterior: float, alpha: float = DEFAULT_ALPHA
) -> float:
    """
    Convex blend of the LLM weight and the data posterior.

    Example:
        >>> round(blend_weight(0.8, 12 / 13, 0.5), 6)
        0.861538
    """
    _check_unit("initial_llm_weight", initial_llm_weight)
    _check_unit("posterior", posterior)
    _check_unit("alpha", alpha)
    blended = (1.0 - alpha) * initial_llm_weight + alpha * posterior
    return min(1.0, max(0.0, blended))


def update_rule_weights(
    kg: KnowledgeGraph, dataset: Sequence[DetectionSet], alpha: float = DEFAULT_ALPHA
) -> Tuple[KnowledgeGraph, List[RuleUpdate]]:
    """
    Run one update cycle and return the new graph with its per-rule trace.

    Rules without evidence keep their weight, and so do rules whose current
    weight is 0. The input graph is not modified.
    """
    _check_unit("alpha", alpha)
    rules = []
    trace = []
    for rule in kg.rules:
        stats = accumulate_rule_stats(rule, dataset)
        if rule.weight == 0:
            if stats.n:
                logger.warning(f"Rule {' '.join(rule.key)} has weight 0 and cannot be updated")
            rules.append(rule)
            trace.append(RuleUpdate(rule, stats, rule.weight, None, rule.weight))
            continue
        try:
            update = posterior_update(stats, rule.weight)
        except NoEvidence:
            rules.append(rule)
            trace.append(RuleUpdate(rule, stats, rule.weight, None, rule.weight))
            continue

        weight = blend_weight(rule.initial_llm_weight, update.posterior, alpha)
        update = PosteriorUpdate(
            update.likelihood_sat,
            update.likelihood_not,
            update.evidence,
            update.posterior,
            blended=weight,
        )
        rules.append(
            SizeRule(rule.subject, rule.relation, rule.object, weight, rule.initial_llm_weight)
        )
        trace.append(RuleUpdate(rule, stats, rule.weight, update, weight))

    updated = sum(1 for t in trace if t.update is not None)
    logger.info(f"HWAD cycle updated {updated} of {len(trace)} rules")
    return kg.with_rules(rules), trace


def run_hwad_update_cycle(
    kg: KnowledgeGraph, dataset: Sequence[DetectionSet], alpha: float = DEFAULT_ALPHA
) -> KnowledgeGraph:
    """Replace every evidenced rule weight by its blended posterior."""
    updated, _ = update_rule_weights(kg, dataset, alpha)
    return updated


def run_hwad_cycles(
    kg: KnowledgeGraph,
    dataset: Sequence[DetectionSet],
    alpha: float = DEFAULT_ALPHA,
    cycles: int = 1,
) -> Tuple[KnowledgeGraph, List[List[RuleUpdate]]]:
    """Repeat the update cycle, each time using the previous weights as priors."""
    if cycles < 1:
        raise ValueError(f"cycles must be >= 1, got {cycles}")
    traces = []
    for _ in range(cycles):
        kg, trace = update_rule_weights(kg, dataset, alpha)
        traces.append(trace)
    return kg, traces


def apply_hwad(
    ds: DetectionSet,
    kg: KnowledgeGraph,
    gamma: float = DEFAULT_GAMMA,
    vocabulary: Sequence[str] = DEFAULT_VOCABULARY,
) -> DetectionSet:
    """
    Adjust own-class logits of detections by the size rules they satisfy.

    For each detection and each rule whose subject is the detection's class
    and whose object class is also present in the image, the detection's
    own area is compared with the object class mean area. Agreement
    multiplies the own-class logit by ``1 + weight*gamma``, disagreement by
    ``max(0, 1 - weight*gamma)``. Detections with no applicable rule are
    left untouched.

    Raises:
        ValueError: If gamma is negative
        MissingLogits: If the set carries logits but an adjusted detection does not
    """
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    if gamma == 0 or not len(ds) or not kg.rules:
        return ds

    means = class_mean_areas(ds)
    own_areas = areas(ds.boxes_array())
    require_logits = ds.has_logits

    adjusted = []
    changed = 0
    for d, own_area in zip(ds.detections, own_areas):
        factor = 1.0
        for rule in kg.rules_for_subject(d.label):
            if rule.object not in means:
                continue
            step = rule.weight * gamma
            if _agrees(rule, float(own_area), means[rule.object]):
                factor *= 1.0 + step
            else:
                factor *= max(0.0, 1.0 - step)
        if factor != 1.0:
            d = scale_detection(d, factor, vocabulary, require_logits=require_logits)
            changed += 1
        adjusted.append(d)

    if not changed:
        return ds
    logger.debug(f"{ds.image_id}: HWAD adjusted {changed} detections")
    return ds.with_detections(adjusted)


__all__ = [
    "DEFAULT_ALPHA",
    "DEFAULT_GAMMA",
    "RuleOutcome",
    "RuleStats",
    "PosteriorUpdate",
    "RuleUpdate",
    "class_mean_areas",
    "evaluate_rule_on_image",
    "accumulate_rule_stats",
    "posterior_update",
    "blend_weight",
    "update_rule_weights",
    "run_hwad_update_cycle",
    "run_hwad_cycles",
    "apply_hwad",
]
