"""
Exception hierarchy for pgrules.

Every error raised on purpose by the package derives from PgRulesError so
callers (and the CLI) can tell rule-engine failures apart from bugs. Input
validation errors also derive from ValueError, matching how the rest of the
package reports bad arguments.
"""

from typing import Optional


class PgRulesError(Exception):
    """Base exception for all pgrules errors."""


class SchemaError(PgRulesError, ValueError):
    """Raised when a document does not follow its expected schema."""

    def __init__(
        self, message: str, field: Optional[str] = None, line: Optional[int] = None
    ):
        self.field = field
        self.line = line
        details = []
        if field:
            details.append(f"field '{field}'")
        if line is not None:
            details.append(f"line {line}")
        if details:
            message = f"{message} ({', '.join(details)})"
        super().__init__(message)


class UnknownClass(PgRulesError, ValueError):
    """Raised when a class name is not part of the active vocabulary."""

    def __init__(self, name: str, where: str = "vocabulary"):
        self.name = name
        super().__init__(f"Unknown class '{name}' (not in {where})")


class WeightOutOfRange(PgRulesError, ValueError):
    """Raised when a rule weight lies outside [0, 1]."""


class ConflictingRelation(PgRulesError, ValueError):
    """Raised when size relations contradict each other or form a cycle."""


class NegativeCount(PgRulesError, ValueError):
    """Raised when a shape count or count range is negative."""


class ZeroAreaBox(PgRulesError, ValueError):
    """Raised when an overlap ratio would divide by a zero box area."""


class EmptySceneMap(PgRulesError, ValueError):
    """Raised when a scene label map holds no labels at all."""


class MissingLogits(PgRulesError, ValueError):
    """Raised when a logit adjustment targets a detection without logits."""


class NoEvidence(PgRulesError):
    """Raised when a rule has no satisfied or violated observations."""


class DegenerateEvidence(PgRulesError):
    """Raised when the total evidence probability P(E) is zero."""


class InvalidCounts(PgRulesError, ValueError):
    """Raised when box counts cannot form a reduction percentage."""


class ProvenanceMismatch(PgRulesError, ValueError):
    """Raised when refined detections cannot be traced to the baseline."""


class ConfigError(PgRulesError, ValueError):
    """Raised when a pipeline configuration is invalid."""


class KnowledgeWriteError(PgRulesError):
    """Raised when a knowledge document cannot be written."""


class KnowledgeClientError(PgRulesError):
    """Base exception for knowledge client errors."""

    def __init__(self, message: str, status_code: Optional[int] = None):
        self.status_code = status_code
        super().__init__(message)


class NetworkError(KnowledgeClientError):
    """Raised when the knowledge endpoint cannot be reached."""


class AuthError(KnowledgeClientError):
    """Raised on HTTP 401/403 from the knowledge endpoint."""


class ValidationError(KnowledgeClientError):
    """Raised when a knowledge response fails validation."""


__all__ = [
    "PgRulesError",
    "SchemaError",
    "UnknownClass",
    "WeightOutOfRange",
    "ConflictingRelation",
    "NegativeCount",
    "ZeroAreaBox",
    "EmptySceneMap",
    "MissingLogits",
    "NoEvidence",
    "DegenerateEvidence",
    "InvalidCounts",
    "ProvenanceMismatch",
    "ConfigError",
    "KnowledgeWriteError",
    "KnowledgeClientError",
    "NetworkError",
    "AuthError",
    "ValidationError",
]
