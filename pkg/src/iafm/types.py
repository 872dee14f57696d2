"""Canonical domain types shared by all modules.

Plain immutable containers plus validation; no I/O and no numerics beyond
invariant checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .errors import EmptyId, NegativeTimestamp, UnknownExerciseType

# Reserved level for rows whose subject/level/kc_type label is missing.
# The tagging upstream is lossy, so "unknown" takes part in factor coding
# like any observed level.
UNKNOWN_LABEL = "unknown"


class ExerciseType(Enum):
    MULTIPLE_CHOICE = "MultipleChoice"
    FILL_IN_THE_BLANK = "FillInTheBlank"
    PAIR_MATCHING = "PairMatching"
    HIGHLIGHT_THE_MISTAKE = "HighlightTheMistake"


class KcType(Enum):
    ASSOCIATION = "association"
    CATEGORY = "category"
    CONCEPT = "concept"
    FACT = "fact"
    PRINCIPLE_RULE_MODEL = "principle/rule/model"
    PRODUCTION_SCHEMA_SKILL = "production/schema/skill"
    RULE_PLAN = "rule/plan"


EXERCISE_TYPE_ORDER = tuple(ExerciseType)


@dataclass(frozen=True)
class InteractionRecord:
    """One student x exercise attempt (first-attempt correctness)."""

    student_id: str
    kc_id: str
    exercise_id: str
    timestamp: int  # milliseconds since epoch
    correct: bool
    exercise_type: ExerciseType
    simplified: bool
    subject: Optional[str] = None
    level: Optional[str] = None
    kc_type: Optional[str] = None


@dataclass(frozen=True)
class OpportunityRow:
    """An InteractionRecord plus its 0-based prior-opportunity count.

    The first attempt on a (student, KC) pair has opportunity_index 0, so
    the model intercept reads as pre-practice knowledge. Reports display
    it 1-based.
    """

    record: InteractionRecord
    opportunity_index: int

    def __getattr__(self, name):
        # Delegate record fields so rows read like flat records.
        if name.startswith("_") or name == "record":
            raise AttributeError(name)
        return getattr(object.__getattribute__(self, "record"), name)


@dataclass(frozen=True)
class FilterConfig:
    """Dataset filtering thresholds.

    min_kc_interactions: drop KCs with fewer total interactions (across
    all students). max_opportunity_index: drop rows whose 0-based index is
    >= this bound (default 30 keeps opportunities 1..30).
    """

    min_kc_interactions: int = 5
    max_opportunity_index: int = 30

    def __post_init__(self):
        if self.min_kc_interactions < 1:
            raise ValueError("min_kc_interactions must be >= 1")
        if self.max_opportunity_index < self.min_kc_interactions:
            raise ValueError(
                "max_opportunity_index must be >= min_kc_interactions"
            )


@dataclass(frozen=True)
class FactorLevels:
    """Observed factor labels, deduplicated and sorted for deterministic
    design-column ordering."""

    subjects: tuple = ()
    levels: tuple = ()
    kc_types: tuple = ()

    @classmethod
    def from_rows(cls, rows) -> "FactorLevels":
        subjects = set()
        levels = set()
        kc_types = set()
        for r in rows:
            subjects.add(r.subject if r.subject is not None else UNKNOWN_LABEL)
            levels.add(r.level if r.level is not None else UNKNOWN_LABEL)
            kc_types.add(r.kc_type if r.kc_type is not None else UNKNOWN_LABEL)
        return cls(
            subjects=tuple(sorted(subjects)),
            levels=tuple(sorted(levels)),
            kc_types=tuple(sorted(kc_types)),
        )

    def for_factor(self, factor: str) -> tuple:
        return {"subject": self.subjects, "level": self.levels,
                "kc_type": self.kc_types}[factor]


def validate_record(record: InteractionRecord) -> InteractionRecord:
    """Return the record unchanged if all invariants hold.

    Raises EmptyId / NegativeTimestamp / UnknownExerciseType naming the
    offending field. Idempotent on valid records.
    """
    for name in ("student_id", "kc_id", "exercise_id"):
        value = getattr(record, name)
        if not isinstance(value, str) or value == "":
            raise EmptyId(f"{name} must be a nonempty string", field=name)
    if record.timestamp < 0:
        raise NegativeTimestamp(
            f"timestamp must be >= 0, got {record.timestamp}",
            field="timestamp",
        )
    if not isinstance(record.exercise_type, ExerciseType):
        raise UnknownExerciseType(
            f"exercise_type {record.exercise_type!r} is not a known type",
            field="exercise_type",
        )
    return record
