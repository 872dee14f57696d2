"""Declarative model grid: the base model and its 8-way factor ablation."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class ModelSpec:
    """Which factor blocks enter the intercept and slope."""

    include_level: bool = False
    include_subject: bool = False
    include_kc_type: bool = False
    name: str = "model 0"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "level": self.include_level,
            "subject": self.include_subject,
            "kc_type": self.include_kc_type,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelSpec":
        return cls(
            include_level=bool(obj["level"]),
            include_subject=bool(obj["subject"]),
            include_kc_type=bool(obj["kc_type"]),
            name=str(obj["name"]),
        )

    def included_factors(self) -> tuple:
        out = []
        if self.include_level:
            out.append("level")
        if self.include_subject:
            out.append("subject")
        if self.include_kc_type:
            out.append("kc_type")
        return tuple(out)


# Hard-coded row order of the published comparison table, not a binary
# counter: singles (level, subject, kc_type), pairs, then all three.
_GRID = (
    (False, False, False),
    (True, False, False),
    (False, True, False),
    (False, False, True),
    (True, True, False),
    (True, False, True),
    (False, True, True),
    (True, True, True),
)


def base_model() -> ModelSpec:
    """No factor blocks: intercept, slope, exercise types, simplified."""
    return ablation_grid()[0]


def ablation_grid() -> tuple:
    """All 8 factor combinations in the canonical report order."""
    return tuple(
        ModelSpec(
            include_level=lvl,
            include_subject=sub,
            include_kc_type=kct,
            name=f"model {i}",
        )
        for i, (lvl, sub, kct) in enumerate(_GRID)
    )
