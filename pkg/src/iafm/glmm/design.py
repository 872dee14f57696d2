"""Fixed- and random-effect design construction.

Column layout is deterministic: intercept, scaled opportunity count,
exercise-type contrasts (enum order), simplified indicator, then one
block per included factor in the order level, subject, kc_type, each
block holding intercept contrasts followed by slope interactions.
Categorical contrasts are sum-to-zero (last level carries the negative
sum), so effects read as deviations from the grand mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import EmptyDataset, UnknownFactorLevel
from ..ingest import Dataset
from ..models import ModelSpec
from ..types import EXERCISE_TYPE_ORDER, UNKNOWN_LABEL
from .params import FitOptions

FACTOR_ORDER = ("level", "subject", "kc_type")


def _contrast_row(label, levels):
    """Sum-to-zero contrast values of one observation for an ordered
    level tuple; len(levels) - 1 entries."""
    k = len(levels)
    row = np.zeros(k - 1)
    if label == levels[-1]:
        row[:] = -1.0
    else:
        row[levels.index(label)] = 1.0
    return row


@dataclass(frozen=True)
class DesignMatrices:
    """Dense fixed-effect matrix plus per-student random-effect blocks.

    Rows are sorted by (student, kc, opportunity) so each student's rows
    are contiguous: block s spans ``block_bounds[s]:block_bounds[s+1]``.
    The random-effect design per row is the implicit pair
    (1, t_scaled[i]).
    """

    X: np.ndarray
    col_names: tuple
    y: np.ndarray
    t_scaled: np.ndarray
    student_ids: tuple
    block_bounds: np.ndarray
    t_scale: float
    exercise_types: tuple
    factor_levels: dict
    spec: ModelSpec

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_students(self) -> int:
        return len(self.student_ids)

    @property
    def n_fixed(self) -> int:
        return self.X.shape[1]

    def row_student_index(self) -> np.ndarray:
        sizes = np.diff(self.block_bounds)
        return np.repeat(np.arange(self.n_students), sizes)


def expected_columns(spec: ModelSpec, n_exercise_types: int,
                     factor_levels: dict) -> int:
    p = 2 + max(n_exercise_types - 1, 0) + 1
    for factor in spec.included_factors():
        p += 2 * max(len(factor_levels[factor]) - 1, 0)
    return p


def build_design(dataset: Dataset, spec: ModelSpec,
                 opts: FitOptions = FitOptions()) -> DesignMatrices:
    """Assemble design matrices for one model over a filtered dataset."""
    rows = dataset.rows
    if not rows:
        raise EmptyDataset("cannot build a design from an empty dataset")

    observed_types = tuple(
        t for t in EXERCISE_TYPE_ORDER
        if any(r.exercise_type is t for r in rows)
    )
    factor_levels = {
        "level": tuple(dataset.factor_levels.levels),
        "subject": tuple(dataset.factor_levels.subjects),
        "kc_type": tuple(dataset.factor_levels.kc_types),
    }

    n = len(rows)
    t_scaled = np.array([r.opportunity_index for r in rows], dtype=float)
    t_scaled *= opts.t_scale
    y = np.array([1.0 if r.correct else 0.0 for r in rows])

    cols = [np.ones(n), t_scaled]
    names = ["intercept", "t_scaled"]

    type_levels = tuple(t.value for t in observed_types)
    if len(type_levels) > 1:
        type_contrasts = np.empty((n, len(type_levels) - 1))
        for i, r in enumerate(rows):
            type_contrasts[i] = _contrast_row(r.exercise_type.value,
                                              type_levels)
        for j, label in enumerate(type_levels[:-1]):
            cols.append(type_contrasts[:, j])
            names.append(f"ex_type[{label}]")

    cols.append(np.array([1.0 if r.simplified else 0.0 for r in rows]))
    names.append("simplified")

    for factor in FACTOR_ORDER:
        if factor not in spec.included_factors():
            continue
        levels = factor_levels[factor]
        if len(levels) < 2:
            continue  # single level: zero contrasts by coding degeneracy
        contrasts = np.empty((n, len(levels) - 1))
        for i, r in enumerate(rows):
            label = getattr(r, factor) or UNKNOWN_LABEL
            if label not in levels:
                raise UnknownFactorLevel(
                    f"{factor} label {label!r} not among design levels"
                )
            contrasts[i] = _contrast_row(label, levels)
        for j, label in enumerate(levels[:-1]):
            cols.append(contrasts[:, j])
            names.append(f"theta_{factor}[{label}]")
        for j, label in enumerate(levels[:-1]):
            cols.append(contrasts[:, j] * t_scaled)
            names.append(f"delta_{factor}[{label}]")

    X = np.column_stack(cols)

    student_ids = []
    bounds = [0]
    for i, r in enumerate(rows):
        if not student_ids or r.student_id != student_ids[-1]:
            student_ids.append(r.student_id)
            if i:
                bounds.append(i)
    bounds.append(n)

    nominal = expected_columns(spec, len(observed_types), factor_levels)
    if X.shape[1] != nominal:
        raise AssertionError(
            f"design has {X.shape[1]} columns, expected {nominal}"
        )

    return DesignMatrices(
        X=X,
        col_names=tuple(names),
        y=y,
        t_scaled=t_scaled,
        student_ids=tuple(student_ids),
        block_bounds=np.array(bounds),
        t_scale=opts.t_scale,
        exercise_types=observed_types,
        factor_levels=factor_levels,
        spec=spec,
    )
