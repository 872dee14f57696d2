"""Downstream statistics over fits and datasets: parameter
distributions, mastery arithmetic, learning curves, ablation and factor
tables, and the initial-knowledge vs learning-rate spread comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ArityMismatch, EmptyInput, MissingModels
from .glmm.fit import FitResult
from .ingest import Dataset
from .mathutil import logit as _logit
from .mathutil import sigmoid
from .models import ModelSpec

#: Returned by opportunities_to_mastery when the learning rate is <= 0.
UNREACHABLE = math.inf

MASTERY_TARGET = 0.8
PERCENTILES = (25, 50, 75)


def quantile(values, q: float) -> float:
    """Linear-interpolation quantile (the h = (n-1)q convention)."""
    arr = np.asarray(list(values), dtype=float)
    if arr.size == 0:
        raise EmptyInput("quantile of an empty multiset")
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must lie in [0, 1]")
    return float(np.quantile(arr, q, method="linear"))


@dataclass(frozen=True)
class DistributionSummary:
    mean: float
    q1: float
    median: float
    q3: float
    sd: float
    n: int

    @classmethod
    def from_values(cls, values) -> "DistributionSummary":
        arr = np.asarray(list(values), dtype=float)
        if arr.size == 0:
            raise EmptyInput("summary of an empty multiset")
        sd = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
        return cls(
            mean=float(np.mean(arr)),
            q1=quantile(arr, 0.25),
            median=quantile(arr, 0.5),
            q3=quantile(arr, 0.75),
            sd=sd,
            n=int(arr.size),
        )

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "q1": self.q1,
            "median": self.median,
            "q3": self.q3,
            "sd": self.sd,
            "n": self.n,
        }


def effect_distributions(fit: FitResult) -> Tuple[DistributionSummary, DistributionSummary]:
    """Summaries of the per-student effect estimates (per-opportunity
    units). These are spreads of the shrunken estimates; the model's
    fitted prior SDs live in fit.covariance and are reported alongside.
    """
    theta_s, delta_s = fit.blup_arrays()
    if theta_s.size < 2:
        raise EmptyInput("need at least 2 students for distributions")
    return (
        DistributionSummary.from_values(theta_s),
        DistributionSummary.from_values(delta_s),
    )


def opportunities_to_mastery(theta_ref: float, delta_ref: float,
                             target: float = MASTERY_TARGET) -> float:
    """Practice opportunities until predicted accuracy reaches target.

    0 when already at or above target; UNREACHABLE (inf) when the rate
    is nonpositive; otherwise (logit(target) - theta_ref) / delta_ref.
    """
    if not 0.0 < target < 1.0:
        raise ValueError("target must lie strictly inside (0, 1)")
    if sigmoid(theta_ref) >= target:
        return 0.0
    if delta_ref <= 0.0:
        return UNREACHABLE
    return float((_logit(target) - theta_ref) / delta_ref)


def percent_point_improvement(theta_ref: float, delta: float) -> float:
    """First-order accuracy gain per opportunity, in percentage points:
    100 * p * (1 - p) * delta at p = sigmoid(theta_ref)."""
    p = sigmoid(theta_ref)
    return float(100.0 * p * (1.0 - p) * delta)


@dataclass(frozen=True)
class MasteryRow:
    percentile: int
    knowledge_logodds: float
    knowledge_percent_correct: float
    ops_to_mastery_fixed_rate: float
    rate_logodds_per_opp: float
    percent_point_improvement: float
    ops_to_mastery_fixed_knowledge: float

    def to_dict(self) -> dict:
        return {
            "percentile": self.percentile,
            "knowledge_logodds": self.knowledge_logodds,
            "knowledge_percent_correct": self.knowledge_percent_correct,
            "ops_to_mastery_fixed_rate": _json_number(
                self.ops_to_mastery_fixed_rate
            ),
            "rate_logodds_per_opp": self.rate_logodds_per_opp,
            "percent_point_improvement": self.percent_point_improvement,
            "ops_to_mastery_fixed_knowledge": _json_number(
                self.ops_to_mastery_fixed_knowledge
            ),
        }


@dataclass(frozen=True)
class MasteryTable:
    rows: Tuple[MasteryRow, ...]
    reference_offset: float
    target: float = MASTERY_TARGET

    def to_dict(self) -> dict:
        return {
            "reference_offset": self.reference_offset,
            "target": self.target,
            "rows": [r.to_dict() for r in self.rows],
        }


def _json_number(x: float):
    return "unreachable" if math.isinf(x) else x


def default_reference_offset(fit: FitResult) -> float:
    """Difficulty offset of the modal exercise type, unsimplified."""
    key = f"beta[{fit.modal_exercise_type}]"
    return float(fit.fixed_effects.get(key, 0.0))


def mastery_table(fit: FitResult,
                  reference_offset: Optional[float] = None,
                  target: float = MASTERY_TARGET) -> MasteryTable:
    """Three-row mastery table at the 25/50/75 student percentiles.

    The knowledge column shifts the population intercept by the
    per-student intercept quantiles (plus the reference offset); its
    opportunities-to-mastery assume the population learning rate. The
    rate column shifts the population rate by the per-student slope
    quantiles; its opportunities-to-mastery assume population-level
    initial knowledge (theta_pop + offset). The percentage-point
    improvement is evaluated at the median knowledge level.
    """
    if reference_offset is None:
        reference_offset = default_reference_offset(fit)
    theta_s, delta_s = fit.blup_arrays()
    theta_pop, delta_pop = fit.theta_pop, fit.delta_pop
    knowledge_med = theta_pop + quantile(theta_s, 0.5) + reference_offset
    knowledge_fixed = theta_pop + reference_offset

    rows = []
    for pct in PERCENTILES:
        q = pct / 100.0
        knowledge = theta_pop + quantile(theta_s, q) + reference_offset
        rate = delta_pop + quantile(delta_s, q)
        rows.append(
            MasteryRow(
                percentile=pct,
                knowledge_logodds=knowledge,
                knowledge_percent_correct=100.0 * sigmoid(knowledge),
                ops_to_mastery_fixed_rate=opportunities_to_mastery(
                    knowledge, delta_pop, target
                ),
                rate_logodds_per_opp=rate,
                percent_point_improvement=percent_point_improvement(
                    knowledge_med, rate
                ),
                ops_to_mastery_fixed_knowledge=opportunities_to_mastery(
                    knowledge_fixed, rate, target
                ),
            )
        )
    return MasteryTable(rows=tuple(rows), reference_offset=reference_offset,
                        target=target)


def iqr_percent_initial_knowledge(fit: FitResult,
                                  reference_offset: Optional[float] = None) -> float:
    """IQR across students of predicted first-attempt accuracy (percent)."""
    if reference_offset is None:
        reference_offset = default_reference_offset(fit)
    theta_s, _ = fit.blup_arrays()
    percents = 100.0 * sigmoid(fit.theta_pop + theta_s + reference_offset)
    return quantile(percents, 0.75) - quantile(percents, 0.25)


def iqr_percent_learning_rate(fit: FitResult,
                              reference_offset: Optional[float] = None) -> float:
    """IQR across students of the per-opportunity accuracy gain
    (percentage points) at the median knowledge level."""
    if reference_offset is None:
        reference_offset = default_reference_offset(fit)
    theta_s, delta_s = fit.blup_arrays()
    theta_ref = fit.theta_pop + quantile(theta_s, 0.5) + reference_offset
    gains = np.array(
        [
            percent_point_improvement(theta_ref, fit.delta_pop + d)
            for d in delta_s
        ]
    )
    return quantile(gains, 0.75) - quantile(gains, 0.25)


@dataclass(frozen=True)
class CurvePoint:
    opportunity: int  # 1-based display index
    empirical_accuracy: Optional[float]
    predicted_accuracy: Optional[float]
    n_rows: int

    def to_dict(self) -> dict:
        return {
            "opportunity": self.opportunity,
            "empirical": self.empirical_accuracy,
            "predicted": self.predicted_accuracy,
            "n": self.n_rows,
        }


def empirical_learning_curve(dataset: Dataset,
                             max_opportunity: Optional[int] = None,
                             min_rows: int = 100) -> List[CurvePoint]:
    """Fraction correct by display opportunity (1-based).

    Trailing points with fewer than ``min_rows`` observations are cut so
    the tail does not show noise; interior points always stay.
    """
    if not dataset.rows:
        raise EmptyInput("empty dataset has no learning curve")
    totals: dict = {}
    hits: dict = {}
    for r in dataset.rows:
        k = r.opportunity_index + 1
        totals[k] = totals.get(k, 0) + 1
        hits[k] = hits.get(k, 0) + (1 if r.correct else 0)
    points = [
        CurvePoint(
            opportunity=k,
            empirical_accuracy=hits[k] / totals[k],
            predicted_accuracy=None,
            n_rows=totals[k],
        )
        for k in sorted(totals)
        if max_opportunity is None or k <= max_opportunity
    ]
    while points and points[-1].n_rows < min_rows:
        points.pop()
    return points


@dataclass(frozen=True)
class OpportunityContext:
    """Fixed-effect context of one display opportunity for prediction."""

    exercise_type: Optional[str] = None  # None: grand mean over types
    simplified: bool = False


def default_context(max_opportunity: int,
                    simplified_first_k: int = 2) -> List[OpportunityContext]:
    """Grand-mean exercise type; the first k opportunities simplified."""
    return [
        OpportunityContext(exercise_type=None,
                           simplified=(k <= simplified_first_k))
        for k in range(1, max_opportunity + 1)
    ]


def predicted_learning_curve(fit: FitResult,
                             context: Optional[Sequence[OpportunityContext]] = None,
                             max_opportunity: int = 18) -> List[CurvePoint]:
    """Population-level predicted accuracy by display opportunity."""
    if context is None:
        context = default_context(max_opportunity)
    points = []
    for k in range(1, max_opportunity + 1):
        ctx = context[k - 1] if k - 1 < len(context) else OpportunityContext()
        eta = fit.theta_pop + fit.delta_pop * (k - 1)
        if ctx.exercise_type is not None:
            key = f"beta[{ctx.exercise_type}]"
            eta += fit.fixed_effects.get(key, 0.0)
        if ctx.simplified:
            eta += fit.fixed_effects.get("gamma_simplified", 0.0)
        points.append(
            CurvePoint(
                opportunity=k,
                empirical_accuracy=None,
                predicted_accuracy=float(sigmoid(eta)),
                n_rows=0,
            )
        )
    return points


def merge_curves(empirical: Sequence[CurvePoint],
                 predicted: Sequence[CurvePoint]) -> List[CurvePoint]:
    """Join the two series on the display opportunity."""
    emp = {p.opportunity: p for p in empirical}
    pred = {p.opportunity: p for p in predicted}
    merged = []
    for k in sorted(set(emp) | set(pred)):
        e, p = emp.get(k), pred.get(k)
        merged.append(
            CurvePoint(
                opportunity=k,
                empirical_accuracy=e.empirical_accuracy if e else None,
                predicted_accuracy=p.predicted_accuracy if p else None,
                n_rows=e.n_rows if e else 0,
            )
        )
    return merged


def curve_to_csv(points: Sequence[CurvePoint]) -> str:
    lines = ["opportunity,empirical,predicted,n"]
    for p in points:
        emp = "" if p.empirical_accuracy is None else repr(p.empirical_accuracy)
        pred = "" if p.predicted_accuracy is None else repr(p.predicted_accuracy)
        lines.append(f"{p.opportunity},{emp},{pred},{p.n_rows}")
    return "\n".join(lines) + "\n"


def parse_curve_csv(text: str) -> List[CurvePoint]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "opportunity,empirical,predicted,n":
        raise EmptyInput("not a curve CSV (bad or missing header)")
    points = []
    for ln in lines[1:]:
        k, emp, pred, n = ln.split(",")
        points.append(
            CurvePoint(
                opportunity=int(k),
                empirical_accuracy=float(emp) if emp else None,
                predicted_accuracy=float(pred) if pred else None,
                n_rows=int(n),
            )
        )
    return points


# --- ablation / factor reports -------------------------------------------

_FACTOR_MODELS = {
    "level": ("model 1", "model 4", "model 5", "model 7"),
    "subject": ("model 2", "model 4", "model 6", "model 7"),
    "kc_type": ("model 3", "model 5", "model 6", "model 7"),
}


def ablation_report(fits: Sequence[Tuple[ModelSpec, FitResult]]) -> List[dict]:
    """One row per model: population effects plus per-student effect
    spread, in the canonical 8-model order."""
    if len(fits) != 8:
        raise ArityMismatch(f"expected 8 fits, got {len(fits)}")
    rows = []
    for spec, fit in fits:
        theta_s, delta_s = fit.blup_arrays()
        rows.append(
            {
                "model": spec.name,
                "level": spec.include_level,
                "subject": spec.include_subject,
                "kc_type": spec.include_kc_type,
                "theta_pop": fit.theta_pop,
                "delta_pop": fit.delta_pop,
                "mean_theta_s": float(np.mean(theta_s)),
                "sd_theta_s": float(np.std(theta_s, ddof=1)),
                "mean_delta_s": float(np.mean(delta_s)),
                "sd_delta_s": float(np.std(delta_s, ddof=1)),
            }
        )
    return rows


def factor_effect_table(fits: Sequence[Tuple[ModelSpec, FitResult]],
                        factor: str) -> List[dict]:
    """Per-level mean and SD of the factor's intercept and slope effects
    across exactly the models that include the factor."""
    if factor not in _FACTOR_MODELS:
        raise ValueError(f"unknown factor {factor!r}")
    wanted = _FACTOR_MODELS[factor]
    by_name = {spec.name: fit for spec, fit in fits}
    missing = [m for m in wanted if m not in by_name]
    if missing:
        raise MissingModels(
            f"factor {factor!r} needs fits for: {', '.join(missing)}"
        )
    contributing = [by_name[m] for m in wanted]
    levels = contributing[0].factor_levels.get(factor, ())
    if len(levels) < 2:
        return []  # sum-to-zero coding yields no contrasts for one level
    table = []
    for label in levels:
        thetas = [
            f.fixed_effects.get(f"theta_{factor}[{label}]", 0.0)
            for f in contributing
        ]
        deltas = [
            f.fixed_effects.get(f"delta_{factor}[{label}]", 0.0)
            for f in contributing
        ]
        table.append(
            {
                "level": label,
                "mean_theta": float(np.mean(thetas)),
                "mean_delta": float(np.mean(deltas)),
                "sd_theta": float(np.std(thetas, ddof=1)),
                "sd_delta": float(np.std(deltas, ddof=1)),
            }
        )
    return table


def subject_scatter_data(fits: Sequence[Tuple[ModelSpec, FitResult]]) -> List[dict]:
    """Per-subject average intercept/slope effects across the four
    subject-bearing models, sorted by mean intercept effect descending."""
    rows = factor_effect_table(fits, "subject")
    data = [
        {
            "subject": r["level"],
            "mean_theta": r["mean_theta"],
            "mean_delta": r["mean_delta"],
        }
        for r in rows
    ]
    data.sort(key=lambda r: (-r["mean_theta"], r["subject"]))
    return data


# --- rendering -------------------------------------------------------------


def render_table(headers: Sequence[str], rows: Iterable[Sequence],
                 float_fmt: str = "{:.6g}") -> str:
    """Aligned plain-text table."""
    def fmt(cell):
        if isinstance(cell, bool):
            return "yes" if cell else ""
        if isinstance(cell, float):
            if math.isinf(cell):
                return "unreachable"
            return float_fmt.format(cell)
        return str(cell)

    str_rows = [[fmt(c) for c in row] for row in rows]
    widths = [
        max(len(h), *(len(r[i]) for r in str_rows)) if str_rows else len(h)
        for i, h in enumerate(headers)
    ]
    def line(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()

    out = [line(list(headers)), line(["-" * w for w in widths])]
    out.extend(line(r) for r in str_rows)
    return "\n".join(out) + "\n"
