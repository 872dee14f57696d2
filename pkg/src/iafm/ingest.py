"""Parse interaction logs, assign opportunity indices, filter, summarize.

Input schemas (External Interfaces):

CSV (RFC 4180, header required)::

    student_id,kc_id,exercise_id,timestamp_ms,correct,exercise_type,simplified,subject,level,kc_type

JSONL: one object per line, same keys. ``correct``/``simplified`` are
true/false; empty string means a missing optional label.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Iterable, List

from .errors import (
    DecodeError,
    EmptyDataset,
    MalformedRow,
    SchemaMismatch,
    ValidationError,
)
from .types import (
    ExerciseType,
    FactorLevels,
    FilterConfig,
    InteractionRecord,
    OpportunityRow,
    validate_record,
)

CSV_COLUMNS = (
    "student_id",
    "kc_id",
    "exercise_id",
    "timestamp_ms",
    "correct",
    "exercise_type",
    "simplified",
    "subject",
    "level",
    "kc_type",
)

_BOOL = {"true": True, "false": False}
_TYPE_BY_VALUE = {t.value: t for t in ExerciseType}


@dataclass(frozen=True)
class Dataset:
    """Filtered opportunity rows in canonical (student, kc, index) order."""

    rows: tuple
    factor_levels: FactorLevels
    provenance: str = ""

    def __len__(self):
        return len(self.rows)


@dataclass(frozen=True)
class DatasetSummary:
    n_rows: int
    n_students: int
    n_kcs: int
    median_kcs_per_student: float
    iqr_kcs_per_student: tuple
    overall_accuracy: float

    def to_dict(self) -> dict:
        return {
            "n_rows": self.n_rows,
            "n_students": self.n_students,
            "n_kcs": self.n_kcs,
            "median_kcs_per_student": self.median_kcs_per_student,
            "iqr_kcs_per_student": list(self.iqr_kcs_per_student),
            "overall_accuracy": self.overall_accuracy,
        }


def _parse_bool(raw: str, column: str, line: int) -> bool:
    try:
        return _BOOL[raw.strip().lower()]
    except KeyError:
        raise MalformedRow(f"{column} must be true/false, got {raw!r}", line)


def _record_from_fields(fields: dict, line: int) -> InteractionRecord:
    try:
        timestamp = int(fields["timestamp_ms"])
    except (TypeError, ValueError):
        raise MalformedRow(
            f"timestamp_ms must be an integer, got {fields['timestamp_ms']!r}",
            line,
        )
    raw_type = str(fields["exercise_type"]).strip()
    if raw_type not in _TYPE_BY_VALUE:
        raise MalformedRow(f"unknown exercise_type {raw_type!r}", line)

    def optional(key):
        value = fields.get(key)
        if value is None:
            return None
        value = str(value).strip()
        return value if value else None

    record = InteractionRecord(
        student_id=str(fields["student_id"]),
        kc_id=str(fields["kc_id"]),
        exercise_id=str(fields["exercise_id"]),
        timestamp=timestamp,
        correct=_coerce_bool(fields["correct"], "correct", line),
        exercise_type=_TYPE_BY_VALUE[raw_type],
        simplified=_coerce_bool(fields["simplified"], "simplified", line),
        subject=optional("subject"),
        level=optional("level"),
        kc_type=optional("kc_type"),
    )
    try:
        return validate_record(record)
    except ValidationError as exc:
        raise MalformedRow(str(exc), line) from exc


def _coerce_bool(raw, column: str, line: int) -> bool:
    if isinstance(raw, bool):
        return raw
    return _parse_bool(str(raw), column, line)


def parse_interactions(stream, format: str = "CSV") -> List[InteractionRecord]:
    """Parse a byte or text stream into validated InteractionRecords.

    ``format`` is "CSV" or "JSONL". Rows failing validation raise
    MalformedRow with their 1-based line number; a bad header raises
    SchemaMismatch; non-UTF-8 input raises DecodeError.
    """
    text = _decode(stream)
    fmt = format.upper()
    if fmt == "CSV":
        return _parse_csv(text)
    if fmt == "JSONL":
        return _parse_jsonl(text)
    raise ValueError(f"unknown format {format!r}")


def _decode(stream) -> str:
    if isinstance(stream, str):
        return stream
    if isinstance(stream, bytes):
        data = stream
    else:
        data = stream.read()
        if isinstance(data, str):
            return data
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DecodeError(f"input is not valid UTF-8: {exc}") from exc


def _parse_csv(text: str) -> List[InteractionRecord]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaMismatch(
            "empty input: missing header row", missing=CSV_COLUMNS
        )
    missing = [c for c in CSV_COLUMNS if c not in header]
    if missing:
        raise SchemaMismatch(
            f"header is missing column(s): {', '.join(missing)}",
            missing=missing,
        )
    index = {c: header.index(c) for c in CSV_COLUMNS}
    records = []
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and row[0].strip() == ""):
            continue
        if len(row) < len(header):
            raise MalformedRow(
                f"expected {len(header)} fields, got {len(row)}", lineno
            )
        fields = {c: row[index[c]] for c in CSV_COLUMNS}
        records.append(_record_from_fields(fields, lineno))
    return records


def _parse_jsonl(text: str) -> List[InteractionRecord]:
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRow(f"invalid JSON: {exc}", lineno)
        if not isinstance(obj, dict):
            raise MalformedRow("expected a JSON object", lineno)
        missing = [c for c in CSV_COLUMNS if c not in obj and c not in
                   ("subject", "level", "kc_type")]
        if missing:
            raise SchemaMismatch(
                f"object on line {lineno} is missing key(s): "
                f"{', '.join(missing)}",
                missing=missing,
            )
        records.append(_record_from_fields(obj, lineno))
    return records


def assign_opportunity_counts(records: Iterable[InteractionRecord]) -> List[OpportunityRow]:
    """Assign the 0-based prior-opportunity count per (student, KC).

    Rows in a group are ordered by (timestamp, exercise_id); the k-th gets
    index k-1. Output is sorted by (student_id, kc_id, opportunity_index).
    """
    groups: dict = {}
    for rec in records:
        groups.setdefault((rec.student_id, rec.kc_id), []).append(rec)
    rows = []
    for key in sorted(groups):
        group = sorted(groups[key], key=lambda r: (r.timestamp, r.exercise_id))
        rows.extend(
            OpportunityRow(record=rec, opportunity_index=i)
            for i, rec in enumerate(group)
        )
    return rows


def apply_filters(
    rows: Iterable[OpportunityRow],
    config: FilterConfig = FilterConfig(),
    provenance: str = "",
    fixpoint: bool = False,
) -> Dataset:
    """Apply the two filtering rules and canonicalize ordering.

    Step 1 drops every KC whose total interaction count (across all
    students, before truncation) is below ``min_kc_interactions``; step 2
    drops rows with opportunity_index >= ``max_opportunity_index``.
    Indices are never recomputed. With ``fixpoint`` the two steps repeat
    until the row set is stable (sensitivity mode; the default single
    pass matches the published procedure as stated).
    """
    current = sorted(
        rows, key=lambda r: (r.student_id, r.kc_id, r.opportunity_index)
    )
    while True:
        counts: dict = {}
        for r in current:
            counts[r.kc_id] = counts.get(r.kc_id, 0) + 1
        survivors = [
            r
            for r in current
            if counts[r.kc_id] >= config.min_kc_interactions
            and r.opportunity_index < config.max_opportunity_index
        ]
        if not fixpoint or len(survivors) == len(current):
            current = survivors
            break
        current = survivors
    if not current:
        raise EmptyDataset("no rows survive filtering")
    return Dataset(
        rows=tuple(current),
        factor_levels=FactorLevels.from_rows(current),
        provenance=provenance,
    )


def dataset_summary(dataset: Dataset) -> DatasetSummary:
    """Exact counts plus the KCs-per-student median and IQR."""
    from .analytics import quantile  # quartile convention lives there

    if not dataset.rows:
        raise EmptyDataset("cannot summarize an empty dataset")
    students: dict = {}
    kcs = set()
    n_correct = 0
    for r in dataset.rows:
        students.setdefault(r.student_id, set()).add(r.kc_id)
        kcs.add(r.kc_id)
        n_correct += bool(r.correct)
    kcs_per_student = [float(len(v)) for v in students.values()]
    return DatasetSummary(
        n_rows=len(dataset.rows),
        n_students=len(students),
        n_kcs=len(kcs),
        median_kcs_per_student=quantile(kcs_per_student, 0.5),
        iqr_kcs_per_student=(
            quantile(kcs_per_student, 0.25),
            quantile(kcs_per_student, 0.75),
        ),
        overall_accuracy=n_correct / len(dataset.rows),
    )


def rows_to_csv(rows: Iterable[OpportunityRow]) -> str:
    """Serialize rows in the documented CSV schema (opportunity indices
    are recomputed on re-ingest, so only record fields are written)."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        writer.writerow(
            [
                r.student_id,
                r.kc_id,
                r.exercise_id,
                str(r.timestamp),
                "true" if r.correct else "false",
                r.exercise_type.value,
                "true" if r.simplified else "false",
                r.subject or "",
                r.level or "",
                r.kc_type or "",
            ]
        )
    return out.getvalue()
