import json
import random

import pytest

from helpers import make_record, make_row
from iafm.errors import (
    DecodeError,
    EmptyDataset,
    MalformedRow,
    SchemaMismatch,
)
from iafm.ingest import (
    CSV_COLUMNS,
    apply_filters,
    assign_opportunity_counts,
    dataset_summary,
    parse_interactions,
    rows_to_csv,
)
from iafm.types import ExerciseType, FilterConfig

HEADER = ",".join(CSV_COLUMNS)


def csv_line(student="s1", kc="k1", ex="e1", ts=0, correct="true",
             ex_type="MultipleChoice", simplified="false", subject="",
             level="", kc_type=""):
    return ",".join([student, kc, ex, str(ts), correct, ex_type,
                     simplified, subject, level, kc_type])


class TestParse:
    def test_header_only_gives_empty_list(self):
        assert parse_interactions(HEADER + "\n", "CSV") == []

    def test_three_rows_in_file_order(self):
        text = "\n".join([
            HEADER,
            csv_line(student="a", ts=3),
            csv_line(student="b", ts=1),
            csv_line(student="c", ts=2),
        ])
        records = parse_interactions(text, "CSV")
        assert [r.student_id for r in records] == ["a", "b", "c"]
        assert records[0].exercise_type is ExerciseType.MULTIPLE_CHOICE

    def test_bad_boolean_is_malformed_with_line_number(self):
        text = "\n".join([HEADER, csv_line(), csv_line(correct="maybe")])
        with pytest.raises(MalformedRow) as err:
            parse_interactions(text, "CSV")
        assert err.value.line == 3

    def test_missing_column_is_schema_mismatch(self):
        text = "student_id,kc_id\n" + "s,k\n"
        with pytest.raises(SchemaMismatch) as err:
            parse_interactions(text, "CSV")
        assert "exercise_id" in err.value.missing

    def test_non_utf8_is_decode_error(self):
        with pytest.raises(DecodeError):
            parse_interactions(b"\xff\xfe\x00bad", "CSV")

    def test_jsonl_roundtrip(self):
        obj = {
            "student_id": "s1", "kc_id": "k1", "exercise_id": "e1",
            "timestamp_ms": 5, "correct": True,
            "exercise_type": "PairMatching", "simplified": False,
            "subject": "math", "level": "", "kc_type": None,
        }
        records = parse_interactions(json.dumps(obj) + "\n", "JSONL")
        assert len(records) == 1
        assert records[0].subject == "math"
        assert records[0].level is None
        assert records[0].exercise_type is ExerciseType.PAIR_MATCHING

    def test_jsonl_missing_key_is_schema_mismatch(self):
        with pytest.raises(SchemaMismatch):
            parse_interactions('{"student_id": "s"}\n', "JSONL")

    def test_empty_optional_labels_become_none(self):
        records = parse_interactions(
            HEADER + "\n" + csv_line(subject="", level="", kc_type=""), "CSV"
        )
        assert records[0].subject is None
        assert records[0].kc_type is None


class TestOpportunityCounts:
    def test_single_record_gets_index_zero(self):
        rows = assign_opportunity_counts([make_record()])
        assert [r.opportunity_index for r in rows] == [0]

    def test_four_records_in_time_order(self):
        records = [make_record(exercise=f"e{i}", ts=ts)
                   for i, ts in enumerate([40, 10, 30, 20])]
        rows = assign_opportunity_counts(records)
        assert [(r.timestamp, r.opportunity_index) for r in rows] == [
            (10, 0), (20, 1), (30, 2), (40, 3),
        ]

    def test_interleaved_kcs_get_independent_sequences(self):
        # 10-row hand-built log over two KCs; oracle is a brute-force
        # group-then-sort recount.
        log = [
            ("s1", "k1", 5), ("s1", "k2", 1), ("s1", "k1", 2),
            ("s1", "k2", 9), ("s1", "k1", 7), ("s2", "k1", 4),
            ("s1", "k2", 3), ("s2", "k1", 6), ("s1", "k1", 8),
            ("s2", "k2", 0),
        ]
        records = [
            make_record(student=s, kc=k, exercise=f"e{i}", ts=ts)
            for i, (s, k, ts) in enumerate(log)
        ]
        rows = assign_opportunity_counts(records)

        expected = {}
        for s, k in {(s, k) for s, k, _ in log}:
            group = sorted(
                (r for r in records
                 if r.student_id == s and r.kc_id == k),
                key=lambda r: (r.timestamp, r.exercise_id),
            )
            for i, rec in enumerate(group):
                expected[(s, k, rec.timestamp)] = i
        for row in rows:
            key = (row.student_id, row.kc_id, row.timestamp)
            assert row.opportunity_index == expected[key]
        assert [
            (r.student_id, r.kc_id, r.opportunity_index) for r in rows
        ] == sorted(
            (r.student_id, r.kc_id, r.opportunity_index) for r in rows
        )

    def test_timestamp_ties_break_by_exercise_id(self):
        records = [make_record(exercise="b", ts=1),
                   make_record(exercise="a", ts=1)]
        rows = assign_opportunity_counts(records)
        assert [(r.exercise_id, r.opportunity_index) for r in rows] == [
            ("a", 0), ("b", 1),
        ]


def _rows_for_kc(kc, n, student="s1", start_ts=0):
    return [
        make_row(opportunity_index=i, kc=kc, student=student,
                 exercise=f"{kc}e{i}", ts=start_ts + i)
        for i in range(n)
    ]


class TestFilters:
    def test_kc_below_threshold_removed(self):
        rows = _rows_for_kc("small", 4) + _rows_for_kc("big", 5)
        dataset = apply_filters(rows, FilterConfig())
        assert {r.kc_id for r in dataset.rows} == {"big"}

    def test_truncation_beyond_30th_opportunity(self):
        rows = _rows_for_kc("k", 35)
        dataset = apply_filters(rows, FilterConfig())
        assert len(dataset.rows) == 30
        assert max(r.opportunity_index for r in dataset.rows) == 29

    def test_vacuous_filters_keep_everything(self):
        rows = _rows_for_kc("a", 6) + _rows_for_kc("b", 13)
        dataset = apply_filters(rows, FilterConfig())
        assert len(dataset.rows) == 19

    def test_kc_count_aggregates_across_students(self):
        rows = (_rows_for_kc("shared", 3, student="s1")
                + _rows_for_kc("shared", 3, student="s2"))
        dataset = apply_filters(rows, FilterConfig())
        assert len(dataset.rows) == 6

    def test_filtering_is_idempotent(self):
        rows = _rows_for_kc("a", 4) + _rows_for_kc("b", 35) + _rows_for_kc("c", 7)
        once = apply_filters(rows, FilterConfig())
        twice = apply_filters(once.rows, FilterConfig())
        assert once.rows == twice.rows

    def test_row_permutation_gives_identical_dataset(self):
        rows = (_rows_for_kc("a", 6) + _rows_for_kc("b", 8, student="s2")
                + _rows_for_kc("c", 5, student="s0"))
        shuffled = rows[:]
        random.Random(7).shuffle(shuffled)
        assert apply_filters(rows, FilterConfig()) == apply_filters(
            shuffled, FilterConfig()
        )

    def test_no_index_beyond_bound_after_filtering(self):
        rows = _rows_for_kc("a", 40) + _rows_for_kc("b", 31, student="s2")
        dataset = apply_filters(rows, FilterConfig())
        assert all(r.opportunity_index < 30 for r in dataset.rows)

    def test_empty_result_raises(self):
        with pytest.raises(EmptyDataset):
            apply_filters(_rows_for_kc("a", 2), FilterConfig())

    def test_fixpoint_mode_reaches_stability(self):
        # Hand-built rows with nonzero starting indices: truncation can
        # push a KC below the count threshold, which only the fixpoint
        # pass notices.
        rows = [
            make_row(opportunity_index=i, kc="edge", exercise=f"e{i}", ts=i)
            for i in range(27, 33)
        ]
        single = apply_filters(rows, FilterConfig())
        assert len(single.rows) == 3  # indices 27..29 survive
        with pytest.raises(EmptyDataset):
            apply_filters(rows, FilterConfig(), fixpoint=True)


class TestSummary:
    def test_exact_counts_single_group(self):
        dataset = apply_filters(_rows_for_kc("k", 5), FilterConfig())
        summary = dataset_summary(dataset)
        assert summary.n_rows == 5
        assert summary.n_students == 1
        assert summary.n_kcs == 1
        assert summary.overall_accuracy == 1.0

    def test_median_kcs_interpolates(self):
        rows = []
        for kc in ["a"]:
            rows += _rows_for_kc(kc, 5, student="s1")
        for kc in ["b", "c", "d", "e", "f", "g", "h"]:
            rows += _rows_for_kc(kc, 5, student="s2")
        summary = dataset_summary(apply_filters(rows, FilterConfig()))
        assert summary.median_kcs_per_student == pytest.approx(4.0)
        assert summary.iqr_kcs_per_student == (
            pytest.approx(2.5), pytest.approx(5.5)
        )

    def test_accuracy_mixes_outcomes(self):
        rows = [
            make_row(opportunity_index=i, exercise=f"e{i}", ts=i,
                     correct=(i % 2 == 0))
            for i in range(6)
        ]
        summary = dataset_summary(apply_filters(rows, FilterConfig()))
        assert summary.overall_accuracy == pytest.approx(0.5)

    def test_summary_json_round_trip(self):
        dataset = apply_filters(_rows_for_kc("k", 5), FilterConfig())
        doc = json.loads(json.dumps(dataset_summary(dataset).to_dict()))
        assert set(doc) == {
            "n_rows", "n_students", "n_kcs", "median_kcs_per_student",
            "iqr_kcs_per_student", "overall_accuracy",
        }


def test_csv_round_trip_preserves_rows():
    rows = (_rows_for_kc("a", 6) + _rows_for_kc("b", 5, student="s2"))
    text = rows_to_csv(rows)
    records = parse_interactions(text, "CSV")
    again = apply_filters(assign_opportunity_counts(records), FilterConfig())
    original = apply_filters(rows, FilterConfig())
    assert again.rows == original.rows
