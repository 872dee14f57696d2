import json

from iafm.models import ModelSpec, ablation_grid, base_model


def test_base_model_has_no_factors():
    spec = base_model()
    assert spec == ModelSpec(False, False, False, "model 0")
    assert spec.included_factors() == ()


def test_base_model_equals_first_grid_entry():
    assert base_model() == ablation_grid()[0]


def test_grid_has_eight_unique_entries():
    grid = ablation_grid()
    assert len(grid) == 8
    assert len({spec.name for spec in grid}) == 8


def test_grid_order_matches_report_layout():
    flags = [
        (spec.include_level, spec.include_subject, spec.include_kc_type)
        for spec in ablation_grid()
    ]
    assert flags == [
        (False, False, False),
        (True, False, False),
        (False, True, False),
        (False, False, True),
        (True, True, False),
        (True, False, True),
        (False, True, True),
        (True, True, True),
    ]


def test_grid_five_is_level_plus_kc_type():
    spec = ablation_grid()[5]
    assert spec.include_level and spec.include_kc_type
    assert not spec.include_subject


def test_grid_seven_has_all_flags():
    spec = ablation_grid()[7]
    assert spec.include_level and spec.include_subject and spec.include_kc_type


def test_grid_covers_the_power_set():
    combos = {
        (s.include_level, s.include_subject, s.include_kc_type)
        for s in ablation_grid()
    }
    assert len(combos) == 8


def test_spec_serialization_round_trip():
    for spec in ablation_grid():
        doc = json.loads(json.dumps(spec.to_dict()))
        assert set(doc) == {"name", "level", "subject", "kc_type"}
        assert ModelSpec.from_dict(doc) == spec
