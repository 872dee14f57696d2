import numpy as np
import pytest

from helpers import make_row
from iafm.errors import (
    NotConverged,
    SeparationWarning,
    UnknownFactorLevel,
    UnknownStudent,
)
from iafm.glmm import (
    FitOptions,
    FitResult,
    fit,
    fit_or_raise,
    linear_predictor,
    predict_prob,
)
from iafm.ingest import apply_filters
from iafm.mathutil import sigmoid
from iafm.models import ablation_grid, base_model
from iafm.synth import GenParams, default_paper_params, generate
from iafm.types import ExerciseType, FilterConfig


@pytest.fixture(scope="module")
def small_fit():
    params = default_paper_params(n_students=150, seed=21)
    dataset, truth = generate(params)
    return fit(dataset, base_model(), FitOptions()), dataset, truth, params


def test_small_recovery_smoke(small_fit):
    result, _, _, params = small_fit
    assert result.converged
    assert result.theta_pop == pytest.approx(params.theta_pop, abs=0.12)
    assert result.delta_pop == pytest.approx(params.delta_pop, abs=0.025)
    assert result.covariance.sd_intercept == pytest.approx(
        params.sd_theta, rel=0.35
    )


def test_monotone_objective_trace(small_fit):
    result, _, _, _ = small_fit
    ascent = result.objective_trace[: result.ascent_len]
    assert all(b >= a for a, b in zip(ascent, ascent[1:]))
    full = result.objective_trace
    slack = 1e-9 * max(1.0, abs(full[-1]))
    assert all(b >= a - slack for a, b in zip(full, full[1:]))


def test_blup_shrinkage_single_vs_many_rows(small_fit):
    _, dataset, _, _ = small_fit
    extra = []
    for i in range(30):
        extra.append(
            make_row(opportunity_index=i, student="zz_thirty", kc="zz_kc30",
                     exercise=f"x{i}", ts=i, correct=True)
        )
    extra.append(
        make_row(opportunity_index=0, student="zz_one", kc="zz_kc1",
                 exercise="x0", ts=0, correct=True)
    )
    merged = apply_filters(
        list(dataset.rows) + extra, FilterConfig(min_kc_interactions=1)
    )
    result = fit(merged, base_model(), FitOptions())
    one = abs(result.blups["zz_one"][0])
    thirty = abs(result.blups["zz_thirty"][0])
    assert one < thirty


def test_inner_stationarity_at_optimum(small_fit):
    result, dataset, _, _ = small_fit
    opts = FitOptions()
    sd1 = result.covariance.sd_intercept
    sd2 = result.covariance.sd_slope / result.t_scale
    lam = np.linalg.inv(np.array([[sd1 ** 2, 0.0], [0.0, sd2 ** 2]]))
    by_student = {}
    for row in dataset.rows:
        by_student.setdefault(row.student_id, []).append(row)
    for sid in list(by_student)[:25]:
        rows = by_student[sid]
        theta_s, delta_s = result.blups[sid]
        u = np.array([theta_s, delta_s / result.t_scale])
        grad = -lam @ u
        for row in rows:
            eta = linear_predictor(result, row, include_blup=True)
            p = sigmoid(eta)
            grad += (row.correct - p) * np.array(
                [1.0, row.opportunity_index * result.t_scale]
            )
        assert np.max(np.abs(grad)) < 10 * opts.inner_tol


def test_refit_is_bit_identical(small_fit):
    _, dataset, _, _ = small_fit
    one = fit(dataset, base_model(), FitOptions())
    two = fit(dataset, base_model(), FitOptions())
    assert one.to_json() == two.to_json()
    assert one.marginal_loglik == two.marginal_loglik


def test_scale_contract_reported_delta_invariant(small_fit):
    _, dataset, _, _ = small_fit
    a = fit(dataset, base_model(), FitOptions(t_scale=0.01))
    b = fit(dataset, base_model(), FitOptions(t_scale=0.02))
    assert a.delta_pop == pytest.approx(b.delta_pop, abs=1e-3)
    assert a.covariance.sd_slope == pytest.approx(
        b.covariance.sd_slope, abs=1e-3
    )


def test_all_correct_data_warns_about_separation():
    rows = [
        make_row(opportunity_index=i, student=f"s{j}", kc=f"s{j}k",
                 exercise=f"s{j}e{i}", ts=i, correct=True)
        for j in range(8)
        for i in range(6)
    ]
    dataset = apply_filters(rows, FilterConfig())
    with pytest.warns(SeparationWarning):
        result = fit(dataset, base_model(),
                     FitOptions(outer_max_iter=60))
    assert result.warnings


def test_fit_or_raise_on_nonconverged():
    params = default_paper_params(n_students=60, seed=5,
                                  kcs_per_student=3, opps_per_kc=5)
    dataset, _ = generate(params)
    with pytest.raises(NotConverged) as err:
        fit_or_raise(dataset, base_model(), FitOptions(outer_max_iter=2))
    assert isinstance(err.value.result, FitResult)
    assert err.value.result.converged is False


def test_correlated_option_reports_rho(small_fit):
    _, dataset, _, _ = small_fit
    result = fit(dataset, base_model(),
                 FitOptions(random_effects_correlated=True))
    assert -1.0 < result.covariance.rho < 1.0
    assert result.converged


class TestPrediction:
    def test_zero_predictor_gives_half(self):
        fit_result = FitResult(
            fixed_effects={
                "theta_pop": 0.0, "delta_pop": 0.0,
                "gamma_simplified": 0.0, "beta[MultipleChoice]": 0.0,
            },
            covariance=None,
            blups={"s1": (0.0, 0.0)},
            marginal_loglik=0.0,
            n_outer_iterations=0,
            converged=True,
            gradient_norm=0.0,
            model=base_model(),
            t_scale=0.01,
            exercise_types=("MultipleChoice",),
            factor_levels={},
            modal_exercise_type="MultipleChoice",
        )
        row = make_row(opportunity_index=0)
        assert predict_prob(fit_result, row) == pytest.approx(0.5)

    def test_predictor_includes_all_terms(self, small_fit):
        result, dataset, _, _ = small_fit
        row = dataset.rows[37]
        eta = linear_predictor(result, row, include_blup=False)
        fe = result.fixed_effects
        expected = (
            fe["theta_pop"]
            + fe["delta_pop"] * row.opportunity_index
            + fe[f"beta[{row.exercise_type.value}]"]
            + (fe["gamma_simplified"] if row.simplified else 0.0)
        )
        assert eta == pytest.approx(expected)
        assert predict_prob(result, row) == pytest.approx(sigmoid(expected))

    def test_blup_changes_prediction(self, small_fit):
        result, dataset, _, _ = small_fit
        row = dataset.rows[0]
        base_p = predict_prob(result, row, include_blup=False)
        with_blup = predict_prob(result, row, include_blup=True)
        theta_s = result.blups[row.student_id][0]
        if abs(theta_s) > 1e-6:
            assert base_p != with_blup

    def test_unknown_student_rejected(self, small_fit):
        result, _, _, _ = small_fit
        row = make_row(student="nobody")
        with pytest.raises(UnknownStudent):
            predict_prob(result, row, include_blup=True)

    def test_unknown_exercise_type_rejected(self, small_fit):
        result, dataset, _, _ = small_fit
        # restrict the fit to a dataset with fewer observed types
        rows = [r for r in dataset.rows
                if r.exercise_type is not ExerciseType.PAIR_MATCHING]
        reduced = apply_filters(rows, FilterConfig(min_kc_interactions=1))
        reduced_fit = fit(reduced, base_model(), FitOptions())
        bad = make_row(ex_type=ExerciseType.PAIR_MATCHING,
                       student=dataset.rows[0].student_id)
        with pytest.raises(UnknownFactorLevel):
            predict_prob(reduced_fit, bad)

    def test_unknown_factor_level_rejected(self):
        from iafm.synth import declarative_procedural_effects

        params = GenParams(
            theta_pop=0.5, sd_theta=0.2, n_students=40,
            kcs_per_student=3, opps_per_kc=6, seed=9,
            kc_type_effects=declarative_procedural_effects(0.05),
        )
        dataset, _ = generate(params)
        spec = ablation_grid()[3]  # kc_type model
        result = fit(dataset, spec, FitOptions())
        row = make_row(student=dataset.rows[0].student_id,
                       kc_type="weird-new-type")
        with pytest.raises(UnknownFactorLevel):
            predict_prob(result, row)


def test_serialization_round_trip(small_fit):
    result, _, _, _ = small_fit
    clone = FitResult.from_json(result.to_json())
    assert clone.fixed_effects == result.fixed_effects
    assert clone.blups == result.blups
    assert clone.covariance == result.covariance
    assert clone.model == result.model
    assert clone.converged == result.converged


def test_exercise_type_effects_sum_to_zero(small_fit):
    result, _, _, _ = small_fit
    betas = [v for k, v in result.fixed_effects.items()
             if k.startswith("beta[")]
    assert len(betas) == 4
    assert sum(betas) == pytest.approx(0.0, abs=1e-10)
