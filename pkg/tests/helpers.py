"""Shared builders for the test suite."""

import numpy as np

from iafm.glmm import CovarianceParams, FitOptions, build_design
from iafm.models import base_model
from iafm.synth import GenParams, generate
from iafm.types import ExerciseType, InteractionRecord, OpportunityRow

BETA_SPREAD = {
    "MultipleChoice": 0.15,
    "FillInTheBlank": -0.15,
    "PairMatching": -0.1,
    "HighlightTheMistake": 0.1,
}


def make_record(student="s1", kc="k1", exercise="e1", ts=0, correct=True,
                ex_type=ExerciseType.MULTIPLE_CHOICE, simplified=False,
                subject=None, level=None, kc_type=None) -> InteractionRecord:
    return InteractionRecord(
        student_id=student,
        kc_id=kc,
        exercise_id=exercise,
        timestamp=ts,
        correct=correct,
        exercise_type=ex_type,
        simplified=simplified,
        subject=subject,
        level=level,
        kc_type=kc_type,
    )


def make_row(opportunity_index=0, **kwargs) -> OpportunityRow:
    return OpportunityRow(record=make_record(**kwargs),
                          opportunity_index=opportunity_index)


def micro_instance(seed, n_students=5, kcs=3, opps=8, jitter=0.1):
    """One member of the randomized micro-instance family used for the
    Laplace-vs-quadrature checks: small prior SDs (the approximation's
    accurate regime) and a balanced design, evaluated near the truth.

    Returns (design, beta, cov, opts, params).
    """
    rng = np.random.default_rng(seed)
    params = GenParams(
        theta_pop=float(rng.uniform(0.3, 0.8)),
        delta_pop=float(rng.uniform(0.03, 0.09)),
        sd_theta=float(rng.uniform(0.05, 0.12)),
        sd_delta=float(rng.uniform(0.001, 0.010)),
        rho=float(rng.uniform(-0.3, 0.3)),
        gamma=0.3,
        beta_by_type=dict(BETA_SPREAD),
        n_students=n_students,
        kcs_per_student=kcs,
        opps_per_kc=opps,
        seed=int(rng.integers(0, 1 << 31)),
    )
    dataset, _ = generate(params)
    opts = FitOptions()
    design = build_design(dataset, base_model(), opts)
    rng_eval = np.random.default_rng(seed + 999)
    beta = np.array(
        [params.theta_pop, params.delta_pop / opts.t_scale,
         BETA_SPREAD["MultipleChoice"], BETA_SPREAD["FillInTheBlank"],
         BETA_SPREAD["PairMatching"], 0.3]
    ) + rng_eval.normal(0.0, jitter, design.n_fixed)
    cov = CovarianceParams(
        float(np.log(params.sd_theta) + rng_eval.normal(0.0, 0.15)),
        float(np.log(params.sd_delta / opts.t_scale)
              + rng_eval.normal(0.0, 0.15)),
        float(rng_eval.normal(0.0, 0.15)),
    )
    return design, beta, cov, opts, params
