"""Mixed-effects logistic regression with per-student random intercept
and slope, estimated by Laplace-approximated maximum marginal likelihood."""

from .design import DesignMatrices, build_design, expected_columns
from .fit import (
    CovarianceEstimate,
    FitResult,
    fit,
    fit_or_raise,
    linear_predictor,
    predict_prob,
)
from .inner import inner_mode, solve_modes
from .laplace import laplace_marginal_loglik
from .optimizer import maximize, newton_logistic
from .params import CovarianceParams, FitOptions
from .quadrature import loglik_reference_quadrature

__all__ = [
    "CovarianceEstimate",
    "CovarianceParams",
    "DesignMatrices",
    "FitOptions",
    "FitResult",
    "build_design",
    "expected_columns",
    "fit",
    "fit_or_raise",
    "inner_mode",
    "laplace_marginal_loglik",
    "linear_predictor",
    "loglik_reference_quadrature",
    "maximize",
    "newton_logistic",
    "predict_prob",
    "solve_modes",
]
