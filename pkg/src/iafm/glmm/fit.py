"""Model fitting surface: fit(), FitResult, prediction, serialization.

All user-facing slope quantities (population learning rate, random-slope
SD, per-student slope BLUPs, factor slope effects) are in log-odds per
opportunity; the scaled-T internal coefficients never leave this module.
"""

from __future__ import annotations

import json
import warnings as _warnings
from dataclasses import dataclass, field

import numpy as np

from ..errors import (
    InnerDivergence,
    NotConverged,
    SeparationWarning,
    UnknownFactorLevel,
    UnknownStudent,
)
from ..ingest import Dataset
from ..mathutil import sigmoid
from ..models import ModelSpec
from ..types import UNKNOWN_LABEL
from .design import DesignMatrices, build_design
from .laplace import laplace_marginal_loglik
from .optimizer import maximize, newton_logistic
from .params import CovarianceParams, FitOptions

SEPARATION_BOUND = 15.0
LOG_SD_MIN = float(np.log(1e-6))
LOG_SD_MAX = float(np.log(100.0))
ATANH_RHO_MAX = 5.0


@dataclass(frozen=True)
class CovarianceEstimate:
    """Fitted random-effect distribution in per-opportunity units."""

    sd_intercept: float
    sd_slope: float
    rho: float


@dataclass
class FitResult:
    fixed_effects: dict
    covariance: CovarianceEstimate
    blups: dict  # student_id -> (theta_s, delta_s per opportunity)
    marginal_loglik: float
    n_outer_iterations: int
    converged: bool
    gradient_norm: float
    model: ModelSpec
    t_scale: float
    exercise_types: tuple
    factor_levels: dict
    modal_exercise_type: str
    objective_trace: list = field(default_factory=list)
    ascent_len: int = 0
    warnings: list = field(default_factory=list)

    @property
    def theta_pop(self) -> float:
        return self.fixed_effects["theta_pop"]

    @property
    def delta_pop(self) -> float:
        return self.fixed_effects["delta_pop"]

    def blup_arrays(self):
        """(theta_s, delta_s) arrays in student order."""
        values = np.array(list(self.blups.values()), dtype=float)
        if values.size == 0:
            return np.empty(0), np.empty(0)
        return values[:, 0], values[:, 1]

    def to_dict(self) -> dict:
        return {
            "fixed_effects": dict(self.fixed_effects),
            "covariance": {
                "sd_intercept": self.covariance.sd_intercept,
                "sd_slope": self.covariance.sd_slope,
                "rho": self.covariance.rho,
            },
            "blups": [
                {"student_id": sid, "theta_s": th, "delta_s": de}
                for sid, (th, de) in self.blups.items()
            ],
            "marginal_loglik": self.marginal_loglik,
            "converged": self.converged,
            "n_outer_iterations": self.n_outer_iterations,
            "gradient_norm": self.gradient_norm,
            "t_scale": self.t_scale,
            "model": self.model.to_dict(),
            "exercise_types": list(self.exercise_types),
            "factor_levels": {k: list(v) for k, v in
                              self.factor_levels.items()},
            "modal_exercise_type": self.modal_exercise_type,
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "FitResult":
        cov = obj["covariance"]
        return cls(
            fixed_effects=dict(obj["fixed_effects"]),
            covariance=CovarianceEstimate(
                sd_intercept=float(cov["sd_intercept"]),
                sd_slope=float(cov["sd_slope"]),
                rho=float(cov["rho"]),
            ),
            blups={
                b["student_id"]: (float(b["theta_s"]), float(b["delta_s"]))
                for b in obj["blups"]
            },
            marginal_loglik=float(obj["marginal_loglik"]),
            n_outer_iterations=int(obj["n_outer_iterations"]),
            converged=bool(obj["converged"]),
            gradient_norm=float(obj.get("gradient_norm", float("nan"))),
            model=ModelSpec.from_dict(obj["model"]),
            t_scale=float(obj.get("t_scale", 0.01)),
            exercise_types=tuple(obj.get("exercise_types", ())),
            factor_levels={k: tuple(v) for k, v in
                           obj.get("factor_levels", {}).items()},
            modal_exercise_type=obj.get("modal_exercise_type", ""),
            warnings=list(obj.get("warnings", [])),
        )

    @classmethod
    def from_json(cls, text: str) -> "FitResult":
        return cls.from_dict(json.loads(text))


def _expand_sum_to_zero(levels, coefs) -> dict:
    """Map contrast coefficients back to one effect per level."""
    levels = tuple(levels)
    if len(levels) <= 1:
        return {lv: 0.0 for lv in levels}
    effects = {lv: float(c) for lv, c in zip(levels[:-1], coefs)}
    effects[levels[-1]] = float(-np.sum(coefs))
    return effects


def _reported_effects(design: DesignMatrices, beta) -> dict:
    names = design.col_names
    by_name = dict(zip(names, beta))
    t_scale = design.t_scale
    out = {
        "theta_pop": float(by_name["intercept"]),
        "delta_pop": float(by_name["t_scaled"] * t_scale),
        "gamma_simplified": float(by_name["simplified"]),
    }
    type_levels = tuple(t.value for t in design.exercise_types)
    type_coefs = [by_name[f"ex_type[{lv}]"] for lv in type_levels[:-1]]
    for lv, eff in _expand_sum_to_zero(type_levels, type_coefs).items():
        out[f"beta[{lv}]"] = eff
    for factor, levels in design.factor_levels.items():
        prefix = f"theta_{factor}["
        if not any(n.startswith(prefix) for n in names):
            continue
        theta_coefs = [by_name[f"theta_{factor}[{lv}]"] for lv in levels[:-1]]
        delta_coefs = [by_name[f"delta_{factor}[{lv}]"] for lv in levels[:-1]]
        for lv, eff in _expand_sum_to_zero(levels, theta_coefs).items():
            out[f"theta_{factor}[{lv}]"] = eff
        for lv, eff in _expand_sum_to_zero(levels, delta_coefs).items():
            out[f"delta_{factor}[{lv}]"] = float(eff * t_scale)
    return out


def fit(dataset: Dataset, spec: ModelSpec = ModelSpec(),
        opts: FitOptions = FitOptions()) -> FitResult:
    """Maximize the Laplace marginal likelihood for one model.

    Fixed effects start at the plain logistic solution (random effects
    ignored); the random-effect SDs start at 0.3 (intercept) and
    0.3 * t_scale (slope, scaled-T units) with zero correlation. A
    result is always returned; converged=False flags runs that stopped
    above tolerance, and a SeparationWarning is issued when any reported
    fixed effect exceeds +/-15.
    """
    design = build_design(dataset, spec, opts)
    n_fixed = design.n_fixed

    beta0 = newton_logistic(design.X, design.y)
    # Start the slope SD at 0.3 * t_scale per opportunity, i.e. 0.3 in the
    # scaled-T units the optimizer works in; a near-zero internal start
    # leaves the correlation unidentified and sends the outer optimizer
    # up the atanh-correlation ridge.
    cov0 = CovarianceParams(
        log_sd_intercept=float(np.log(0.3)),
        log_sd_slope=float(np.log(0.3)),
        atanh_correlation=0.0,
    )

    warm = {"U": None}

    def make_fun_grad(correlated):
        def fun_grad(psi):
            # Line searches probe points where the covariance over- or
            # underflows or the inner solve cannot reach tolerance; those
            # evaluate to -inf so the search backtracks instead of dying.
            cov = CovarianceParams.from_vector(psi[n_fixed:], correlated)
            try:
                with np.errstate(all="ignore"):
                    value, grad, U = laplace_marginal_loglik(
                        psi[:n_fixed], cov, design, opts, u_init=warm["U"],
                        correlated=correlated,
                    )
            except InnerDivergence:
                return -np.inf, np.zeros(psi.size)
            if not (np.isfinite(value) and np.all(np.isfinite(grad))):
                return -np.inf, np.zeros(psi.size)
            warm["U"] = U
            return value, grad
        return fun_grad

    # Seed the quasi-Newton metric with rough per-coordinate curvatures:
    # the logistic information for the fixed effects, the student count
    # for the covariance coordinates (their information cannot exceed a
    # few units per student).
    with np.errstate(all="ignore"):
        eta0 = np.einsum("ij,j->i", design.X, beta0, optimize=False)
        p0 = 1.0 / (1.0 + np.exp(-np.clip(eta0, -700, 700)))
        w0 = p0 * (1.0 - p0)
        beta_curv = np.einsum("ij,i,ij->j", design.X, w0, design.X,
                              optimize=False)
    beta_curv = np.maximum(beta_curv, 1e-2)
    cov_curv = max(design.n_students, 2.0)
    h0_full = 1.0 / np.concatenate([beta_curv, [cov_curv] * 3])

    # Box bounds: fixed effects free; SDs kept inside a numerically sane
    # range (a variance component whose maximum sits at zero parks at the
    # lower edge instead of marching to -infinity); |rho| <= tanh(5).
    lower_full = np.concatenate(
        [np.full(n_fixed, -np.inf), [LOG_SD_MIN, LOG_SD_MIN, -ATANH_RHO_MAX]]
    )
    upper_full = np.concatenate(
        [np.full(n_fixed, np.inf), [LOG_SD_MAX, LOG_SD_MAX, ATANH_RHO_MAX]]
    )

    psi0 = np.concatenate([beta0, cov0.to_vector(correlated=False)])
    if opts.random_effects_correlated:
        # Stage 1, diagonal covariance: with the correlation frozen the
        # slope variance identifies cleanly; releasing the correlation
        # from a point this close to the optimum keeps the exponentially
        # flat atanh direction out of play.
        stage1 = maximize(
            make_fun_grad(False), psi0,
            tol=max(opts.outer_tol, 1e-4),
            max_iter=opts.outer_max_iter, polish_iter=0,
            h0_diag=h0_full[:-1],
            lower=lower_full[:-1], upper=upper_full[:-1],
        )
        psi0 = np.concatenate([stage1.x, [0.0]])
        result = maximize(
            make_fun_grad(True), psi0, tol=opts.outer_tol,
            max_iter=opts.outer_max_iter, h0_diag=h0_full,
            lower=lower_full, upper=upper_full,
        )
        stage_iterations = stage1.n_iterations
        trace = stage1.trace + result.trace[1:]
        ascent_len = stage1.ascent_len + result.ascent_len - 1
    else:
        result = maximize(
            make_fun_grad(False), psi0, tol=opts.outer_tol,
            max_iter=opts.outer_max_iter, h0_diag=h0_full[:-1],
            lower=lower_full[:-1], upper=upper_full[:-1],
        )
        stage_iterations = 0
        trace = result.trace
        ascent_len = result.ascent_len

    beta_hat = result.x[:n_fixed]
    cov_hat = CovarianceParams.from_vector(
        result.x[n_fixed:], opts.random_effects_correlated
    )
    # Recompute modes at the accepted optimum so BLUPs satisfy the inner
    # stationarity condition there.
    value, _, U = laplace_marginal_loglik(
        beta_hat, cov_hat, design, opts, u_init=warm["U"],
        want_gradient=False,
    )

    fixed_effects = _reported_effects(design, beta_hat)
    blups = {
        sid: (float(U[s, 0]), float(U[s, 1] * design.t_scale))
        for s, sid in enumerate(design.student_ids)
    }
    covariance = CovarianceEstimate(
        sd_intercept=cov_hat.sd_intercept,
        sd_slope=cov_hat.sd_slope * design.t_scale,
        rho=cov_hat.correlation if opts.random_effects_correlated else 0.0,
    )

    warn_messages = []
    extreme = {
        name: val
        for name, val in fixed_effects.items()
        if abs(val) > SEPARATION_BOUND
    }
    if extreme:
        msg = (
            "fixed effect(s) beyond +/-15 suggest separation: "
            + ", ".join(f"{k}={v:.3g}" for k, v in sorted(extreme.items()))
        )
        warn_messages.append(msg)
        _warnings.warn(msg, SeparationWarning)

    type_counts = {t.value: 0 for t in design.exercise_types}
    for row_type in (r.exercise_type.value for r in dataset.rows):
        type_counts[row_type] += 1
    modal_type = max(type_counts, key=lambda k: (type_counts[k], ), default="")

    return FitResult(
        fixed_effects=fixed_effects,
        covariance=covariance,
        blups=blups,
        marginal_loglik=float(value),
        n_outer_iterations=result.n_iterations + stage_iterations,
        converged=result.converged,
        gradient_norm=result.gradient_norm,
        model=spec,
        t_scale=design.t_scale,
        exercise_types=tuple(t.value for t in design.exercise_types),
        factor_levels=dict(design.factor_levels),
        modal_exercise_type=modal_type,
        objective_trace=trace,
        ascent_len=ascent_len,
        warnings=warn_messages,
    )


def fit_or_raise(dataset, spec=ModelSpec(), opts=FitOptions()) -> FitResult:
    """fit() that raises NotConverged (carrying the result) on failure."""
    result = fit(dataset, spec, opts)
    if not result.converged:
        raise NotConverged(
            f"outer gradient norm {result.gradient_norm:.3g} >= "
            f"{opts.outer_tol:g} after {result.n_outer_iterations} iterations",
            result=result,
        )
    return result


def linear_predictor(fit_result: FitResult, row, include_blup: bool = False) -> float:
    """Full linear predictor for one opportunity row, reported units."""
    fe = fit_result.fixed_effects
    t = float(row.opportunity_index)
    type_value = row.exercise_type.value
    beta_key = f"beta[{type_value}]"
    if beta_key not in fe:
        raise UnknownFactorLevel(
            f"exercise type {type_value!r} was not in the fitted design"
        )
    eta = (
        fe["theta_pop"]
        + fe["delta_pop"] * t
        + fe[beta_key]
        + (fe["gamma_simplified"] if row.simplified else 0.0)
    )
    for factor in fit_result.model.included_factors():
        levels = fit_result.factor_levels.get(factor, ())
        if len(levels) < 2:
            continue
        label = getattr(row, factor) or UNKNOWN_LABEL
        theta_key = f"theta_{factor}[{label}]"
        if theta_key not in fe:
            raise UnknownFactorLevel(
                f"{factor} label {label!r} was not in the fitted design"
            )
        eta += fe[theta_key] + fe[f"delta_{factor}[{label}]"] * t
    if include_blup:
        if row.student_id not in fit_result.blups:
            raise UnknownStudent(
                f"no BLUP for student {row.student_id!r}"
            )
        theta_s, delta_s = fit_result.blups[row.student_id]
        eta += theta_s + delta_s * t
    return float(eta)


def predict_prob(fit_result: FitResult, row, include_blup: bool = False,
                 clamp: float = 1e-12) -> float:
    """Probability of a correct response for one opportunity row."""
    eta = linear_predictor(fit_result, row, include_blup)
    return float(np.clip(sigmoid(eta), clamp, 1.0 - clamp))
