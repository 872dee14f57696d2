"""Laplace-approximated marginal log-likelihood and its exact gradient.

Per student s with mode u*, whitened mode v* = L^-1 u* (Sigma = L L')
and whitened negative Hessian H~ = sum_i w_i z~_i z~_i' + I:

    L_s = loglik_s(u*) - |v*|^2 / 2 - log det(H~) / 2

(the prior's log-det and the Laplace volume's 2*pi factors cancel). The
gradient accounts for the implicit dependence of u* on the outer
parameters through the stationarity condition. With K = H^-1 (original
coordinates), q_i = z_i' K z_i, v_i = w_i (1 - 2 p_i), and the log-det
u-gradient m = -(1/2) sum_i v_i q_i z_i, the fixed effects get a per-row
effective residual

    e_i = (y_i - p_i) - v_i q_i / 2 - w_i z_i' K m,   grad_beta = X' e.

For a covariance coordinate with S = d(Sigma)/d(param), writing
r = sum_i (y_i - p_i) z_i (= Lambda u* at the mode) and W for the data
information sum_i w_i z_i z_i':

    dL_s = r'Sr/2 - [tr(WS) - tr(WKWS)]/2 + ((I - WK) m)' S r,

which stays finite for arbitrarily ill-conditioned covariances because
Lambda never appears. All reductions run in student-sorted order,
keeping results independent of thread count.
"""

from __future__ import annotations

import numpy as np

from .design import DesignMatrices
from .inner import solve_modes
from .params import CovarianceParams, FitOptions


def laplace_marginal_loglik(
    beta,
    cov: CovarianceParams,
    design: DesignMatrices,
    opts: FitOptions = FitOptions(),
    u_init=None,
    want_gradient: bool = True,
    correlated=None,
):
    """Objective value, gradient and modes at (beta, cov).

    Returns (value, gradient, U). The gradient stacks d/d(beta) with
    d/d(log sd intercept, log sd slope[, atanh rho]) and is None when
    ``want_gradient`` is false; ``correlated`` overrides whether the
    atanh-correlation coordinate is part of the gradient. Zero students
    give value 0.
    """
    if correlated is None:
        correlated = opts.random_effects_correlated
    beta = np.asarray(beta, dtype=float)
    if design.n_students == 0:
        k = 3 if correlated else 2
        grad = np.zeros(design.n_fixed + k) if want_gradient else None
        return 0.0, grad, np.zeros((0, 2))

    X, t, y = design.X, design.t_scaled, design.y
    bounds = design.block_bounds
    sid = design.row_student_index()

    eta_fixed = np.einsum("ij,j->i", X, beta, optimize=False)
    modes = solve_modes(
        eta_fixed,
        t,
        y,
        bounds,
        cov,
        tol=opts.inner_tol,
        max_iter=opts.inner_max_iter,
        clamp=opts.probability_clamp,
        u_init=u_init,
        student_ids=design.student_ids,
    )
    U, V, p, w = modes.U, modes.V, modes.p, modes.w

    eta = eta_fixed + U[sid, 0] + U[sid, 1] * t
    row_ll = y * eta - _softplus(eta)
    per_student = (
        np.add.reduceat(row_ll, bounds[:-1])
        - 0.5 * (V[:, 0] ** 2 + V[:, 1] ** 2)
        - 0.5 * modes.log_det_ht
    )
    value = float(np.sum(per_student))
    if not want_gradient:
        return value, None, U

    k11, k12, k22 = modes.k_u[:, 0], modes.k_u[:, 1], modes.k_u[:, 2]
    q = k11[sid] + 2.0 * k12[sid] * t + k22[sid] * t * t
    vq = w * (1.0 - 2.0 * p) * q
    m1 = -0.5 * np.add.reduceat(vq, bounds[:-1])
    m2 = -0.5 * np.add.reduceat(vq * t, bounds[:-1])
    km1 = k11 * m1 + k12 * m2
    km2 = k12 * m1 + k22 * m2

    resid_eff = (y - p) - 0.5 * vq - w * (km1[sid] + km2[sid] * t)
    grad_beta = np.einsum("ij,i->j", X, resid_eff, optimize=False)

    # Per-student 2x2 stacks for the covariance coordinates.
    K = _stack_sym(modes.k_u)
    W = _stack_sym(modes.w_info)
    r = modes.resid_z
    m = np.column_stack([m1, m2])
    wk = np.einsum("sij,sjk->sik", W, K, optimize=False)
    wkw = np.einsum("sij,skj->sik", wk, W, optimize=False)  # W K W (sym)
    shift = m - np.einsum("sij,sj->si", wk, m, optimize=False)  # (I - WK)m

    partials = cov.sigma_partials(correlated)
    grad_cov = np.empty(len(partials))
    for idx, s_mat in enumerate(partials):
        quad_r = 0.5 * np.einsum("si,ij,sj->s", r, s_mat, r, optimize=False)
        tr_ws = 0.5 * np.einsum("sij,ji->s", W, s_mat, optimize=False)
        tr_wkws = 0.5 * np.einsum("sij,ji->s", wkw, s_mat, optimize=False)
        move = np.einsum("si,ij,sj->s", shift, s_mat, r, optimize=False)
        grad_cov[idx] = float(np.sum(quad_r - tr_ws + tr_wkws + move))
    return value, np.concatenate([grad_beta, grad_cov]), U


def _stack_sym(tri):
    out = np.empty((tri.shape[0], 2, 2))
    out[:, 0, 0] = tri[:, 0]
    out[:, 0, 1] = tri[:, 1]
    out[:, 1, 0] = tri[:, 1]
    out[:, 1, 1] = tri[:, 2]
    return out


def _softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
