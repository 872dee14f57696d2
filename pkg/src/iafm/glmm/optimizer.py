"""Outer maximization: projected BFGS ascent with backtracking, plus a
Newton polish on the gradient for the final digits.

The line search accepts only strictly improving steps, so the ascent
trace is monotone. Optional box bounds keep boundary-drifting
coordinates (a variance component whose maximum sits at zero) from
marching off to -infinity and poisoning the quasi-Newton metric;
convergence is measured on the projected gradient, which coincides with
the plain gradient at interior optima. On large datasets float64 cannot
resolve objective differences once the gradient is small (delta ~
gnorm^2 / curvature), so after the line search stalls a few Newton
steps on the gradient system (finite-difference Hessian of the analytic
gradient) finish the job; those are accepted on gradient-norm decrease.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class MaximizeResult:
    x: np.ndarray
    value: float
    gradient: np.ndarray
    gradient_norm: float
    n_iterations: int
    converged: bool
    trace: list = field(default_factory=list)
    ascent_len: int = 0  # prefix of `trace` from line-search-accepted steps


def _projected_gnorm(x, g, lower, upper):
    if g.size == 0:
        return 0.0
    pg = g.copy()
    pg[(x <= lower + 1e-12) & (g < 0.0)] = 0.0
    pg[(x >= upper - 1e-12) & (g > 0.0)] = 0.0
    return float(np.max(np.abs(pg)))


def maximize(fun_grad, x0, tol=1e-6, max_iter=500, polish_iter=15,
             fd_step=1e-6, h0_diag=None, lower=None, upper=None,
             callback=None):
    """Maximize a smooth function given (value, gradient) evaluations.

    ``h0_diag`` seeds the inverse-Hessian approximation with per-
    coordinate scales (a preconditioner for badly mixed curvatures);
    BFGS updates refine it from there. ``lower``/``upper`` are optional
    per-coordinate box bounds.
    """
    x = np.asarray(x0, dtype=float).copy()
    n_params = x.size
    lower = (np.full(n_params, -np.inf) if lower is None
             else np.asarray(lower, dtype=float))
    upper = (np.full(n_params, np.inf) if upper is None
             else np.asarray(upper, dtype=float))
    x = np.clip(x, lower, upper)

    f, g = fun_grad(x)
    gnorm = _projected_gnorm(x, g, lower, upper)
    trace = [f]
    identity = np.eye(n_params)
    if h0_diag is not None:
        h_base = np.diag(np.asarray(h0_diag, dtype=float))
        scaled = True
    else:
        h_base = identity.copy()
        scaled = False
    h_inv = h_base.copy()
    iteration = 0

    while gnorm >= tol and iteration < max_iter:
        direction = h_inv @ g  # ascent direction
        candidate = np.clip(x + direction, lower, upper) - x
        slope = float(g @ candidate)
        if slope <= 0.0:
            h_inv = h_base.copy()
            direction = h_inv @ g
            candidate = np.clip(x + direction, lower, upper) - x
            slope = float(g @ candidate)
            if slope <= 0.0:
                h_inv = identity.copy()
                direction = g.copy()
                candidate = np.clip(x + direction, lower, upper) - x
                slope = float(g @ candidate)
                if slope <= 0.0:
                    break  # stuck on the boundary
            scaled = h0_diag is not None
        alpha = 1.0 if scaled else min(1.0, 1.0 / max(1.0, np.sqrt(slope)))
        accepted = False
        while alpha > 1e-20:
            x_new = np.clip(x + alpha * direction, lower, upper)
            step = x_new - x
            if not np.any(step):
                break
            proj_slope = float(g @ step)
            if proj_slope > 0.0:
                f_new, g_new = fun_grad(x_new)
                if np.isfinite(f_new) and f_new > f + 1e-4 * proj_slope:
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            break
        s = x_new - x
        # BFGS update in minimization convention on -f.
        ys = -(g_new - g)
        sty = float(s @ ys)
        if sty > 1e-12 * np.linalg.norm(s) * np.linalg.norm(ys):
            if not scaled:
                h_inv = (sty / float(ys @ ys)) * identity
                scaled = True
            rho = 1.0 / sty
            left = identity - rho * np.outer(s, ys)
            h_inv = left @ h_inv @ left.T + rho * np.outer(s, s)
        x, f, g = x_new, f_new, g_new
        gnorm = _projected_gnorm(x, g, lower, upper)
        trace.append(f)
        iteration += 1
        if callback is not None:
            callback(iteration, x, f, gnorm, alpha)

    ascent_len = len(trace)

    # Newton polish on the stationarity system when the line search can
    # no longer resolve objective improvements.
    for _ in range(polish_iter):
        if gnorm < tol or iteration >= max_iter:
            break
        free = (x > lower + 1e-12) & (x < upper - 1e-12)
        if not np.any(free):
            break
        hess = _fd_hessian(fun_grad, x, fd_step, free)
        try:
            step_free = np.linalg.solve(hess, -g[free])
        except np.linalg.LinAlgError:
            break
        step = np.zeros(n_params)
        step[free] = step_free
        improved = False
        scale = 1.0
        for _ in range(10):
            x_new = np.clip(x + scale * step, lower, upper)
            f_new, g_new = fun_grad(x_new)
            if (
                np.isfinite(f_new)
                and _projected_gnorm(x_new, g_new, lower, upper) < gnorm
                and f_new >= f - 1e-12 * max(1.0, abs(f))
            ):
                improved = True
                break
            scale *= 0.5
        if not improved:
            break
        x, f, g = x_new, f_new, g_new
        gnorm = _projected_gnorm(x, g, lower, upper)
        trace.append(f)
        iteration += 1

    return MaximizeResult(
        x=x,
        value=f,
        gradient=g,
        gradient_norm=gnorm,
        n_iterations=iteration,
        converged=bool(gnorm < tol),
        trace=trace,
        ascent_len=ascent_len,
    )


def _fd_hessian(fun_grad, x, base_step, free):
    """Central-difference Jacobian of the gradient on free coordinates."""
    idx = np.flatnonzero(free)
    hess = np.empty((idx.size, idx.size))
    for col, j in enumerate(idx):
        h = base_step * (1.0 + abs(x[j]))
        xp = x.copy()
        xp[j] += h
        xm = x.copy()
        xm[j] -= h
        _, gp = fun_grad(xp)
        _, gm = fun_grad(xm)
        hess[:, col] = (gp[idx] - gm[idx]) / (2.0 * h)
    return 0.5 * (hess + hess.T)


def newton_logistic(X, y, tol=1e-8, max_iter=25, ridge=1e-9):
    """Plain logistic regression by damped Newton (random effects off).

    Used to initialize the fixed effects. Separation makes coefficients
    drift upward; the iteration cap bounds that drift.
    """
    beta = np.zeros(X.shape[1])
    eta = np.zeros(X.shape[0])
    ll = float(np.sum(y * eta - _softplus(eta)))
    for _ in range(max_iter):
        prob = 1.0 / (1.0 + np.exp(-np.clip(eta, -700, 700)))
        grad = np.einsum("ij,i->j", X, y - prob, optimize=False)
        if np.max(np.abs(grad)) < tol:
            break
        w = prob * (1.0 - prob) + ridge
        hess = np.einsum("ij,i,ik->jk", X, w, X, optimize=False)
        hess[np.diag_indices_from(hess)] += ridge
        step = np.linalg.solve(hess, grad)
        alpha = 1.0
        for _ in range(30):
            beta_new = beta + alpha * step
            eta_new = np.einsum("ij,j->i", X, beta_new, optimize=False)
            ll_new = float(np.sum(y * eta_new - _softplus(eta_new)))
            if ll_new >= ll - 1e-13:
                break
            alpha *= 0.5
        beta, eta, ll = beta_new, eta_new, ll_new
    return beta


def _softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
