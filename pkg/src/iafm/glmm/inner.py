"""Per-student random-effect mode search.

Each student's joint log density

    g(u) = sum_i [y_i eta_i - log(1 + exp(eta_i))] - u' Lambda u / 2 + const,
    eta_i = eta_fixed_i + u_1 + u_2 * t_i,

is strictly concave. Newton runs in the whitened coordinate v = L^-1 u
(Sigma = L L'), where the prior Hessian is the identity: the per-student
system H~ = sum_i w_i z~_i z~_i' + I with z~ = L' z has determinant >= 1
for any SPD covariance, so steps stay well-conditioned arbitrarily close
to singular covariances. All students iterate in lockstep with segment
reductions, keeping summation order fixed (student-sorted) and results
independent of threading.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InnerDivergence
from ..mathutil import bernoulli_loglik, clamp_prob, sigmoid
from .params import CovarianceParams


def _segment_sum(values, bounds):
    # callers guarantee >= 1 row per block
    return np.add.reduceat(values, bounds[:-1])


@dataclass
class ModeResult:
    """Per-student quantities at the joint mode.

    U, V: modes in original / whitened coordinates, (S, 2).
    k_u: upper triangle [k11, k12, k22] of H^-1 (original coords), (S, 3).
    w_info: upper triangle of the data information sum_i w_i z_i z_i'.
    resid_z: sum_i (y_i - p_i) z_i, which equals Lambda @ u at the mode.
    log_det_ht: log determinant of the whitened negative Hessian.
    p, w: per-row probabilities and weights at the mode.
    """

    U: np.ndarray
    V: np.ndarray
    k_u: np.ndarray
    w_info: np.ndarray
    resid_z: np.ndarray
    log_det_ht: np.ndarray
    p: np.ndarray
    w: np.ndarray


def solve_modes(
    eta_fixed,
    t,
    y,
    bounds,
    cov: CovarianceParams,
    tol: float = 1e-10,
    max_iter: int = 50,
    clamp: float = 1e-12,
    u_init=None,
    student_ids=None,
) -> ModeResult:
    """Find every student's posterior mode simultaneously."""
    eta_fixed = np.asarray(eta_fixed, dtype=float)
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    bounds = np.asarray(bounds)
    n_students = len(bounds) - 1
    sizes = np.diff(bounds)
    if np.any(sizes < 1):
        raise ValueError("solve_modes requires >= 1 row per student block")
    sid = np.repeat(np.arange(n_students), sizes)

    chol = cov.cholesky()
    l11, l21, l22 = chol[0, 0], chol[1, 0], chol[1, 1]
    # Whitened random-effect design per row: z~ = L' z for z = (1, t).
    zt1 = l11 + l21 * t
    zt2 = l22 * t
    # Demanding a whitened gradient below tol keeps the original-coordinate
    # gradient within tol / sigma_min(L); cap the rescaling so nearly
    # singular covariances stay solvable in float64.
    tol_v = tol * min(1.0, max(_sigma_min_2x2(chol), 1e-3))

    if u_init is None:
        V = np.zeros((n_students, 2))
    else:
        V = _solve_lower(chol, np.asarray(u_init, dtype=float))

    def joint_value(v):
        u1 = l11 * v[:, 0]
        u2 = l21 * v[:, 0] + l22 * v[:, 1]
        eta = eta_fixed + u1[sid] + u2[sid] * t
        ll = _segment_sum(bernoulli_loglik(y, eta), bounds)
        return ll - 0.5 * (v[:, 0] ** 2 + v[:, 1] ** 2), eta

    eps64 = np.finfo(float).eps
    g_cur, eta = joint_value(V)
    converged = False
    for _ in range(max_iter):
        p = clamp_prob(sigmoid(eta), clamp)
        resid = y - p
        w = p * (1.0 - p)

        grad1 = _segment_sum(resid * zt1, bounds) - V[:, 0]
        grad2 = _segment_sum(resid * zt2, bounds) - V[:, 1]
        gnorm = np.maximum(np.abs(grad1), np.abs(grad2))
        active = gnorm >= tol_v
        if not np.any(active):
            converged = True
            break

        h11 = _segment_sum(w * zt1 * zt1, bounds) + 1.0
        h12 = _segment_sum(w * zt1 * zt2, bounds)
        h22 = _segment_sum(w * zt2 * zt2, bounds) + 1.0
        det = h11 * h22 - h12 * h12  # >= 1
        d1 = (h22 * grad1 - h12 * grad2) / det
        d2 = (-h12 * grad1 + h11 * grad2) / det
        d1[~active] = 0.0
        d2[~active] = 0.0

        # Backtrack per student until the joint value stops decreasing;
        # the slack scales with |value| so float noise cannot stall.
        slack = 1e-12 + 8.0 * eps64 * np.abs(g_cur)
        alpha = np.ones(n_students)
        step = np.column_stack([d1, d2])
        for _ in range(40):
            candidate = V + alpha[:, None] * step
            g_new, eta_new = joint_value(candidate)
            worse = active & (g_new < g_cur - slack)
            if not np.any(worse):
                break
            alpha[worse] *= 0.5
        else:
            candidate = V + alpha[:, None] * step
            g_new, eta_new = joint_value(candidate)
        V = candidate
        g_cur, eta = g_new, eta_new

    if not converged:
        p = clamp_prob(sigmoid(eta), clamp)
        resid = y - p
        grad1 = _segment_sum(resid * zt1, bounds) - V[:, 0]
        grad2 = _segment_sum(resid * zt2, bounds) - V[:, 1]
        gnorm = np.maximum(np.abs(grad1), np.abs(grad2))
        if np.any(gnorm >= tol_v):
            worst = int(np.argmax(gnorm))
            label = student_ids[worst] if student_ids is not None else worst
            raise InnerDivergence(label, max_iter)
        w = p * (1.0 - p)

    h11 = _segment_sum(w * zt1 * zt1, bounds) + 1.0
    h12 = _segment_sum(w * zt1 * zt2, bounds)
    h22 = _segment_sum(w * zt2 * zt2, bounds) + 1.0
    det = h11 * h22 - h12 * h12
    # H^-1 in original coordinates: L H~^-1 L'.
    k11t = h22 / det
    k12t = -h12 / det
    k22t = h11 / det
    k11 = l11 * (k11t * l11)
    k12 = l11 * (k11t * l21 + k12t * l22)
    k22 = (
        l21 * (k11t * l21 + k12t * l22)
        + l22 * (k12t * l21 + k22t * l22)
    )

    U = np.column_stack([l11 * V[:, 0], l21 * V[:, 0] + l22 * V[:, 1]])
    w_info = np.column_stack([
        _segment_sum(w, bounds),
        _segment_sum(w * t, bounds),
        _segment_sum(w * t * t, bounds),
    ])
    resid_z = np.column_stack([
        _segment_sum(resid, bounds),
        _segment_sum(resid * t, bounds),
    ])
    return ModeResult(
        U=U,
        V=V,
        k_u=np.column_stack([k11, k12, k22]),
        w_info=w_info,
        resid_z=resid_z,
        log_det_ht=np.log(det),
        p=p,
        w=w,
    )


def _solve_lower(chol, U):
    """v = L^-1 u rowwise for the 2x2 lower-triangular L."""
    v1 = U[:, 0] / chol[0, 0]
    v2 = (U[:, 1] - chol[1, 0] * v1) / chol[1, 1]
    return np.column_stack([v1, v2])


def _sigma_min_2x2(m) -> float:
    """Smallest singular value of a 2x2 matrix, closed form."""
    a, b, c, d = m[0, 0], m[0, 1], m[1, 0], m[1, 1]
    t1 = a * a + b * b + c * c + d * d
    det = a * d - b * c
    disc = max(t1 * t1 - 4.0 * det * det, 0.0)
    smin_sq = 0.5 * (t1 - np.sqrt(disc))
    return float(np.sqrt(max(smin_sq, 0.0)))


def inner_mode(
    eta_fixed,
    t,
    y,
    cov: CovarianceParams,
    tol: float = 1e-10,
    max_iter: int = 50,
    clamp: float = 1e-12,
    student_id="?",
):
    """Mode and negative Hessian of one student's random-effect posterior.

    ``eta_fixed`` holds the fixed-effect part of each row's linear
    predictor. A student with no rows has the prior's mode and precision.
    """
    eta_fixed = np.atleast_1d(np.asarray(eta_fixed, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if eta_fixed.size == 0:
        return np.zeros(2), cov.precision()
    bounds = np.array([0, eta_fixed.size])
    modes = solve_modes(
        eta_fixed, t, y, bounds, cov, tol=tol, max_iter=max_iter,
        clamp=clamp, student_ids=(student_id,),
    )
    lam = cov.precision()
    w11, w12, w22 = modes.w_info[0]
    neg_hessian = lam + np.array([[w11, w12], [w12, w22]])
    return modes.U[0], neg_hessian
