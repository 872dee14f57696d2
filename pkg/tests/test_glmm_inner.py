import numpy as np
import pytest

from iafm.glmm import CovarianceParams, inner_mode
from iafm.mathutil import sigmoid


def joint_log_density(u, eta_fixed, t, y, cov):
    eta = eta_fixed + u[0] + u[1] * t
    ll = np.sum(y * eta - np.logaddexp(0.0, eta))
    lam = cov.precision()
    return ll - 0.5 * (u @ lam @ u)


def test_zero_rows_gives_prior_mode():
    cov = CovarianceParams(np.log(0.4), np.log(0.8), 0.3)
    mode, neg_hess = inner_mode([], [], [], cov)
    assert np.allclose(mode, 0.0)
    assert np.allclose(neg_hess, cov.precision())


def test_mode_approaches_observation_as_prior_widens():
    t = np.array([0.0])
    y = np.array([1.0])
    eta_fixed = np.array([0.0])
    probs = []
    for sd in [0.3, 1.0, 3.0]:
        cov = CovarianceParams(np.log(sd), np.log(0.1), 0.0)
        mode, _ = inner_mode(eta_fixed, t, y, cov)
        probs.append(sigmoid(mode[0]))
    assert probs[0] < probs[1] < probs[2] < 1.0


def test_three_row_block_matches_grid_search():
    # strictly concave objective: zooming grid search is exhaustive
    eta_fixed = np.array([0.2, -0.4, 0.1])
    t = np.array([0.0, 0.05, 0.10])
    y = np.array([1.0, 0.0, 1.0])
    cov = CovarianceParams(np.log(0.8), np.log(1.5), 0.25)

    center = np.zeros(2)
    half = 5.0
    for _ in range(4):
        g1 = np.linspace(center[0] - half, center[0] + half, 101)
        g2 = np.linspace(center[1] - half, center[1] + half, 101)
        best, best_val = None, -np.inf
        for a in g1:
            for b in g2:
                val = joint_log_density(np.array([a, b]), eta_fixed, t, y, cov)
                if val > best_val:
                    best, best_val = np.array([a, b]), val
        center = best
        half = half * 2 / 100 * 2  # keep a few cells of slack while zooming

    mode, neg_hess = inner_mode(eta_fixed, t, y, cov)
    assert np.all(np.abs(mode - center) < 2e-3)
    # negative Hessian is symmetric positive definite
    assert neg_hess[0, 1] == neg_hess[1, 0]
    assert np.all(np.linalg.eigvalsh(neg_hess) > 0)


def test_returned_mode_is_stationary():
    rng = np.random.default_rng(3)
    for _ in range(10):
        n = int(rng.integers(1, 12))
        eta_fixed = rng.normal(0, 1, n)
        t = rng.integers(0, 10, n) * 0.01
        y = (rng.random(n) < 0.6).astype(float)
        cov = CovarianceParams(
            float(np.log(rng.uniform(0.2, 1.0))),
            float(np.log(rng.uniform(0.2, 2.0))),
            float(rng.uniform(-0.5, 0.5)),
        )
        mode, _ = inner_mode(eta_fixed, t, y, cov, tol=1e-10)
        eta = eta_fixed + mode[0] + mode[1] * t
        p = sigmoid(eta)
        lam = cov.precision()
        grad = np.array([
            np.sum(y - p), np.sum((y - p) * t)
        ]) - lam @ mode
        assert np.max(np.abs(grad)) < 1e-8


def test_extreme_correlation_still_solves():
    # near-singular prior: whitened Newton must not stall
    eta_fixed = np.array([0.5, -0.2, 0.3, 0.1])
    t = np.array([0.0, 0.01, 0.02, 0.03])
    y = np.array([1.0, 1.0, 0.0, 1.0])
    cov = CovarianceParams(np.log(0.45), np.log(0.003), 8.0)
    mode, neg_hess = inner_mode(eta_fixed, t, y, cov)
    assert np.all(np.isfinite(mode))
    assert np.all(np.isfinite(neg_hess))
