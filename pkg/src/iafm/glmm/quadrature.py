"""Adaptive Gauss-Hermite reference for the marginal log-likelihood.

Test oracle only: tensor-product quadrature recentered at each student's
mode with covariance H^{-1}, i.e. u = u* + sqrt(2) C xi with C the
Cholesky factor of H^{-1}. Exact up to quadrature error, so it bounds
the Laplace approximation's error on small instances.
"""

from __future__ import annotations

import numpy as np

from ..errors import OracleTooLarge
from ..mathutil import bernoulli_loglik, logsumexp
from .design import DesignMatrices
from .inner import solve_modes
from .params import CovarianceParams, FitOptions

STUDENT_CAP = 50


def loglik_reference_quadrature(
    beta,
    cov: CovarianceParams,
    design: DesignMatrices,
    nodes_per_dim: int = 50,
    opts: FitOptions = FitOptions(),
) -> float:
    """Marginal log-likelihood by adaptive Gauss-Hermite quadrature."""
    if design.n_students > STUDENT_CAP:
        raise OracleTooLarge(
            f"quadrature oracle capped at {STUDENT_CAP} students, "
            f"got {design.n_students}"
        )
    if nodes_per_dim < 10:
        raise ValueError("nodes_per_dim must be >= 10")
    if design.n_students == 0:
        return 0.0

    beta = np.asarray(beta, dtype=float)
    eta_fixed = np.einsum("ij,j->i", design.X, beta, optimize=False)
    modes = solve_modes(
        eta_fixed,
        design.t_scaled,
        design.y,
        design.block_bounds,
        cov,
        tol=opts.inner_tol,
        max_iter=opts.inner_max_iter,
        clamp=opts.probability_clamp,
        student_ids=design.student_ids,
    )
    U = modes.U

    nodes, weights = np.polynomial.hermite.hermgauss(nodes_per_dim)
    log_w = np.log(weights)
    # Tensor grid in the standardized coordinate.
    xi1 = np.repeat(nodes, nodes_per_dim)
    xi2 = np.tile(nodes, nodes_per_dim)
    log_w2 = np.repeat(log_w, nodes_per_dim) + np.tile(log_w, nodes_per_dim)
    xi_sq = xi1 * xi1 + xi2 * xi2

    lam = cov.precision()
    log_det_sigma = cov.log_det_sigma()
    bounds = design.block_bounds
    total = 0.0
    for s in range(design.n_students):
        lo, hi = bounds[s], bounds[s + 1]
        k11, k12, k22 = modes.k_u[s]
        c11 = np.sqrt(k11)
        c21 = k12 / c11
        c22 = np.sqrt(k22 - c21 * c21)
        u1 = U[s, 0] + np.sqrt(2.0) * c11 * xi1
        u2 = U[s, 1] + np.sqrt(2.0) * (c21 * xi1 + c22 * xi2)

        eta = (
            eta_fixed[lo:hi][None, :]
            + u1[:, None]
            + u2[:, None] * design.t_scaled[lo:hi][None, :]
        )
        row_ll = bernoulli_loglik(design.y[lo:hi][None, :], eta).sum(axis=1)
        quad = 0.5 * (
            lam[0, 0] * u1 * u1
            + 2.0 * lam[0, 1] * u1 * u2
            + lam[1, 1] * u2 * u2
        )
        log_prior = -np.log(2.0 * np.pi) - 0.5 * log_det_sigma - quad
        terms = log_w2 + xi_sq + row_ll + log_prior
        total += logsumexp(terms) + np.log(2.0) + np.log(c11 * c22)
    return float(total)
