"""Graphical lasso: sparse inverse covariance by l1-penalized likelihood.

Solves

    minimize  tr(S Theta) - log det Theta + lam * ||Theta||_{1,od}

over symmetric positive definite ``Theta``, where the penalty only touches
off-diagonal entries. The solver is ADMM: an eigendecomposition step for
the log-det part, and entrywise soft-thresholding (diagonal skipped) for
the penalty. Termination is certified by the KKT residual of the sparse
iterate, so ``kkt_residual <= tol`` holds on every successful return.
"""
from dataclasses import dataclass

import numpy as np

from .exceptions import ConvergenceError, InputError

#: entries with smaller magnitude count as structural zeros (edges, BIC)
ZERO_THRESHOLD = 1e-8

#: ridge added to a (near) singular covariance before solving
RIDGE_EPS = 1e-6
RIDGE_TRIGGER = 1e-8


@dataclass(frozen=True)
class GlassoSolution:
    theta: np.ndarray
    objective: float
    iterations: int
    kkt_residual: float


def _check_symmetric(S, name="S"):
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise InputError(f"{name} must be a square matrix, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise InputError(f"{name} has non-finite entries")
    if not np.array_equal(S, S.T):
        # tolerate round-off from weighted sums, reject genuine asymmetry
        scale = max(1.0, float(np.max(np.abs(S))))
        if np.max(np.abs(S - S.T)) > 1e-10 * scale:
            raise InputError(f"{name} is not symmetric")
        S = 0.5 * (S + S.T)
    return S


def off_diagonal_l1(theta):
    """Sum of absolute off-diagonal entries."""
    theta = np.asarray(theta)
    return float(np.abs(theta).sum() - np.abs(np.diag(theta)).sum())


def objective(S, theta, lam):
    """Penalized negative log-likelihood ``tr(S theta) - logdet theta + lam*||theta||_od``.

    Returns ``inf`` when ``theta`` is not positive definite.
    """
    sign, logdet = np.linalg.slogdet(theta)
    if sign <= 0:
        return np.inf
    return float(np.sum(S * theta) - logdet + lam * off_diagonal_l1(theta))


def _inverse_pd(theta):
    """Inverse of an SPD matrix via Cholesky; ``None`` if not PD."""
    try:
        L = np.linalg.cholesky(theta)
    except np.linalg.LinAlgError:
        return None
    Linv = np.linalg.inv(L)
    W = Linv.T @ Linv
    return 0.5 * (W + W.T)


def _kkt(S, theta, W, lam):
    grad = S - W
    off = ~np.eye(S.shape[0], dtype=bool)
    nz = theta != 0.0
    res = np.abs(grad)
    active = off & nz
    res[active] = np.abs(grad[active] + lam * np.sign(theta[active]))
    inactive = off & ~nz
    res[inactive] = np.maximum(np.abs(grad[inactive]) - lam, 0.0)
    return float(res.max()) if res.size else 0.0


def kkt_residual(S, theta, lam):
    """Max-norm violation of ``S - inv(theta) + lam * G = 0``.

    ``G`` is the best subgradient of the off-diagonal l1 norm at ``theta``:
    ``sign(theta_ij)`` on nonzero off-diagonal entries, anything in
    ``[-1, 1]`` on zero ones, and zero on the diagonal.

    Parameters
    ----------
    S : array_like, shape (d, d)
        Symmetric (empirical covariance) matrix.
    theta : array_like, shape (d, d)
        Symmetric positive definite candidate.
    lam : float
        Off-diagonal penalty weight.

    Returns
    -------
    float
        Zero iff ``theta`` is exactly optimal.
    """
    S = _check_symmetric(S)
    theta = _check_symmetric(theta, "theta")
    if theta.shape != S.shape:
        raise InputError("S and theta shapes differ")
    W = _inverse_pd(theta)
    if W is None:
        raise InputError("theta is not positive definite")
    return _kkt(S, theta, W, float(lam))


def _soft_threshold_offdiag(V, kappa):
    Z = np.sign(V) * np.maximum(np.abs(V) - kappa, 0.0)
    np.fill_diagonal(Z, np.diag(V))
    return Z


def _admm(S, lam, tol, max_iter, theta0=None):
    if theta0 is None:
        Z = np.diag(1.0 / np.diag(S))
    else:
        Z = np.array(theta0, dtype=float)
    U = np.zeros_like(S)
    rho = 1.0
    best = (np.inf, None)
    inner_tol = tol
    for it in range(1, max_iter + 1):
        e, Q = np.linalg.eigh(rho * (Z - U) - S)
        x = (e + np.sqrt(e * e + 4.0 * rho)) / (2.0 * rho)
        X = (Q * x) @ Q.T
        Z_old = Z
        Z = _soft_threshold_offdiag(X + U, lam / rho)
        Z = 0.5 * (Z + Z.T)
        U = U + X - Z

        r = np.max(np.abs(X - Z))
        s = rho * np.max(np.abs(Z - Z_old))
        if r <= inner_tol and s <= inner_tol:
            W = _inverse_pd(Z)
            if W is not None:
                res = _kkt(S, Z, W, lam)
                if res < best[0]:
                    best = (res, Z)
                if res <= tol:
                    return Z, it, res
            # primal/dual small but certificate not met yet: tighten
            inner_tol *= 0.1
        # residual balancing
        if r > 10.0 * s:
            rho *= 2.0
            U *= 0.5
        elif s > 10.0 * r:
            rho *= 0.5
            U *= 2.0
    if best[1] is None:
        W = _inverse_pd(Z)
        best = (np.inf if W is None else _kkt(S, Z, W, lam), Z)
    raise ConvergenceError(
        f"graphical lasso did not reach tol={tol:g} in {max_iter} iterations "
        f"(kkt residual {best[0]:.3g})",
        iterate=best[1],
        residual=best[0],
    )


def solve_glasso(S, lam, tol=1e-6, max_iter=1000):
    """Sparse precision matrix for covariance ``S`` at penalty ``lam``.

    Parameters
    ----------
    S : array_like, shape (d, d)
        Symmetric empirical covariance.
    lam : float
        Non-negative off-diagonal penalty.
    tol : float
        Required KKT residual.
    max_iter : int
        ADMM iteration cap.

    Returns
    -------
    GlassoSolution

    Raises
    ------
    InputError
        If ``S`` is not symmetric or not finite, or ``lam < 0``.
    ConvergenceError
        If the KKT residual is still above ``tol`` after ``max_iter``
        iterations. The error carries the best iterate.
    """
    return _solve(S, lam, tol, max_iter)


def _solve(S, lam, tol=1e-6, max_iter=1000, theta0=None):
    # theta0 only changes the iteration count, never the optimum
    S = _check_symmetric(S)
    lam = float(lam)
    if lam < 0 or not np.isfinite(lam):
        raise InputError(f"lambda must be a finite non-negative number, got {lam}")
    if tol <= 0 or max_iter < 1:
        raise InputError("tol must be positive and max_iter at least 1")
    d = S.shape[0]
    if np.linalg.eigvalsh(S)[0] < RIDGE_TRIGGER:
        S = S + RIDGE_EPS * np.eye(d)

    if lam == 0.0:
        theta = np.linalg.inv(S)
        theta = 0.5 * (theta + theta.T)
        W = _inverse_pd(theta)
        res = _kkt(S, theta, W, 0.0)
        if res > tol:
            raise ConvergenceError(
                "covariance too ill-conditioned for an accurate inverse",
                iterate=theta, residual=res,
            )
        return GlassoSolution(theta, objective(S, theta, 0.0), 0, res)

    if d == 1:
        theta = np.array([[1.0 / S[0, 0]]])
        return GlassoSolution(theta, objective(S, theta, lam), 0, 0.0)

    if theta0 is not None:
        theta0 = np.asarray(theta0, dtype=float)
        if theta0.shape != S.shape or _inverse_pd(theta0) is None:
            theta0 = None
    theta, iters, res = _admm(S, lam, tol, max_iter, theta0)
    return GlassoSolution(theta, objective(S, theta, lam), iters, res)


def edge_count(theta, threshold=ZERO_THRESHOLD):
    """Number of lower-triangle (diagonal included) entries above ``threshold``."""
    theta = np.asarray(theta)
    return int(np.count_nonzero(np.abs(np.tril(theta)) > threshold))
