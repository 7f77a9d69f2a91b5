"""Hidden Markov chain with sparse Gaussian graphical emissions, fit by EM.

The E-step is the scaled forward-backward recursion; the M-step has closed
forms for the chain and the means, and reduces to one graphical lasso per
state for the precision matrices, with the penalty divided by the state's
responsibility mass.
"""
import logging
import math
import warnings

import numpy as np

from . import glasso
from .exceptions import (
    ConvergenceError,
    DegenerateEmissionError,
    EmptyStateError,
    FitError,
    InputError,
    InternalConsistencyError,
)
from .params import (
    ChainInit,
    ClusterInit,
    EStepResult,
    FitConfig,
    FitResult,
    InitConfig,
    ModelParams,
    as_observations,
)

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
_LOG_TINY = math.log(np.finfo(float).tiny)

#: responsibility mass below which a state is considered empty
EMPTY_STATE_MASS = 1e-12

#: tolerated decrease of the penalized log-likelihood between EM iterates
MONOTONE_SLACK = 1e-6

_INIT_RETRIES = 10


def log_emission(x, mu, theta):
    """Log density of ``N(x | mu, inv(theta))``.

    >>> round(log_emission([0.0], [0.0], [[1.0]]), 4)
    -0.9189
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    try:
        L = np.linalg.cholesky(theta)
    except np.linalg.LinAlgError:
        raise InputError("precision matrix is not positive definite") from None
    y = (x - mu) @ L
    logdet = 2.0 * np.log(np.diag(L)).sum()
    return float(0.5 * logdet - 0.5 * x.size * LOG_2PI - 0.5 * (y @ y))


def log_emissions(X, means, precisions):
    """Matrix of ``log N(x_n | mu_k, inv(Theta_k))``, shape (N, K)."""
    N, d = X.shape
    K = means.shape[0]
    out = np.empty((N, K))
    for k in range(K):
        try:
            L = np.linalg.cholesky(precisions[k])
        except np.linalg.LinAlgError:
            raise InputError(f"precision {k} is not positive definite") from None
        y = (X - means[k]) @ L
        logdet = 2.0 * np.log(np.diag(L)).sum()
        out[:, k] = 0.5 * logdet - 0.5 * d * LOG_2PI - 0.5 * np.einsum("ij,ij->i", y, y)
    return out


def forward_backward(params, X):
    """Scaled forward-backward pass.

    Emission densities are shifted by their per-row maximum before
    exponentiation; the shift is added back into ``log_scale``, so the
    scaled quantities are the same as with raw densities but far
    observations do not underflow inside the recursion.

    Parameters
    ----------
    params : ModelParams
    X : array_like, shape (N, d)

    Returns
    -------
    EStepResult

    Raises
    ------
    DegenerateEmissionError
        If some ``c_n = p(x_n | x_1..x_{n-1})`` underflows, i.e. an
        observation is essentially impossible under every reachable state.
    """
    X = as_observations(X)
    pi, A = params.pi, params.trans
    log_b = log_emissions(X, params.means, params.precisions)
    shift = log_b.max(axis=1)
    if not np.all(np.isfinite(shift)):
        n = int(np.argmax(~np.isfinite(shift)))
        raise DegenerateEmissionError(f"observation {n} has zero density under every state")
    B = np.exp(log_b - shift[:, None])
    N, K = B.shape

    alpha = np.empty((N, K))
    c = np.empty(N)
    a = pi * B[0]
    for n in range(N):
        if n > 0:
            a = (alpha[n - 1] @ A) * B[n]
        c[n] = a.sum()
        if not c[n] > 0:
            raise DegenerateEmissionError(
                f"observation {n} is impossible under every reachable state")
        alpha[n] = a / c[n]
    log_scale = np.log(c) + shift
    bad = ~(log_scale > _LOG_TINY)
    if np.any(bad):
        n = int(np.argmax(bad))
        raise DegenerateEmissionError(
            f"observation {n} has negligible likelihood under every state "
            f"(log c_n = {log_scale[n]:.1f})"
        )

    beta = np.empty((N, K))
    beta[-1] = 1.0
    for n in range(N - 2, -1, -1):
        beta[n] = A @ (B[n + 1] * beta[n + 1]) / c[n + 1]

    gamma = alpha * beta
    if N > 1:
        xi = (alpha[:-1, :, None] * A[None, :, :]
              * (B[1:] * beta[1:])[:, None, :] / c[1:, None, None])
    else:
        xi = np.zeros((0, K, K))
    return EStepResult(
        gamma=gamma,
        xi=xi,
        scale=np.exp(log_scale),
        log_scale=log_scale,
        loglik=float(np.sum(log_scale)),
        alpha=alpha,
    )


def penalty(precisions, lam):
    """``(lam / 2) * sum_k ||Theta_k||_{1,od}``."""
    return 0.5 * lam * sum(glasso.off_diagonal_l1(t) for t in precisions)


def penalized_loglik(params, X, lam):
    """``ln p(X | params) - (lam/2) sum_k ||Theta_k||_{1,od}``."""
    return forward_backward(params, X).loglik - penalty(params.precisions, lam)


def update_chain(e, previous=None):
    """M-step for the initial distribution and the transition matrix."""
    g1 = e.gamma[0]
    pi = g1 / g1.sum()
    K = g1.shape[0]
    xi_sum = e.xi.sum(axis=0)
    den = xi_sum.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        A = xi_sum / den
    empty = den[:, 0] <= 0
    if np.any(empty):
        # a state only ever visited at the last step has no outgoing mass
        A[empty] = previous.trans[empty] if previous is not None else 1.0 / K
    return pi, A


def weighted_moments(X, w):
    """Weighted mean and weighted covariance about that mean."""
    mass = w.sum()
    mu = (w @ X) / mass
    diff = X - mu
    S = (diff * w[:, None]).T @ diff / mass
    return mu, 0.5 * (S + S.T), mass


def fit_precision(S, lam_k, tol, max_iter, previous=None):
    """Graphical lasso for one state, never worse than ``previous`` on its own objective.

    Keeping the better of the fresh solve and the previous precision makes
    every M-step an ascent step for the penalized objective even when the
    solver stops at a finite tolerance.
    """
    try:
        theta = glasso._solve(S, lam_k, tol, max_iter, theta0=previous).theta
    except ConvergenceError as exc:
        if previous is not None:
            logger.warning("glasso did not converge (%s); keeping previous precision", exc)
            return np.array(previous)
        if exc.iterate is not None and glasso._inverse_pd(exc.iterate) is not None:
            logger.warning("glasso did not converge (%s); using last iterate", exc)
            return exc.iterate
        raise
    if previous is not None:
        S_eff = S
        if np.linalg.eigvalsh(S)[0] < glasso.RIDGE_TRIGGER:
            S_eff = S + glasso.RIDGE_EPS * np.eye(S.shape[0])
        if glasso.objective(S_eff, previous, lam_k) < glasso.objective(S_eff, theta, lam_k):
            return np.array(previous)
    return theta


def update_emissions(X, gamma, lam, tol=1e-6, max_iter=1000, previous=None):
    """M-step for means and precisions given responsibilities ``gamma`` (N, K)."""
    K = gamma.shape[1]
    d = X.shape[1]
    means = np.empty((K, d))
    precisions = np.empty((K, d, d))
    for k in range(K):
        w = gamma[:, k]
        mass = w.sum()
        if not mass >= EMPTY_STATE_MASS:
            raise EmptyStateError(k, float(mass))
        mu, S, _ = weighted_moments(X, w)
        means[k] = mu
        prev = None if previous is None else previous[k]
        precisions[k] = fit_precision(S, lam / mass, tol, max_iter, prev)
    return means, precisions


def m_step(X, e, lam, tol=1e-6, max_iter=1000, previous=None):
    """Maximize the expected complete-data log posterior.

    Parameters
    ----------
    X : array_like, shape (N, d)
    e : EStepResult
        Posteriors computed on ``X``.
    lam : float
        Penalty of the log posterior; state ``k`` uses ``lam / sum_n gamma[n, k]``.
    tol, max_iter : graphical lasso settings.
    previous : ModelParams, optional
        Current parameters. Used to warm start the graphical lasso and to
        guarantee the precision update does not decrease the objective.

    Raises
    ------
    EmptyStateError
        A state's total responsibility is below ``EMPTY_STATE_MASS``.
    """
    X = as_observations(X)
    if e.gamma.shape[0] != X.shape[0]:
        raise InputError("posteriors and observations have different lengths")
    pi, A = update_chain(e, previous)
    means, precisions = update_emissions(
        X, e.gamma, lam, tol, max_iter,
        None if previous is None else previous.precisions,
    )
    return ModelParams(pi, A, means, precisions)


def init_chain(K, chain_init, rng):
    chain_init = ChainInit(chain_init)
    if chain_init is ChainInit.UNIFORM:
        return np.full(K, 1.0 / K), np.full((K, K), 1.0 / K)
    if chain_init is ChainInit.RANDOM_UNIFORM:
        pi = rng.uniform(size=K)
        A = rng.uniform(size=(K, K))
    else:
        pi = rng.dirichlet(np.ones(K))
        A = rng.dirichlet(np.ones(K), size=K)
    return pi / pi.sum(), A / A.sum(axis=1, keepdims=True)


def _cluster(X, K, method, seed):
    if K == 1:
        return np.zeros(X.shape[0], dtype=int)
    from sklearn.exceptions import ConvergenceWarning

    # degenerate clusterings are caught by the caller's size check
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        if ClusterInit(method) is ClusterInit.KMEANS:
            from sklearn.cluster import KMeans
            return KMeans(n_clusters=K, n_init=1, random_state=seed).fit_predict(X)
        from sklearn.mixture import GaussianMixture
        gmm = GaussianMixture(n_components=K, covariance_type="diag", random_state=seed)
        return gmm.fit(X).predict(X)


def initialize(X, K, cfg=None, lam=0.0, tol=1e-6, max_iter=1000):
    """Starting parameters from a hard clustering of the rows of ``X``.

    The chain is set according to ``cfg.chain_init``; each cluster gives a
    mean, an empirical covariance, and a graphical lasso precision at
    ``lam / cluster_size``.

    Raises
    ------
    EmptyStateError
        If ten seeded clusterings in a row leave some cluster with fewer
        than two points.
    """
    X = as_observations(X)
    cfg = cfg or InitConfig()
    if K < 1 or X.shape[0] < K:
        raise InputError(f"need at least K={K} observations, got {X.shape[0]}")
    rng = np.random.default_rng(cfg.seed)
    pi, A = init_chain(K, cfg.chain_init, rng)
    counts = None
    for _ in range(_INIT_RETRIES):
        labels = _cluster(X, K, cfg.cluster_init, int(rng.integers(2**31 - 1)))
        counts = np.bincount(labels, minlength=K)
        if K == 1 or counts.min() >= 2:
            break
    else:
        k = int(np.argmin(counts))
        raise EmptyStateError(k, float(counts[k]))
    resp = np.zeros((X.shape[0], K))
    resp[np.arange(X.shape[0]), labels] = 1.0
    means, precisions = update_emissions(X, resp, lam, tol, max_iter)
    return ModelParams(pi, A, means, precisions)


def run_em(X, params, lam, tol=1e-4, max_iter=200, glasso_tol=1e-6, glasso_max_iter=1000,
           m_step_fn=None, penalty_fn=None):
    """EM iterations from ``params`` until the penalized log-likelihood stalls.

    Returns
    -------
    params : ModelParams
        Final parameters.
    e : EStepResult
        Posteriors under the final parameters.
    trace : list of float
        Penalized log-likelihood of every iterate, starting with ``params``.
    converged : bool
    """
    X = as_observations(X)
    if m_step_fn is None:
        def m_step_fn(X, e, lam, previous):
            return m_step(X, e, lam, glasso_tol, glasso_max_iter, previous=previous)
    if penalty_fn is None:
        def penalty_fn(p):
            return penalty(p.precisions, lam)

    e = forward_backward(params, X)
    trace = [e.loglik - penalty_fn(params)]
    converged = False
    for _ in range(max_iter):
        new = m_step_fn(X, e, lam, previous=params)
        e_new = forward_backward(new, X)
        value = e_new.loglik - penalty_fn(new)
        if value < trace[-1] - MONOTONE_SLACK:
            raise InternalConsistencyError(
                f"penalized log-likelihood decreased from {trace[-1]:.10g} to {value:.10g}"
            )
        params, e = new, e_new
        trace.append(value)
        if trace[-1] - trace[-2] < tol:
            converged = True
            break
    return params, e, trace, converged


def restart_seeds(seed, n):
    """Deterministic per-restart seeds derived from one master seed."""
    children = np.random.SeedSequence(int(seed)).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint32)[0]) for c in children]


_RESTART_ERRORS = (EmptyStateError, DegenerateEmissionError, ConvergenceError)


def best_of_restarts(X, cfg, make_init, run):
    """Run ``cfg.n_init`` restarts; keep the highest final penalized log-likelihood.

    Ties go to the earlier restart. Restarts that hit an empty state or a
    degenerate emission are discarded.
    """
    best = None
    failures = []
    for r, seed in enumerate(restart_seeds(cfg.init.seed, cfg.n_init)):
        init_cfg = InitConfig(cfg.init.chain_init, cfg.init.cluster_init, seed)
        try:
            params0 = make_init(X, init_cfg)
            out = run(X, params0)
        except _RESTART_ERRORS as exc:
            logger.info("restart %d (seed %d) discarded: %s", r, seed, exc)
            failures.append(f"restart {r}: {exc}")
            continue
        if best is None or out[2][-1] > best[1][2][-1]:
            best = (seed, out)
    if best is None:
        raise FitError("all EM restarts failed: " + "; ".join(failures))
    return best


def fit_em(X, cfg):
    """Fit the model by EM with ``cfg.n_init`` restarts.

    Parameters
    ----------
    X : array_like, shape (N, d)
    cfg : FitConfig

    Returns
    -------
    FitResult
        Best restart; ``labels`` is the row-wise argmax of the posteriors
        (ties toward the lower state index) and ``bic`` uses the
        unpenalized log-likelihood.
    """
    from .selection import bic_score, count_free_params

    X = as_observations(X)
    K = int(cfg.n_states)
    if X.shape[0] < K:
        raise InputError(f"need at least K={K} observations, got {X.shape[0]}")

    def make_init(X, init_cfg):
        return initialize(X, K, init_cfg, cfg.lam, cfg.glasso_tol, cfg.glasso_max_iter)

    def run(X, params0):
        return run_em(X, params0, cfg.lam, cfg.tol, cfg.max_iter,
                      cfg.glasso_tol, cfg.glasso_max_iter)

    seed, (params, e, trace, converged) = best_of_restarts(X, cfg, make_init, run)
    n_free = count_free_params(params)
    return FitResult(
        params=params,
        posteriors=e,
        trace=trace,
        labels=np.argmax(e.gamma, axis=1),
        bic=bic_score(e.loglik, n_free, X.shape[0]),
        n_free_params=n_free,
        seed=seed,
        n_iter=len(trace) - 1,
        converged=converged,
    )


def state_forecast(params, gamma_last):
    """Distribution of the next hidden state, ``gamma_last @ A``."""
    return np.asarray(gamma_last) @ params.trans


def predict_next(params, e):
    """Conditional mean of the next observation, ``sum_k w_k mu_k`` with ``w = gamma_N @ A``.

    ``e`` may be an ``EStepResult`` or the posterior vector of the last step.
    """
    gamma_last = e.gamma[-1] if isinstance(e, EStepResult) else np.asarray(e, dtype=float)
    return state_forecast(params, gamma_last) @ params.means
