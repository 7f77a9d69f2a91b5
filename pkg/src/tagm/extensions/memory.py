"""Higher-order hidden chains through state-space expansion.

A chain whose next state depends on the last ``r`` states, with emissions
depending on the last ``m`` states, is a first-order chain over composite
states ``(z_n, z_{n-1}, ..., z_{n-nu+1})``, ``nu = max(r, m)``. A composite
state is coded in base ``K`` with ``z_n`` as the most significant digit,
so dropping the oldest digit is ``code // K`` and prepending a new one is
``new * K**(nu-1) + code // K``.

Emission parameters are shared by composite states with the same leading
``m`` digits and transition rows by states with the same leading ``r``
digits; both groups are contiguous blocks of codes.
"""
from dataclasses import dataclass

import numpy as np

from .. import core
from ..exceptions import ConfigurationError, InputError
from ..glasso import ZERO_THRESHOLD
from ..params import FitResult, ModelParams, as_observations

#: largest composite state space mem_fit accepts
MAX_COMPOSITE_STATES = 10_000


@dataclass(frozen=True)
class MemConfig:
    chain_order: int = 1
    emission_order: int = 1

    def __post_init__(self):
        if int(self.chain_order) < 1 or int(self.emission_order) < 1:
            raise ConfigurationError("chain_order and emission_order must be >= 1")

    @property
    def nu(self):
        return max(int(self.chain_order), int(self.emission_order))


def _check_k_nu(K, nu):
    if int(K) < 1 or int(nu) < 1:
        raise InputError("K and nu must be positive")


def encode_state(digits, K):
    """Composite code of ``digits = (z_n, z_{n-1}, ...)``.

    >>> encode_state((1, 0), 2)
    2
    """
    _check_k_nu(K, max(len(digits), 1))
    code = 0
    for z in digits:
        z = int(z)
        if not 0 <= z < K:
            raise InputError(f"digit {z} outside [0, {K})")
        code = code * K + z
    return code


def decode_state(code, K, nu):
    """Inverse of :func:`encode_state`: ``nu`` digits, most recent state first."""
    _check_k_nu(K, nu)
    code = int(code)
    if not 0 <= code < K ** nu:
        raise InputError(f"code {code} outside [0, {K ** nu})")
    digits = []
    for _ in range(nu):
        code, z = divmod(code, K)
        digits.append(z)
    return tuple(reversed(digits))


def transition_allowed(i, j, K, nu):
    """Whether composite ``i`` can be followed by ``j``.

    The history carried by ``j`` (all but its leading digit) must be the
    leading ``nu - 1`` digits of ``i``.
    """
    if nu == 1:
        return True
    return i // K == j % K ** (nu - 1)


def allowed_mask(K, nu):
    """Boolean ``K**nu x K**nu`` matrix of :func:`transition_allowed`."""
    M = K ** nu
    codes = np.arange(M)
    if nu == 1:
        return np.ones((M, M), dtype=bool)
    return (codes[:, None] // K) == (codes[None, :] % K ** (nu - 1))


def index_set(i, K, nu, order):
    """Codes sharing the leading ``order`` digits of ``i``, as a ``range``."""
    if not 1 <= order <= nu:
        raise InputError("order must lie in [1, nu]")
    size = K ** (nu - order)
    start = (i // size) * size
    return range(start, start + size)


def _successor(K, nu):
    """``succ[i, b]``: the code reached from ``i`` when the new state is ``b``."""
    M = K ** nu
    step = K ** (nu - 1)
    return np.arange(K)[None, :] * step + (np.arange(M) // K)[:, None]


def expand_params(base, nu):
    """Composite-state parameters that mimic a first-order model ``base``.

    Every composite state takes the emission of its leading digit, the
    allowed transition ``i -> j`` gets ``base.trans[lead(i), lead(j)]``
    and the initial mass of a leading digit is spread evenly over its
    histories. With ``nu = 1`` this returns ``base`` unchanged.
    """
    if nu == 1:
        return base
    K = base.n_states
    M = K ** nu
    lead = np.arange(M) // K ** (nu - 1)
    succ = _successor(K, nu)
    A = np.zeros((M, M))
    A[np.arange(M)[:, None], succ] = base.trans[lead]
    pi = base.pi[lead] / K ** (nu - 1)
    return ModelParams(pi, A, base.means[lead], base.precisions[lead])


def _block_precisions(params, K, nu, m):
    return params.precisions[:: K ** (nu - m)]


def make_m_step(K, mem, glasso_tol=1e-6, glasso_max_iter=1000):
    """M-step over composite states with tied emissions and transitions."""
    nu, r, m = mem.nu, int(mem.chain_order), int(mem.emission_order)
    M = K ** nu
    em_block = K ** (nu - m)
    tr_block = K ** (nu - r)
    succ = _successor(K, nu)
    rows = np.arange(M)[:, None]

    def m_step(X, e, lam, previous):
        g1 = e.gamma[0]
        pi = g1 / g1.sum()

        # transitions: xi mass from each composite state to each new digit,
        # pooled over the states that share the leading r digits
        xi_sum = e.xi.sum(axis=0)
        to_digit = xi_sum[rows, succ]
        pooled = to_digit.reshape(K ** r, tr_block, K).sum(axis=1)
        den = pooled.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            P = pooled / den
        empty = den[:, 0] <= 0
        if np.any(empty):
            P[empty] = 1.0 / K
        A = np.zeros((M, M))
        A[rows, succ] = np.repeat(P, tr_block, axis=0)
        if np.any(empty) and previous is not None:
            for b in np.flatnonzero(empty):
                blk = slice(b * tr_block, (b + 1) * tr_block)
                A[blk] = previous.trans[blk]

        # emissions: responsibilities pooled over the emission block
        G = e.gamma.reshape(e.gamma.shape[0], K ** m, em_block).sum(axis=2)
        prev = None if previous is None else _block_precisions(previous, K, nu, m)
        means, precisions = core.update_emissions(
            X, G, lam, glasso_tol, glasso_max_iter, prev)
        return ModelParams(pi, A,
                           np.repeat(means, em_block, axis=0),
                           np.repeat(precisions, em_block, axis=0))

    return m_step


def mem_free_params(params, K, mem, threshold=ZERO_THRESHOLD):
    """Free parameters with tying: ``(K^nu - 1) + K^r (K-1) + K^m d + sum_blocks nnz``."""
    from ..selection import precision_free_params

    nu, r, m = mem.nu, int(mem.chain_order), int(mem.emission_order)
    d = params.dim
    nu_theta = sum(precision_free_params(t, threshold)
                   for t in _block_precisions(params, K, nu, m))
    return (K ** nu - 1) + K ** r * (K - 1) + K ** m * d + nu_theta


def base_labels(gamma, K, nu):
    """Most recent base state of the most probable composite state per step."""
    return np.argmax(gamma, axis=1) // K ** (nu - 1)


def mem_fit(X, cfg, mem):
    """Fit a memory-``nu`` model by EM over ``K**nu`` composite states.

    Parameters
    ----------
    X : array_like, shape (N, d)
    cfg : FitConfig
        ``cfg.n_states`` is the number of base states ``K``.
    mem : MemConfig

    Returns
    -------
    FitResult
        ``params`` are over the composite states; ``labels`` are base
        states. With ``nu = 1`` the result equals ``core.fit_em``.
    """
    from ..selection import bic_score

    X = as_observations(X)
    K, nu = int(cfg.n_states), mem.nu
    M = K ** nu
    if M > MAX_COMPOSITE_STATES:
        raise ConfigurationError(
            f"K**nu = {M} composite states exceeds the limit of {MAX_COMPOSITE_STATES}")
    if X.shape[0] < K:
        raise InputError(f"need at least K={K} observations, got {X.shape[0]}")
    m_step = make_m_step(K, mem, cfg.glasso_tol, cfg.glasso_max_iter)
    step = K ** (nu - int(mem.emission_order))

    def penalty_fn(p):
        return core.penalty(p.precisions[::step], cfg.lam)

    def make_init(X, init_cfg):
        base = core.initialize(X, K, init_cfg, cfg.lam, cfg.glasso_tol, cfg.glasso_max_iter)
        return expand_params(base, nu)

    def run(X, params0):
        return core.run_em(X, params0, cfg.lam, cfg.tol, cfg.max_iter,
                           cfg.glasso_tol, cfg.glasso_max_iter,
                           m_step_fn=m_step, penalty_fn=penalty_fn)

    seed, (params, e, trace, converged) = core.best_of_restarts(X, cfg, make_init, run)
    n_free = mem_free_params(params, K, mem)
    return FitResult(
        params=params,
        posteriors=e,
        trace=trace,
        labels=base_labels(e.gamma, K, nu),
        bic=bic_score(e.loglik, n_free, X.shape[0]),
        n_free_params=n_free,
        seed=seed,
        n_iter=len(trace) - 1,
        converged=converged,
    )
