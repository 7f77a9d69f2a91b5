"""Hyper-parameter selection.

The number of states is chosen by BIC with an exact free-parameter count
(precision entries counted only where the estimate is nonzero). The
penalty is chosen by stability of clusters: repeated fits from different
seeds are summarized by a consensus matrix over time points and its
dispersion coefficient.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .exceptions import InputError, StabilityError, TAGMError
from .glasso import ZERO_THRESHOLD
from .params import InitConfig, as_observations

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BicReport:
    loglik: float
    n_free: int
    n_obs: int
    score: float
    n_states: Optional[int] = None

    def to_dict(self):
        return {"k": self.n_states, "loglik": self.loglik, "n_free": self.n_free,
                "n_obs": self.n_obs, "score": self.score}


@dataclass(frozen=True, eq=False)
class ConsensusReport:
    consensus: np.ndarray
    dispersion: float
    n_repeats: int
    lam: Optional[float] = None
    seeds: List[int] = field(default_factory=list)

    def to_dict(self, include_matrix=False):
        doc = {"lambda": self.lam, "dispersion": self.dispersion,
               "n_repeats": self.n_repeats, "seeds": list(self.seeds)}
        if include_matrix:
            doc["consensus"] = self.consensus.tolist()
        return doc


def precision_free_params(theta, threshold=ZERO_THRESHOLD):
    """Nonzero entries on and below the diagonal."""
    theta = np.asarray(theta)
    return int(np.count_nonzero(np.abs(np.tril(theta)) > threshold))


def count_free_params(params, threshold=ZERO_THRESHOLD):
    """Free parameters of a fitted model.

    ``(K-1)`` for the initial distribution, ``K(K-1)`` for the transition
    rows, ``K d`` for the means, and for each precision matrix the number
    of lower-triangle entries (diagonal included) that are nonzero.

    >>> from tagm.params import ModelParams
    >>> import numpy as np
    >>> p = ModelParams(np.ones(1), np.ones((1, 1)), np.zeros((1, 1)), np.ones((1, 1, 1)))
    >>> count_free_params(p)
    2
    """
    K, d = params.n_states, params.dim
    nu_theta = sum(precision_free_params(t, threshold) for t in params.precisions)
    return (K - 1) + K * (K - 1) + K * d + nu_theta


def bic_score(loglik, n_free, n_obs):
    """``loglik - (n_free / 2) ln(n_obs)``; larger is better."""
    return float(loglik - 0.5 * n_free * math.log(n_obs))


def bic(fit, X):
    """BIC of a fitted model on the data it was fitted to.

    Uses the unpenalized log-likelihood; the sparsity penalty is a prior,
    not part of ``p(X | model)``.
    """
    X = as_observations(X)
    if fit.posteriors.gamma.shape[0] != X.shape[0]:
        raise InputError("fit was produced on a different number of observations")
    n_free = count_free_params(fit.params)
    return BicReport(
        loglik=fit.posteriors.loglik,
        n_free=n_free,
        n_obs=X.shape[0],
        score=bic_score(fit.posteriors.loglik, n_free, X.shape[0]),
        n_states=fit.params.n_states,
    )


def select_k(X, k_range, lam, cfg):
    """Fit every ``K`` in ``k_range`` and keep the best BIC.

    Ties go to the smaller ``K``. Candidates whose fit fails are left out
    of the comparison and listed in ``failures``.

    Returns
    -------
    k_best : int
    reports : list of BicReport
        One per successful candidate, in increasing ``K``.
    failures : dict
        ``K -> error message``.
    """
    from .core import fit_em

    X = as_observations(X)
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise InputError("k_range is empty")
    reports, failures = [], {}
    for k in ks:
        try:
            fit = fit_em(X, cfg.replace(n_states=k, lam=lam))
        except TAGMError as exc:
            logger.warning("K=%d failed: %s", k, exc)
            failures[k] = str(exc)
            continue
        reports.append(bic(fit, X))
    if not reports:
        raise TAGMError("every candidate K failed: " + "; ".join(f"{k}: {m}" for k, m in failures.items()))
    best = reports[0]
    for rep in reports[1:]:
        if rep.score > best.score:
            best = rep
    return best.n_states, reports, failures


def connectivity_matrix(labels):
    """``C[i, j] = 1`` iff observations ``i`` and ``j`` share a label."""
    labels = np.asarray(labels)
    return (labels[:, None] == labels[None, :]).astype(float)


def dispersion(consensus):
    """Dispersion coefficient ``mean(4 (C - 1/2)^2)``: 1 for a crisp consensus, 0 at C = 1/2."""
    consensus = np.asarray(consensus, dtype=float)
    return float(np.mean(4.0 * (consensus - 0.5) ** 2))


def stability(X, K, lam, n_repeats, cfg):
    """Consensus of ``n_repeats`` fits that differ only in their seed.

    Raises
    ------
    StabilityError
        Fewer than two repeats fitted successfully.
    """
    from .core import fit_em, restart_seeds

    X = as_observations(X)
    if n_repeats < 2:
        raise InputError("stability needs at least two repeats")
    N = X.shape[0]
    total = np.zeros((N, N))
    ok = 0
    seeds = restart_seeds(cfg.init.seed, n_repeats)
    used = []
    for seed in seeds:
        init = InitConfig(cfg.init.chain_init, cfg.init.cluster_init, seed)
        try:
            fit = fit_em(X, cfg.replace(n_states=K, lam=lam, init=init))
        except TAGMError as exc:
            logger.warning("stability repeat (seed %d) failed: %s", seed, exc)
            continue
        total += connectivity_matrix(fit.labels)
        ok += 1
        used.append(seed)
    if ok < 2:
        raise StabilityError(f"only {ok} of {n_repeats} repeats succeeded")
    consensus = total / ok
    return ConsensusReport(consensus, dispersion(consensus), ok, lam, used)


def select_lambda(X, K, lambda_grid, n_repeats, cfg):
    """Penalty with the most stable clustering; ties go to the larger (sparser) value.

    Returns
    -------
    lam_best : float
    reports : list of ConsensusReport
        In grid order.
    """
    grid = [float(v) for v in lambda_grid]
    if not grid:
        raise InputError("lambda_grid is empty")
    reports = [stability(X, K, lam, n_repeats, cfg) for lam in grid]
    best = None
    for rep in reports:
        if best is None or rep.dispersion > best.dispersion or (
            rep.dispersion == best.dispersion and rep.lam > best.lam
        ):
            best = rep
    return best.lam, reports
