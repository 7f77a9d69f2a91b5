"""Synthetic Markov-switching Gaussian sequences with known ground truth.

Every state gets a mean and a sparse precision matrix; a sticky Dirichlet
transition matrix drives the hidden chain. Between states the generator
can blend parameters over several steps ("smooth transitions"), which
gives four dataset families: sudden, fixed smooth, random smooth, and
random smooth with random weights.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

from .exceptions import ConfigurationError
from .params import ModelParams

MEAN_MODES = ("normal", "uniform")
COV_MODES = ("degree_bounded", "random_spd", "stressed_identity")
TRANSITION_MODES = ("sudden", "fixed_smooth", "random_smooth", "random_smooth_random_weights")

RANDOM_SPD_EPS = 1e-3


@dataclass(frozen=True)
class GeneratorConfig:
    """Settings of one synthetic dataset.

    ``mean_low``/``mean_high`` are used by ``mean_mode="uniform"``;
    ``max_degree`` by ``degree_bounded``; ``edge_prob`` by
    ``stressed_identity``; ``steps`` by ``fixed_smooth``; and
    ``steps_low``/``steps_high`` (inclusive) by the two random smooth modes.
    """

    n_obs: int
    n_states: int
    dim: int
    mean_mode: str = "normal"
    mean_low: float = -1.0
    mean_high: float = 1.0
    cov_mode: str = "degree_bounded"
    max_degree: int = 2
    edge_prob: float = 0.2
    kappa: float = 20.0
    transition_mode: str = "sudden"
    steps: int = 4
    steps_low: int = 2
    steps_high: int = 6
    seed: int = 0

    def __post_init__(self):
        if self.n_obs < 1 or self.n_states < 1 or self.dim < 1:
            raise ConfigurationError("n_obs, n_states and dim must be positive")
        if self.mean_mode not in MEAN_MODES:
            raise ConfigurationError(f"mean_mode must be one of {MEAN_MODES}")
        if self.mean_mode == "uniform" and not self.mean_low < self.mean_high:
            raise ConfigurationError("uniform means need mean_low < mean_high")
        if self.cov_mode not in COV_MODES:
            raise ConfigurationError(f"cov_mode must be one of {COV_MODES}")
        if self.cov_mode == "degree_bounded" and not 1 <= self.max_degree < self.dim:
            raise ConfigurationError("degree_bounded needs 1 <= max_degree < dim")
        if not 0.0 <= self.edge_prob <= 1.0:
            raise ConfigurationError("edge_prob must lie in [0, 1]")
        if not self.kappa > 0:
            raise ConfigurationError("kappa must be positive")
        if self.transition_mode not in TRANSITION_MODES:
            raise ConfigurationError(f"transition_mode must be one of {TRANSITION_MODES}")
        if self.transition_mode == "fixed_smooth" and self.steps < 1:
            raise ConfigurationError("fixed_smooth needs steps >= 1")
        if self.transition_mode.startswith("random_smooth") and not (
            1 < self.steps_low < self.steps_high
        ):
            raise ConfigurationError("random smooth modes need 1 < steps_low < steps_high")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True, eq=False)
class TrueParams:
    pi: np.ndarray
    trans: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    precisions: np.ndarray

    def as_model(self) -> ModelParams:
        return ModelParams(self.pi, self.trans, self.means, self.precisions)


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    X: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    true_params: TrueParams
    config: Optional[GeneratorConfig] = None


def gen_means(K, d, mode, rng, low=-1.0, high=1.0):
    """``K x d`` state means, standard normal or uniform on ``[low, high)``."""
    if mode == "normal":
        return rng.standard_normal((K, d))
    if mode == "uniform":
        if not low < high:
            raise ConfigurationError("uniform means need low < high")
        return rng.uniform(low, high, size=(K, d))
    raise ConfigurationError(f"unknown mean mode {mode!r}")


def gen_precision_degree_bounded(d, max_degree, rng):
    """Unit diagonal, edges of weight ``0.98 / max_degree``, every node degree ``<= max_degree``.

    Nodes are visited in random order; each picks neighbours uniformly
    among nodes that still have spare degree, until it reaches
    ``max_degree`` or runs out of candidates. Off-diagonal row sums stay at
    or below 0.98, so the matrix is diagonally dominant.
    """
    if not 1 <= max_degree < d:
        raise ConfigurationError("need 1 <= max_degree < d")
    theta = np.eye(d)
    degree = np.zeros(d, dtype=int)
    w = 0.98 / max_degree
    for i in rng.permutation(d):
        need = max_degree - degree[i]
        if need <= 0:
            continue
        cand = [j for j in range(d) if j != i and degree[j] < max_degree and theta[i, j] == 0]
        if not cand:
            continue
        picks = rng.choice(cand, size=min(need, len(cand)), replace=False)
        for j in picks:
            theta[i, j] = theta[j, i] = w
            degree[i] += 1
            degree[j] += 1
    return theta


def gen_precision_random_spd(d, rng):
    """``M^T M + d * 1e-3 * I`` for a standard normal ``M``."""
    M = rng.standard_normal((d, d))
    theta = M.T @ M + d * RANDOM_SPD_EPS * np.eye(d)
    return 0.5 * (theta + theta.T)


def gen_precision_stressed(d, edge_prob, rng):
    """Identity plus random unit links; diagonal raised to ``1 + degree`` if needed for PD."""
    theta = np.eye(d)
    iu = np.triu_indices(d, 1)
    links = rng.uniform(size=iu[0].size) < edge_prob
    theta[iu[0][links], iu[1][links]] = 1.0
    theta[iu[1][links], iu[0][links]] = 1.0
    if np.linalg.eigvalsh(theta)[0] <= 0:
        degree = theta.sum(axis=1) - 1.0
        theta[np.diag_indices(d)] = 1.0 + degree
    return theta


def gen_transition_matrix(K, kappa, rng):
    """Rows from ``Dirichlet(alpha)`` with ``alpha_i = kappa`` on the diagonal, 1 elsewhere."""
    if not kappa > 0:
        raise ConfigurationError("kappa must be positive")
    A = np.empty((K, K))
    for i in range(K):
        alpha = np.ones(K)
        alpha[i] = kappa
        A[i] = rng.dirichlet(alpha)
    return A


def _precision(cfg, rng):
    if cfg.cov_mode == "degree_bounded":
        return gen_precision_degree_bounded(cfg.dim, cfg.max_degree, rng)
    if cfg.cov_mode == "random_spd":
        return gen_precision_random_spd(cfg.dim, rng)
    return gen_precision_stressed(cfg.dim, cfg.edge_prob, rng)


def _label(w, target):
    """Argmax of the weights, ties toward the current target state."""
    top = w.max()
    if w[target] == top:
        return target
    return int(np.argmax(w))


def _blend_weights(cfg, states, rng):
    """Per-step mixing weights for the chain ``states``."""
    N, K = states.size, cfg.n_states
    W = np.zeros((N, K))
    mode = cfg.transition_mode
    if mode == "sudden":
        W[np.arange(N), states] = 1.0
        return W

    current = np.zeros(K)
    current[states[0]] = 1.0
    start = current.copy()
    length, step = 0, 0
    for n in range(N):
        if n > 0 and states[n] != states[n - 1]:
            # new target, possibly mid-transition: restart from the current blend
            start = current.copy()
            step = 0
            length = cfg.steps if mode == "fixed_smooth" else int(
                rng.integers(cfg.steps_low, cfg.steps_high + 1))
        if step < length:
            step += 1
            target = np.zeros(K)
            target[states[n]] = 1.0
            frac = step / length
            current = (1.0 - frac) * start + frac * target
            if step == length:
                current = target
        if mode == "random_smooth_random_weights" and step < length:
            active = np.flatnonzero(current > 0)
            w = np.zeros(K)
            w[active] = rng.dirichlet(np.ones(active.size))
            W[n] = w
        else:
            W[n] = current
    return W


def generate(cfg):
    """Draw one synthetic dataset.

    The hidden chain starts uniformly and follows the Dirichlet transition
    matrix. At step ``n`` the observation is drawn from
    ``N(sum_k w_k mu_k, sum_k w_k Sigma_k)`` where ``w`` are that step's
    mixing weights (one-hot outside transitions). Identical configs give
    bit-identical datasets.
    """
    rng = np.random.default_rng(cfg.seed)
    K, d, N = cfg.n_states, cfg.dim, cfg.n_obs
    means = gen_means(K, d, cfg.mean_mode, rng, cfg.mean_low, cfg.mean_high)
    precisions = np.stack([_precision(cfg, rng) for _ in range(K)])
    covariances = np.stack([0.5 * (S + S.T) for S in np.linalg.inv(precisions)])
    A = gen_transition_matrix(K, cfg.kappa, rng)
    pi = np.full(K, 1.0 / K)

    states = np.empty(N, dtype=int)
    states[0] = rng.choice(K, p=pi)
    u = rng.uniform(size=N)
    cum = np.cumsum(A, axis=1)
    for n in range(1, N):
        states[n] = min(int(np.searchsorted(cum[states[n - 1]], u[n], side="right")), K - 1)

    W = _blend_weights(cfg, states, rng)
    noise = rng.standard_normal((N, d))
    chol = np.linalg.cholesky(covariances)
    X = np.empty((N, d))
    labels = np.empty(N, dtype=int)
    for n in range(N):
        w = W[n]
        hot = np.flatnonzero(w)
        if hot.size == 1:
            k = hot[0]
            X[n] = means[k] + chol[k] @ noise[n]
        else:
            mu = w @ means
            cov = np.tensordot(w, covariances, axes=1)
            X[n] = mu + np.linalg.cholesky(cov) @ noise[n]
        labels[n] = _label(w, states[n])
    truth = TrueParams(pi, A, means, covariances, precisions)
    return SyntheticDataset(X, labels, W, truth, cfg)
