"""Value objects for model parameters, posteriors, configuration and results."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

import numpy as np

from .exceptions import ConfigurationError, InputError

_PROB_TOL = 1e-9


def as_observations(X) -> np.ndarray:
    """Validate an N x d observation matrix and return it as a float array."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise InputError(f"observations must be a non-empty N x d matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InputError("observations contain non-finite values")
    return X


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Parameters of a hidden Markov chain with Gaussian graphical emissions.

    Attributes
    ----------
    pi : ndarray, shape (K,)
        Initial state probabilities.
    trans : ndarray, shape (K, K)
        Row-stochastic transition matrix, ``trans[j, k] = p(z_n = k | z_{n-1} = j)``.
    means : ndarray, shape (K, d)
    precisions : ndarray, shape (K, d, d)
        Symmetric positive definite precision matrices.
    """

    pi: np.ndarray
    trans: np.ndarray
    means: np.ndarray
    precisions: np.ndarray

    def __post_init__(self):
        for name in ("pi", "trans", "means", "precisions"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_states(self) -> int:
        return self.pi.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def validate(self) -> "ModelParams":
        K = self.pi.shape[0]
        if self.trans.shape != (K, K) or self.means.ndim != 2 or self.means.shape[0] != K:
            raise InputError("inconsistent parameter shapes")
        d = self.means.shape[1]
        if self.precisions.shape != (K, d, d):
            raise InputError("precisions must have shape (K, d, d)")
        if np.any(self.pi < 0) or abs(self.pi.sum() - 1.0) > _PROB_TOL:
            raise InputError("pi must be a probability vector")
        if np.any(self.trans < 0) or np.any(self.trans > 1):
            raise InputError("transition entries must lie in [0, 1]")
        if np.any(np.abs(self.trans.sum(axis=1) - 1.0) > _PROB_TOL):
            raise InputError("transition rows must sum to one")
        if not (np.all(np.isfinite(self.means)) and np.all(np.isfinite(self.precisions))):
            raise InputError("non-finite emission parameters")
        for k, theta in enumerate(self.precisions):
            if not np.array_equal(theta, theta.T):
                raise InputError(f"precision {k} is not symmetric")
            try:
                np.linalg.cholesky(theta)
            except np.linalg.LinAlgError:
                raise InputError(f"precision {k} is not positive definite") from None
        return self

    def permute(self, order) -> "ModelParams":
        """Relabel states so that new state ``i`` is old state ``order[i]``."""
        order = np.asarray(order)
        return ModelParams(
            self.pi[order],
            self.trans[np.ix_(order, order)],
            self.means[order],
            self.precisions[order],
        )

    # serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        d = self.dim
        iu = np.triu_indices(d)
        precisions = []
        for theta in self.precisions:
            trip = [[int(i), int(j), float(theta[i, j])] for i, j in zip(*iu) if theta[i, j] != 0.0]
            precisions.append({"dim": d, "triplets": trip})
        return {
            "k": self.n_states,
            "d": d,
            "pi": self.pi.tolist(),
            "a": self.trans.tolist(),
            "means": self.means.tolist(),
            "precisions": precisions,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelParams":
        try:
            K, d = int(doc["k"]), int(doc["d"])
            thetas = np.zeros((K, d, d))
            for k, block in enumerate(doc["precisions"]):
                if int(block["dim"]) != d:
                    raise InputError("precision dim does not match d")
                for i, j, v in block["triplets"]:
                    thetas[k, i, j] = v
                    thetas[k, j, i] = v
            params = cls(
                np.asarray(doc["pi"], dtype=float),
                np.asarray(doc["a"], dtype=float).reshape(K, K),
                np.asarray(doc["means"], dtype=float).reshape(K, d),
                thetas,
            )
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise InputError(f"malformed model document: {exc}") from None
        return params

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class EStepResult:
    """Posterior quantities from the scaled forward-backward pass.

    ``gamma[n, k] = p(z_n = k | X)``, ``xi[n-1, j, k] = p(z_{n-1} = j, z_n = k | X)``,
    ``scale[n] = p(x_n | x_1..x_{n-1})`` and ``alpha`` the filtered
    ``p(z_n | x_1..x_n)``. ``log_scale`` is kept alongside ``scale`` because
    the latter is the exponential of a sum that can be very negative.
    """

    gamma: np.ndarray
    xi: np.ndarray
    scale: np.ndarray
    log_scale: np.ndarray
    loglik: float
    alpha: np.ndarray


class ChainInit(str, Enum):
    UNIFORM = "uniform"
    RANDOM_UNIFORM = "random_uniform"
    DIRICHLET = "dirichlet"


class ClusterInit(str, Enum):
    KMEANS = "kmeans"
    GMM = "gmm"


@dataclass(frozen=True)
class InitConfig:
    chain_init: ChainInit = ChainInit.UNIFORM
    cluster_init: ClusterInit = ClusterInit.KMEANS
    seed: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "chain_init", ChainInit(self.chain_init))
            object.__setattr__(self, "cluster_init", ClusterInit(self.cluster_init))
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None


@dataclass(frozen=True)
class FitConfig:
    """EM settings.

    ``tol`` is the absolute improvement of the penalized log-likelihood
    below which EM stops; ``n_init`` independent restarts are run and the
    best one is kept.
    """

    n_states: int
    lam: float
    tol: float = 1e-4
    max_iter: int = 200
    n_init: int = 1
    init: InitConfig = field(default_factory=InitConfig)
    glasso_tol: float = 1e-6
    glasso_max_iter: int = 1000

    def __post_init__(self):
        if int(self.n_states) < 1:
            raise ConfigurationError("n_states must be at least 1")
        if not (self.lam >= 0 and np.isfinite(self.lam)):
            raise ConfigurationError("lambda must be a finite non-negative number")
        if self.tol <= 0:
            raise ConfigurationError("tol must be positive")
        if self.max_iter < 1 or self.n_init < 1:
            raise ConfigurationError("max_iter and n_init must be at least 1")

    def replace(self, **changes) -> "FitConfig":
        from dataclasses import replace
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "n_states": int(self.n_states),
            "lambda": float(self.lam),
            "tol": self.tol,
            "max_iter": self.max_iter,
            "n_init": self.n_init,
            "chain_init": self.init.chain_init.value,
            "cluster_init": self.init.cluster_init.value,
            "seed": int(self.init.seed),
        }


@dataclass(eq=False)
class FitResult:
    params: ModelParams
    posteriors: EStepResult
    trace: List[float]
    labels: np.ndarray
    bic: float
    n_free_params: int
    seed: Optional[int] = None
    n_iter: int = 0
    converged: bool = False
