"""Online parameter updates for a fitted model.

After a batch fit, each new observation advances the filtered state
distribution one step. The backward variable of the newest step is not
available online, so it is taken constant across states; the posterior
of the newest state is then the filtered distribution itself and the
pair posterior is ``alpha_T(j) A_jk b_k(x) / c``. These posteriors feed
recursive updates of the transition matrix, the means and the weighted
covariances, and the precision matrices are re-estimated by graphical
lasso every ``refit_stride`` updates.

With a sliding window only the last ``W`` steps contribute: the newest
step is added and the oldest dropped, and the parameters are recomputed
from the windowed sums.
"""
import copy
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import core
from ..exceptions import DegenerateEmissionError, InputError
from ..params import ModelParams, as_observations


@dataclass
class IncState:
    """Running state of an online model; updated in place, one owner per stream.

    ``mass[k]`` is the total responsibility of state ``k``, ``cov[k]`` the
    responsibility-weighted covariance about ``params.means[k]``,
    ``xi_sum`` the transition mass and ``row_mass`` its row sums.
    ``steps``/``pairs`` hold per-step contributions when windowing is on.
    """

    t: int
    params: ModelParams
    lam: float
    mass: np.ndarray
    cov: np.ndarray
    xi_sum: np.ndarray
    row_mass: np.ndarray
    alpha: np.ndarray
    glasso_tol: float = 1e-6
    glasso_max_iter: int = 1000
    n_updates: int = 0
    last_gamma: Optional[np.ndarray] = None
    last_refit: bool = False
    steps: Optional[deque] = None
    pairs: Optional[deque] = None
    _means: np.ndarray = field(default=None, repr=False)
    _trans: np.ndarray = field(default=None, repr=False)

    @property
    def n_states(self):
        return self.params.n_states

    @property
    def beta_approx(self):
        """Backward variable of the newest step under the online approximation."""
        return np.ones(self.n_states)

    def transitions(self):
        """Transition matrix rebuilt from the running sums."""
        A = np.array(self.params.trans)
        ok = self.row_mass > 0
        A[ok] = self.xi_sum[ok] / self.row_mass[ok, None]
        return A

    def copy(self):
        return copy.deepcopy(self)


def inc_init(X_batch, cfg, windowed=False):
    """Fit on a batch and prepare the running sums.

    The parameters are exactly those of ``core.fit_em``. The sums are
    anchored to them: the means are the fitted means, the weighted
    covariances are taken about those means with the batch posteriors,
    and the transition mass is ``row_mass * A``, so the online phase
    resumes from the batch solution.
    """
    X = as_observations(X_batch)
    fit = core.fit_em(X, cfg)
    return _init_from_fit(X, fit, cfg, windowed)


def _init_from_fit(X, fit, cfg, windowed=False):
    params, e = fit.params, fit.posteriors
    K, d = params.n_states, params.dim
    gamma = e.gamma
    mass = gamma.sum(axis=0)
    cov = np.empty((K, d, d))
    for k in range(K):
        diff = X - params.means[k]
        S = (diff * gamma[:, k, None]).T @ diff / mass[k]
        cov[k] = 0.5 * (S + S.T)
    row_mass = e.xi.sum(axis=(0, 2))
    state = IncState(
        t=X.shape[0],
        params=params,
        lam=float(cfg.lam),
        mass=mass,
        cov=cov,
        xi_sum=row_mass[:, None] * params.trans,
        row_mass=row_mass,
        alpha=e.alpha[-1].copy(),
        glasso_tol=cfg.glasso_tol,
        glasso_max_iter=cfg.glasso_max_iter,
        last_gamma=gamma[-1].copy(),
    )
    if windowed:
        state.steps = deque(zip(X, gamma))
        state.pairs = deque(e.xi)
    state._means = np.array(params.means)
    state._trans = np.array(params.trans)
    return state


def _online_posteriors(state, x):
    """Filtered step plus the approximate single and pair posteriors."""
    p = state.params
    log_b = core.log_emissions(x[None, :], p.means, p.precisions)[0]
    b = np.exp(log_b - log_b.max())
    pred = state.alpha @ p.trans
    c = pred @ b
    if not c > 0:
        raise DegenerateEmissionError("new observation is impossible under every reachable state")
    alpha = pred * b / c
    xi = state.alpha[:, None] * p.trans * b[None, :] / c
    return alpha, alpha, xi


def _check_x(state, x_new):
    x = np.asarray(x_new, dtype=float).ravel()
    if x.size != state.params.dim or not np.all(np.isfinite(x)):
        raise InputError(f"expected a finite vector of length {state.params.dim}")
    return x


def _refit(state, means, cov, mass, trans):
    K = state.n_states
    precisions = np.array(state.params.precisions)
    for k in range(K):
        if mass[k] < core.EMPTY_STATE_MASS:
            continue
        precisions[k] = core.fit_precision(
            cov[k], state.lam / mass[k], state.glasso_tol, state.glasso_max_iter,
            previous=precisions[k])
    return ModelParams(state.params.pi, trans, means, precisions)


def _advance(state, x):
    alpha, gamma, xi = _online_posteriors(state, x)
    means = state._means
    trans = state._trans

    # transitions: old rows reweighted by the ratio of row masses plus the new increment
    inc = xi.sum(axis=1)
    new_row = state.row_mass + inc
    ok = new_row > 0
    trans[ok] = (state.row_mass[ok, None] / new_row[ok, None]) * trans[ok] + xi[ok] / new_row[ok, None]
    state.xi_sum = state.xi_sum + xi
    state.row_mass = new_row

    # means and weighted covariances
    new_mass = state.mass + gamma
    for k in range(state.n_states):
        if not gamma[k] > 0:
            continue
        delta = x - means[k]
        r = gamma[k] / new_mass[k]
        means[k] = means[k] + r * delta
        state.cov[k] = (state.mass[k] / new_mass[k]) * (state.cov[k] + r * np.outer(delta, delta))
    state.mass = new_mass
    state.alpha = alpha
    state.last_gamma = gamma
    state.t += 1
    state.n_updates += 1
    return xi, gamma


def _publish(state, refit_stride):
    refit = state.n_updates % int(refit_stride) == 0
    if refit:
        state.params = _refit(state, state._means.copy(), state.cov, state.mass, state._trans.copy())
    else:
        p = state.params
        state.params = ModelParams(p.pi, state._trans.copy(), state._means.copy(), p.precisions)
    state.last_refit = refit
    return state


def inc_update(state, x_new, refit_stride=1):
    """Absorb one observation; returns ``state`` (updated in place)."""
    if int(refit_stride) < 1:
        raise InputError("refit_stride must be positive")
    x = _check_x(state, x_new)
    xi, gamma = _advance(state, x)
    if state.steps is not None:
        state.steps.append((x, gamma))
        state.pairs.append(xi)
    return _publish(state, refit_stride)


def _window_sums(state):
    """Mass, means, covariances and transition sums over the buffered steps."""
    X = np.array([s[0] for s in state.steps])
    G = np.array([s[1] for s in state.steps])
    K = state.n_states
    means = state._means
    mass = G.sum(axis=0)
    for k in range(K):
        if mass[k] < core.EMPTY_STATE_MASS:
            # nothing of this state left in the window: keep its last estimate
            continue
        mu, S, _ = core.weighted_moments(X, G[:, k])
        means[k] = mu
        state.cov[k] = S
    state.mass = mass
    if state.pairs:
        state.xi_sum = np.sum(state.pairs, axis=0)
    else:
        state.xi_sum = np.zeros((K, K))
    state.row_mass = state.xi_sum.sum(axis=1)
    ok = state.row_mass > 0
    state._trans[ok] = state.xi_sum[ok] / state.row_mass[ok, None]


def slide_update(state, x_new, window, refit_stride=1):
    """Absorb one observation keeping only the last ``window`` steps.

    While the history is no longer than ``window`` this is exactly
    :func:`inc_update`. Once steps fall out, the sums are rebuilt from
    the buffered contributions rather than by subtraction, which avoids
    cancellation when a state's windowed mass becomes small.
    """
    if state.steps is None:
        raise InputError("state was initialized without a window buffer")
    if int(window) < 1:
        raise InputError("window must be positive")
    if int(refit_stride) < 1:
        raise InputError("refit_stride must be positive")
    x = _check_x(state, x_new)
    xi, gamma = _advance(state, x)
    state.steps.append((x, gamma))
    state.pairs.append(xi)
    evicted = False
    while len(state.steps) > window:
        state.steps.popleft()
        evicted = True
    while len(state.pairs) > max(int(window) - 1, 0):
        state.pairs.popleft()
        evicted = True
    if evicted:
        _window_sums(state)
    return _publish(state, refit_stride)


def current_label(state):
    """Most probable state of the newest observation."""
    return int(np.argmax(state.last_gamma))


def predict(state):
    """Mean of the next observation under the current online posterior."""
    return core.predict_next(state.params, state.last_gamma)


def online_labels(X, cfg, batch_fraction, refit_stride=1, window=None):
    """Labels from a batch fit on the leading fraction of ``X`` plus online updates.

    Batch steps are labelled by their smoothed posteriors and the rest by
    the online posteriors.
    """
    X = as_observations(X)
    if not 0 < batch_fraction <= 1:
        raise InputError("batch_fraction must lie in (0, 1]")
    n_batch = max(int(round(batch_fraction * X.shape[0])), int(cfg.n_states))
    fit = core.fit_em(X[:n_batch], cfg)
    state = _init_from_fit(X[:n_batch], fit, cfg, windowed=window is not None)
    labels = list(fit.labels)
    for x in X[n_batch:]:
        if window is None:
            inc_update(state, x, refit_stride)
        else:
            slide_update(state, x, window, refit_stride)
        labels.append(current_label(state))
    return np.asarray(labels), state
