"""Scores for clustering, network recovery and forecasting."""
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from .exceptions import InputError
from .glasso import ZERO_THRESHOLD


def _labels(values, name):
    values = np.asarray(values)
    if values.ndim != 1 or values.size == 0:
        raise InputError(f"{name} must be a non-empty 1-d label vector")
    if not np.issubdtype(values.dtype, np.integer):
        if not np.all(np.equal(np.mod(values, 1), 0)):
            raise InputError(f"{name} must contain integer labels")
        values = values.astype(int)
    if np.any(values < 0):
        raise InputError(f"{name} must contain non-negative labels")
    return values


def contingency(truth, pred):
    """Counts ``M[i, j]`` of points with predicted label ``i`` and true label ``j``."""
    truth = _labels(truth, "truth")
    pred = _labels(pred, "pred")
    if truth.size != pred.size:
        raise InputError("label vectors have different lengths")
    M = np.zeros((pred.max() + 1, truth.max() + 1))
    np.add.at(M, (pred, truth), 1.0)
    return M


def _entropy(p):
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def homogeneity_completeness_v(truth, pred):
    """Homogeneity, completeness and their harmonic mean (V-measure)."""
    M = contingency(truth, pred)
    P = M / M.sum()
    p_pred = P.sum(axis=1)
    p_true = P.sum(axis=0)
    nz = P > 0
    rows, cols = np.nonzero(nz)
    # conditional entropies from their definitions, so identical partitions give exactly 0
    h_true_given_pred = float(-(P[nz] * np.log(P[nz] / p_pred[rows])).sum())
    h_pred_given_true = float(-(P[nz] * np.log(P[nz] / p_true[cols])).sum())
    h_true = _entropy(p_true)
    h_pred = _entropy(p_pred)
    h = 1.0 if h_true == 0 else 1.0 - h_true_given_pred / h_true
    c = 1.0 if h_pred == 0 else 1.0 - h_pred_given_true / h_pred
    h = min(max(h, 0.0), 1.0)
    c = min(max(c, 0.0), 1.0)
    v = 0.0 if h + c == 0 else 2.0 * h * c / (h + c)
    return h, c, v


def v_measure(truth, pred):
    """V-measure in ``[0, 1]``: 1 for identical partitions, label names irrelevant."""
    return homogeneity_completeness_v(truth, pred)[2]


def map_clusters(truth, pred):
    """Map each predicted state to the true state it overlaps most.

    Row-wise maximum of the predicted-by-true contingency table, ties to
    the lowest true index. Predicted states with no points are left out.
    Two predicted states may map to the same true state.
    """
    M = contingency(truth, pred)
    return {int(i): int(np.argmax(M[i])) for i in range(M.shape[0]) if M[i].sum() > 0}


def graph_from_precision(theta, threshold=ZERO_THRESHOLD):
    """Boolean adjacency: edge ``(i, j)``, ``i != j``, iff ``|theta_ij| > threshold``."""
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 2 or theta.shape[0] != theta.shape[1]:
        raise InputError("precision must be square")
    if not np.allclose(theta, theta.T, rtol=0, atol=1e-12):
        raise InputError("precision must be symmetric")
    adj = np.abs(theta) > threshold
    np.fill_diagonal(adj, False)
    return adj


def _edges(adj):
    adj = np.asarray(adj).astype(bool)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise InputError("edge set must be a square adjacency matrix")
    return adj[np.triu_indices(adj.shape[0], 1)]


def mcc(truth, pred):
    """Matthews correlation over the strict upper triangle of two adjacency matrices.

    Returns 0 when any marginal of the confusion matrix is empty.
    """
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    if truth.shape != pred.shape:
        raise InputError("edge sets have different dimensions")
    t, p = _edges(truth), _edges(pred)
    tp = float(np.sum(t & p))
    tn = float(np.sum(~t & ~p))
    fp = float(np.sum(~t & p))
    fn = float(np.sum(t & ~p))
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if den == 0:
        return 0.0
    return (tp * tn - fp * fn) / np.sqrt(den)


def mae(truth, pred):
    """Mean over time of the mean absolute error across dimensions."""
    truth = np.asarray(truth, dtype=float)
    pred = np.asarray(pred, dtype=float)
    if truth.ndim == 1:
        truth = truth[None, :]
    if pred.ndim == 1:
        pred = pred[None, :]
    if truth.shape != pred.shape:
        raise InputError(f"shape mismatch: {truth.shape} vs {pred.shape}")
    return float(np.mean(np.abs(truth - pred)))


@dataclass
class NetworkReport:
    mcc_mean: float
    mcc_per_state: Dict[int, float]
    mapping: Dict[int, int]
    coverage: float
    unmapped_truth: List[int] = field(default_factory=list)

    def to_dict(self):
        return {
            "mcc_mean": self.mcc_mean,
            "mcc_per_state": {str(k): v for k, v in self.mcc_per_state.items()},
            "mapping": {str(k): v for k, v in self.mapping.items()},
            "coverage": self.coverage,
        }


def network_report(true_precisions, truth_labels, pred_precisions, pred_labels,
                   threshold=ZERO_THRESHOLD):
    """Mean MCC between each predicted graph and the true graph it maps to.

    ``coverage`` is the fraction of true states that receive at least one
    predicted state.
    """
    mapping = map_clusters(truth_labels, pred_labels)
    scores = {}
    for k, j in mapping.items():
        if k >= len(pred_precisions) or j >= len(true_precisions):
            raise InputError("labels refer to states without a precision matrix")
        scores[k] = mcc(graph_from_precision(true_precisions[j], threshold),
                        graph_from_precision(pred_precisions[k], threshold))
    covered = set(mapping.values())
    n_true = len(true_precisions)
    return NetworkReport(
        mcc_mean=float(np.mean(list(scores.values()))) if scores else 0.0,
        mcc_per_state=scores,
        mapping=mapping,
        coverage=len(covered) / n_true if n_true else 0.0,
        unmapped_truth=[j for j in range(n_true) if j not in covered],
    )


def network_score(true_params, truth_labels, fit):
    """Mean mapped MCC of a fit against ground-truth precisions."""
    return network_report(true_params.precisions, truth_labels,
                          fit.params.precisions, fit.labels).mcc_mean
