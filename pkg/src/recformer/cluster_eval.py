"""k-means on the fused representation and clustering metrics (ACC, NMI, purity)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass
class ClusterResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    history: list[float]


def _sq_dists(x, centers):
    return ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)


def _plusplus(x, c, rng):
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, c):
        total = d2.sum()
        i = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(x[i])
        d2 = np.minimum(d2, ((x - x[i]) ** 2).sum(axis=1))
    return np.array(centers)


def _lloyd(x, centers, max_iter):
    c = centers.shape[0]
    labels = None
    history = []
    for _ in range(max_iter):
        d2 = _sq_dists(x, centers)
        new = d2.argmin(axis=1)
        history.append(float(d2[np.arange(len(x)), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        sizes = np.bincount(labels, minlength=c)
        for j in np.flatnonzero(sizes == 0):
            # steal the point of the largest cluster farthest from its centroid
            big = int(np.argmax(sizes))
            members = np.flatnonzero(labels == big)
            far = members[np.argmax(d2[members, big])]
            labels[far] = j
            sizes[big] -= 1
            sizes[j] += 1
        centers = np.array([x[labels == j].mean(axis=0) for j in range(c)])
    d2 = _sq_dists(x, centers)
    return labels, centers, float(d2[np.arange(len(x)), labels].sum()), history


def kmeans(x: np.ndarray, c: int, restarts: int = 10, seed=0, max_iter: int = 300) -> ClusterResult:
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if c < 1 or c > n:
        raise ValueError(f"cannot form {c} clusters from {n} samples")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        labels, centers, inertia, hist = _lloyd(x, _plusplus(x, c, rng), max_iter)
        # strict < keeps the earliest restart on ties
        if best is None or inertia < best.inertia:
            best = ClusterResult(labels, centers, inertia, hist)
    return best


def hungarian(cost) -> np.ndarray:
    """Minimum-cost perfect matching; ``perm[i]`` is the column assigned to row i."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {cost.shape}")
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(cost.shape[0], dtype=np.int64)
    perm[rows] = cols
    return perm


def _check(pred, true):
    pred, true = np.asarray(pred), np.asarray(true)
    if pred.shape != true.shape:
        raise ValueError(f"label vectors differ in length: {pred.shape[0]} vs {true.shape[0]}")
    return pred, true


def contingency(pred, true) -> np.ndarray:
    pred, true = _check(pred, true)
    _, p = np.unique(pred, return_inverse=True)
    _, t = np.unique(true, return_inverse=True)
    table = np.zeros((p.max() + 1, t.max() + 1), dtype=np.int64)
    np.add.at(table, (p, t), 1)
    return table


def acc(pred, true) -> float:
    table = contingency(pred, true)
    k = max(table.shape)
    square = np.zeros((k, k), dtype=np.int64)
    square[:table.shape[0], :table.shape[1]] = table
    perm = hungarian(-square)
    return float(square[np.arange(k), perm].sum()) / len(np.asarray(pred))


def _entropy(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(pred, true) -> float:
    """Mutual information normalised by sqrt(H(pred) * H(true))."""
    table = contingency(pred, true).astype(np.float64)
    hp, ht = _entropy(table.sum(axis=1)), _entropy(table.sum(axis=0))
    if hp == 0.0 or ht == 0.0:
        return 1.0 if table.shape == (1, 1) else 0.0
    if table.shape[0] == table.shape[1] and ((table > 0).sum(axis=0) == 1).all():
        return 1.0  # same partition up to relabeling; skip the rounding of mi / h
    pij = table / table.sum()
    outer = pij.sum(axis=1, keepdims=True) * pij.sum(axis=0, keepdims=True)
    nz = pij > 0
    mi = float((pij[nz] * np.log(pij[nz] / outer[nz])).sum())
    return float(min(1.0, max(0.0, mi / np.sqrt(hp * ht))))


def purity(pred, true) -> float:
    table = contingency(pred, true)
    return float(table.max(axis=1).sum()) / float(table.sum())


def evaluate(pred, true) -> dict[str, float]:
    return {"acc": acc(pred, true), "nmi": nmi(pred, true), "purity": purity(pred, true)}
