"""Per-view kNN graphs and the mini-batch graph loss against last epoch's embeddings."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, getitem, scale, squared_error, tsum

log = logging.getLogger(__name__)


class SequencingError(RuntimeError):
    pass


class InvalidBatchError(ValueError):
    pass


@dataclass
class NeighborGraph:
    """Directed binary kNN adjacency for one view, stored as neighbor index lists.

    ``neighbors[i]`` holds the k neighbors of row i ordered by distance then index.
    """

    neighbors: np.ndarray
    k: int

    @property
    def n(self) -> int:
        return self.neighbors.shape[0]

    def dense(self) -> np.ndarray:
        g = np.zeros((self.n, self.n))
        rows = np.repeat(np.arange(self.n), self.neighbors.shape[1])
        g[rows, self.neighbors.reshape(-1)] = 1.0
        return g

    def pairs(self, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(position in ``rows``, neighbor index) for every edge leaving ``rows``."""
        nb = self.neighbors[rows]
        return np.repeat(np.arange(len(rows)), nb.shape[1]), nb.reshape(-1)


def knn_graph(x: np.ndarray, k: int, chunk: int = 256) -> NeighborGraph:
    """Exact k nearest neighbours (squared Euclidean), ties broken by lower index.

    Distances from the Gram expansion only shortlist candidates; the final order uses
    directly summed squared differences, so ties between duplicate points are exact.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if k < 1:
        raise ValueError("k must be at least 1")
    if n < 2:
        raise ValueError("need at least two samples for a neighbor graph")
    if k >= n:
        log.warning("k=%d >= n=%d, clamping to %d", k, n, n - 1)
        k = n - 1
    sq = np.einsum("ij,ij->i", x, x)
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        rows = np.arange(stop - start)
        approx = sq[start:stop, None] + sq[None, :] - 2.0 * (x[start:stop] @ x.T)
        approx[rows, np.arange(start, stop)] = np.inf
        part = np.argpartition(approx, k - 1, axis=1)[:, :k]
        kth = approx[rows[:, None], part].max(axis=1)
        # generous bound on the Gram-expansion rounding error
        tol = 1e-8 * (sq[start:stop] + sq.max()) + 1e-300
        r, c = np.nonzero(approx <= (kth + 2 * tol)[:, None])
        exact = ((x[start + r] - x[c]) ** 2).sum(axis=1)
        order = np.lexsort((c, exact, r))
        r, c = r[order], c[order]
        first = np.searchsorted(r, rows)
        out[start:stop] = c[first[:, None] + np.arange(k)]
    return NeighborGraph(out, k)


def rebuild_graphs(imputed_views, k: int) -> list[NeighborGraph]:
    return [knn_graph(x, k) for x in imputed_views]


class EmbeddingBuffer:
    """Detached n x m x d_e copy of the most recent embedding of every sample."""

    def __init__(self, n: int, m: int, d_e: int):
        self.values = np.zeros((n, m, d_e))
        self.filled = np.zeros(n, dtype=bool)

    @property
    def complete(self) -> bool:
        return bool(self.filled.all())

    def update(self, z_batch, idx) -> None:
        idx = np.asarray(idx)
        if len(np.unique(idx)) != len(idx):
            raise InvalidBatchError("duplicate indices in batch")
        if idx.size and (idx.min() < 0 or idx.max() >= self.values.shape[0]):
            raise InvalidBatchError("batch index out of range")
        data = z_batch.data if isinstance(z_batch, Tensor) else np.asarray(z_batch)
        self.values[idx] = data
        self.filled[idx] = True


def update_buffer(buffer: EmbeddingBuffer, z_batch, idx) -> None:
    buffer.update(z_batch, idx)


def graph_loss_batch(z_batch: Tensor, buffer: EmbeddingBuffer, graphs, idx) -> Tensor:
    """Mean squared distance from batch embeddings to their neighbors' buffered embeddings.

    Normalised by m * n * b as in the mini-batch form of the recurrent graph loss.
    ``graphs`` is one NeighborGraph (or dense n x n 0/1 array) per view.
    """
    if not buffer.complete:
        raise SequencingError("graph loss needs a fully populated embedding buffer")
    idx = np.asarray(idx)
    b, m, _ = z_batch.shape
    n = buffer.values.shape[0]
    terms = []
    for v in range(m):
        g = graphs[v]
        if isinstance(g, NeighborGraph):
            pos, nbr = g.pairs(idx)
        else:
            pos, nbr = np.nonzero(np.asarray(g)[idx])
        if pos.size == 0:
            continue
        zi = getitem(z_batch, (pos, v))
        terms.append(squared_error(zi, buffer.values[nbr, v], axis=None))
    if not terms:
        return scale(tsum(z_batch), 0.0)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return scale(total, 1.0 / (m * n * b))


def export_graphs(path, graphs) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["view", "i", "j"])
        for v, g in enumerate(graphs):
            for i, row in enumerate(g.neighbors):
                for j in row:
                    w.writerow([v + 1, i, int(j)])


def load_graphs(path, n: int, m: int) -> list[NeighborGraph]:
    rows = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    graphs = []
    for v in range(m):
        sel = rows[rows[:, 0] == v + 1]
        k = len(sel) // n
        graphs.append(NeighborGraph(sel[:, 2].reshape(n, k), k))
    return graphs
