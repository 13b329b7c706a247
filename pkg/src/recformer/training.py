"""Losses, Adam, and the two-stage training loop.

Stage 1 trains on zero-filled data with the view mask, imputes missing rows
from the decoder after every epoch and rebuilds the kNN graphs on the imputed
data. Stage 2 swaps in the final imputed data, drops the mask, and keeps the
last Stage-1 graphs fixed. k-means on the Stage-2 fused embedding gives the
cluster assignment.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .cluster_eval import evaluate, kmeans
from .data import MultiViewDataset, Scaling, check_mask, impute_all, normalize, zero_fill
from .graph import EmbeddingBuffer, NeighborGraph, graph_loss_batch, rebuild_graphs
from .model import ModelConfig, Params, forward, init_params

log = logging.getLogger(__name__)


class NumericError(RuntimeError):
    def __init__(self, epoch: int, stage: int):
        super().__init__(f"non-finite loss in stage {stage}, epoch {epoch}")
        self.epoch = epoch
        self.stage = stage


class OptimizerError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta: float = 1.0
    k_neighbors: int = 10
    e1: int = 50
    e2: int = 50
    batch_size: int = 128
    seed: int = 0
    kmeans_restarts: int = 10
    reinit_stage2: bool = False

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.k_neighbors < 1 or self.e1 < 1 or self.e2 < 1 or self.batch_size < 1:
            raise ValueError("k_neighbors, e1, e2 and batch_size must all be >= 1")


def recon_loss_masked(x_bar, x, w) -> Tensor:
    """(1 / (m b)) * sum_v (1 / d_v) * sum_i w_iv * ||x_bar_i - x_i||^2 over a batch of b rows."""
    m = len(x_bar)
    b = x_bar[0].shape[0]
    w = np.asarray(w, dtype=np.float64)
    total = None
    for v in range(m):
        rows = ad.squared_error(x_bar[v], x[v], axis=-1)
        term = ad.scale(ad.tsum(ad.mul(rows, w[:, v])), 1.0 / x_bar[v].shape[1])
        total = term if total is None else total + term
    return ad.scale(total, 1.0 / (m * b))


def recon_loss_full(x_bar, x_prime) -> Tensor:
    m = len(x_bar)
    b = x_bar[0].shape[0]
    total = None
    for v in range(m):
        rows = ad.squared_error(x_bar[v], x_prime[v], axis=-1)
        term = ad.scale(ad.tsum(rows), 1.0 / x_bar[v].shape[1])
        total = term if total is None else total + term
    return ad.scale(total, 1.0 / (m * b))


def total_loss(recon: Tensor, graph: Tensor | None, beta: float) -> Tensor:
    if graph is None:
        return recon
    return recon + ad.scale(graph, beta)


class Adam:
    def __init__(self, params: Params, lr: float = 1e-3, b1: float = 0.9, b2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def zero_grad(self) -> None:
        ad.zero_grad(self.params)

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                raise OptimizerError(f"no gradient for parameter {name}")
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(opt: Adam) -> None:
    opt.step()


@dataclass
class EpochLog:
    epoch: int
    stage: int
    recon: float
    graph: float
    total: float


@dataclass
class StageResult:
    losses: list[EpochLog]
    graphs: list[NeighborGraph] | None = None
    x_prime: list[np.ndarray] | None = None
    z_bar: np.ndarray | None = None


def _frozen(params: Params) -> Params:
    return {k: Tensor(p.data) for k, p in params.items()}


def full_forward(views, w, params: Params, cfg: ModelConfig, chunk: int = 1024):
    """Gradient-free pass over all samples: (Z, Z_bar, reconstructions) as arrays."""
    frozen = _frozen(params)
    n = views[0].shape[0]
    zs, zbars, recs = [], [], [[] for _ in views]
    for s in range(0, n, chunk):
        sl = slice(s, min(n, s + chunk))
        z, zb, rec = forward([x[sl] for x in views], None if w is None else w[sl], frozen, cfg)
        zs.append(z.data)
        zbars.append(zb.data)
        for v, r in enumerate(rec):
            recs[v].append(r.data)
    return np.concatenate(zs), np.concatenate(zbars), [np.concatenate(r) for r in recs]


def _batches(n: int, b: int, rng) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[s:s + b] for s in range(0, n, b)]


def _epoch_rng(seed: int, stage: int, epoch: int):
    return np.random.default_rng([seed, stage, epoch])


def _run_epoch(views, w, params, mcfg, tcfg, opt, buffer, graphs, stage, epoch):
    n = views[0].shape[0]
    sums = np.zeros(3)
    batches = _batches(n, tcfg.batch_size, _epoch_rng(tcfg.seed, stage, epoch))
    for idx in batches:
        opt.zero_grad()
        xb = [x[idx] for x in views]
        wb = None if w is None else w[idx]
        z, _, rec = forward(xb, wb, params, mcfg)
        recon = recon_loss_masked(rec, xb, wb) if stage == 1 else recon_loss_full(rec, xb)
        graph = graph_loss_batch(z, buffer, graphs, idx) if graphs is not None else None
        loss = total_loss(recon, graph, tcfg.beta)
        value = float(loss.data)
        if not math.isfinite(value):
            raise NumericError(epoch, stage)
        loss.backward()
        opt.step()
        buffer.update(z, idx)
        sums += (float(recon.data), 0.0 if graph is None else float(graph.data), value)
    sums /= len(batches)
    return EpochLog(epoch, stage, *map(float, sums))


def train_stage1(views, w, params: Params, mcfg: ModelConfig, tcfg: TrainConfig,
                 opt: Adam, buffer: EmbeddingBuffer) -> StageResult:
    """``views`` are the normalised, zero-filled inputs; they stay the network input throughout."""
    w = np.asarray(w)
    check_mask(w)
    graphs = None
    x_prime = None
    losses = []
    for epoch in range(1, tcfg.e1 + 1):
        # graph term only from epoch 2, once the buffer and graphs exist
        losses.append(_run_epoch(views, w, params, mcfg, tcfg, opt, buffer, graphs, 1, epoch))
        _, _, rec = full_forward(views, w, params, mcfg)
        x_prime = impute_all(views, rec, w).views
        graphs = rebuild_graphs(x_prime, tcfg.k_neighbors)
        log.info("stage 1 epoch %d: %s", epoch, losses[-1])
    return StageResult(losses, graphs, x_prime)


def train_stage2(x_prime, graphs, params: Params, mcfg: ModelConfig, tcfg: TrainConfig,
                 opt: Adam, buffer: EmbeddingBuffer) -> StageResult:
    losses = []
    for i in range(1, tcfg.e2 + 1):
        epoch = tcfg.e1 + i
        losses.append(_run_epoch(x_prime, None, params, mcfg, tcfg, opt, buffer, graphs, 2, epoch))
        log.info("stage 2 epoch %d: %s", epoch, losses[-1])
    _, z_bar, _ = full_forward(x_prime, None, params, mcfg)
    return StageResult(losses, graphs, x_prime, z_bar)


@dataclass
class PipelineResult:
    params: Params
    model_config: ModelConfig
    train_config: TrainConfig
    scaling: Scaling
    mask: np.ndarray
    x_prime: list[np.ndarray]
    graphs: list[NeighborGraph]
    z_bar: np.ndarray
    predictions: np.ndarray
    inertia: float
    losses: list[EpochLog] = field(default_factory=list)
    metrics: dict | None = None


def run_pipeline(ds: MultiViewDataset, w, tcfg: TrainConfig, mcfg: ModelConfig | None = None,
                 **model_kw) -> PipelineResult:
    """normalise -> zero-fill -> Stage 1 -> Stage 2 -> k-means (-> metrics if labelled)."""
    w = np.ones((ds.n, ds.m), dtype=np.int64) if w is None else np.asarray(w, dtype=np.int64)
    check_mask(w)
    if mcfg is None:
        mcfg = ModelConfig(dims=ds.dims, **model_kw)
    if list(mcfg.dims) != ds.dims:
        raise ValueError(f"model dims {mcfg.dims} do not match dataset dims {ds.dims}")
    if ds.c is None:
        raise ValueError("number of clusters unknown: set c in meta.json")
    normed, scaling = normalize(ds, w)
    views = zero_fill(normed, w).views

    params = init_params(mcfg, [tcfg.seed, 0])
    opt = Adam(params, tcfg.lr)
    buffer = EmbeddingBuffer(ds.n, ds.m, mcfg.d_e)
    s1 = train_stage1(views, w, params, mcfg, tcfg, opt, buffer)
    if tcfg.reinit_stage2:
        fresh = init_params(mcfg, [tcfg.seed, 4])
        for k in params:
            params[k].data[...] = fresh[k].data
        opt = Adam(params, tcfg.lr)
    s2 = train_stage2(s1.x_prime, s1.graphs, params, mcfg, tcfg, opt, buffer)

    km = kmeans(s2.z_bar, ds.c, tcfg.kmeans_restarts, seed=[tcfg.seed, 3])
    res = PipelineResult(params, mcfg, tcfg, scaling, w, s1.x_prime, s1.graphs, s2.z_bar,
                         km.labels, km.inertia, s1.losses + s2.losses)
    if ds.labels is not None:
        res.metrics = evaluate(km.labels, ds.labels)
    return res
