"""Run directory layout.

    config.json             effective flat config (model + training keys, input paths)
    losses.csv              epoch,stage,recon,graph,total (one row per epoch, both stages)
    checkpoint.npz          parameters + model config (see model.save_checkpoint)
    mask.csv                mask used for the run
    scaling.npz             per-view min-max parameters (lo_<v>, span_<v>)
    recovered_view_<v>.csv  imputed views X' on the normalised [0, 1] scale
    graphs.csv              fixed kNN graphs as view,i,j triplets
    embeddings.csv          fused Stage-2 embeddings, one row per sample
    predictions.csv         cluster index per sample
    metrics.json            acc, nmi, purity (when labelled), inertia, seed
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .data import Scaling, _write_matrix, load_mask, save_labels, save_mask
from .graph import export_graphs
from .model import save_checkpoint
from .training import EpochLog, PipelineResult


def write_losses(path, losses: list[EpochLog]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "stage", "recon", "graph", "total"])
        for e in losses:
            w.writerow([e.epoch, e.stage, repr(e.recon), repr(e.graph), repr(e.total)])


def read_losses(path) -> list[EpochLog]:
    with open(path, newline="") as fh:
        return [EpochLog(int(r["epoch"]), int(r["stage"]), float(r["recon"]), float(r["graph"]),
                         float(r["total"])) for r in csv.DictReader(fh)]


def effective_config(res: PipelineResult, **extra) -> dict:
    cfg = asdict(res.train_config)
    cfg.update(asdict(res.model_config))
    cfg.update(extra)
    return cfg


def save_run(res: PipelineResult, out, **extra) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(effective_config(res, **extra), indent=2) + "\n")
    write_losses(out / "losses.csv", res.losses)
    save_checkpoint(out / "checkpoint.npz", res.params, res.model_config)
    save_mask(out / "mask.csv", res.mask)
    scal = {}
    for v in range(len(res.x_prime)):
        scal[f"lo_{v + 1}"] = res.scaling.lo[v]
        scal[f"span_{v + 1}"] = res.scaling.span[v]
    with open(out / "scaling.npz", "wb") as fh:
        np.savez(fh, **scal)
    for v, x in enumerate(res.x_prime):
        _write_matrix(out / f"recovered_view_{v + 1}.csv", x)
    export_graphs(out / "graphs.csv", res.graphs)
    _write_matrix(out / "embeddings.csv", res.z_bar)
    save_labels(out / "predictions.csv", res.predictions)
    metrics = dict(res.metrics or {})
    metrics.update(inertia=res.inertia, seed=res.train_config.seed)
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n")
    return out


def load_scaling(run) -> Scaling:
    with np.load(Path(run) / "scaling.npz") as f:
        m = len(f.files) // 2
        return Scaling([f[f"lo_{v + 1}"] for v in range(m)], [f[f"span_{v + 1}"] for v in range(m)])


def load_run_mask(run) -> np.ndarray:
    return load_mask(Path(run) / "mask.csv")
