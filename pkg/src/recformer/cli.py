"""``recformer`` command line: synth, simulate, train, eval, export, sweep.

Exit codes: 0 success, 2 bad input or validation failure, 3 non-finite loss.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import shutil
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .cluster_eval import evaluate
from .data import (DatasetError, MaskError, _write_matrix, generate_mask, generate_paired_mask,
                   load_dataset, load_labels, load_mask, save_dataset, save_mask, synth_dataset)
from .graph import load_graphs
from .model import ConfigError, ModelConfig
from .runs import load_scaling, read_losses, save_run, write_losses
from .training import NumericError, TrainConfig, run_pipeline

log = logging.getLogger("recformer")

EXIT_INPUT = 2
EXIT_NUMERIC = 3

TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
MODEL_KEYS = {f.name for f in fields(ModelConfig)} - {"dims"}


class InputError(Exception):
    pass


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _add_config_flags(p: argparse.ArgumentParser, skip=()) -> None:
    g = p.add_argument_group("config overrides (same names as config-file keys)")
    for name, typ in [("lr", float), ("beta", float), ("k_neighbors", int), ("e1", int), ("e2", int),
                      ("batch_size", int), ("seed", int), ("kmeans_restarts", int), ("d_e", int),
                      ("heads", int), ("layers", int), ("mlp_hidden", int), ("ln_eps", float)]:
        if name in skip:
            continue
        flags = [f"--{name}"] + ([f"--{name.replace('_', '-')}"] if "_" in name else [])
        g.add_argument(*flags, dest=name, type=typ, default=None)
    for name in ("residual", "reinit_stage2"):
        g.add_argument(f"--{name.replace('_', '-')}", dest=name, action=argparse.BooleanOptionalAction,
                       default=None)


def merged_config(args) -> dict:
    cfg: dict = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise InputError(f"config file not found: {path}")
        cfg = json.loads(path.read_text())
        unknown = set(cfg) - TRAIN_KEYS - MODEL_KEYS - {"data", "mask"}
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
    for key in TRAIN_KEYS | MODEL_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _split_config(cfg: dict, dims) -> tuple[TrainConfig, ModelConfig]:
    tcfg = TrainConfig(**{k: v for k, v in cfg.items() if k in TRAIN_KEYS})
    mcfg = ModelConfig(dims=list(dims), **{k: v for k, v in cfg.items() if k in MODEL_KEYS})
    return tcfg, mcfg


def _load_inputs(data_dir, mask_path):
    if not Path(data_dir).is_dir():
        raise InputError(f"dataset directory not found: {data_dir}")
    ds = load_dataset(data_dir)
    if mask_path is None:
        default = Path(data_dir) / "mask.csv"
        mask_path = default if default.exists() else None
    if mask_path is not None and not Path(mask_path).exists():
        raise InputError(f"mask file not found: {mask_path}")
    w = None if mask_path is None else load_mask(mask_path, ds.n, ds.m)
    return ds, w, mask_path


def _train_one(ds, w, cfg: dict, out: Path, extra: dict) -> dict:
    tcfg, mcfg = _split_config(cfg, ds.dims)
    res = run_pipeline(ds, w, tcfg, mcfg)
    save_run(res, out, **extra)
    return res.metrics or {}


def cmd_synth(args) -> int:
    ds = synth_dataset(args.n, len(args.dims), args.c, args.dims, args.noise, args.seed)
    mask = None
    if args.paired_rate is not None:
        mask = generate_paired_mask(ds.n, args.paired_rate, args.seed, ds.m)
    elif args.rate is not None:
        mask = generate_mask(ds.n, ds.m, args.rate, args.seed)
    save_dataset(ds, args.out, mask)
    print(f"wrote synthetic dataset n={ds.n} m={ds.m} dims={ds.dims} c={ds.c} to {args.out}")
    return 0


def cmd_simulate(args) -> int:
    if not Path(args.data).is_dir():
        raise InputError(f"dataset directory not found: {args.data}")
    ds = load_dataset(args.data)
    if args.paired_rate is not None:
        w = generate_paired_mask(ds.n, args.paired_rate, args.seed, ds.m)
    else:
        w = generate_mask(ds.n, ds.m, args.rate, args.seed)
    save_mask(args.out, w)
    missing = (w == 0).sum(axis=0)
    print(f"mask {w.shape[0]}x{w.shape[1]} written to {args.out}")
    for v, k in enumerate(missing):
        print(f"  view {v + 1}: {k} missing")
    return 0


def cmd_train(args) -> int:
    ds, w, mask_path = _load_inputs(args.data, args.mask)
    cfg = merged_config(args)
    extra = {"data": str(args.data), "mask": None if mask_path is None else str(mask_path)}
    out = Path(args.out)
    metrics = _train_one(ds, w, cfg, out, extra)
    print(f"run written to {out}")
    if metrics:
        print(" ".join(f"{k}={v:.4f}" for k, v in metrics.items()))
    return 0


def cmd_eval(args) -> int:
    for p in (args.pred, args.labels):
        if not Path(p).exists():
            raise InputError(f"file not found: {p}")
    pred, true = load_labels(args.pred), load_labels(args.labels)
    if len(pred) != len(true):
        raise InputError(f"length mismatch: {len(pred)} predictions vs {len(true)} labels")
    print(json.dumps(evaluate(pred, true)))
    return 0


def cmd_export(args) -> int:
    run = Path(args.run)
    if not (run / "config.json").exists():
        raise InputError(f"not a complete run directory: {run}")
    out = Path(args.out) if args.out else run / "export"
    out.mkdir(parents=True, exist_ok=True)
    if args.what == "recovered":
        scaling = load_scaling(run)
        for v in range(len(scaling.lo)):
            x = np.loadtxt(run / f"recovered_view_{v + 1}.csv", delimiter=",", ndmin=2)
            _write_matrix(out / f"recovered_view_{v + 1}.csv", scaling.inverse(v, x))
    elif args.what == "embeddings":
        shutil.copyfile(run / "embeddings.csv", out / "embeddings.csv")
    elif args.what == "graph":
        shutil.copyfile(run / "graphs.csv", out / "graph.csv")
    elif args.what == "losses":
        write_losses(out / "losses.csv", read_losses(run / "losses.csv"))
    else:
        raise InputError(f"unknown artifact {args.what!r}")
    print(f"exported {args.what} to {out}")
    return 0


def cmd_sweep(args) -> int:
    ds, w, mask_path = _load_inputs(args.data, args.mask)
    base = merged_config(args)
    seed0 = int(base.get("seed", 0))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    cell = 0
    for beta in _floats(args.beta):
        for k in _ints(args.k):
            cfg = dict(base, beta=beta, k_neighbors=k, seed=seed0 + cell)
            run_dir = out / f"beta={beta:g}_k={k}"
            row = {"beta": beta, "k": k, "seed": cfg["seed"], "acc": "", "nmi": "", "purity": "",
                   "status": "ok"}
            try:
                metrics = _train_one(ds, w, cfg, run_dir,
                                     {"data": str(args.data),
                                      "mask": None if mask_path is None else str(mask_path)})
                row.update({k2: metrics.get(k2, "") for k2 in ("acc", "nmi", "purity")})
            except Exception as exc:  # a failed cell is recorded, the sweep goes on
                log.error("cell beta=%g k=%d failed: %s", beta, k, exc)
                row["status"] = f"failed: {exc}"
            rows.append(row)
            print(f"beta={beta:g} K={k}: {row['status']} acc={row['acc']}")
            cell += 1
    with open(out / "summary.csv", "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        wr.writeheader()
        wr.writerows(rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="recformer", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic multi-view dataset directory")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=90)
    s.add_argument("--c", type=int, default=3)
    s.add_argument("--dims", type=_ints, default=[20, 30])
    s.add_argument("--noise", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    g = s.add_mutually_exclusive_group()
    g.add_argument("--rate", type=float)
    g.add_argument("--paired-rate", type=float)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("simulate", help="generate a missing-view mask")
    s.add_argument("--data", required=True)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--rate", type=float)
    g.add_argument("--paired-rate", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train", help="run both training stages and k-means")
    s.add_argument("--data", required=True)
    s.add_argument("--mask")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    _add_config_flags(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="ACC/NMI/purity of a prediction file")
    s.add_argument("--pred", required=True)
    s.add_argument("--labels", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("export", help="write run artifacts as CSV")
    s.add_argument("--run", required=True)
    s.add_argument("--what", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_export)

    s = sub.add_parser("sweep", help="grid over beta and K")
    s.add_argument("--data", required=True)
    s.add_argument("--mask")
    s.add_argument("--config")
    s.add_argument("--beta", required=True, help="comma-separated list")
    s.add_argument("--k", required=True, help="comma-separated list")
    s.add_argument("--out", required=True)
    _add_config_flags(s, skip=("beta", "k_neighbors"))
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericError as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC
    except (InputError, DatasetError, MaskError, ConfigError, ValueError, KeyError,
            FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
