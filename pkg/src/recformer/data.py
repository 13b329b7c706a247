"""Multi-view datasets: CSV directory I/O, masks, normalization, imputation.

Randomness comes from ``numpy.random.default_rng(seed)`` (PCG64), so masks
and synthetic data are reproducible for a given integer seed.

Dataset directory layout::

    meta.json       {"n", "m", "c", "dims": [d_1..d_m], "has_labels"}
    view_<v>.csv    n rows of d_v comma-separated floats, v = 1..m, no header
    labels.csv      n rows, one integer each (optional)
    mask.csv        n rows of m comma-separated 0/1 values (optional)
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


class DatasetError(ValueError):
    """Malformed dataset directory or inconsistent shapes."""


class MaskError(ValueError):
    """Invalid or infeasible missing-view mask request."""


@dataclass
class MultiViewDataset:
    views: list[np.ndarray]
    labels: np.ndarray | None = None
    c: int | None = None

    def __post_init__(self):
        self.views = [np.asarray(v, dtype=np.float64) for v in self.views]
        if not self.views:
            raise DatasetError("dataset needs at least one view")
        n = self.views[0].shape[0]
        for i, v in enumerate(self.views):
            if v.ndim != 2:
                raise DatasetError(f"view {i + 1} is not a matrix")
            if v.shape[0] != n:
                raise DatasetError(f"view {i + 1} has {v.shape[0]} rows, view 1 has {n}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise DatasetError(f"labels have shape {self.labels.shape}, expected ({n},)")
            if self.c is None:
                self.c = int(self.labels.max()) + 1
            if self.labels.min() < 0 or self.labels.max() >= self.c:
                raise DatasetError(f"labels must lie in [0, {self.c})")

    @property
    def n(self) -> int:
        return self.views[0].shape[0]

    @property
    def m(self) -> int:
        return len(self.views)

    @property
    def dims(self) -> list[int]:
        return [v.shape[1] for v in self.views]


@dataclass
class Scaling:
    """Per-view min-max parameters; ``span`` is 0 for constant features."""

    lo: list[np.ndarray]
    span: list[np.ndarray]

    def inverse(self, v: int, x: np.ndarray) -> np.ndarray:
        return x * self.span[v] + self.lo[v]


@dataclass
class ImputedDataset:
    views: list[np.ndarray]
    source_mask: np.ndarray = field(repr=False)


def _read_matrix(path: Path, width: int | None = None) -> np.ndarray:
    if not path.exists():
        raise DatasetError(f"missing file: {path}")
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                vals = [float(cell) for cell in row]
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: non-numeric cell in {row!r}") from None
            if width is not None and len(vals) != width:
                raise DatasetError(f"{path}:{lineno}: expected {width} columns, got {len(vals)}")
            if rows and len(vals) != len(rows[0]):
                raise DatasetError(f"{path}:{lineno}: ragged row ({len(vals)} vs {len(rows[0])} columns)")
            rows.append(vals)
    if not rows:
        raise DatasetError(f"{path}: empty file")
    return np.array(rows, dtype=np.float64)


def _write_matrix(path: Path, x: np.ndarray, fmt=repr) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in np.atleast_2d(x):
            w.writerow([fmt(float(v)) for v in row])


def load_dataset(directory) -> MultiViewDataset:
    d = Path(directory)
    meta_path = d / "meta.json"
    if not meta_path.exists():
        raise DatasetError(f"missing file: {meta_path}")
    meta = json.loads(meta_path.read_text())
    m = int(meta["m"])
    dims = meta.get("dims")
    views = []
    for v in range(m):
        width = int(dims[v]) if dims else None
        views.append(_read_matrix(d / f"view_{v + 1}.csv", width))
    n = views[0].shape[0]
    for v, x in enumerate(views):
        if x.shape[0] != n:
            raise DatasetError(f"row-count mismatch: view_{v + 1}.csv has {x.shape[0]} rows, "
                               f"view_1.csv has {n}")
    if "n" in meta and int(meta["n"]) != n:
        raise DatasetError(f"meta.json says n={meta['n']} but views have {n} rows")
    labels = None
    lab_path = d / "labels.csv"
    if lab_path.exists():
        raw = _read_matrix(lab_path, 1)[:, 0]
        if raw.shape[0] != n:
            raise DatasetError(f"row-count mismatch: labels.csv has {raw.shape[0]} rows, views have {n}")
        if np.any(raw != np.round(raw)):
            raise DatasetError(f"{lab_path}: labels must be integers")
        labels = raw.astype(np.int64)
    elif meta.get("has_labels"):
        raise DatasetError(f"missing file: {lab_path}")
    c = meta.get("c")
    return MultiViewDataset(views, labels, int(c) if c is not None else None)


def save_dataset(ds: MultiViewDataset, directory, mask: np.ndarray | None = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {"n": ds.n, "m": ds.m, "c": ds.c, "dims": ds.dims, "has_labels": ds.labels is not None}
    (d / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    for v, x in enumerate(ds.views):
        _write_matrix(d / f"view_{v + 1}.csv", x)
    if ds.labels is not None:
        save_labels(d / "labels.csv", ds.labels)
    if mask is not None:
        save_mask(d / "mask.csv", mask)


def save_labels(path, labels) -> None:
    Path(path).write_text("".join(f"{int(x)}\n" for x in labels))


def load_labels(path) -> np.ndarray:
    raw = _read_matrix(Path(path), 1)[:, 0]
    return raw.astype(np.int64)


def save_mask(path, w: np.ndarray) -> None:
    Path(path).write_text("".join(",".join(str(int(x)) for x in row) + "\n" for row in w))


def load_mask(path, n: int | None = None, m: int | None = None) -> np.ndarray:
    w = _read_matrix(Path(path))
    if n is not None and w.shape[0] != n:
        raise DatasetError(f"{path}: mask has {w.shape[0]} rows, dataset has {n}")
    if m is not None and w.shape[1] != m:
        raise DatasetError(f"{path}: mask has {w.shape[1]} columns, dataset has {m} views")
    check_mask(w)
    return w.astype(np.int64)


def check_mask(w: np.ndarray) -> None:
    w = np.asarray(w)
    if not np.all((w == 0) | (w == 1)):
        raise MaskError("mask entries must be 0 or 1")
    bad = np.flatnonzero(w.sum(axis=1) < 1)
    if bad.size:
        raise MaskError(f"rows without any available view: {bad[:10].tolist()}")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def generate_mask(n: int, m: int, missing_rate: float, seed: int, attempts: int = 100) -> np.ndarray:
    """Drop ``round(missing_rate * n)`` rows from every view, keeping each row non-empty.

    Views are processed in order; for each one a random permutation of the
    rows is walked and a row is dropped only if it still has another view,
    i.e. a removal that would empty a row is redrawn. When a view runs out of
    eligible rows the whole mask is redrawn, up to ``attempts`` times. If no
    attempt reaches the exact counts, the attempt with the most removals is
    returned (row constraint kept, counts short) and a warning is logged.
    """
    if not 0 <= missing_rate < 1:
        raise MaskError(f"missing rate must lie in [0, 1), got {missing_rate}")
    if m < 1 or n < 1:
        raise MaskError("need n >= 1 and m >= 1")
    target = _round_half_up(missing_rate * n)
    if target == 0:
        return np.ones((n, m), dtype=np.int64)
    if m == 1:
        raise MaskError("cannot remove views from a single-view dataset")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(attempts):
        w = np.ones((n, m), dtype=np.int64)
        short = 0
        for v in range(m):
            dropped = 0
            for i in rng.permutation(n):
                if dropped == target:
                    break
                if w[i].sum() >= 2:
                    w[i, v] = 0
                    dropped += 1
            short += target - dropped
        if short == 0:
            return w
        if best is None or short < best[0]:
            best = (short, w)
    log.warning("could not remove %d rows from every view of a %dx%d mask; %d removals short",
                target, n, m, best[0])
    return best[1]


def generate_paired_mask(n: int, paired_rate: float, seed: int, m: int = 2) -> np.ndarray:
    """Two-view protocol: a fraction of rows keep both views, the rest keep one.

    Of the unpaired rows, ``floor(rest / 2)`` lose view 1 and the others lose view 2.
    """
    if m != 2:
        raise MaskError(f"paired protocol needs exactly two views, got {m}")
    if not 0 <= paired_rate <= 1:
        raise MaskError(f"paired rate must lie in [0, 1], got {paired_rate}")
    paired = _round_half_up(paired_rate * n)
    rest = n - paired
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    w = np.ones((n, 2), dtype=np.int64)
    w[order[paired:paired + rest // 2], 0] = 0
    w[order[paired + rest // 2:], 1] = 0
    return w


def zero_fill(ds: MultiViewDataset, w: np.ndarray) -> MultiViewDataset:
    # np.where rather than x * w: multiplying keeps -0.0 and nan
    views = [np.where(w[:, [v]] == 1, x, 0.0) for v, x in enumerate(ds.views)]
    return replace(ds, views=views)


def normalize(ds: MultiViewDataset, w: np.ndarray | None = None) -> tuple[MultiViewDataset, Scaling]:
    """Min-max scale each feature to [0, 1] using only rows where the view is present."""
    if w is None:
        w = np.ones((ds.n, ds.m), dtype=np.int64)
    views, los, spans = [], [], []
    for v, x in enumerate(ds.views):
        avail = x[w[:, v] == 1]
        lo = avail.min(axis=0) if avail.size else np.zeros(x.shape[1])
        hi = avail.max(axis=0) if avail.size else np.zeros(x.shape[1])
        span = hi - lo
        safe = np.where(span > 0, span, 1.0)
        y = np.where(span > 0, (x - lo) / safe, 0.0)
        views.append(y)
        los.append(lo)
        spans.append(span)
    return replace(ds, views=views), Scaling(los, spans)


def impute(x: np.ndarray, x_bar: np.ndarray, w_col: np.ndarray) -> np.ndarray:
    """Keep observed rows of ``x`` and take missing rows from ``x_bar``."""
    if x.shape != x_bar.shape:
        raise DatasetError(f"impute: shapes {x.shape} and {x_bar.shape} differ")
    keep = np.asarray(w_col).reshape(-1, 1) == 1
    return np.where(keep, x, x_bar)


def impute_all(views, recon, w) -> ImputedDataset:
    return ImputedDataset([impute(x, r, w[:, v]) for v, (x, r) in enumerate(zip(views, recon))],
                          np.asarray(w).copy())


def synth_dataset(n: int, m: int, c: int, dims, noise: float = 1.0, seed: int = 0,
                  latent_dim: int = 16) -> MultiViewDataset:
    """Gaussian blobs in a latent space, seen through random linear projections.

    Sample i belongs to class ``i % c``. View v is ``(center + noise) @ M_v``
    with independent noise per view and ``M_v`` of shape (latent_dim, d_v).
    """
    if not n >= c >= 2:
        raise DatasetError(f"need n >= c >= 2, got n={n}, c={c}")
    if len(dims) != m:
        raise DatasetError(f"dims has {len(dims)} entries for {m} views")
    rng = np.random.default_rng(seed)
    spread = 4.0 * max(noise, 0.25)
    for _ in range(100):
        centers = rng.normal(0.0, spread, size=(c, latent_dim))
        gaps = np.linalg.norm(centers[:, None] - centers[None], axis=-1)
        if gaps[np.triu_indices(c, 1)].min() >= 10 * noise:
            break
    else:
        raise DatasetError("could not draw well-separated centers in 100 tries")
    labels = np.arange(n) % c
    views = []
    for d in dims:
        proj = rng.normal(0.0, 1.0 / math.sqrt(latent_dim), size=(latent_dim, d))
        latent = centers[labels] + rng.normal(0.0, noise, size=(n, latent_dim)) if noise > 0 \
            else centers[labels]
        views.append(latent @ proj)
    return MultiViewDataset(views, labels, c)
