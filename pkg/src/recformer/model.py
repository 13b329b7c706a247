"""Cross-view transformer autoencoder.

Shapes: views are n x d_v, token tensors are n x m x d_e (one token per view).
Parameters live in a flat ``dict[str, Tensor]`` so the optimizer, checkpoint
code and gradient checks can all walk them by name.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import InvalidMaskError, Tensor


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    dims: list[int] = field(default_factory=list)
    d_e: int = 128
    heads: int = 4
    layers: int = 1
    mlp_hidden: int = 256
    residual: bool = True
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.heads < 1 or self.d_e % self.heads:
            raise ConfigError(f"d_e={self.d_e} is not divisible by heads={self.heads}")
        if self.layers < 1:
            raise ConfigError("need at least one block")

    @property
    def m(self) -> int:
        return len(self.dims)

    @property
    def d_h(self) -> int:
        return self.d_e // self.heads


Params = dict[str, Tensor]


def _block_shapes(prefix: str, cfg: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    d, hid = cfg.d_e, cfg.mlp_hidden
    return [
        (f"{prefix}.wq", (d, d), "w"), (f"{prefix}.wk", (d, d), "w"), (f"{prefix}.wv", (d, d), "w"),
        (f"{prefix}.wo", (d, d), "w"), (f"{prefix}.bo", (d,), "b"),
        (f"{prefix}.ln1_g", (d,), "g"), (f"{prefix}.ln1_b", (d,), "b"),
        (f"{prefix}.w1", (d, hid), "w"), (f"{prefix}.b1", (hid,), "b"),
        (f"{prefix}.w2", (hid, d), "w"), (f"{prefix}.b2", (d,), "b"),
        (f"{prefix}.ln2_g", (d,), "g"), (f"{prefix}.ln2_b", (d,), "b"),
    ]


def param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    shapes = []
    for v, dv in enumerate(cfg.dims):
        shapes += [(f"ext{v}.w", (dv, cfg.d_e), "w"), (f"ext{v}.b", (cfg.d_e,), "b")]
    for layer in range(cfg.layers):
        shapes += _block_shapes(f"enc{layer}", cfg)
    for layer in range(cfg.layers):
        shapes += _block_shapes(f"dec{layer}", cfg)
    for v, dv in enumerate(cfg.dims):
        shapes += [(f"head{v}.w", (cfg.d_e, dv), "w"), (f"head{v}.b", (dv,), "b")]
    return shapes


def param_count(cfg: ModelConfig) -> int:
    return sum(math.prod(s) for _, s, _ in param_shapes(cfg))


def init_params(cfg: ModelConfig, seed) -> Params:
    """Glorot-uniform weights, zero biases, unit layer-norm gains."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape, kind in param_shapes(cfg):
        if kind == "w":
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            data = rng.uniform(-bound, bound, size=shape)
        elif kind == "g":
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        params[name] = Tensor(data, requires_grad=True)
    return params


def extract_low_level(views, params: Params, cfg: ModelConfig) -> Tensor:
    if len(views) != cfg.m:
        raise ad.DimensionError(f"got {len(views)} views, model expects {cfg.m}")
    toks = []
    for v, x in enumerate(views):
        x = ad.as_tensor(x)
        if x.shape[-1] != cfg.dims[v]:
            raise ad.DimensionError(f"view {v + 1} has width {x.shape[-1]}, expected {cfg.dims[v]}")
        toks.append(ad.relu(x @ params[f"ext{v}.w"] + params[f"ext{v}.b"]))
    return ad.stack(toks, axis=1)


def _split_heads(x: Tensor, cfg: ModelConfig) -> Tensor:
    n, m, _ = x.shape
    return x.reshape(n, m, cfg.heads, cfg.d_h).transpose(0, 2, 1, 3)


def attention_mask(w) -> np.ndarray:
    """Per-sample outer product w_i^T w_i, shaped n x 1 x m x m to broadcast over heads."""
    w = np.asarray(w, dtype=np.float64)
    if np.any(w.sum(axis=-1) < 1):
        raise InvalidMaskError("every sample needs at least one available view")
    return (w[:, :, None] * w[:, None, :])[:, None]


def multi_head_attention(x: Tensor, w, params: Params, prefix: str, cfg: ModelConfig) -> Tensor:
    """Attention across the m view tokens of each sample; ``w`` is the n x m mask or None."""
    n, m, d = x.shape
    q = _split_heads(x @ params[f"{prefix}.wq"], cfg)
    k = _split_heads(x @ params[f"{prefix}.wk"], cfg)
    v = _split_heads(x @ params[f"{prefix}.wv"], cfg)
    scores = ad.scale(q @ ad.swap_last(k), 1.0 / math.sqrt(cfg.d_h))
    if w is None:
        probs = ad.softmax_masked(scores)
    else:
        # rows of missing views are fully masked and fall back to a uniform average
        probs = ad.softmax_masked(scores, attention_mask(w), allow_empty_rows=True)
    return (probs @ v).transpose(0, 2, 1, 3).reshape(n, m, d)


def cross_view_attention(x_hat_i, w_row, params: Params, cfg: ModelConfig, prefix: str = "enc0") -> Tensor:
    """Single-sample form: m x d_e tokens in, concatenated head outputs m x d_e out."""
    x = ad.as_tensor(x_hat_i)
    w = None if w_row is None else np.asarray(w_row).reshape(1, -1)
    return multi_head_attention(x.reshape(1, *x.shape), w, params, prefix, cfg).reshape(x.shape)


def block(x: Tensor, w, params: Params, prefix: str, cfg: ModelConfig) -> Tensor:
    p = params
    a = multi_head_attention(x, w, p, prefix, cfg) @ p[f"{prefix}.wo"] + p[f"{prefix}.bo"]
    h = ad.layer_norm(x + a if cfg.residual else a, p[f"{prefix}.ln1_g"], p[f"{prefix}.ln1_b"], cfg.ln_eps)
    f = ad.relu(h @ p[f"{prefix}.w1"] + p[f"{prefix}.b1"]) @ p[f"{prefix}.w2"] + p[f"{prefix}.b2"]
    return ad.layer_norm(h + f if cfg.residual else f, p[f"{prefix}.ln2_g"], p[f"{prefix}.ln2_b"], cfg.ln_eps)


def encode(views, w, params: Params, cfg: ModelConfig) -> Tensor:
    """Views -> Z (n x m x d_e). Pass the mask in Stage 1 and ``None`` in Stage 2."""
    z = extract_low_level(views, params, cfg)
    for layer in range(cfg.layers):
        z = block(z, w, params, f"enc{layer}", cfg)
    return z


def fuse(z: Tensor, w=None) -> Tensor:
    """Availability-weighted mean of view embeddings; plain mean when ``w`` is None."""
    if w is None:
        return ad.mean(z, axis=1)
    w = np.asarray(w, dtype=np.float64)
    counts = w.sum(axis=1, keepdims=True)
    if np.any(counts < 1):
        raise InvalidMaskError("every sample needs at least one available view")
    return ad.tsum(ad.mul(z, (w / counts)[:, :, None]), axis=1)


def decode(z_bar: Tensor, params: Params, cfg: ModelConfig) -> list[Tensor]:
    n, d = z_bar.shape
    if d != cfg.d_e:
        raise ad.DimensionError(f"fused width {d} != d_e={cfg.d_e}")
    x = ad.stack([z_bar] * cfg.m, axis=1)
    for layer in range(cfg.layers):
        x = block(x, None, params, f"dec{layer}", cfg)
    return [x[:, v, :] @ params[f"head{v}.w"] + params[f"head{v}.b"] for v in range(cfg.m)]


def forward(views, w, params: Params, cfg: ModelConfig):
    """Full pass: returns (Z, Z_bar, reconstructions)."""
    z = encode(views, w, params, cfg)
    z_bar = fuse(z, w)
    return z, z_bar, decode(z_bar, params, cfg)


def save_checkpoint(path, params: Params, cfg: ModelConfig) -> None:
    """npz container: one float64 array per parameter plus ``__config__`` (JSON string)."""
    arrays = {name: t.data for name, t in params.items()}
    arrays["__config__"] = np.array(json.dumps(asdict(cfg)))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[Params, ModelConfig]:
    with np.load(Path(path), allow_pickle=False) as f:
        cfg = ModelConfig(**json.loads(str(f["__config__"])))
        params = {name: Tensor(f[name], requires_grad=True) for name, _, _ in param_shapes(cfg)}
    return params, cfg
