"""Transformer pose encoder mapping a window of flattened skeletons to one embedding.

Pipeline: input projection, prepended class token, learned positional
embeddings, ``depth`` pre-norm blocks (multi-head self-attention and a GELU
MLP, each with a residual connection), a final layer norm, then the class
token's state projected to ``output_dim``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ContractViolation, NumericError, ValidationError

INIT_STD = 0.02


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int
    depth: int = 2
    hidden: int = 64
    heads: int = 4
    mlp_ratio: float = 4.0
    output_dim: int = 64
    max_len: int = 61
    dropout: float = 0.0

    def __post_init__(self):
        if min(self.input_dim, self.depth, self.hidden, self.heads, self.output_dim) < 1:
            raise ValidationError("encoder dimensions must be positive")
        if self.hidden % self.heads:
            raise ValidationError(f"hidden={self.hidden} is not divisible by heads={self.heads}")
        if self.max_len < 2:
            raise ValidationError("max_len must be >= 2")
        if self.mlp_ratio <= 0 or not 0.0 <= self.dropout < 1.0:
            raise ValidationError("mlp_ratio must be > 0 and dropout in [0, 1)")

    @property
    def mlp_hidden(self) -> int:
        return int(round(self.hidden * self.mlp_ratio))

    @classmethod
    def paper_scale(cls, input_dim, output_dim=1024):
        return cls(input_dim=input_dim, depth=12, hidden=768, heads=12, output_dim=output_dim)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def param_shapes(cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    H, M = cfg.hidden, cfg.mlp_hidden
    shapes = {
        "input.weight": (cfg.input_dim, H),
        "input.bias": (H,),
        "cls_token": (H,),
        "pos_embed": (cfg.max_len, H),
    }
    for i in range(cfg.depth):
        p = f"layers.{i}."
        shapes[p + "norm1.gain"] = (H,)
        shapes[p + "norm1.bias"] = (H,)
        for proj in "qkvo":
            shapes[p + f"attn.{proj}.weight"] = (H, H)
            shapes[p + f"attn.{proj}.bias"] = (H,)
        shapes[p + "norm2.gain"] = (H,)
        shapes[p + "norm2.bias"] = (H,)
        shapes[p + "mlp.fc1.weight"] = (H, M)
        shapes[p + "mlp.fc1.bias"] = (M,)
        shapes[p + "mlp.fc2.weight"] = (M, H)
        shapes[p + "mlp.fc2.bias"] = (H,)
    shapes["final_norm.gain"] = (H,)
    shapes["final_norm.bias"] = (H,)
    shapes["output.weight"] = (H, cfg.output_dim)
    shapes["output.bias"] = (cfg.output_dim,)
    return shapes


def init_encoder(config: EncoderConfig, seed: int = 0, dtype=np.float64) -> dict[str, np.ndarray]:
    """Weights and embeddings ~ N(0, 0.02^2), biases 0, layer-norm gains 1."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".gain"):
            arr = np.ones(shape)
        elif name.endswith(".bias"):
            arr = np.zeros(shape)
        else:
            arr = rng.normal(0.0, INIT_STD, size=shape)
        params[name] = arr.astype(dtype)
    return params


def count_params(params) -> int:
    return int(sum(np.prod(p.shape) for p in params.values()))


def _dropout(x, rate, rng):
    if rng is None or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return ag.mul(x, keep)


def forward(windows, params: dict[str, Tensor], config: EncoderConfig, mode="cosine", rng=None) -> Tensor:
    """Graph-building forward pass. ``windows`` is (B, T, input_dim) with T < max_len.

    ``rng`` enables dropout (training only).
    """
    x = windows.data if isinstance(windows, Tensor) else np.asarray(windows)
    if x.ndim == 4:
        x = x.reshape(x.shape[0], x.shape[1], -1)
    if x.ndim != 3 or x.shape[2] != config.input_dim:
        raise ContractViolation(f"windows must be (B, T, {config.input_dim}), got {np.shape(windows)}")
    B, T, _ = x.shape
    if T + 1 > config.max_len:
        raise ContractViolation(f"window of {T} frames exceeds max_len - 1 = {config.max_len - 1}")
    if mode not in ("cosine", "euclidean"):
        raise ValidationError(f"unknown metric mode {mode!r}")
    dtype = params["input.weight"].data.dtype
    x = Tensor(x.astype(dtype, copy=False))
    H, nh = config.hidden, config.heads
    dh = H // nh

    h = ag.add(ag.matmul(x, params["input.weight"]), params["input.bias"])
    cls = ag.reshape(params["cls_token"], (1, 1, H))
    cls = ag.add(cls, Tensor(np.zeros((B, 1, H), dtype=dtype)))
    h = ag.concat([cls, h], axis=1)
    h = ag.add(h, ag.slice_(params["pos_embed"], (slice(0, T + 1),)))
    h = _dropout(h, config.dropout, rng)
    L = T + 1
    scale = 1.0 / math.sqrt(dh)

    def split_heads(t):
        return ag.transpose(ag.reshape(t, (B, L, nh, dh)), (0, 2, 1, 3))

    for i in range(config.depth):
        p = f"layers.{i}."
        a = ag.layer_norm(h, params[p + "norm1.gain"], params[p + "norm1.bias"])
        q = split_heads(ag.add(ag.matmul(a, params[p + "attn.q.weight"]), params[p + "attn.q.bias"]))
        k = split_heads(ag.add(ag.matmul(a, params[p + "attn.k.weight"]), params[p + "attn.k.bias"]))
        v = split_heads(ag.add(ag.matmul(a, params[p + "attn.v.weight"]), params[p + "attn.v.bias"]))
        scores = ag.mul(ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))), scale)
        attn = _dropout(ag.softmax(scores), config.dropout, rng)
        ctx = ag.reshape(ag.transpose(ag.matmul(attn, v), (0, 2, 1, 3)), (B, L, H))
        out = ag.add(ag.matmul(ctx, params[p + "attn.o.weight"]), params[p + "attn.o.bias"])
        h = ag.add(h, _dropout(out, config.dropout, rng))

        m = ag.layer_norm(h, params[p + "norm2.gain"], params[p + "norm2.bias"])
        m = ag.gelu(ag.add(ag.matmul(m, params[p + "mlp.fc1.weight"]), params[p + "mlp.fc1.bias"]))
        m = ag.add(ag.matmul(m, params[p + "mlp.fc2.weight"]), params[p + "mlp.fc2.bias"])
        h = ag.add(h, _dropout(m, config.dropout, rng))

    h = ag.layer_norm(h, params["final_norm.gain"], params["final_norm.bias"])
    pooled = ag.slice_(h, (slice(None), 0))
    z = ag.add(ag.matmul(pooled, params["output.weight"]), params["output.bias"])
    if mode == "cosine":
        z = ag.l2_normalize(z, axis=-1)
    return z


def encode_batch(windows, params: dict[str, np.ndarray], config: EncoderConfig, mode="cosine") -> np.ndarray:
    """Inference: (B, T, V*C) or (B, T, V, C) windows to (B, output_dim) embeddings."""
    tensors = {k: Tensor(v) for k, v in params.items()}
    z = forward(windows, tensors, config, mode).data
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite encoder output")
    return z
