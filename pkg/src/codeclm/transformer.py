"""Transformer building blocks shared by the sequence models.

Pre-norm blocks over the custom autograd engine, sinusoidal position
tables, and the prefix attention rule that lets input positions attend
bidirectionally while output positions stay causal.
"""

from __future__ import annotations

import numpy as np

from .engine import Tensor, ops, uniform_init
from .errors import DataError

NEG_INF = -1e9


def sinusoid_table(max_len: int, d_model: int) -> np.ndarray:
    """(max_len, d_model) float32; even columns sine, odd columns cosine."""
    if d_model % 2 != 0:
        raise DataError("d_model must be even for sinusoidal positions")
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    dim = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, dim / d_model)
    table = np.zeros((max_len, d_model), dtype=np.float64)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table.astype(np.float32)


def prefix_attention_mask(boundary: int, total: int) -> np.ndarray:
    """(total, total) bool; True where query q may attend key k.

    Positions before `boundary` (the input segment) see the whole input;
    positions from `boundary` on (start token and output) see the input
    plus output positions up to themselves.
    """
    if not 1 <= boundary <= total:
        raise DataError(f"boundary {boundary} outside [1, {total}]")
    q = np.arange(total)[:, None]
    k = np.arange(total)[None, :]
    return (k < boundary) | ((k >= boundary) & (k <= q))


def additive_mask(allowed: np.ndarray) -> np.ndarray:
    """bool allow-matrix to float32 additive mask: 0 where True, -1e9 where False."""
    return np.where(allowed, 0.0, NEG_INF).astype(np.float32)


class ParamSet:
    """Flat name -> Tensor registry with uniform(-1/sqrt(fan_in)) init."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.tensors: dict[str, Tensor] = {}

    def add(self, name: str, shape: tuple, fan_in: int | None = None, zeros: bool = False) -> Tensor:
        if name in self.tensors:
            raise DataError(f"duplicate parameter {name}")
        if zeros:
            data = np.zeros(shape, dtype=np.float32)
        else:
            data = uniform_init(shape, fan_in if fan_in is not None else shape[0], self.rng)
        t = Tensor(data, requires_grad=True)
        self.tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self) -> list[str]:
        return sorted(self.tensors)

    def n_values(self) -> int:
        return sum(t.data.size for t in self.tensors.values())


def add_block_params(params: ParamSet, prefix: str, d_model: int, d_ffn: int) -> None:
    for name, shape, fan_in in (
        ("attn.wq", (d_model, d_model), d_model),
        ("attn.wk", (d_model, d_model), d_model),
        ("attn.wv", (d_model, d_model), d_model),
        ("attn.wo", (d_model, d_model), d_model),
        ("ffn.w1", (d_model, d_ffn), d_model),
        ("ffn.w2", (d_ffn, d_model), d_ffn),
    ):
        params.add(f"{prefix}.{name}", shape, fan_in)
    for name, shape in (
        ("attn.bq", (d_model,)),
        ("attn.bk", (d_model,)),
        ("attn.bv", (d_model,)),
        ("attn.bo", (d_model,)),
        ("ffn.b1", (d_ffn,)),
        ("ffn.b2", (d_model,)),
        ("ln1.bias", (d_model,)),
        ("ln2.bias", (d_model,)),
    ):
        params.add(f"{prefix}.{name}", shape, zeros=True)
    for name in ("ln1.gain", "ln2.gain"):
        t = params.add(f"{prefix}.{name}", (d_model,), zeros=True)
        t.data[:] = 1.0


def add_final_norm_params(params: ParamSet, d_model: int) -> None:
    gain = params.add("final_ln.gain", (d_model,), zeros=True)
    gain.data[:] = 1.0
    params.add("final_ln.bias", (d_model,), zeros=True)


def block_forward(params: ParamSet, prefix: str, x: Tensor, n_heads: int, add_mask: np.ndarray) -> Tensor:
    """Pre-norm residual block: attention then position-wise FFN."""
    p = params
    h = ops.layer_norm(x, p[f"{prefix}.ln1.gain"], p[f"{prefix}.ln1.bias"])
    q = ops.add(ops.matmul(h, p[f"{prefix}.attn.wq"]), p[f"{prefix}.attn.bq"])
    k = ops.add(ops.matmul(h, p[f"{prefix}.attn.wk"]), p[f"{prefix}.attn.bk"])
    v = ops.add(ops.matmul(h, p[f"{prefix}.attn.wv"]), p[f"{prefix}.attn.bv"])
    attn = ops.attention(q, k, v, n_heads, add_mask)
    attn = ops.add(ops.matmul(attn, p[f"{prefix}.attn.wo"]), p[f"{prefix}.attn.bo"])
    x = ops.add(x, attn)
    h = ops.layer_norm(x, p[f"{prefix}.ln2.gain"], p[f"{prefix}.ln2.bias"])
    h = ops.gelu(ops.add(ops.matmul(h, p[f"{prefix}.ffn.w1"]), p[f"{prefix}.ffn.b1"]))
    h = ops.add(ops.matmul(h, p[f"{prefix}.ffn.w2"]), p[f"{prefix}.ffn.b2"])
    return ops.add(x, h)


def final_norm(params: ParamSet, x: Tensor) -> Tensor:
    return ops.layer_norm(x, params["final_ln.gain"], params["final_ln.bias"])
