"""Differentiable operations.

Each op computes its forward value in plain numpy and registers a backward
closure. Reductions that feed normalizers (softmax denominators, log-sum-exp,
loss means) accumulate in float64 and cast back to the storage dtype, per the
32-bit-storage / 64-bit-accumulation policy.

The LSTM, attention and cross-entropy ops are fused: one tape node per call,
with hand-written backward passes, which keeps graphs small enough to train
on a single core.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor, as_tensor, make_result


def _sum64(arr: np.ndarray, axis=None, keepdims: bool = False) -> np.ndarray:
    return np.sum(arr, axis=axis, dtype=np.float64, keepdims=keepdims).astype(arr.dtype)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ts) in enumerate(zip(g.shape, shape)) if ts == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.data.shape))

    return make_result(out, (a, b), backward, "add")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    return make_result(out, (a, b), backward, "mul")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul expects tensors with ndim >= 2")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(f"matmul inner dimensions disagree: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a.accumulate_grad(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b.accumulate_grad(_unbroadcast(gb, b.data.shape))

    return make_result(out, (a, b), backward, "matmul")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g.reshape(a.data.shape))

    return make_result(out, (a,), backward, "reshape")


def pad_axis1(a, before: int, after: int) -> Tensor:
    """Zero-pad along axis 1 (the time axis of a (B, T, D) tensor)."""
    a = as_tensor(a)
    if before == 0 and after == 0:
        return a
    widths = [(0, 0)] * a.data.ndim
    widths[1] = (before, after)
    out = np.pad(a.data, widths)

    def backward(g):
        if a.requires_grad:
            sl = [slice(None)] * a.data.ndim
            sl[1] = slice(before, before + a.data.shape[1])
            a.accumulate_grad(g[tuple(sl)])

    return make_result(out, (a,), backward, "pad_axis1")


def slice_axis1(a, start: int, stop: int) -> Tensor:
    """Contiguous slice along axis 1; gradient zero-pads back."""
    a = as_tensor(a)
    t = a.data.shape[1]
    if not 0 <= start <= stop <= t:
        raise ValueError(f"slice [{start}:{stop}] outside axis of length {t}")
    sl = [slice(None)] * a.data.ndim
    sl[1] = slice(start, stop)
    out = a.data[tuple(sl)]

    def backward(g):
        if a.requires_grad:
            grad = np.zeros_like(a.data)
            grad[tuple(sl)] = g
            a.accumulate_grad(grad)

    return make_result(out, (a,), backward, "slice_axis1")


def embedding(table, ids) -> Tensor:
    """Row gather: out[..., :] = table[ids[...], :]."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    out = table.data[ids]

    def backward(g):
        if table.requires_grad:
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))
            table.accumulate_grad(gt)

    return make_result(out, (table,), backward, "embedding")


def acoustic_embed(tables, ids, reduce: str = "mean", layer_scale=None) -> Tensor:
    """Layer-wise gather-and-reduce: combine tables[i][ids[..., i]] over i.

    `tables` is a list of (K, D) tensors, `ids` is integer (..., L) with
    L == len(tables). reduce: "mean" or "sum". layer_scale, when given, is a
    float array of the same shape as ids weighting each layer's contribution
    on top of the reduce scale (carries no gradient of its own).
    """
    tables = [as_tensor(t) for t in tables]
    ids = np.asarray(ids)
    n = len(tables)
    if n == 0 or ids.shape[-1] != n:
        raise ValueError(f"need ids with last dim {n}, got {ids.shape}")
    if reduce not in ("mean", "sum"):
        raise ValueError(f"unknown reduce {reduce!r}")
    scale = 1.0 / n if reduce == "mean" else 1.0
    if layer_scale is not None:
        layer_scale = np.asarray(layer_scale, dtype=tables[0].data.dtype)
        if layer_scale.shape != ids.shape:
            raise ValueError(f"layer_scale shape {layer_scale.shape} must match ids {ids.shape}")
        acc = tables[0].data[ids[..., 0]] * layer_scale[..., 0, None]
        for i in range(1, n):
            acc += tables[i].data[ids[..., i]] * layer_scale[..., i, None]
    else:
        acc = tables[0].data[ids[..., 0]].copy()
        for i in range(1, n):
            acc += tables[i].data[ids[..., i]]
    out = acc * np.asarray(scale, dtype=acc.dtype)

    def backward(g):
        d = tables[0].data.shape[1]
        gs = g * scale
        for i, t in enumerate(tables):
            if t.requires_grad:
                gi = gs * layer_scale[..., i, None] if layer_scale is not None else gs
                gt = np.zeros_like(t.data)
                np.add.at(gt, ids[..., i].reshape(-1), gi.reshape(-1, d))
                t.accumulate_grad(gt)

    return make_result(out, tuple(tables), backward, "acoustic_embed")


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.data.shape[-1]
    mu = _sum64(x.data, axis=-1, keepdims=True) / d
    xc = x.data - mu
    var = _sum64(xc * xc, axis=-1, keepdims=True) / d
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.data.dtype))
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        if bias.requires_grad:
            bias.accumulate_grad(_unbroadcast(g, bias.data.shape))
        if gain.requires_grad:
            gain.accumulate_grad(_unbroadcast(g * xhat, gain.data.shape))
        if x.requires_grad:
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            x.accumulate_grad(inv * (dxhat - m1 - xhat * m2))

    return make_result(out, (x, gain, bias), backward, "layer_norm")


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    # xd * xd * xd instead of xd**3: generic pow is ~50x slower than
    # multiplication on float64 arrays and this runs on every ffn call
    u = _GELU_C * (xd + _GELU_A * (xd * xd * xd))
    t = np.tanh(u)
    out = 0.5 * xd * (1.0 + t)

    def backward(g):
        if x.requires_grad:
            du = _GELU_C * (1.0 + 3.0 * _GELU_A * xd**2)
            x.accumulate_grad(g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du))

    return make_result(out, (x,), backward, "gelu")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    t = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + t), t / (1.0 + t))


def lstm_layer(x, wx, wh, b) -> Tensor:
    """One unidirectional LSTM layer over (B, T, D), zero initial state.

    Gate order in the 4H axis: input, forget, cell candidate, output.
    Returns per-timestep hidden states (B, T, H); the whole sequence is one
    tape node with a full BPTT backward.
    """
    x, wx, wh, b = as_tensor(x), as_tensor(wx), as_tensor(wh), as_tensor(b)
    if x.data.ndim != 3:
        raise ValueError("lstm_layer expects (B, T, D) input")
    B, T, D = x.data.shape
    H = wh.data.shape[0]
    if wx.data.shape != (D, 4 * H) or wh.data.shape != (H, 4 * H) or b.data.shape != (4 * H,):
        raise ValueError("inconsistent LSTM weight shapes")
    dt = x.data.dtype
    hs = np.zeros((B, T + 1, H), dtype=dt)
    cs = np.zeros((B, T + 1, H), dtype=dt)
    gates = np.empty((B, T, 4 * H), dtype=dt)
    tanh_c = np.empty((B, T, H), dtype=dt)
    xw = x.data @ wx.data  # (B, T, 4H), hoisted out of the loop
    for t in range(T):
        z = xw[:, t] + hs[:, t] @ wh.data + b.data
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = _sigmoid(z[:, 3 * H :])
        c = f * cs[:, t] + i * g
        tc = np.tanh(c)
        hs[:, t + 1] = o * tc
        cs[:, t + 1] = c
        gates[:, t, :H] = i
        gates[:, t, H : 2 * H] = f
        gates[:, t, 2 * H : 3 * H] = g
        gates[:, t, 3 * H :] = o
        tanh_c[:, t] = tc
    out = hs[:, 1:].copy()

    def backward(gout):
        dwx = np.zeros_like(wx.data) if wx.requires_grad else None
        dwh = np.zeros_like(wh.data) if wh.requires_grad else None
        db = np.zeros_like(b.data) if b.requires_grad else None
        dx = np.zeros_like(x.data) if x.requires_grad else None
        dh_next = np.zeros((B, H), dtype=dt)
        dc = np.zeros((B, H), dtype=dt)
        for t in range(T - 1, -1, -1):
            i = gates[:, t, :H]
            f = gates[:, t, H : 2 * H]
            g = gates[:, t, 2 * H : 3 * H]
            o = gates[:, t, 3 * H :]
            tc = tanh_c[:, t]
            dh = gout[:, t] + dh_next
            do = dh * tc
            dc = dc + dh * o * (1.0 - tc * tc)
            di = dc * g
            dg = dc * i
            df = dc * cs[:, t]
            dz = np.concatenate(
                [di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g * g), do * o * (1.0 - o)],
                axis=1,
            )
            if dwx is not None:
                dwx += x.data[:, t].T @ dz
            if dwh is not None:
                dwh += hs[:, t].T @ dz
            if db is not None:
                db += dz.sum(axis=0)
            if dx is not None:
                dx[:, t] = dz @ wx.data.T
            dh_next = dz @ wh.data.T
            dc = dc * f
        if dx is not None:
            x.accumulate_grad(dx)
        if dwx is not None:
            wx.accumulate_grad(dwx)
        if dwh is not None:
            wh.accumulate_grad(dwh)
        if db is not None:
            b.accumulate_grad(db)

    return make_result(out, (x, wx, wh, b), backward, "lstm_layer")


def lstm_stack(x, layer_weights) -> Tensor:
    """Stacked unidirectional LSTM: layer_weights is a list of (wx, wh, b)."""
    for wx, wh, b in layer_weights:
        x = lstm_layer(x, wx, wh, b)
    return x


def attention(q, k, v, n_heads: int, add_mask: np.ndarray | None = None) -> Tensor:
    """Multi-head scaled dot-product attention over (B, T, D) projections.

    `add_mask` is an additive float array broadcastable to (B, n_heads, T, T);
    use 0 for allowed and a large negative number for disallowed pairs.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    B, T, D = q.data.shape
    if D % n_heads:
        raise ValueError("model dim not divisible by head count")
    dh = D // n_heads
    scale = 1.0 / math.sqrt(dh)

    def split(a):
        return a.reshape(B, T, n_heads, dh).transpose(0, 2, 1, 3)

    qh, kh, vh = split(q.data), split(k.data), split(v.data)
    scores = (qh @ np.swapaxes(kh, -1, -2)) * np.asarray(scale, dtype=q.data.dtype)
    if add_mask is not None:
        scores = scores + add_mask.astype(scores.dtype, copy=False)
    m = scores.max(axis=-1, keepdims=True)
    e = np.exp(scores - m)
    p = e / _sum64(e, axis=-1, keepdims=True)
    out = (p @ vh).transpose(0, 2, 1, 3).reshape(B, T, D)

    def backward(g):
        gh = g.reshape(B, T, n_heads, dh).transpose(0, 2, 1, 3)
        if v.requires_grad:
            dv = np.swapaxes(p, -1, -2) @ gh
            v.accumulate_grad(dv.transpose(0, 2, 1, 3).reshape(B, T, D))
        dp = gh @ np.swapaxes(vh, -1, -2)
        ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True))
        ds *= scale
        if q.requires_grad:
            dq = ds @ kh
            q.accumulate_grad(dq.transpose(0, 2, 1, 3).reshape(B, T, D))
        if k.requires_grad:
            dk = np.swapaxes(ds, -1, -2) @ qh
            k.accumulate_grad(dk.transpose(0, 2, 1, 3).reshape(B, T, D))

    return make_result(out, (q, k, v), backward, "attention")


def softmax_cross_entropy(logits, targets, ignore_mask=None, weights=None) -> Tensor:
    """Weighted NLL of `targets` under softmax(logits).

    Default weighting is the contract case: mean over positions not excluded
    by `ignore_mask` (gradient = (softmax - one_hot) / count there). Passing
    `weights` (same shape as targets, zeros on ignored positions) replaces
    the uniform 1/count weighting; callers use it to compose per-example
    means into batch means.
    """
    logits = as_tensor(logits)
    V = logits.data.shape[-1]
    flat = logits.data.reshape(-1, V)
    n = flat.shape[0]
    tg = np.asarray(targets).reshape(-1)
    if tg.shape[0] != n:
        raise ValueError("targets do not match logits leading shape")
    if weights is not None:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != n:
            raise ValueError("weights do not match logits leading shape")
    else:
        if ignore_mask is not None:
            keep = ~np.asarray(ignore_mask, dtype=bool).reshape(-1)
        else:
            keep = np.ones(n, dtype=bool)
        count = int(keep.sum())
        if count == 0:
            raise ValueError("all positions ignored: empty loss")
        w = keep.astype(np.float64) / count
    active = w != 0.0
    if active.any():
        bad = (tg[active] < 0) | (tg[active] >= V)
        if bad.any():
            raise ValueError("target index out of range")
    tg_safe = np.where(active, tg, 0)
    m = flat.max(axis=-1, keepdims=True)
    lse = np.log(_sum64(np.exp(flat - m), axis=-1, keepdims=True)) + m
    nll = lse[:, 0] - flat[np.arange(n), tg_safe]
    loss = np.asarray(float(np.dot(w, nll.astype(np.float64))), dtype=logits.data.dtype)

    def backward(g):
        if logits.requires_grad:
            p = np.exp(flat - lse)
            p *= w[:, None].astype(logits.data.dtype)
            p[np.arange(n), tg_safe] -= w.astype(logits.data.dtype)
            logits.accumulate_grad((p * float(g)).reshape(logits.data.shape))

    return make_result(loss, (logits,), backward, "softmax_cross_entropy")
