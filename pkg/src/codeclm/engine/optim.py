"""Adam optimizer, global-norm gradient clipping and parameter init."""

from __future__ import annotations

import math

import numpy as np

from .tensor import NumericError, Tensor


def uniform_init(shape, fan_in: int, rng: np.random.Generator) -> np.ndarray:
    """uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), float32."""
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def clip_global_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0.0:
        scale = np.asarray(max_norm / norm, dtype=np.float32)
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


class Adam:
    """Standard Adam with bias correction.

    Moment buffers are keyed by parameter name so they can be checkpointed
    alongside the parameters; missing gradients are treated as zeros (tables
    untouched by the current task mix just decay their moments).
    """

    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9, beta2: float = 0.98, eps: float = 1e-9):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.first_moment = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.second_moment = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, params: dict[str, Tensor], lr: float) -> None:
        for name, p in params.items():
            if p.grad is None:
                continue
            if p.grad.shape != p.data.shape:
                raise ValueError(f"gradient shape mismatch for {name}")
            lo, hi = p.grad.min(), p.grad.max()
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise NumericError(f"non-finite gradient for {name}")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for name, p in params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = self.first_moment[name]
            v = self.second_moment[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            mhat = m / c1
            vhat = v / c2
            p.data = p.data - (lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for k, m in self.first_moment.items():
            out[f"opt.m.{k}"] = m
        for k, v in self.second_moment.items():
            out[f"opt.v.{k}"] = v
        return out

    def load_state_arrays(self, blobs: dict[str, np.ndarray], step_count: int) -> None:
        for k in self.first_moment:
            self.first_moment[k] = blobs[f"opt.m.{k}"].copy()
            self.second_moment[k] = blobs[f"opt.v.{k}"].copy()
        self.step_count = step_count
