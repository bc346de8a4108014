"""Central finite-difference gradient checking.

Runs the op under test in float64 and compares analytic gradients from the
tape against (f(x+h) - f(x-h)) / 2h at randomly probed coordinates. The
relative error uses max(|analytic|, |numeric|, 1.0) as denominator, so tiny
gradients are held to a 1e-4 absolute bar instead of blowing up the ratio.
"""

from __future__ import annotations

import numpy as np

from ..seeding import derive_rng
from .tensor import Tensor


def gradcheck(fn, inputs, n_probes: int = 100, h: float = 1e-3, seed: int = 0) -> float:
    """Check d(fn)/d(inputs) against central differences; returns max rel err.

    `fn` maps Tensors (one per input array) to a scalar Tensor and must be
    pure. Inputs are upcast to float64 copies.
    """
    arrays = [np.asarray(a, dtype=np.float64).copy() for a in inputs]

    def run(arrs) -> tuple[float, list[np.ndarray]]:
        tensors = [Tensor(a.copy(), requires_grad=True) for a in arrs]
        out = fn(*tensors)
        out.backward()
        grads = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]
        return float(out.data), grads

    _, grads = run(arrays)
    rng = derive_rng(seed, "gradcheck-probes")
    sizes = [a.size for a in arrays]
    total = sum(sizes)
    worst = 0.0
    for _ in range(n_probes):
        flat_index = int(rng.integers(total))
        which = 0
        while flat_index >= sizes[which]:
            flat_index -= sizes[which]
            which += 1
        base = arrays[which].reshape(-1)[flat_index]

        def eval_at(x: float) -> float:
            shifted = [a.copy() for a in arrays]
            shifted[which].reshape(-1)[flat_index] = x
            tensors = [Tensor(a) for a in shifted]
            return float(fn(*tensors).data)

        numeric = (eval_at(base + h) - eval_at(base - h)) / (2.0 * h)
        analytic = float(grads[which].reshape(-1)[flat_index])
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1.0)
        worst = max(worst, rel)
    return worst
