"""Dense tensors with reverse-mode automatic differentiation.

Values are stored row-major, float32 by default; float64 is allowed so the
finite-difference checker can run the same ops at higher precision.  Each op
records a backward closure and its parent tensors; ``Tensor.backward`` walks
the recorded graph in reverse topological order and accumulates gradients.

Every op checks its forward output for NaN/Inf (a contract violation raised
as ``NumericError``); ``set_finite_checks(False)`` disables the check.
"""

from __future__ import annotations

import contextlib

import numpy as np

from ..errors import NumericError


_finite_checks = True
_grad_enabled = True


def set_finite_checks(enabled: bool) -> None:
    global _finite_checks
    _finite_checks = bool(enabled)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording (evaluation and decoding paths)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def grad_enabled() -> bool:
    return _grad_enabled


def check_finite(arr: np.ndarray, what: str) -> None:
    if not _finite_checks or arr.size == 0:
        return
    # NaN propagates through min/max, so two cheap reductions cover both.
    lo = arr.min()
    hi = arr.max()
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise NumericError(f"non-finite values in {what}")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.accumulate_grad(np.asarray(grad, dtype=self.data.dtype).reshape(self.data.shape))
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}{flag})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(data: np.ndarray, parents: tuple, backward_fn, what: str) -> Tensor:
    """Wrap an op's forward output, attaching the tape record if needed."""
    check_finite(data, what)
    grad_parents = tuple(p for p in parents if p.requires_grad)
    out = Tensor(data, requires_grad=bool(grad_parents) and _grad_enabled)
    if out.requires_grad:
        out._parents = grad_parents
        out._backward_fn = backward_fn
    return out
