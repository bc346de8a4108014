"""Tour of the autograd engine: tape, gradients, finite-difference checking.

The engine exposes exactly the ops the models need (matmul, gelu, layer norm,
attention, an LSTM layer, cross entropy). Reductions that are missing, like a
mean, compose from matmul with a constant vector, which is what this demo does.

Run: python3 demos/01_autograd_engine.py
"""

import numpy as np

from codeclm.engine import ops
from codeclm.engine.optim import Adam
from codeclm.engine.tensor import Tensor


def mean_of(t: Tensor) -> Tensor:
    """Scalar mean via reshape + matmul with a constant 1/N column."""
    n = int(np.prod(t.data.shape))
    flat = ops.reshape(t, (1, n))
    return ops.reshape(ops.matmul(flat, Tensor(np.full((n, 1), 1.0 / n))), ())


def section(title):
    print(f"\n=== {title} ===")


section("a scalar chain rule")
x = Tensor(np.array(2.0), requires_grad=True)
z = ops.add(ops.mul(x, x), ops.mul(3.0, x))  # x^2 + 3x
z.backward()
print(f"d/dx (x^2 + 3x) at x=2: {float(x.grad)}  (expected 7)")

section("matrix ops build a tape")
rng = np.random.default_rng(0)
a = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
b = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
loss = mean_of(ops.gelu(ops.matmul(a, b)))
loss.backward()
print(f"loss {loss.item():.4f}, grad shapes a={a.grad.shape} b={b.grad.shape}")

section("finite differences agree with the tape")
eps = 1e-6
i, j = 1, 2


def f(a_val):
    return mean_of(ops.gelu(ops.matmul(Tensor(a_val), Tensor(b.data)))).item()


a_plus = a.data.copy()
a_plus[i, j] += eps
a_minus = a.data.copy()
a_minus[i, j] -= eps
numeric = (f(a_plus) - f(a_minus)) / (2 * eps)
print(f"tape grad {a.grad[i, j]: .8f}")
print(f"numeric   {numeric: .8f}")
print(f"rel err   {abs(a.grad[i, j] - numeric) / max(abs(numeric), 1e-12):.2e}")

section("an LSTM layer is one tape node with full BPTT")
xs = Tensor(rng.normal(size=(2, 6, 8)), requires_grad=True)
wx = Tensor(rng.normal(size=(8, 32)) * 0.2, requires_grad=True)
wh = Tensor(rng.normal(size=(8, 32)) * 0.2, requires_grad=True)
bias = Tensor(np.zeros(32), requires_grad=True)
h = ops.lstm_layer(xs, wx, wh, bias)
mean_of(h).backward()
print(f"hidden states {h.data.shape}, input grad norm {np.linalg.norm(xs.grad):.4f}")

section("fit a tiny classifier with Adam")
# three noisy clusters, one hidden layer
n_per = 40
centers = np.array([[0.0, 1.5], [-1.3, -0.8], [1.3, -0.8]])
feats = np.concatenate([c + 0.45 * rng.normal(size=(n_per, 2)) for c in centers])
labels = np.repeat(np.arange(3), n_per)

w1 = Tensor(rng.normal(size=(2, 32)) * 0.5, requires_grad=True)
w2 = Tensor(rng.normal(size=(32, 3)) * 0.5, requires_grad=True)
tensors = {"w1": w1, "w2": w2}
opt = Adam(tensors)
for step in range(1, 401):
    for t in tensors.values():
        t.grad = None
    logits = ops.matmul(ops.gelu(ops.matmul(Tensor(feats), w1)), w2)
    loss = ops.softmax_cross_entropy(logits, labels)
    loss.backward()
    opt.step(tensors, lr=2e-2)
    if step % 100 == 0:
        pred = np.argmax(logits.data, axis=1)
        acc = float(np.mean(pred == labels))
        print(f"step {step}: loss {loss.item():.4f} acc {acc:.2%}")
print("the engine is small, but it is a real reverse-mode tape")
