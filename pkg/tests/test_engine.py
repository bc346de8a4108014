import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codeclm.engine import Adam, NumericError, Tensor, clip_global_norm, gradcheck, ops, uniform_init
from codeclm.seeding import derive_rng


def rnd(shape, seed=0, scale=1.0):
    return (derive_rng(seed, "t", *shape).standard_normal(shape) * scale).astype(np.float32)


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------


def test_matmul_identity():
    out = ops.matmul(Tensor(np.eye(2, dtype=np.float32)), Tensor([[1.0, 2.0], [3.0, 4.0]]))
    np.testing.assert_array_equal(out.data, [[1.0, 2.0], [3.0, 4.0]])


def test_matmul_analytic():
    out = ops.matmul(Tensor([[1.0, 0.0]]), Tensor([[0.0], [5.0]]))
    np.testing.assert_array_equal(out.data, [[0.0]])


def test_matmul_against_triple_loop():
    a, b = rnd((3, 4), 1), rnd((4, 2), 2)
    want = np.zeros((3, 2), dtype=np.float64)
    for i in range(3):
        for j in range(2):
            for k in range(4):
                want[i, j] += float(a[i, k]) * float(b[k, j])
    got = ops.matmul(Tensor(a), Tensor(b)).data
    assert np.abs(got - want).max() < 1e-6


def test_matmul_shape_error():
    with pytest.raises(ValueError):
        ops.matmul(Tensor(rnd((2, 3))), Tensor(rnd((4, 2))))


def test_matmul_batched_grads_shapes():
    a = Tensor(rnd((2, 3, 4), 3), requires_grad=True)
    b = Tensor(rnd((4, 5), 4), requires_grad=True)
    out = ops.matmul(a, b)
    out.backward(np.ones_like(out.data))
    assert a.grad.shape == (2, 3, 4) and b.grad.shape == (4, 5)


# ---------------------------------------------------------------------------
# softmax_cross_entropy
# ---------------------------------------------------------------------------


def test_ce_uniform_logits():
    loss = ops.softmax_cross_entropy(Tensor(np.zeros((1, 4), dtype=np.float32)), np.array([2]))
    assert abs(loss.item() - math.log(4.0)) < 1e-6


def test_ce_near_delta():
    logits = np.zeros((1, 5), dtype=np.float32)
    logits[0, 3] = 20.0
    loss = ops.softmax_cross_entropy(Tensor(logits), np.array([3]))
    assert loss.item() < 1e-8


def test_ce_all_ignored_is_error():
    with pytest.raises(ValueError):
        ops.softmax_cross_entropy(Tensor(rnd((3, 4))), np.zeros(3, int), ignore_mask=np.ones(3, bool))


def test_ce_target_out_of_range():
    with pytest.raises(ValueError):
        ops.softmax_cross_entropy(Tensor(rnd((2, 4))), np.array([1, 4]))


def test_ce_ignore_mask_means_over_kept():
    logits = rnd((4, 7), 5)
    tg = np.array([1, 2, 3, 4])
    keep = np.array([False, True, True, False])
    full = ops.softmax_cross_entropy(Tensor(logits[1:3]), tg[1:3]).item()
    masked = ops.softmax_cross_entropy(Tensor(logits), tg, ignore_mask=~keep).item()
    assert abs(full - masked) < 1e-6


def test_ce_gradient_matches_finite_differences():
    tg = np.array([3, 0, 6, 1, 2])

    def f(lg):
        return ops.softmax_cross_entropy(lg, tg)

    assert gradcheck(f, [rnd((5, 7), 6)], n_probes=35, h=1e-3) < 1e-4


def test_ce_shift_invariance():
    logits = rnd((3, 9), 7)
    shifted = logits + np.array([[5.0], [-2.0], [0.25]], dtype=np.float32)
    tg = np.array([0, 4, 8])
    a = ops.softmax_cross_entropy(Tensor(logits), tg).item()
    b = ops.softmax_cross_entropy(Tensor(shifted), tg).item()
    assert abs(a - b) < 1e-5


# ---------------------------------------------------------------------------
# lstm
# ---------------------------------------------------------------------------


def lstm_weights(d, h, seed=0, zero=False):
    if zero:
        return (
            Tensor(np.zeros((d, 4 * h), np.float32)),
            Tensor(np.zeros((h, 4 * h), np.float32)),
            Tensor(np.zeros(4 * h, np.float32)),
        )
    rng = derive_rng(seed, "lstmw")
    return (
        Tensor(uniform_init((d, 4 * h), d, rng)),
        Tensor(uniform_init((h, 4 * h), h, rng)),
        Tensor(np.zeros(4 * h, np.float32)),
    )


def test_lstm_zero_weights_zero_output():
    x = Tensor(rnd((1, 6, 4), 8))
    out = ops.lstm_layer(x, *lstm_weights(4, 4, zero=True))
    np.testing.assert_array_equal(out.data, np.zeros((1, 6, 4), np.float32))


def test_lstm_output_shape():
    out = ops.lstm_layer(Tensor(rnd((2, 5, 3), 9)), *lstm_weights(3, 3, seed=1))
    assert out.data.shape == (2, 5, 3)


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def test_lstm_matches_unrolled_recurrence():
    d = 3
    x = rnd((1, 4, d), 10).astype(np.float64)
    wx, wh, b = lstm_weights(d, d, seed=2)
    wxd, whd, bd = wx.data.astype(np.float64), wh.data.astype(np.float64), b.data.astype(np.float64)
    h = np.zeros(d)
    c = np.zeros(d)
    want = []
    for t in range(4):
        z = x[0, t] @ wxd + h @ whd + bd
        i, f, g, o = z[:d], z[d : 2 * d], z[2 * d : 3 * d], z[3 * d :]
        c = sigmoid(f) * c + sigmoid(i) * np.tanh(g)
        h = sigmoid(o) * np.tanh(c)
        want.append(h.copy())
    got = ops.lstm_layer(Tensor(x.astype(np.float32)), wx, wh, b).data[0]
    assert np.abs(got - np.array(want)).max() < 1e-6


def test_lstm_causality_bit_identical():
    x = rnd((1, 7, 4), 11)
    w = lstm_weights(4, 4, seed=3)
    base = ops.lstm_layer(Tensor(x), *w).data
    x2 = x.copy()
    x2[0, 5] += 3.0
    pert = ops.lstm_layer(Tensor(x2), *w).data
    np.testing.assert_array_equal(base[0, :5], pert[0, :5])
    assert np.abs(base[0, 5:] - pert[0, 5:]).max() > 0


def test_lstm_stack_depth():
    x = Tensor(rnd((1, 5, 4), 12))
    layers = [lstm_weights(4, 4, seed=s) for s in (4, 5, 6)]
    out = ops.lstm_stack(x, layers)
    assert out.data.shape == (1, 5, 4)
    one = ops.lstm_stack(x, layers[:1])
    assert np.abs(out.data - one.data).max() > 0


# ---------------------------------------------------------------------------
# adam
# ---------------------------------------------------------------------------


def test_adam_zero_gradient_no_change():
    p = Tensor(rnd((3, 3), 13), requires_grad=True)
    before = p.data.copy()
    p.grad = np.zeros_like(p.data)
    Adam({"p": p}).step({"p": p}, lr=0.1)
    np.testing.assert_array_equal(p.data, before)


def test_adam_first_step_magnitude():
    p = Tensor(np.array([0.0], dtype=np.float32), requires_grad=True)
    p.grad = np.array([1.0], dtype=np.float32)
    Adam({"p": p}).step({"p": p}, lr=0.1)
    assert abs(abs(float(p.data[0])) - 0.1) < 1e-6


def test_adam_matches_recurrence_oracle():
    # quadratic f(x) = 0.5 x^2, gradient x, ten steps
    beta1, beta2, eps, lr = 0.9, 0.98, 1e-9, 0.05
    x = 1.7
    m = v = 0.0
    want = []
    for t in range(1, 11):
        g = x
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        x = x - lr * (m / (1 - beta1**t)) / (math.sqrt(v / (1 - beta2**t)) + eps)
        want.append(x)
    p = Tensor(np.array([1.7], dtype=np.float32), requires_grad=True)
    opt = Adam({"p": p}, beta1=beta1, beta2=beta2, eps=eps)
    got = []
    for _ in range(10):
        p.grad = p.data.copy()
        opt.step({"p": p}, lr=lr)
        got.append(float(p.data[0]))
    assert np.abs(np.array(got) - np.array(want)).max() < 1e-6


def test_adam_nonfinite_gradient_rejected_before_mutation():
    p = Tensor(np.array([1.0], dtype=np.float32), requires_grad=True)
    q = Tensor(np.array([2.0], dtype=np.float32), requires_grad=True)
    p.grad = np.array([np.nan], dtype=np.float32)
    q.grad = np.array([1.0], dtype=np.float32)
    opt = Adam({"p": p, "q": q})
    with pytest.raises(NumericError):
        opt.step({"p": p, "q": q}, lr=0.1)
    assert float(q.data[0]) == 2.0 and opt.step_count == 0


def test_clip_global_norm():
    p = Tensor(np.zeros(4, np.float32), requires_grad=True)
    p.grad = np.full(4, 3.0, dtype=np.float32)  # norm 6
    norm = clip_global_norm({"p": p}, 1.0)
    assert abs(norm - 6.0) < 1e-6
    assert abs(float(np.linalg.norm(p.grad)) - 1.0) < 1e-6


# ---------------------------------------------------------------------------
# softmax behaviour through attention
# ---------------------------------------------------------------------------


def test_attention_rows_are_probabilities():
    # with v = identity the output rows are the attention distributions
    t = 6
    q = Tensor(rnd((1, t, t), 14))
    k = Tensor(rnd((1, t, t), 15))
    v = Tensor(np.eye(t, dtype=np.float32)[None])
    out = ops.attention(q, k, v, n_heads=1).data[0]
    np.testing.assert_allclose(out.sum(axis=-1), np.ones(t), atol=1e-6)
    assert (out >= 0).all()


def test_attention_mask_blocks_positions():
    t = 5
    q, k = Tensor(rnd((1, t, 4), 16)), Tensor(rnd((1, t, 4), 17))
    v = Tensor(np.eye(t, dtype=np.float32)[None, :, :4])
    mask = np.triu(np.full((t, t), -1e9, dtype=np.float32), k=1)[None, None]
    out = ops.attention(q, k, v, n_heads=1, add_mask=mask).data[0]
    # row 0 can only attend to key 0, whose value is e_0
    np.testing.assert_allclose(out[0], np.eye(t, dtype=np.float32)[0, :4], atol=1e-6)


# ---------------------------------------------------------------------------
# finite checks, misc ops
# ---------------------------------------------------------------------------


def test_forward_nan_raises():
    with np.errstate(invalid="ignore"), pytest.raises(NumericError):
        ops.add(Tensor(np.array([np.inf], dtype=np.float32)), Tensor(np.array([-np.inf], dtype=np.float32)))


def test_embedding_gather_and_scatter():
    table = Tensor(rnd((5, 3), 18), requires_grad=True)
    ids = np.array([[0, 4], [4, 4]])
    out = ops.embedding(table, ids)
    assert out.data.shape == (2, 2, 3)
    out.backward(np.ones_like(out.data))
    np.testing.assert_allclose(table.grad[4], np.full(3, 3.0), atol=0)
    np.testing.assert_allclose(table.grad[1], np.zeros(3), atol=0)


def test_acoustic_embed_mean_matches_manual():
    tables = [Tensor(rnd((4, 3), 20 + i)) for i in range(8)]
    ids = derive_rng(21).integers(0, 4, size=(2, 5, 8))
    out = ops.acoustic_embed(tables, ids, reduce="mean").data
    want = sum(tables[i].data[ids[..., i]] for i in range(8)) / 8.0
    np.testing.assert_allclose(out, want, atol=1e-7)


def test_pad_axis1_roundtrip_gradient():
    x = Tensor(rnd((2, 3, 2), 22), requires_grad=True)
    out = ops.pad_axis1(x, 1, 2)
    assert out.data.shape == (2, 6, 2)
    out.backward(np.arange(24, dtype=np.float32).reshape(2, 6, 2))
    np.testing.assert_array_equal(x.grad, np.arange(24, dtype=np.float32).reshape(2, 6, 2)[:, 1:4])


# ---------------------------------------------------------------------------
# gradient checks for every differentiable op (fast versions; the acceptance
# suite runs the full 100-probe battery)
# ---------------------------------------------------------------------------


def quick_gradchecks(n_probes):
    checks = {}
    checks["add"] = (lambda a, b: ops.softmax_cross_entropy(ops.add(a, b), np.array([1, 2])), [rnd((2, 4), 30), rnd((1, 4), 31)])
    checks["mul"] = (lambda a, b: ops.softmax_cross_entropy(ops.mul(a, b), np.array([0, 3])), [rnd((2, 4), 32), rnd((2, 4), 33)])
    checks["matmul"] = (lambda a, b: ops.softmax_cross_entropy(ops.matmul(a, b), np.array([1])), [rnd((1, 3), 34), rnd((3, 5), 35)])
    proj = rnd((4, 6), 36)
    ids2 = np.array([[0, 2], [1, 1]])
    checks["embedding"] = (
        lambda t: ops.softmax_cross_entropy(ops.reshape(ops.embedding(t, ids2), (2, 8)), np.array([3, 7])),
        [rnd((3, 4), 37)],
    )
    tbl_ids = derive_rng(38).integers(0, 3, size=(1, 4, 3))
    checks["acoustic_embed"] = (
        lambda t0, t1, t2: ops.softmax_cross_entropy(
            ops.matmul(ops.acoustic_embed([t0, t1, t2], tbl_ids), Tensor(proj[:4, :5])), np.array([[0, 1, 2, 3]])
        ),
        [rnd((3, 4), 39), rnd((3, 4), 40), rnd((3, 4), 41)],
    )
    checks["layer_norm"] = (
        lambda x, g, b: ops.softmax_cross_entropy(ops.layer_norm(x, g, b), np.array([2, 0])),
        [rnd((2, 5), 42), rnd((5,), 43) + 1.0, rnd((5,), 44)],
    )
    checks["gelu"] = (lambda x: ops.softmax_cross_entropy(ops.gelu(x), np.array([1, 4])), [rnd((2, 5), 45)])
    checks["pad_axis1"] = (
        lambda x: ops.softmax_cross_entropy(ops.reshape(ops.pad_axis1(x, 1, 1), (2, 8)), np.array([2, 3])),
        [rnd((2, 2, 2), 46)],
    )
    checks["slice_axis1"] = (
        lambda x: ops.softmax_cross_entropy(ops.reshape(ops.slice_axis1(x, 1, 3), (2, 6)), np.array([1, 5])),
        [rnd((2, 4, 3), 56)],
    )
    wxa, wha, ba = rnd((3, 12), 47, 0.5), rnd((3, 12), 48, 0.5), rnd((12,), 49, 0.1)
    checks["lstm_layer"] = (
        lambda x, wx, wh, b: ops.softmax_cross_entropy(
            ops.reshape(ops.lstm_layer(x, wx, wh, b), (4, 3)), np.array([0, 1, 2, 0])
        ),
        [rnd((1, 4, 3), 50), wxa, wha, ba],
    )
    mask = np.triu(np.full((4, 4), -1e9, dtype=np.float32), k=1)[None, None]
    checks["attention"] = (
        lambda q, k, v: ops.softmax_cross_entropy(
            ops.reshape(ops.attention(q, k, v, n_heads=2, add_mask=mask), (4, 4)), np.array([0, 1, 2, 3])
        ),
        [rnd((1, 4, 4), 51), rnd((1, 4, 4), 52), rnd((1, 4, 4), 53)],
    )
    tg = np.array([1, 0, 3])
    checks["softmax_cross_entropy"] = (lambda x: ops.softmax_cross_entropy(x, tg), [rnd((3, 4), 54)])
    wts = np.array([[0.5, 0.25, 0.25, 0.0]])
    checks["softmax_cross_entropy_weighted"] = (
        lambda x: ops.softmax_cross_entropy(x, np.array([[0, 1, 2, 0]]), weights=wts),
        [rnd((1, 4, 5), 55)],
    )
    results = {}
    for name, (f, args) in checks.items():
        results[name] = gradcheck(f, args, n_probes=n_probes)
    return results


def test_all_ops_pass_quick_gradcheck():
    for name, err in quick_gradchecks(n_probes=12).items():
        assert err < 1e-4, f"{name}: rel err {err}"


# ---------------------------------------------------------------------------
# properties
# ---------------------------------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 8), st.integers(2, 10), st.integers(0, 10**6))
def test_ce_shift_invariance_property(t, v, seed):
    rng = derive_rng(seed, "shift")
    logits = rng.standard_normal((t, v)).astype(np.float32)
    shift = rng.standard_normal((t, 1)).astype(np.float32) * 3
    tg = rng.integers(0, v, size=t)
    a = ops.softmax_cross_entropy(Tensor(logits), tg).item()
    b = ops.softmax_cross_entropy(Tensor(logits + shift), tg).item()
    assert abs(a - b) < 1e-4


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10**6))
def test_lstm_causality_property(tpert, seed):
    rng = derive_rng(seed, "caus")
    x = rng.standard_normal((1, 7, 3)).astype(np.float32)
    w = lstm_weights(3, 3, seed=seed % 97)
    base = ops.lstm_layer(Tensor(x), *w).data
    x2 = x.copy()
    x2[0, tpert] += 1.0
    pert = ops.lstm_layer(Tensor(x2), *w).data
    np.testing.assert_array_equal(base[0, :tpert], pert[0, :tpert])


def test_deterministic_init_and_forward():
    a = uniform_init((4, 4), 4, derive_rng(99, "init"))
    b = uniform_init((4, 4), 4, derive_rng(99, "init"))
    np.testing.assert_array_equal(a, b)
    x = Tensor(rnd((1, 4, 4), 60))
    w = lstm_weights(4, 4, seed=61)
    np.testing.assert_array_equal(ops.lstm_layer(x, *w).data, ops.lstm_layer(x, *w).data)
