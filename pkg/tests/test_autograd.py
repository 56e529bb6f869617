import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from seq2gmm import autograd as ag
from seq2gmm.autograd import Tensor

from gradcheck import TOL, numeric_grad, rel_error


def _check_unary(op, x):
    params = {"x": x.copy()}

    def f(p):
        return float(np.sum(op(Tensor(p["x"])).data * weights))

    weights = np.random.default_rng(0).normal(size=op(Tensor(x)).shape)
    t = Tensor(x.copy(), requires_grad=True)
    (ag.sum(op(t) * weights)).backward()
    assert rel_error(t.grad, numeric_grad(f, params, "x")) < TOL


@pytest.mark.parametrize("op", [
    ag.tanh, ag.sigmoid, ag.exp, ag.square,
    lambda t: ag.log(t * t + 1.0),
    lambda t: ag.sum(t, axis=1),
    lambda t: ag.mean(t, axis=0, keepdims=True),
    lambda t: ag.reshape(t, (-1,)),
    lambda t: ag.getitem(t, (slice(None), 1)),
    lambda t: ag.masked_softmax(t, axis=1),
    lambda t: ag.masked_softmax(t, np.array([[1, 1, 0]] * 4), axis=1),
    lambda t: ag.logsumexp(t, axis=1),
    lambda t: ag.norm(t, axis=1),
    lambda t: ag.concat([t, t * 2.0], axis=1),
    lambda t: ag.stack([t, -t], axis=0),
    lambda t: t / (t * t + 2.0),
    lambda t: t @ np.arange(6.0).reshape(3, 2),
])
def test_primitive_gradients(op):
    _check_unary(op, np.random.default_rng(1).normal(size=(4, 3)))


def test_cosine_gradient():
    rng = np.random.default_rng(2)
    a0, b0 = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
    a, b = Tensor(a0.copy(), requires_grad=True), Tensor(b0.copy(), requires_grad=True)
    ag.sum(ag.cosine(a, b, axis=1)).backward()
    params = {"a": a0.copy(), "b": b0.copy()}

    def f(p):
        return float(ag.cosine(Tensor(p["a"]), Tensor(p["b"]), axis=1).data.sum())

    assert rel_error(a.grad, numeric_grad(f, params, "a")) < TOL
    assert rel_error(b.grad, numeric_grad(f, params, "b")) < TOL


def test_cosine_of_zero_vector_is_zero():
    out = ag.cosine(Tensor(np.zeros((1, 3))), Tensor(np.ones((1, 3))), axis=1)
    assert out.data[0] == 0.0


def test_broadcast_gradients_reduce_to_shape():
    a = Tensor(np.ones((4, 3)), requires_grad=True)
    b = Tensor(np.ones(3), requires_grad=True)
    ag.sum(a * b + b).backward()
    assert b.grad.shape == (3,)
    np.testing.assert_allclose(b.grad, [8, 8, 8])


def test_gradient_accumulates_over_reuse():
    x = Tensor(np.array([3.0]), requires_grad=True)
    ag.sum(x * x + x * 2.0).backward()
    np.testing.assert_allclose(x.grad, [8.0])


# ---------------------------------------------------------------- fused kernels


def _gru_weights(rng, n_in, H):
    W = tuple(Tensor(rng.normal(scale=0.5, size=(n_in, H)), requires_grad=True) for _ in range(3))
    U = tuple(Tensor(rng.normal(scale=0.5, size=(H, H)), requires_grad=True) for _ in range(3))
    b = tuple(Tensor(rng.normal(scale=0.1, size=H), requires_grad=True) for _ in range(3))
    return W, U, b


def _reference_gru(x, mask, W, U, b):
    B, L, _ = x.shape
    h = Tensor(np.zeros((B, U[0].shape[0])))
    states = []
    for t in range(L):
        h = ag.gru_cell(Tensor(x[:, t]), h, W, U, b, None if mask is None else mask[:, t : t + 1])
        states.append(h)
    return ag.stack(states, axis=1)


def _grads(ts):
    return [t.grad.copy() for t in ts]


def _zero(ts):
    for t in ts:
        t.grad = None


@pytest.mark.parametrize("masked", [False, True])
def test_gru_sequence_matches_per_step_reference(masked):
    rng = np.random.default_rng(3)
    B, L, H = 3, 7, 4
    x = rng.normal(size=(B, L, 1))
    mask = None
    if masked:
        mask = np.ones((B, L))
        mask[1, 5:] = 0
        mask[2, 2:] = 0
    W, U, b = _gru_weights(rng, 1, H)
    params = [*W, *U, *b]
    G = rng.normal(size=(B, L, H))
    fused = ag.gru_sequence(x, mask, W, U, b)
    ag.sum(fused * G).backward()
    g_fused = _grads(params)
    _zero(params)
    ref = _reference_gru(x, mask, W, U, b)
    ag.sum(ref * G).backward()
    np.testing.assert_allclose(fused.data, ref.data, rtol=0, atol=1e-12)
    for a, r in zip(g_fused, _grads(params)):
        np.testing.assert_allclose(a, r, rtol=1e-10, atol=1e-12)
    if masked:
        # padded steps carry the state forward
        np.testing.assert_array_equal(fused.data[2, -1], fused.data[2, 1])


def _reference_decode(h0, memory, mask, W_k, W_q, v, W, U, b, W_o, b_o, steps):
    keys = memory @ W_k
    d = h0
    prev = Tensor(np.zeros((h0.shape[0], 1)))
    outs, alphas = [], []
    for _ in range(steps):
        ctx, alpha = ag.additive_attention(d, keys, memory, W_q, v, mask)
        d = ag.gru_cell(ag.concat([prev, ctx], axis=1), d, W, U, b)
        out = ag.concat([d, ctx], axis=1) @ W_o + b_o
        outs.append(out)
        alphas.append(alpha)
        prev = out
    return ag.concat(outs, axis=1), np.stack(alphas, axis=1)


@pytest.mark.parametrize("masked", [False, True])
def test_attentive_decode_matches_per_step_reference(masked):
    rng = np.random.default_rng(4)
    B, L, H, A, steps = 3, 6, 4, 5, 6
    mask = None
    if masked:
        mask = np.ones((B, L))
        mask[0, 4:] = 0
    h0 = Tensor(rng.normal(size=(B, H)), requires_grad=True)
    memory = Tensor(rng.normal(size=(B, L, H)), requires_grad=True)
    W_k = Tensor(rng.normal(scale=0.5, size=(H, A)), requires_grad=True)
    W_q = Tensor(rng.normal(scale=0.5, size=(H, A)), requires_grad=True)
    v = Tensor(rng.normal(scale=0.5, size=(A, 1)), requires_grad=True)
    W, U, b = _gru_weights(rng, 1 + H, H)
    W_o = Tensor(rng.normal(scale=0.5, size=(2 * H, 1)), requires_grad=True)
    b_o = Tensor(rng.normal(scale=0.1, size=1), requires_grad=True)
    params = [h0, memory, W_k, W_q, v, *W, *U, *b, W_o, b_o]
    G = rng.normal(size=(B, steps))

    out, alpha = ag.attentive_decode(h0, memory, mask, W_k, W_q, v, W, U, b, W_o, b_o, steps)
    ag.sum(out * G).backward()
    g_fused = _grads(params)
    _zero(params)
    ref, ref_alpha = _reference_decode(h0, memory, mask, W_k, W_q, v, W, U, b, W_o, b_o, steps)
    ag.sum(ref * G).backward()
    np.testing.assert_allclose(out.data, ref.data, rtol=0, atol=1e-12)
    np.testing.assert_allclose(alpha, ref_alpha, rtol=0, atol=1e-12)
    for a, r in zip(g_fused, _grads(params)):
        np.testing.assert_allclose(a, r, rtol=1e-9, atol=1e-12)
    if masked:
        assert np.all(alpha[0, :, 4:] == 0)


@given(st.integers(1, 3), st.integers(1, 8), st.integers(1, 5), st.integers(0, 10_000))
def test_attention_weights_are_distributions(B, L, H, seed):
    rng = np.random.default_rng(seed)
    W, U, b = _gru_weights(rng, 1 + H, H)
    _, alpha = ag.attentive_decode(
        Tensor(rng.normal(size=(B, H))), Tensor(rng.normal(size=(B, L, H))), None,
        Tensor(rng.normal(size=(H, H))), Tensor(rng.normal(size=(H, H))), Tensor(rng.normal(size=(H, 1))),
        W, U, b, Tensor(rng.normal(size=(2 * H, 1))), Tensor(np.zeros(1)), L)
    assert np.all(alpha >= 0)
    np.testing.assert_allclose(alpha.sum(axis=2), 1.0, atol=1e-9)
