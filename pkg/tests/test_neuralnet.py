import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from seq2gmm import autograd as ag
from seq2gmm import neuralnet as nn
from seq2gmm.autograd import Tensor
from seq2gmm.errors import NumericalError

from gradcheck import TOL, numeric_grad, rel_error


def _scaled(params, scale, rng):
    # larger random weights than the default init so every gradient is well above noise
    return {k: rng.uniform(-scale, scale, size=v.shape) for k, v in params.items()}


def _wrap(params):
    return {k: Tensor(v.copy(), requires_grad=True) for k, v in params.items()}


def _assert_grads(loss_fn, params):
    wrapped = _wrap(params)
    loss_fn(wrapped).backward()
    for name in params:
        numeric = numeric_grad(lambda p: float(loss_fn({k: Tensor(v) for k, v in p.items()}).data), params, name)
        err = rel_error(wrapped[name].grad, numeric)
        assert err < TOL, f"{name}: relative error {err:.2e}"


# ---------------------------------------------------------------- encoder


def test_encoder_zero_weights_fixed_point():
    enc = {k: np.zeros_like(v) for k, v in nn.init_encoder(5, np.random.default_rng(0)).items()}
    h_c, s_o = nn.encode(np.array([1.0, -2.0, 3.0, 0.5]), enc)
    np.testing.assert_array_equal(h_c, np.zeros(5))
    assert s_o.shape == (4, 5)


@given(st.integers(1, 12), st.integers(1, 8))
def test_encoder_shapes(L, H):
    enc = nn.init_encoder(H, np.random.default_rng(L))
    h_c, s_o = nn.encode(np.sin(np.arange(L, dtype=float)), enc)
    assert h_c.shape == (H,)
    assert s_o.shape == (L, H)
    np.testing.assert_array_equal(s_o[-1], h_c)


def test_encoder_rejects_non_finite():
    with pytest.raises(NumericalError):
        nn.encode(np.array([1.0, np.nan]), nn.init_encoder(3, np.random.default_rng(0)))


@pytest.mark.parametrize("H,L", [(3, 5), (8, 12), (1, 1)])
def test_encoder_finite_difference(H, L):
    rng = np.random.default_rng(H * 100 + L)
    params = _scaled(nn.init_encoder(H, rng), 0.6, rng)
    seg = rng.normal(size=(2, L))
    mask = np.ones((2, L))

    def loss(p):
        h_c, _ = nn.encode_batch(seg, mask, p)
        return ag.sum(ag.square(h_c))

    _assert_grads(loss, params)


def test_encoder_finite_difference_with_padding():
    rng = np.random.default_rng(7)
    params = _scaled(nn.init_encoder(4, rng), 0.6, rng)
    values, mask, _ = nn.pad_segments([rng.normal(size=9), rng.normal(size=4), rng.normal(size=6)])

    def loss(p):
        h_c, s_o = nn.encode_batch(values, mask, p)
        return ag.sum(ag.square(h_c)) + ag.sum(s_o) * 0.1

    _assert_grads(loss, params)


def test_padding_does_not_change_results():
    rng = np.random.default_rng(8)
    net = nn.Network.initialize(4, 5, 3, seed=2)
    segs = [rng.normal(size=n) for n in (9, 4, 6)]
    y_batch, err_batch = nn.latent_batch(segs, net)
    for i, s in enumerate(segs):
        rep = nn.latent_representation(s, net.enc, net.dec)
        np.testing.assert_allclose(rep.y, y_batch[i], atol=1e-12)
        np.testing.assert_allclose(np.sum((rep.reconstruction - s) ** 2), err_batch[i], atol=1e-12)


# ---------------------------------------------------------------- decoder


@pytest.mark.parametrize("H,L", [(3, 5), (8, 12), (2, 1)])
def test_decoder_finite_difference_all_blocks(H, L):
    rng = np.random.default_rng(H * 10 + L)
    enc = nn.init_encoder(H, rng)
    dec = _scaled(nn.init_decoder(H, rng), 0.5, rng)
    values, mask, _ = nn.pad_segments([rng.normal(size=L), rng.normal(size=max(1, L - 1))])
    h_c, s_o = nn.encode_batch(values, mask, {k: Tensor(v) for k, v in enc.items()})

    def loss(p):
        recon, _ = nn.decode_batch(h_c, s_o, mask, p, values.shape[1])
        return ag.sum(ag.square(recon))

    _assert_grads(loss, dec)


def test_decoder_output_length_and_attention():
    rng = np.random.default_rng(0)
    enc, dec = nn.init_encoder(4, rng), nn.init_decoder(4, rng)
    h_c, s_o = nn.encode(rng.normal(size=6), enc)
    out, attn = nn.decode_attentive(h_c, s_o, dec, 9, return_attention=True)
    assert out.shape == (9,)
    assert attn.shape == (9, 6)
    assert np.all(attn >= 0)
    np.testing.assert_allclose(attn.sum(axis=1), 1.0, atol=1e-9)


def test_decoder_rejects_zero_length():
    rng = np.random.default_rng(0)
    enc, dec = nn.init_encoder(4, rng), nn.init_decoder(4, rng)
    h_c, s_o = nn.encode(rng.normal(size=6), enc)
    with pytest.raises(ValueError):
        nn.decode_attentive(h_c, s_o, dec, 0)


# ---------------------------------------------------------------- reconstruction features


def test_reconstruction_features_examples():
    s = np.array([1.0, -2.0, 3.0])
    np.testing.assert_allclose(nn.reconstruction_features(s, s), [0.0, 1.0])
    assert nn.reconstruction_features(s, -s)[1] == pytest.approx(-1.0)
    assert nn.reconstruction_features(s, np.zeros(3))[1] == 0.0
    eu = nn.reconstruction_features(s, np.zeros(3))[0]
    assert eu == pytest.approx(np.linalg.norm(s) / np.sqrt(3))
    with pytest.raises(ValueError):
        nn.reconstruction_features(s, s[:2])


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=20), st.data())
def test_reconstruction_features_ranges(s, data):
    r = data.draw(st.lists(st.floats(-10, 10), min_size=len(s), max_size=len(s)))
    eu, cos = nn.reconstruction_features(s, r)
    assert eu >= 0
    assert -1.0 <= cos <= 1.0


def test_batch_features_match_single():
    rng = np.random.default_rng(5)
    s = rng.normal(size=7)
    r = rng.normal(size=7)
    values, mask, lengths = nn.pad_segments([s, rng.normal(size=3)])
    recon = np.zeros_like(values)
    recon[0] = r
    z_r, sq = nn.recon_features_batch(values, Tensor(recon), mask, lengths)
    np.testing.assert_allclose(z_r.data[0], nn.reconstruction_features(s, r), atol=1e-12)
    assert sq.data[0] == pytest.approx(np.sum((s - r) ** 2))


# ---------------------------------------------------------------- latent and estimator


def test_latent_representation_dim_and_determinism():
    net = nn.Network.initialize(6, 5, 3, seed=4)
    seg = np.cos(np.arange(11.0))
    a = nn.latent_representation(seg, net.enc, net.dec)
    b = nn.latent_representation(seg, net.enc, net.dec)
    assert a.y.shape == (8,)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.y[-2:], a.z_r)


def test_estimator_zero_weights_uniform():
    est = {k: np.zeros_like(v) for k, v in nn.init_estimator(6, 4, 5, np.random.default_rng(0)).items()}
    np.testing.assert_allclose(nn.estimate_membership(np.arange(6.0), est), np.full(5, 0.2))


@given(st.lists(st.floats(-50, 50), min_size=5, max_size=5), st.integers(1, 6), st.integers(0, 999))
def test_estimator_outputs_distribution(y, K, seed):
    est = _scaled(nn.init_estimator(5, 4, K, np.random.default_rng(seed)), 2.0, np.random.default_rng(seed))
    g = nn.estimate_membership(np.array(y), est)
    assert np.all(g >= 0)
    assert abs(g.sum() - 1.0) < 1e-9


def test_estimator_finite_difference():
    rng = np.random.default_rng(9)
    est = _scaled(nn.init_estimator(6, 5, 3, rng), 0.8, rng)
    y = Tensor(rng.normal(size=(4, 6)))
    target = rng.normal(size=(4, 3))

    def loss(p):
        return ag.sum(nn.estimate_batch(y, p) * target)

    _assert_grads(loss, est)


def test_full_forward_gradient_reaches_every_block():
    rng = np.random.default_rng(10)
    net = nn.Network.initialize(3, 4, 2, seed=1)
    segs = [rng.normal(size=5), rng.normal(size=3)]
    flat = {f"{b}.{k}": rng.uniform(-0.5, 0.5, size=v.shape) for b, block in net.blocks().items()
            for k, v in block.items()}

    def loss(p):
        blocks = {b: {k.split(".", 1)[1]: t for k, t in p.items() if k.startswith(b + ".")} for b in ("enc", "dec", "est")}
        fw = nn.forward(segs, blocks["enc"], blocks["dec"], blocks["est"])
        return ag.sum(fw.sq_error) + ag.sum(ag.square(fw.y)) + ag.sum(fw.gamma * np.array([1.0, -2.0]))

    _assert_grads(loss, flat)


# ---------------------------------------------------------------- initialisation and SGD


def test_initialization_reproducible_and_in_range():
    a = nn.Network.initialize(8, 10, 5, seed=11)
    b = nn.Network.initialize(8, 10, 5, seed=11)
    for block in ("enc", "dec", "est"):
        for k, v in getattr(a, block).items():
            np.testing.assert_array_equal(v, getattr(b, block)[k])
            if k.startswith("b_"):
                assert np.all(v == 0)
            else:
                assert np.all(np.abs(v) <= nn.INIT_SCALE)


def test_encoder_decoder_init_independent_of_K():
    a = nn.Network.initialize(4, 5, 2, seed=3)
    b = nn.Network.initialize(4, 5, 10, seed=3)
    for block in ("enc", "dec"):
        for k in getattr(a, block):
            np.testing.assert_array_equal(getattr(a, block)[k], getattr(b, block)[k])


def test_sgd_step_examples():
    p = {"w": np.array([1.0])}
    np.testing.assert_allclose(nn.sgd_step(p, {"w": np.array([2.0])}, 0.1)["w"], [0.8])
    np.testing.assert_array_equal(nn.sgd_step(p, {"w": np.zeros(1)}, 0.1)["w"], [1.0])


def test_sgd_step_errors():
    p = {"w": np.ones(2)}
    with pytest.raises(NumericalError, match="enc.w"):
        nn.sgd_step(p, {"w": np.array([1.0, np.inf])}, 0.1, block="enc")
    with pytest.raises(ValueError):
        nn.sgd_step(p, {"w": np.ones(3)}, 0.1)


def test_sgd_quadratic_matches_closed_form():
    # f(p) = 0.5 * a * (p - c)^2 ; descent iterates: p_t - c = (p_0 - c) * prod(1 - eta_s * a)
    a, c, p0, eta0, decay = 1.5, 2.0, -3.0, 0.2, 0.3
    p = {"w": np.array([p0])}
    expected = p0 - c
    for t in range(12):
        lr = nn.learning_rate(eta0, decay, t)
        p = nn.sgd_step(p, {"w": a * (p["w"] - c)}, lr)
        expected *= 1.0 - lr * a
        assert p["w"][0] - c == pytest.approx(expected, rel=1e-12)


def test_learning_rate_schedule():
    assert nn.learning_rate(0.01, 0.0, 100) == 0.01
    assert nn.learning_rate(0.01, 0.01, 100) == pytest.approx(0.005)


def test_clip_gradients():
    g = {"a": {"x": np.array([3.0])}, "b": {"y": np.array([4.0])}}
    out = nn.clip_gradients(g, 1.0)
    np.testing.assert_allclose([out["a"]["x"][0], out["b"]["y"][0]], [0.6, 0.8])
    assert nn.clip_gradients(g, 10.0) is g
    with pytest.raises(NumericalError):
        nn.clip_gradients({"a": {"x": np.array([np.nan])}}, 1.0)
