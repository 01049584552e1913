import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coarsegrain import nn
from coarsegrain.errors import ConfigError, DimensionMismatchError, DivergenceError, TruncatedPayloadError

import oracles


def test_shapes_and_symmetry():
    enc, dec = nn.autoencoder_specs(4, 1, hidden=(3, 2))
    assert [w for w, _ in enc.shapes] == [(3, 4), (2, 3), (1, 2)]
    assert dec.layer_dims == (1, 2, 3, 4)
    p = nn.init_params(enc, dec, seed=0)
    assert [W.shape for W, _ in p.encoder] == [(3, 4), (2, 3), (1, 2)]
    assert p.flat.size == enc.n_params + dec.n_params


def test_invalid_specs():
    with pytest.raises(ConfigError):
        nn.MlpSpec((5,))
    with pytest.raises(ConfigError):
        nn.MlpSpec((5, 0, 1))
    with pytest.raises(ConfigError):
        nn.MlpSpec((5, 1), activation="relu6")
    enc = nn.MlpSpec((4, 3, 1))
    with pytest.raises(ConfigError):
        nn.init_params(enc, nn.MlpSpec((2, 3, 4)), seed=0)


def test_init_deterministic_and_biases_zero():
    enc, dec = nn.autoencoder_specs(16, 1, hidden=(8, 4))
    a = nn.init_params(enc, dec, seed=5)
    b = nn.init_params(enc, dec, seed=5)
    c = nn.init_params(enc, dec, seed=6)
    assert np.array_equal(a.flat, b.flat) and not np.array_equal(a.flat, c.flat)
    assert all(np.all(bias == 0.0) for _, bias in a.encoder + a.decoder)


def test_glorot_variance():
    enc = nn.MlpSpec((400, 250, 1))
    p = nn.init_params(enc, enc.reversed(), seed=1)
    W = p.encoder[0][0]
    assert W.size == 100_000
    limit = math.sqrt(6.0 / 650)
    assert np.all(np.abs(W) <= limit)
    expected = (2 * limit) ** 2 / 12
    assert abs(W.var() / expected - 1.0) < 0.05


def test_zero_params_encode_to_zero():
    enc, dec = nn.autoencoder_specs(6, 2, hidden=(5, 3))
    p = nn.AutoencoderParams(enc, dec, np.zeros(enc.n_params + dec.n_params))
    y = np.random.default_rng(0).normal(size=(7, 6))
    assert np.all(nn.encode(p, y) == 0.0)
    assert nn.decode(p, nn.encode(p, y[0])).shape == (6,)


def test_unit_chain():
    spec = nn.MlpSpec((1, 1, 1, 1))
    p = nn.AutoencoderParams(spec, spec, np.zeros(2 * spec.n_params))
    for W, _ in p.encoder:
        W[...] = 1.0
    # tanh after the two hidden layers, linear output
    assert nn.encode(p, np.array([0.5]))[0] == math.tanh(math.tanh(0.5))
    assert nn.encode(p, np.array([0.5]))[0] == pytest.approx(0.4318082, abs=1e-7)


def test_forward_matches_oracle():
    enc, dec = nn.autoencoder_specs(16, 1, hidden=(8, 4))
    p = nn.init_params(enc, dec, seed=3)
    Y = np.random.default_rng(3).uniform(size=(5, 16))
    enc_ld, dec_ld = oracles.split_layers(p.flat, enc.layer_dims, dec.layer_dims)
    X_ref = oracles.mlp(enc_ld, Y.astype(np.longdouble))
    assert np.allclose(nn.encode(p, Y), X_ref.astype(float), rtol=1e-13, atol=1e-15)
    R_ref = oracles.mlp(dec_ld, X_ref)
    assert np.allclose(nn.decode(p, nn.encode(p, Y)), R_ref.astype(float), rtol=1e-12, atol=1e-14)


def test_dimension_mismatch():
    enc, dec = nn.autoencoder_specs(6, 1, hidden=(4, 3))
    p = nn.init_params(enc, dec, 0)
    with pytest.raises(DimensionMismatchError):
        nn.encode(p, np.zeros(5))
    with pytest.raises(DimensionMismatchError):
        nn.decode(p, np.zeros(2))
    with pytest.raises(DimensionMismatchError):
        nn.AutoencoderParams(enc, dec, np.zeros(3))


def test_probe_gradient_at_zero():
    enc, dec = nn.autoencoder_specs(5, 1, hidden=(4, 3))
    p = nn.AutoencoderParams(enc, dec, np.zeros(enc.n_params + dec.n_params))
    y = np.array([0.3, -1.0, 2.0, 0.0, 0.5])
    loss, grad = nn.reconstruction_loss(p, y)
    assert loss == pytest.approx(np.sum(y * y))
    assert np.array_equal(grad.decoder[-1][1], -2.0 * y)
    # every other gradient vanishes at the all-zero point
    assert np.count_nonzero(grad.flat) == np.count_nonzero(y)


def test_reconstruction_gradient_against_longdouble_fd():
    enc, dec = nn.autoencoder_specs(6, 1, hidden=(4, 3))
    p = nn.init_params(enc, dec, seed=2)
    Y = np.random.default_rng(2).uniform(size=(4, 6))

    def f(theta):
        e, d = oracles.split_layers(theta, enc.layer_dims, dec.layer_dims)
        r = oracles.mlp(d, oracles.mlp(e, Y.astype(np.longdouble))) - Y
        return (r * r).sum()

    _, grad = nn.reconstruction_loss(p, Y)
    ref = oracles.central_gradient(f, p.flat)
    rel, n = oracles.relative_errors(grad.flat, ref)
    assert n > 0 and rel.max() < 1e-5


def test_non_finite_gradient_names_layer():
    enc, dec = nn.autoencoder_specs(3, 1, hidden=(2, 2))
    p = nn.init_params(enc, dec, 0)
    out, acts = nn.mlp_forward(p.decoder, dec, np.zeros((1, 1)))
    with pytest.raises(DivergenceError, match="layer 3") as info:
        nn.mlp_backward(p.decoder, dec, acts, np.full_like(out, np.nan))
    assert info.value.layer == 3


def _small():
    enc, dec = nn.autoencoder_specs(4, 1, hidden=(3, 2))
    return nn.init_params(enc, dec, seed=0)


def test_adam_zero_gradient_keeps_params():
    p = _small()
    state = nn.AdamState.fresh(p)
    q, s = nn.adam_step(p, np.zeros_like(p.flat), state)
    assert np.array_equal(q.flat, p.flat) and s.step == 1


@given(st.floats(1e-3, 1e3), st.sampled_from([-1.0, 1.0]))
def test_adam_first_step_closed_form(g, sign):
    p = _small()
    state = nn.AdamState.fresh(p, lr=1e-3)
    grads = np.full_like(p.flat, sign * g)
    q, _ = nn.adam_step(p, grads, state)
    expected = 1e-3 * g / (g + 1e-8)
    assert np.allclose(p.flat - q.flat, sign * expected, rtol=1e-9, atol=0)
    assert np.allclose(np.abs(p.flat - q.flat), 1e-3, rtol=1e-5)


def test_adam_deterministic_and_shape_checked():
    p = _small()
    g = np.random.default_rng(0).normal(size=p.flat.size)
    s = nn.AdamState.fresh(p)
    a = nn.adam_step(p, g, s)
    b = nn.adam_step(p, g, s)
    assert np.array_equal(a[0].flat, b[0].flat) and np.array_equal(a[1].v, b[1].v)
    with pytest.raises(DimensionMismatchError):
        nn.adam_step(p, g[:-1], s)


def test_checkpoint_round_trip(tmp_path):
    p = _small()
    head, payload = nn.save_checkpoint(p, tmp_path / "ck", seed=3, step=17, extra={"dataset_hash": "abc"})
    q, header = nn.load_checkpoint(head)
    assert np.array_equal(q.flat, p.flat)
    assert q.enc_spec == p.enc_spec and q.dec_spec == p.dec_spec
    assert header["seed"] == 3 and header["step"] == 17 and header["dataset_hash"] == "abc"
    nn.save_checkpoint(q, tmp_path / "ck2", seed=3, step=17, extra={"dataset_hash": "abc"})
    assert (tmp_path / "ck.bin").read_bytes() == (tmp_path / "ck2.bin").read_bytes()
    a = (tmp_path / "ck.json").read_text().replace("ck.bin", "ck2.bin")
    assert a == (tmp_path / "ck2.json").read_text()


def test_checkpoint_truncated(tmp_path):
    p = _small()
    _, payload = nn.save_checkpoint(p, tmp_path / "ck")
    data = open(payload, "rb").read()
    open(payload, "wb").write(data[:-1])
    with pytest.raises(TruncatedPayloadError):
        nn.load_checkpoint(tmp_path / "ck.json")
