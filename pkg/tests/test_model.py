import math

import numpy as np
import pytest
from conftest import tiny_config
from hypothesis import given, settings
from hypothesis import strategies as st

from sold import nn
from sold.errors import InvalidArgumentError
from sold.model import (ModelConfig, argmax_bases, check_gradients, decode, decoder_logits,
                        denoise_predict, denoiser_vjp, embed, encode, init_state, ldm_loss,
                        ldm_loss_and_grads, seq_to_index)
from sold.train import TrainConfig


def silu(x):
    return x / (1.0 + math.exp(-x))


def test_encode_zero_state_is_zero(tiny_state):
    z = tiny_state.zero()
    assert np.all(encode(np.ones((5, 8)), z) == 0)


def test_encode_identity_path():
    # relu is the identity on the non-negative inputs used here
    cfg = tiny_config(embed_dim=8, hidden=8, latent_dim=8, activation="relu")
    st_ = init_state(cfg, np.random.default_rng(0)).zero()
    for i in (1, 2, 3):
        st_.params[f"enc.w{i}"][...] = np.eye(8)
    h = np.abs(np.random.default_rng(1).standard_normal((4, 8)))
    np.testing.assert_allclose(encode(h, st_), h, rtol=1e-12)


def test_encode_scalar_oracle(tiny_state):
    p = tiny_state.compute_params()
    h = np.random.default_rng(2).standard_normal((2, 8))
    out = encode(h, tiny_state)
    for r in range(2):
        x = list(h[r])
        for layer in (1, 2, 3):
            w, b = p[f"enc.w{layer}"], p[f"enc.b{layer}"]
            y = [sum(x[i] * w[i, j] for i in range(len(x))) + b[j] for j in range(w.shape[1])]
            x = y if layer == 3 else [silu(v) for v in y]
        np.testing.assert_allclose(out[r], x, rtol=1e-10, atol=1e-12)


def test_decode_rows(tiny_state):
    probs = decode(np.random.default_rng(0).standard_normal((30, 8)) * 5, tiny_state)
    assert probs.shape == (30, 4)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
    np.testing.assert_allclose(nn.softmax(np.zeros((1, 4))), 0.25)
    assert argmax_bases(nn.softmax(np.array([[10.0, 0, 0, 0]])))[0] == 0


def test_argmax_tie_break_prefers_canonical_order():
    assert list(argmax_bases(np.full((3, 4), 0.25))) == [0, 0, 0]
    assert list(argmax_bases(np.array([[0.1, 0.4, 0.4, 0.1]]))) == [1]


def test_denoiser_zero_and_determinism(tiny_state):
    rng = np.random.default_rng(0)
    z, c = rng.standard_normal((6, 8)), rng.standard_normal((6, 28))
    assert np.all(denoise_predict(z, 10, c, tiny_state.zero()) == 0)
    a, b = denoise_predict(z, 10, c, tiny_state), denoise_predict(z, 10, c, tiny_state)
    assert np.array_equal(a, b)


def test_denoiser_jvp_matches_perturbation(tiny_state):
    rng = np.random.default_rng(5)
    z, c = rng.standard_normal((4, 8)), rng.standard_normal((4, 28))
    t_rows = np.full(4, 20)
    st64 = tiny_state.astype(np.float64)
    g_out = rng.standard_normal((4, 8))
    _, grads = denoiser_vjp(st64, z, t_rows, c, g_out)
    for name in ("den.w_in", "den.w_out", "den.blk1.w2"):
        idx = tuple(rng.integers(0, s) for s in st64.params[name].shape)
        d = 1e-4
        p = st64.params[name]
        orig = p[idx]
        p[idx] = orig + d
        up = float(np.sum(g_out * denoise_predict(z, t_rows, c, st64)))
        p[idx] = orig - d
        down = float(np.sum(g_out * denoise_predict(z, t_rows, c, st64)))
        p[idx] = orig
        num = (up - down) / (2 * d)
        assert abs(num - grads[name][idx]) <= 1e-3 * max(abs(num), 1e-6)


def test_ldm_loss_cases(tiny_state):
    rng = np.random.default_rng(0)
    z0 = rng.standard_normal((5, 8))
    seq = "AUCGA"
    with_ce = ldm_loss(z0, z0 + 1.0, seq, tiny_state)
    logp = nn.log_softmax(decoder_logits(z0 + 1.0, tiny_state))
    ce = -sum(logp[i, j] for i, j in enumerate(seq_to_index(seq)))
    assert with_ce == pytest.approx(5 * 8 + ce, rel=1e-12)


def test_ldm_loss_near_perfect_fit():
    cfg = tiny_config()
    st_ = init_state(cfg, np.random.default_rng(0)).zero()
    # decoder bias makes base A overwhelmingly likely regardless of z
    st_.params["dec.b3"][...] = np.array([60.0, 0, 0, 0])
    z0 = np.random.default_rng(1).standard_normal((4, 8))
    assert ldm_loss(z0, z0, "AAAA", st_) < 1e-20


def test_ldm_loss_and_grads_matches_scalar_loss(tiny_state, sched):
    rng = np.random.default_rng(4)
    seq = "GAUCCA"
    idx = seq_to_index(seq)
    c = rng.standard_normal((6, 28))
    eps = rng.standard_normal((6, 8))
    z0 = encode(embed(idx, tiny_state), tiny_state)
    loss, _ = ldm_loss_and_grads(tiny_state, idx, np.full(6, 33), c, eps, sched, z0=z0)
    ab = sched.bar_alpha[33]
    z_t = math.sqrt(ab) * z0 + math.sqrt(1 - ab) * eps
    zhat = denoise_predict(z_t, 33, c, tiny_state)
    assert loss == pytest.approx(ldm_loss(z0, zhat, seq, tiny_state), rel=1e-10)


def test_gradient_check_zero_model(sched):
    st_ = init_state(tiny_config(), np.random.default_rng(0)).zero()
    rng = np.random.default_rng(0)
    c = rng.standard_normal((5, 28))
    err = check_gradients(st_, (rng.standard_normal((5, 8)), 40, c, "ACGUA"), sched, rng=rng)
    assert err < 1e-6


@pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-3), (np.float64, 1e-6)])
def test_gradient_check_random_model(sched, dtype, tol):
    rng = np.random.default_rng(11)
    st_ = init_state(tiny_config(), rng, dtype=dtype)
    c = rng.standard_normal((6, 28))
    assert check_gradients(st_, (None, 57, c, "GGCAUA"), sched, rng=rng) <= tol


def test_gradient_check_detects_corruption(tiny_state, sched):
    rng = np.random.default_rng(3)
    c = rng.standard_normal((5, 28))
    err = check_gradients(tiny_state, (None, 20, c, "CUAGG"), sched, rng=rng,
                          corrupt=("den.w_out", (0, 0)))
    assert err > 0.3


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=15, deadline=None)
def test_decode_always_normalized(seed):
    rng = np.random.default_rng(seed)
    state = init_state(tiny_config(), rng)
    probs = decode(rng.standard_normal((7, 8)) * 10, state)
    assert np.all(np.abs(probs.sum(axis=1) - 1) <= 1e-6)


def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        TrainConfig(batch_size=0).validate()
    with pytest.raises(InvalidArgumentError):
        ModelConfig(latent_dim=0).validate()
    with pytest.raises(InvalidArgumentError):
        denoise_predict(np.zeros((3, 5)), 1, np.zeros((3, 28)), init_state(tiny_config(), np.random.default_rng(0)))
