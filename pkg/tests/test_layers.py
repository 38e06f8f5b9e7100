"""Layers: LSTM against naive references, dropout, Adam, init, checkpoints."""

import numpy as np
import pytest

from fathom import tensor as tt
from fathom.errors import CheckpointError, NumericError, ShapeError
from fathom.layers import (
    Adam,
    DenseLayer,
    LstmLayer,
    dropout_mask,
    glorot_uniform,
    load_params,
    orthogonal,
    restore_params,
    save_params,
)
from fathom.tensor import Tensor

from helpers import assert_grads_close, fd_grad, naive_lstm_sequence


def make_lstm(input_size, hidden, seed=0, **kw):
    return LstmLayer.create(input_size, hidden, np.random.default_rng(seed), **kw)


def sig(v):
    return 1.0 / (1.0 + np.exp(-v))


# ---------------------------------------------------------------------------
# LSTM forward


def test_lstm_zero_network_outputs_zero():
    layer = make_lstm(3, 4)
    for _, p in layer.params("l"):
        p.data[:] = 0.0
    out = layer.forward(Tensor(np.random.default_rng(1).standard_normal((2, 5, 3))))
    np.testing.assert_array_equal(out.data, np.zeros((2, 5, 4)))


def test_lstm_scalar_closed_form():
    # T=1, batch=1, hidden=1, zero weights: h1 = sig(b_o) * tanh(sig(b_i) * tanh(b_g))
    layer = make_lstm(1, 1)
    for _, p in layer.params("l"):
        p.data[:] = 0.0
    b_i, b_o, b_g = 0.3, -0.7, 1.1
    layer.b["i"].data[:] = b_i
    layer.b["o"].data[:] = b_o
    layer.b["g"].data[:] = b_g
    out = layer.forward(Tensor(np.zeros((1, 1, 1))))
    expect = sig(b_o) * np.tanh(sig(b_i) * np.tanh(b_g))
    np.testing.assert_allclose(out.item(), expect, atol=1e-15)


def test_lstm_matches_naive_per_step_loop():
    layer = make_lstm(4, 6, seed=3)
    rng = np.random.default_rng(5)
    x = rng.standard_normal((3, 5, 4))
    out = layer.forward(Tensor(x)).data

    params = {f"{kind}_{g}": getattr(layer, kind)[g].data
              for kind in ("w", "u", "b") for g in "ifog"}
    for n in range(3):
        ref = naive_lstm_sequence(x[n], params)
        # batched BLAS kernels differ from unbatched ones in the last ulps,
        # so exact bit equality is unattainable; 1e-13 is far below any
        # formula-level discrepancy
        assert np.max(np.abs(out[n] - ref)) <= 1e-13


def test_lstm_rejects_bad_input_rank():
    layer = make_lstm(3, 2)
    with pytest.raises(ShapeError):
        layer.forward(Tensor(np.zeros((2, 3))))
    with pytest.raises(ShapeError):
        layer.forward(Tensor(np.zeros((2, 4, 5))))


def test_lstm_eval_is_deterministic_even_with_rates():
    layer = make_lstm(3, 4, dropout_rate=0.25, recurrent_dropout_rate=0.25)
    x = Tensor(np.random.default_rng(2).standard_normal((2, 6, 3)))
    a = layer.forward(x, mode="eval").data
    b = layer.forward(x, mode="eval").data
    assert a.tobytes() == b.tobytes()


def test_lstm_train_mode_matches_naive_loop_with_same_masks():
    # one input mask and one recurrent mask per sequence, fixed across steps
    layer = make_lstm(4, 3, seed=9, dropout_rate=0.3, recurrent_dropout_rate=0.4)
    rng = np.random.default_rng(77)
    x = np.random.default_rng(8).standard_normal((2, 5, 4))
    out = layer.forward(Tensor(x), mode="train", rng=rng).data

    mask_rng = np.random.default_rng(77)
    m_x = dropout_mask(mask_rng, (2, 4), 0.3)
    m_h = dropout_mask(mask_rng, (2, 3), 0.4)
    params = {f"{kind}_{g}": getattr(layer, kind)[g].data
              for kind in ("w", "u", "b") for g in "ifog"}
    for n in range(2):
        h = np.zeros(3)
        c = np.zeros(3)
        for t in range(5):
            xt = x[n, t] * m_x[n]
            hm = h * m_h[n]
            i = sig(xt @ params["w_i"] + hm @ params["u_i"] + params["b_i"])
            f = sig(xt @ params["w_f"] + hm @ params["u_f"] + params["b_f"])
            o = sig(xt @ params["w_o"] + hm @ params["u_o"] + params["b_o"])
            g = np.tanh(xt @ params["w_g"] + hm @ params["u_g"] + params["b_g"])
            c = f * c + i * g
            h = o * np.tanh(c)
            assert np.max(np.abs(out[n, t] - h)) <= 1e-13


def test_lstm_gradients_match_finite_differences():
    layer = make_lstm(3, 2, seed=11)
    rng = np.random.default_rng(4)
    x = Tensor(rng.standard_normal((2, 3, 3)), requires_grad=True)
    probe = rng.standard_normal((2, 3, 2))

    def loss_value():
        return float((layer.forward(x).data * probe).sum())

    with tt.Tape():
        out = layer.forward(x)
        tt.backward(tt.sum_all(tt.ewmul(out, Tensor(probe))))

    for name, p in [("x", x)] + layer.params("lstm"):
        numeric = fd_grad(loss_value, p.data)
        assert_grads_close(p.grad, numeric, label=name)


# ---------------------------------------------------------------------------
# dropout


def test_dropout_mask_is_unbiased_within_two_percent():
    rng = np.random.default_rng(123)
    x = np.linspace(-2.0, 2.0, 8)
    acc = np.zeros_like(x)
    n = 10_000
    for _ in range(n):
        acc += dropout_mask(rng, x.shape, 0.25) * x
    np.testing.assert_allclose(acc / n, x, atol=0.02 * np.abs(x).max())


def test_dropout_rate_zero_keeps_everything():
    m = dropout_mask(np.random.default_rng(0), (100,), 0.0)
    np.testing.assert_array_equal(m, np.ones(100))


# ---------------------------------------------------------------------------
# initialization


def test_init_is_a_pure_function_of_seed():
    a = make_lstm(5, 7, seed=42)
    b = make_lstm(5, 7, seed=42)
    for (na, pa), (_, pb) in zip(a.params("l"), b.params("l")):
        assert pa.data.tobytes() == pb.data.tobytes(), na


def test_forget_gate_bias_is_ones_others_zero():
    layer = make_lstm(3, 6)
    np.testing.assert_array_equal(layer.b["f"].data, np.ones(6))
    for g in "iog":
        np.testing.assert_array_equal(layer.b[g].data, np.zeros(6))


def test_recurrent_weights_are_orthogonal():
    q = orthogonal(np.random.default_rng(1), 16)
    np.testing.assert_allclose(q.T @ q, np.eye(16), atol=1e-12)


def test_glorot_sample_mean_within_three_sigma():
    n = 10_000
    draws = glorot_uniform(np.random.default_rng(7), 100, 100, (n,))
    limit = np.sqrt(6.0 / 200)
    sigma_mean = limit / np.sqrt(3.0) / np.sqrt(n)
    assert abs(draws.mean()) <= 3.0 * sigma_mean


# ---------------------------------------------------------------------------
# dense layer


def test_dense_shapes_and_activation_range():
    layer = DenseLayer.create(4, 3, "sigmoid", np.random.default_rng(0))
    out = layer.forward(Tensor(np.random.default_rng(1).standard_normal((5, 4))))
    assert out.shape == (5, 3)
    assert ((out.data > 0) & (out.data < 1)).all()


def test_dense_gradients_match_finite_differences():
    layer = DenseLayer.create(3, 2, "tanh", np.random.default_rng(2))
    x = Tensor(np.random.default_rng(3).standard_normal((4, 3)), requires_grad=True)
    probe = np.random.default_rng(4).standard_normal((4, 2))

    def loss_value():
        return float((layer.forward(x).data * probe).sum())

    with tt.Tape():
        tt.backward(tt.sum_all(tt.ewmul(layer.forward(x), Tensor(probe))))
    for name, p in [("x", x)] + layer.params("fc"):
        assert_grads_close(p.grad, fd_grad(loss_value, p.data), label=name)


# ---------------------------------------------------------------------------
# Adam


def test_adam_zero_gradient_leaves_parameters_unchanged():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam([("p", p)])
    p.accumulate_grad(np.zeros(2))
    opt.step()
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_first_step_equals_minus_lr_times_sign():
    # closed form for the bias-corrected first step: -lr * g / (|g| + eps);
    # the eps term bounds the gap to -lr*sign(g) at about lr*eps = 1e-11
    p = Tensor(np.array([0.0]), requires_grad=True)
    opt = Adam([("p", p)], lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8)
    p.accumulate_grad(np.array([1.0]))
    opt.step()
    exact = -0.001 * 1.0 / (1.0 + 1e-8)
    np.testing.assert_allclose(p.data[0], exact, rtol=0, atol=1e-15)
    np.testing.assert_allclose(p.data[0], -0.001, rtol=0, atol=1e-10)


def test_adam_hundred_steps_deterministic():
    def run():
        rng = np.random.default_rng(5)
        p = Tensor(rng.standard_normal(4), requires_grad=True)
        opt = Adam([("p", p)], lr=0.01)
        for _ in range(100):
            p.zero_grad()
            p.accumulate_grad(2.0 * p.data + rng.standard_normal(4))
            opt.step()
        return p.data.copy()

    assert run().tobytes() == run().tobytes()


def test_adam_rejects_non_finite_gradient_without_mutating():
    p = Tensor(np.array([1.0]), requires_grad=True)
    q = Tensor(np.array([2.0]), requires_grad=True)
    opt = Adam([("p", p), ("q", q)])
    p.accumulate_grad(np.array([1.0]))
    q.accumulate_grad(np.array([np.nan]))
    with pytest.raises(NumericError):
        opt.step()
    np.testing.assert_array_equal(p.data, [1.0])
    np.testing.assert_array_equal(q.data, [2.0])


def test_adam_l2_applies_only_to_tagged_params():
    w = Tensor(np.array([10.0]), requires_grad=True)
    u = Tensor(np.array([10.0]), requires_grad=True)
    opt_plain = Adam([("w", w)], lr=0.001)
    opt_l2 = Adam([("u", u)], lr=0.001, l2={"u": 0.5})
    w.accumulate_grad(np.array([0.0]))
    u.accumulate_grad(np.array([0.0]))
    opt_plain.step()
    opt_l2.step()
    np.testing.assert_array_equal(w.data, [10.0])
    assert u.data[0] < 10.0  # decay pulled it toward zero


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    layer = make_lstm(3, 4, seed=13)
    named = layer.params("lstm")
    path = tmp_path / "ckpt.npz"
    save_params(path, named, meta='{"note": "test"}')
    arrays, meta = load_params(path)
    assert meta == '{"note": "test"}'
    for name, p in named:
        assert arrays[name].tobytes() == p.data.tobytes(), name

    fresh = make_lstm(3, 4, seed=99)
    restore_params(fresh.params("lstm"), arrays)
    for (name, a), (_, b) in zip(fresh.params("lstm"), layer.params("lstm")):
        assert a.data.tobytes() == b.data.tobytes(), name


def test_checkpoint_shape_mismatch_names_dims(tmp_path):
    layer = make_lstm(3, 4)
    path = tmp_path / "ckpt.npz"
    save_params(path, layer.params("lstm"))
    arrays, _ = load_params(path)
    other = make_lstm(3, 5)
    with pytest.raises(CheckpointError, match=r"expected dims.*found"):
        restore_params(other.params("lstm"), arrays)
