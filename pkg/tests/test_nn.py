import numpy as np
import pytest

import riskcnn.nn as nn
from riskcnn.nn import (
    RISK_NET,
    SMALL_RISK_NET,
    TINY_NET,
    AdamState,
    Architecture,
    adam_step,
    backprop,
    conv2d,
    dense,
    forward,
    gradient_check,
    init_params,
    model_forward,
    mse_loss,
    predict_batch,
    relu,
    relu_grad,
)


def naive_conv(x, k, b, s):
    c, h, w = x.shape
    o, _, kh, kw = k.shape
    ho, wo = (h - kh) // s + 1, (w - kw) // s + 1
    out = np.zeros((o, ho, wo))
    for oc in range(o):
        for i in range(ho):
            for j in range(wo):
                acc = b[oc]
                for ch in range(c):
                    for u in range(kh):
                        for v in range(kw):
                            acc += x[ch, i * s + u, j * s + v] * k[oc, ch, u, v]
                out[oc, i, j] = acc
    return out


def strides(arch):
    return tuple(s for _, _, s in arch.convs)


# -- layers ------------------------------------------------------------------------

def test_conv_ones():
    out = conv2d(np.ones((1, 6, 6)), np.ones((1, 1, 3, 3)), np.zeros(1), 1)
    assert out.shape == (1, 4, 4)
    assert np.all(out == 9.0)


@pytest.mark.parametrize("stride", [1, 2, 3])
def test_conv_matches_naive_loops(stride):
    rng = np.random.default_rng(stride)
    x = rng.normal(size=(3, 11, 9))
    k = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    np.testing.assert_allclose(conv2d(x, k, b, stride), naive_conv(x, k, b, stride), rtol=1e-12, atol=1e-12)


def test_conv_shape_errors():
    with pytest.raises(ValueError):
        conv2d(np.ones((2, 6, 6)), np.ones((1, 1, 3, 3)), np.zeros(1), 1)
    with pytest.raises(ValueError):
        conv2d(np.ones((1, 2, 6)), np.ones((1, 1, 3, 3)), np.zeros(1), 1)


def test_architecture_shape_chain():
    assert RISK_NET.feature_shapes() == [(24, 31, 98), (36, 14, 47), (48, 5, 22), (64, 3, 20), (64, 1, 18)]
    assert RISK_NET.flatten_width == 1152
    shapes = RISK_NET.param_shapes()
    assert shapes["fc1.w"] == (1164, 1152)
    assert [shapes[f"fc{i}.w"][0] for i in range(1, 6)] == [1164, 100, 50, 10, 1]


def test_too_small_input_fails_loudly():
    with pytest.raises(ValueError, match="conv3"):
        Architecture(input_shape=(4, 20, 20)).feature_shapes()
    p = init_params(RISK_NET, 0)
    with pytest.raises(ValueError):
        model_forward(p, np.zeros((4, 66, 199), dtype=np.float32))


def test_dense():
    x = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(dense(x, np.eye(3), np.zeros(3)), x)
    rng = np.random.default_rng(1)
    w, b, v = rng.normal(size=(1164, 1152)), rng.normal(size=1164), rng.normal(size=1152)
    out = dense(v, w, b)
    assert out.shape == (1164,)
    assert out[7] == pytest.approx(sum(w[7, i] * v[i] for i in range(1152)) + b[7], rel=1e-10)
    with pytest.raises(ValueError):
        dense(v, w[:, :-1], b)


def test_relu():
    assert relu(np.array([-1.0, 0.0, 2.0])).tolist() == [0.0, 0.0, 2.0]
    assert not relu(-np.ones(5)).any()
    assert relu_grad(np.array([-0.5, 0.5, 0.0])).tolist() == [0.0, 1.0, 0.0]


# -- network -------------------------------------------------------------------------

def test_zero_weights_output_fc5_bias():
    p = {k: np.zeros_like(v) for k, v in init_params(RISK_NET, 0).items()}
    p["fc5.b"][0] = 0.37
    x = np.random.default_rng(0).uniform(size=(4, 66, 200)).astype(np.float32)
    assert model_forward(p, x) == pytest.approx(0.37)


def test_zero_input_zero_bias_outputs_zero():
    p = init_params(RISK_NET, 3)
    assert model_forward(p, np.zeros((4, 66, 200), dtype=np.float32)) == 0.0


def test_forward_regression_value():
    p = init_params(RISK_NET, 123, dtype=np.float64)
    x = np.random.default_rng(5).uniform(0, 1, size=(4, 66, 200))
    assert model_forward(p, x) == pytest.approx(-0.9653476688886686, rel=1e-10)


def test_init_is_seeded():
    a, b, c = init_params(RISK_NET, 1), init_params(RISK_NET, 1), init_params(RISK_NET, 2)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not np.array_equal(a["conv1.w"], c["conv1.w"])
    assert all(v.dtype == np.float32 for v in a.values())
    assert not a["fc1.b"].any()
    bound = np.sqrt(6.0 / (4 * 5 * 5))
    assert np.abs(a["conv1.w"]).max() <= bound


def test_predict_batch_matches_single():
    p = init_params(TINY_NET, 0, dtype=np.float64)
    x = np.random.default_rng(0).normal(size=(7, 4, 8, 8))
    batch = predict_batch(p, x, TINY_NET, batch=3)
    single = [model_forward(p, xi, TINY_NET) for xi in x]
    np.testing.assert_allclose(batch, single, rtol=1e-12)


# -- loss and gradients ----------------------------------------------------------------

def test_mse_examples():
    assert mse_loss(np.array([0.3, 0.4]), np.array([0.3, 0.4]))[0] == 0.0
    assert mse_loss(np.array([1.0, 0.0]), np.array([0.0, 0.0]))[0] == 0.5
    with pytest.raises(ValueError):
        mse_loss(np.array([]), np.array([]))
    with pytest.raises(ValueError):
        mse_loss(np.zeros(2), np.zeros(3))


def test_mse_gradient_finite_difference():
    rng = np.random.default_rng(0)
    p, t = rng.normal(size=6), rng.normal(size=6)
    _, g = mse_loss(p, t)
    h = 1e-6
    for i in range(6):
        e = np.zeros(6)
        e[i] = h
        num = (mse_loss(p + e, t)[0] - mse_loss(p - e, t)[0]) / (2 * h)
        assert abs(num - g[i]) / max(abs(num), abs(g[i])) < 1e-8


def test_zero_network_gradients_only_on_output_bias():
    p = {k: np.zeros_like(v, dtype=np.float64) for k, v in init_params(TINY_NET, 0).items()}
    x = np.zeros((3, 4, 8, 8))
    _, g = backprop(p, x, np.array([0.2, 0.5, 0.1]), TINY_NET)
    for name, grad in g.items():
        if name == "fc2.b":
            assert grad[0] == pytest.approx(-2 * np.mean([0.2, 0.5, 0.1]))
        else:
            assert not grad.any(), name


def test_gradient_is_mean_over_batch():
    p = init_params(TINY_NET, 1, dtype=np.float64)
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(1, 4, 8, 8)), rng.normal(size=(1, 4, 8, 8))
    _, ga = backprop(p, a, np.array([0.3]), TINY_NET)
    _, gb = backprop(p, b, np.array([0.7]), TINY_NET)
    _, gab = backprop(p, np.concatenate([a, b]), np.array([0.3, 0.7]), TINY_NET)
    _, gaa = backprop(p, np.concatenate([a, a]), np.array([0.3, 0.3]), TINY_NET)
    for k in p:
        np.testing.assert_allclose(gab[k], (ga[k] + gb[k]) / 2, rtol=1e-10, atol=1e-14)
        # a duplicated sample doubles the summed loss and so the summed gradient
        np.testing.assert_allclose(2 * gaa[k], 2 * ga[k], rtol=1e-10, atol=1e-14)


@pytest.mark.parametrize("arch", [TINY_NET, SMALL_RISK_NET], ids=["tiny", "small"])
def test_gradient_check_passes(arch):
    report = gradient_check(arch, tolerance=1e-4)
    assert report.passed, report.max_rel_error
    assert set(report.max_rel_error) == set(arch.param_shapes())
    assert report.n_checked > 0.9 * (report.n_checked + report.n_skipped)


def test_gradient_check_catches_off_by_one_conv_backward(monkeypatch):
    real = nn._conv_backward

    def broken(dout, x_shape, cols, kernels, stride, need_dx=True):
        dx, dw, db = real(dout, x_shape, cols, kernels, stride, need_dx)
        if dx is not None:
            dx = np.roll(dx, 1, axis=3)
        return dx, dw, db

    monkeypatch.setattr(nn, "_conv_backward", broken)
    report = gradient_check(TINY_NET, tolerance=1e-4)
    assert not report.passed
    assert report.max_rel_error["conv1.w"] > 1e-4


def test_relu_kink_is_flagged():
    p = init_params(TINY_NET, 0, dtype=np.float64)
    pattern, at_zero = nn._relu_pattern(p, np.zeros((1, 4, 8, 8)), strides(TINY_NET))
    assert at_zero


# -- Adam -------------------------------------------------------------------------------

def _scalar_params(v):
    return {"p": np.array([v], dtype=np.float64)}


def test_adam_zero_gradient_keeps_params():
    p = init_params(TINY_NET, 0)
    state = AdamState.zeros_like(p)
    new, state = adam_step(p, {k: np.zeros_like(v) for k, v in p.items()}, state)
    assert all(np.array_equal(new[k], p[k]) for k in p)
    assert state.t == 1


def test_adam_first_step_size():
    p = _scalar_params(0.0)
    new, _ = adam_step(p, {"p": np.array([1.0])}, AdamState.zeros_like(p, lr=0.001))
    assert new["p"][0] == pytest.approx(-0.001, rel=1e-6)


def test_adam_converges_on_scalar_quadratic():
    p = _scalar_params(0.0)
    state = AdamState.zeros_like(p, lr=0.1)
    for _ in range(200):
        p, state = adam_step(p, {"p": 2 * (p["p"] - 3.0)}, state)
    assert abs(p["p"][0] - 3.0) < 0.05


def test_adam_is_order_invariant():
    rng = np.random.default_rng(0)
    p = {"a": rng.normal(size=3), "b": rng.normal(size=(2, 2))}
    g = {"a": rng.normal(size=3), "b": rng.normal(size=(2, 2))}
    p_rev = {"b": p["b"], "a": p["a"]}
    g_rev = {"b": g["b"], "a": g["a"]}
    x, _ = adam_step(p, g, AdamState.zeros_like(p))
    y, _ = adam_step(p_rev, g_rev, AdamState.zeros_like(p_rev))
    for k in p:
        np.testing.assert_array_equal(x[k], y[k])


def test_adam_rejects_shape_mismatch():
    p = _scalar_params(1.0)
    with pytest.raises(ValueError):
        adam_step(p, {"p": np.zeros(2)}, AdamState.zeros_like(p))


def test_training_trajectory_is_deterministic():
    def run():
        p = init_params(TINY_NET, 4)
        state = AdamState.zeros_like(p, lr=1e-3)
        rng = np.random.default_rng(9)
        x = rng.normal(size=(10, 4, 8, 8)).astype(np.float32)
        y = rng.uniform(size=10).astype(np.float32)
        losses = []
        for _ in range(5):
            loss, g = backprop(p, x, y, TINY_NET)
            p, state = adam_step(p, g, state)
            losses.append(loss)
        return losses, p

    (la, pa), (lb, pb) = run(), run()
    assert la == lb
    assert all(np.array_equal(pa[k], pb[k]) for k in pa)


def test_forward_requires_one_stride_per_conv():
    p = init_params(TINY_NET, 0)
    with pytest.raises(ValueError):
        forward(p, np.zeros((1, 4, 8, 8), dtype=np.float32), (1,))
