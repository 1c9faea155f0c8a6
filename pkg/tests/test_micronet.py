import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from heston_deepcal.errors import LengthMismatch, ShapeMismatch, StaleCache, ValidationError, ZeroFanIn
from heston_deepcal.micronet import (
    ACTIVATIONS,
    AdamState,
    Dataset,
    DenseLayer,
    Network,
    Scaler,
    TrainConfig,
    adam_step,
    backward,
    build_network,
    dumps_network,
    flat_grads,
    forward,
    kaiming_init,
    load_network,
    mse_loss,
    network_from_dict,
    network_to_dict,
    predict,
    save_network,
    sgd_step,
    train,
)

ARCHS = [
    ((1, 8, 8, 1), ("identity", "tanh", "relu")),
    ((1, 7, 7, 1), ("identity", "sigmoid", "tanh")),
    ((3, 5, 4, 2), ("identity", "relu", "sigmoid")),
    ((2, 6, 1), ("tanh", "sigmoid")),
    ((4, 3, 3, 3, 1), ("identity", "tanh", "relu", "sigmoid")),
]


def _loss(net, x, y):
    return mse_loss(predict(net, x), y)


def _relu_safe_inputs(net, rng, m, n_in):
    # resample any batch whose relu-layer inputs sit within 1e-6 of the kink
    while True:
        x = rng.normal(size=(m, n_in))
        _, cache = forward(net, x)
        if all(np.min(np.abs(z)) > 1e-6 for layer, z in zip(net.layers, cache) if layer.activation_in == "relu"):
            return x


def finite_difference_grads(net, x, y, h=1e-6):
    params = [p.copy() for p in net.parameters()]
    out = []
    for i, p in enumerate(params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            plus = [q.copy() for q in params]
            minus = [q.copy() for q in params]
            plus[i][idx] += h
            minus[i][idx] -= h
            g[idx] = (_loss(net.with_parameters(plus), x, y) - _loss(net.with_parameters(minus), x, y)) / (2 * h)
        out.append(g)
    return out


def max_relative_error(a_list, b_list):
    worst = 0.0
    for a, b in zip(a_list, b_list):
        scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
        worst = max(worst, float(np.max(np.abs(a - b) / scale)))
    return worst


def test_squared_linear_gradient_example():
    # C = 2 (w1 x1 + w2 x2)^2 is twice the one-sample MSE against target 0
    w = np.array([[0.3], [-1.1]])
    x = np.array([[1.7, 0.4]])
    net = Network([DenseLayer(w, [0.0])])
    _, cache = forward(net, x)
    (dw, db), = backward(net, cache, [0.0])
    s = float((x @ w)[0, 0])
    assert 2 * dw[0, 0] == pytest.approx(4 * x[0, 0] * s, rel=1e-14)
    assert 2 * dw[1, 0] == pytest.approx(4 * x[0, 1] * s, rel=1e-14)


@pytest.mark.parametrize("dims, acts", ARCHS)
def test_gradients_match_finite_differences(dims, acts):
    rng = np.random.default_rng(sum(dims))
    net = build_network(dims, acts, seed=rng)
    for layer in net.layers:
        layer.bias = rng.normal(scale=0.3, size=layer.n_out)
    x = _relu_safe_inputs(net, rng, 6, dims[0])
    y = rng.normal(size=(6, dims[-1])) if dims[-1] > 1 else rng.normal(size=6)
    _, cache = forward(net, x)
    grads = flat_grads(backward(net, cache, y))
    assert max_relative_error(grads, finite_difference_grads(net, x, y)) < 1e-5


def test_zero_residual_zero_gradients():
    net = build_network((2, 4, 1), ("identity", "tanh"), seed=1)
    x = np.array([[0.1, 0.2], [0.3, -0.5]])
    out, cache = forward(net, x)
    for dw, db in backward(net, cache, out):
        assert not dw.any() and not db.any()


def test_backward_stale_cache():
    net = build_network((2, 4, 1), ("identity", "tanh"), seed=1)
    other = build_network((2, 3, 1), ("identity", "tanh"), seed=1)
    _, cache = forward(other, np.ones((2, 2)))
    with pytest.raises(StaleCache):
        backward(net, cache, [0.0, 0.0])


def test_forward_examples():
    zero = Network([DenseLayer(np.zeros((3, 4)), np.zeros(4)), DenseLayer(np.zeros((4, 1)), np.zeros(1), "tanh")])
    assert predict(zero, np.ones((2, 3))).tolist() == [0.0, 0.0]
    single = Network([DenseLayer([[2.0]], [3.0])])
    assert predict(single, [1.0]).tolist() == [5.0]
    with pytest.raises(ShapeMismatch):
        predict(single, np.ones((2, 3)))


def test_forward_pan_by_hand():
    net = build_network((1, 8, 8, 1), ("identity", "tanh", "relu"), seed=3)
    for i, layer in enumerate(net.layers):
        layer.bias = np.linspace(-0.2, 0.3, layer.n_out) * (i + 1)
    x = 0.7
    acts = [lambda v: v, math.tanh, lambda v: max(v, 0.0)]
    z = [x]
    for layer, act in zip(net.layers, acts):
        a = [act(v) for v in z]
        z = [sum(a[i] * layer.weights[i][j] for i in range(len(a))) + layer.bias[j] for j in range(layer.n_out)]
    assert predict(net, [[x]])[0] == pytest.approx(z[0], abs=1e-12)


def test_identity_network_collapses_to_affine():
    net = build_network((3, 5, 4, 2), ("identity",) * 3, seed=8)
    for layer in net.layers:
        layer.bias = np.arange(layer.n_out, dtype=float) / 7
    w = net.layers[0].weights @ net.layers[1].weights @ net.layers[2].weights
    b = (net.layers[0].bias @ net.layers[1].weights + net.layers[1].bias) @ net.layers[2].weights + net.layers[2].bias
    x = np.random.default_rng(0).normal(size=(4, 3))
    assert np.allclose(predict(net, x), x @ w + b, rtol=1e-13, atol=1e-13)


def test_mse_examples():
    assert mse_loss([1, 2], [1, 2]) == 0.0
    assert mse_loss([1, 2], [3, 2]) == 2.0
    assert mse_loss(np.zeros(7), np.full(7, 1.5)) == 2.25
    with pytest.raises(LengthMismatch):
        mse_loss([1, 2], [1])


@given(
    st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20),
    st.one_of(st.just(0.0), st.floats(1e-6, 10), st.floats(-10, -1e-6)),
)
def test_mse_nonnegative(values, shift):
    a = np.array(values)
    b = a + shift
    assert mse_loss(a, b) >= 0
    assert (mse_loss(a, b) == 0) == np.array_equal(a, b)


def test_kaiming():
    w = kaiming_init(2, 100_000, seed=0)
    assert abs(w.var() - 1.0) < 0.03
    assert kaiming_init(8, 20_000, seed=1).std() == pytest.approx(0.5, rel=0.02)
    with pytest.raises(ZeroFanIn):
        kaiming_init(0, 3)
    net = build_network((2, 3), ("identity",), seed=0)
    assert not net.layers[0].bias.any()


def test_activation_derivatives():
    z = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
    h = 1e-6
    for name, (f, df) in ACTIVATIONS.items():
        if name == "relu":
            assert df(z).tolist() == [0, 0, 0, 1, 1]
            continue
        fd = (f(z + h) - f(z - h)) / (2 * h)
        assert np.allclose(df(z), fd, atol=1e-8)
    big = ACTIVATIONS["sigmoid"][0](np.array([-800.0, 800.0]))
    assert big.tolist() == [0.0, 1.0]


def test_sgd_examples():
    assert sgd_step([np.array(1.0)], [np.array(0.0)], 0.1)[0] == 1.0
    assert sgd_step([np.array(1.0)], [np.array(2.0)], 0.1)[0] == pytest.approx(0.8, abs=1e-15)
    w = np.array(1.0)
    for _ in range(2):
        w = sgd_step([w], [w], 0.5)[0]  # gradient of w^2 / 2 is w
    assert w == 0.25


@pytest.mark.parametrize("dx", [3.0, -0.02, 1e-7])
def test_adam_first_step(dx):
    cfg = TrainConfig(lr=0.01)
    p = [np.array([1.0])]
    new, state = adam_step(p, [np.array([dx])], AdamState.zeros_like(p), cfg)
    step = abs(float(new[0][0] - 1.0))
    expected = cfg.lr * abs(dx) / (abs(dx) + cfg.epsilon)
    assert step == pytest.approx(expected, rel=1e-12)
    assert state.t == 1


def test_adam_three_steps_hand_unrolled():
    cfg = TrainConfig(lr=0.1)
    b1, b2, eps, lr = cfg.beta1, cfg.beta2, cfg.epsilon, cfg.lr
    x, m, v = 0.5, 0.0, 0.0
    for t in (1, 2, 3):
        m = b1 * m + (1 - b1) * 1.0
        v = b2 * v + (1 - b2) * 1.0
        x = x - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    params, state = [np.array([0.5])], None
    state = AdamState.zeros_like(params)
    for _ in range(3):
        params, state = adam_step(params, [np.array([1.0])], state, cfg)
    assert abs(params[0][0] - x) <= 1e-12
    assert np.all(state.m2[0] >= 0)


def test_adam_zero_gradient():
    p = [np.array([[1.0, 2.0]])]
    new, state = adam_step(p, [np.zeros((1, 2))], AdamState.zeros_like(p), TrainConfig())
    assert np.array_equal(new[0], p[0]) and state.t == 1


def test_train_constant_target_adam_converges():
    x = np.random.default_rng(0).normal(size=(64, 3))
    net = build_network((3, 1), ("identity",), seed=0)
    _, hist = train(net, Dataset(x, np.full(64, 0.7)), TrainConfig(lr=0.1, epochs=500, batch_size=64))
    assert hist[-1] < 1e-6


def test_train_constant_target_sgd_monotone():
    x = np.random.default_rng(0).normal(size=(64, 3))
    net = build_network((3, 1), ("identity",), seed=0)
    _, hist = train(net, Dataset(x, np.full(64, 0.7)), TrainConfig(optimizer="sgd", lr=0.1, epochs=500, batch_size=64))
    # allow round-off once the loss sits at ~1e-32
    assert all(b <= a + 1e-30 for a, b in zip(hist, hist[1:]))
    assert hist[-1] < 1e-6


def test_full_batch_single_step_per_epoch():
    x = np.linspace(-1, 1, 10)[:, None]
    y = 2 * x[:, 0]
    net = build_network((1, 1), ("identity",), seed=0)
    cfg = TrainConfig(optimizer="sgd", lr=0.05, epochs=3, batch_size=50, shuffle=False)
    trained, _ = train(net.copy(), Dataset(x, y), cfg)
    manual = net.copy()
    params = manual.parameters()
    for _ in range(3):
        _, cache = forward(manual, x)
        params = sgd_step(params, flat_grads(backward(manual, cache, y)), 0.05)
        manual = manual.with_parameters(params)
    for a, b in zip(trained.parameters(), manual.parameters()):
        assert np.array_equal(a, b)


def test_train_determinism_and_keep_best():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(40, 2))
    y = np.sin(x[:, 0]) + x[:, 1] ** 2
    cfg = TrainConfig(lr=0.05, epochs=60, batch_size=8, seed=4)
    a, ha = train(build_network((2, 6, 1), ("identity", "tanh"), seed=2), Dataset(x, y), cfg)
    b, hb = train(build_network((2, 6, 1), ("identity", "tanh"), seed=2), Dataset(x, y), cfg)
    assert ha == hb
    best, hist = train(build_network((2, 6, 1), ("identity", "tanh"), seed=2), Dataset(x, y),
                       TrainConfig(lr=0.05, epochs=60, batch_size=8, seed=4, keep_best=True))
    assert mse_loss(predict(best, x), y) == pytest.approx(min(hist), rel=1e-12)


def test_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(optimizer="rmsprop")
    with pytest.raises(ValidationError):
        TrainConfig(beta1=1.0)
    with pytest.raises(ValidationError):
        TrainConfig(batch_size=0)
    with pytest.raises(LengthMismatch):
        Dataset(np.ones((3, 1)), np.ones(2))


def test_scaler():
    x = np.array([[1.0, 5.0], [3.0, 5.0], [5.0, 5.0]])
    s = Scaler.fit(x)
    z = s.transform(x)
    assert np.allclose(z[:, 0].mean(), 0) and np.allclose(z[:, 0].std(), 1)
    assert s.std[1] == 1.0
    assert np.allclose(s.inverse(z), x)
    back = Scaler.from_dict(json.loads(json.dumps(s.to_dict())))
    assert np.array_equal(back.mean, s.mean) and np.array_equal(back.std, s.std)


def test_serialization_round_trip(tmp_path):
    net = build_network((1, 7, 7, 1), ("identity", "sigmoid", "tanh"), seed=5)
    net.meta["note"] = "ccn"
    path = tmp_path / "net.json"
    save_network(net, path)
    back = load_network(path)
    assert back.dims == net.dims and back.activations == net.activations
    for a, b in zip(back.parameters(), net.parameters()):
        assert np.array_equal(a, b)
    assert back.meta["note"] == "ccn"
    assert dumps_network(back) == dumps_network(net)
    doc = network_to_dict(net)
    doc["version"] = 99
    with pytest.raises(ValidationError):
        network_from_dict(doc)
