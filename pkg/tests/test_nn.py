import numpy as np
import pytest
from numpy.testing import assert_allclose

from mlzgen import diffmath as dm
from mlzgen import nn
from oracles import hand_adam, hand_mlp


def test_glorot_uniform_bounds_and_spread():
    rng = np.random.default_rng(0)
    fan_in, fan_out = 40, 24
    w = nn.glorot_uniform(rng, fan_in, fan_out)
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    assert w.shape == (fan_in, fan_out)
    assert np.all(np.abs(w) <= bound)
    # uniform on [-b, b]: mean 0, variance b^2/3; allow sampling noise
    assert abs(w.mean()) < 0.1 * bound
    assert_allclose(w.var(), bound * bound / 3.0, rtol=0.15)


def test_init_mlp_deterministic_and_validated():
    a = nn.init_mlp(5, 7, 3, seed=42)
    b = nn.init_mlp(5, 7, 3, seed=42)
    assert a.layer1.weight.tobytes() == b.layer1.weight.tobytes()
    assert a.layer2.weight.tobytes() == b.layer2.weight.tobytes()
    assert np.all(a.layer1.bias == 0.0) and np.all(a.layer2.bias == 0.0)
    assert (a.in_dim, a.hidden_dim, a.out_dim) == (5, 7, 3)
    with pytest.raises(ValueError):
        nn.init_mlp(5, 7, 3, hidden_activation="tanh")
    with pytest.raises(ValueError):
        nn.init_mlp(0, 7, 3)


def test_mlp_forward_matches_hand_computation():
    rng = np.random.default_rng(1)
    for trial in range(20):
        d_in = int(rng.integers(1, 6))
        d_h = int(rng.integers(1, 6))
        d_out = int(rng.integers(1, 6))
        hidden = ("lrelu", "sigmoid", "none")[trial % 3]
        out_act = ("none", "sigmoid", "lrelu")[trial % 3]
        params = nn.init_mlp(d_in, d_h, d_out, hidden, out_act, seed=int(rng.integers(1000)))
        x = rng.normal(size=(int(rng.integers(1, 5)), d_in))
        assert_allclose(nn.mlp_forward(params, x), hand_mlp(params, x), rtol=1e-12, atol=1e-12)


def test_apply_mlp_rejects_width_mismatch():
    params = nn.init_mlp(4, 3, 2, seed=0)
    g = dm.Graph()
    x = g.leaf("x", (2, 5))
    with pytest.raises(ValueError):
        nn.apply_mlp(g, "net", params, x)


def test_param_dict_round_trip():
    params = nn.init_mlp(3, 4, 2, seed=7)
    d = nn.mlp_param_dict("net", params)
    assert sorted(d) == ["net.1.b", "net.1.w", "net.2.b", "net.2.w"]
    fresh = nn.init_mlp(3, 4, 2, seed=99)
    nn.assign_mlp(fresh, "net", d)
    assert fresh.layer1.weight.tobytes() == params.layer1.weight.tobytes()
    assert fresh.layer2.bias.tobytes() == params.layer2.bias.tobytes()


def test_adam_first_step_closed_form():
    # step 1 with gradient g moves by lr * g / (|g| + eps); at g = 1 that is lr / (1 + eps)
    state = nn.AdamState(learning_rate=0.1)
    params = {"w": np.array([[2.0]])}
    grads = {"w": np.array([[1.0]])}
    new = nn.adam_step(state, params, grads)
    expected = 2.0 - 0.1 / (1.0 + 1e-8)
    assert_allclose(new["w"], [[expected]], rtol=0, atol=1e-15)


def test_adam_first_step_bounded_by_learning_rate():
    rng = np.random.default_rng(3)
    state = nn.AdamState(learning_rate=0.05)
    params = {"w": rng.normal(size=(4, 3)), "b": rng.normal(size=(1, 3))}
    grads = {"w": rng.normal(size=(4, 3)) * 100.0, "b": rng.normal(size=(1, 3)) * 1e-4}
    new = nn.adam_step(state, params, grads)
    for key in params:
        assert np.max(np.abs(new[key] - params[key])) <= 0.05 + 1e-12


def test_adam_matches_textbook_sequence():
    rng = np.random.default_rng(4)
    p0 = rng.normal(size=(3, 2))
    grad_seq = [rng.normal(size=(3, 2)) for _ in range(10)]
    state = nn.AdamState(learning_rate=0.01)
    params = {"w": p0.copy()}
    for g in grad_seq:
        params = nn.adam_step(state, params, {"w": g})
    assert_allclose(params["w"], hand_adam(p0, grad_seq, 0.01), rtol=1e-12, atol=1e-12)


def test_adam_state_is_per_key():
    state = nn.AdamState(learning_rate=0.1)
    params = {"a": np.zeros((1, 1)), "b": np.zeros((1, 1))}
    grads = {"a": np.array([[1.0]]), "b": np.array([[-1.0]])}
    params = nn.adam_step(state, params, grads)
    # opposite gradients must not share moment buffers
    assert params["a"][0, 0] < 0.0 < params["b"][0, 0]
    assert_allclose(params["a"], -params["b"], rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        nn.adam_step(state, {"a": np.zeros((2, 2))}, {"a": np.zeros((1, 1))})


def test_adam_converges_on_quadratic():
    # minimize 0.5 * ||w - target||^2 by following its exact gradient
    target = np.array([[1.0, -2.0, 0.5]])
    state = nn.AdamState(learning_rate=0.1)
    params = {"w": np.zeros((1, 3))}
    for _ in range(300):
        params = nn.adam_step(state, params, {"w": params["w"] - target})
    assert_allclose(params["w"], target, atol=1e-3)


def test_gradient_descent_trains_mlp_on_graph():
    # regression toward a fixed random linear map, trained through the graph engine
    rng = np.random.default_rng(5)
    x = rng.normal(size=(32, 4))
    true_w = rng.normal(size=(4, 2))
    y = x @ true_w
    params = nn.init_mlp(4, 16, 2, seed=0)
    state = nn.AdamState(learning_rate=0.02)
    pdict = nn.mlp_param_dict("net", params)

    g = dm.Graph()
    xn = g.leaf("x", x.shape)
    yn = g.leaf("y", y.shape)
    out = nn.apply_mlp(g, "net", params, xn)
    loss = g.mean(g.square(g.sub(out, yn)))
    g.set_output(loss)

    first = None
    for _ in range(200):
        value = dm.evaluate(g, {"x": x, "y": y, **pdict})
        if first is None:
            first = value[0, 0]
        grads = dm.backward(g)
        pdict = nn.adam_step(state, pdict, {k: grads[k] for k in pdict})
    last = dm.evaluate(g, {"x": x, "y": y, **pdict})[0, 0]
    assert last < 0.01 * first
