import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdgan_sim.nn import (
    Gradients,
    Mlp,
    NonFiniteError,
    OptimizerState,
    forward,
    forward_backward,
    input_gradient_penalty,
    kaiming_init,
    optimizer_step,
)

from gradcheck import away_from_kinks, fd_check


def test_kaiming_std_is_sqrt_two_over_fan_in():
    rng = np.random.default_rng(0)
    net = kaiming_init((8, 2000, 2), rng)
    assert np.std(net.weights[0]) == pytest.approx(0.5, rel=0.02)
    net = kaiming_init((2, 5000, 1), rng)
    assert np.std(net.weights[0]) == pytest.approx(1.0, rel=0.02)
    assert all(np.all(b == 0) for b in net.biases)


def test_kaiming_sample_variance_oracle():
    rng = np.random.default_rng(1)
    w = kaiming_init((50, 200, 1), rng).weights[0].ravel()
    assert w.size == 10_000
    var = np.sum((w - w.mean()) ** 2) / (w.size - 1)
    assert abs(var - 0.04) / 0.04 < 0.05


@pytest.mark.parametrize("shape", [(2, 0, 1), (0, 3), (2, -1, 1), (3,)])
def test_kaiming_rejects_bad_shapes(shape):
    with pytest.raises(ValueError):
        kaiming_init(shape, np.random.default_rng(0))


def test_kaiming_deterministic():
    a = kaiming_init((2, 16, 1), np.random.default_rng(7))
    b = kaiming_init((2, 16, 1), np.random.default_rng(7))
    assert a.digest() == b.digest()


def test_zero_weights_output_is_bias():
    net = Mlp([np.zeros((4, 3)), np.zeros((2, 4))], [np.ones(4), np.array([0.5, -1.0])])
    out = forward(net, np.random.default_rng(0).standard_normal((5, 3)))
    np.testing.assert_array_equal(out, np.tile([0.5, -1.0], (5, 1)))


def test_linear_input_gradient_is_weight_transpose():
    w = np.array([[1.0, -2.0, 3.0]])
    net = Mlp([w], [np.zeros(1)])
    _, _, gx = forward_backward(net, np.ones((4, 3)), np.ones((4, 1)))
    np.testing.assert_allclose(gx, np.tile(w, (4, 1)))


def test_gradients_match_finite_differences_leaky():
    rng = np.random.default_rng(3)
    net = kaiming_init((2, 16, 16, 1), rng)
    net.biases = [rng.normal(0, 0.1, b.shape) for b in net.biases]
    x = away_from_kinks(net, rng.standard_normal((6, 2)), rng)
    up = rng.standard_normal((6, 1))
    assert fd_check(net, x, up) < 1e-4


@pytest.mark.parametrize("hidden,out", [("tanh", "sigmoid"), ("relu", "identity"), ("leaky_relu", "sigmoid")])
def test_gradients_match_finite_differences_activations(hidden, out):
    rng = np.random.default_rng(4)
    net = kaiming_init((3, 7, 5, 2), rng, hidden, out)
    net.biases = [rng.normal(0, 0.1, b.shape) for b in net.biases]
    x = rng.standard_normal((4, 3))
    if hidden != "tanh":
        x = away_from_kinks(net, x, rng)
    assert fd_check(net, x, rng.standard_normal((4, 2))) < 1e-4


def test_logits_flag_skips_output_activation():
    rng = np.random.default_rng(5)
    net = kaiming_init((2, 8, 1), rng, output_activation="sigmoid")
    x = rng.standard_normal((3, 2))
    z = forward(net, x, logits=True)
    np.testing.assert_allclose(forward(net, x), 1 / (1 + np.exp(-z)))
    x = away_from_kinks(net, x, rng)
    assert fd_check(net, x, rng.standard_normal((3, 1)), logits=True) < 1e-4


def test_forward_backward_is_pure():
    rng = np.random.default_rng(6)
    net = kaiming_init((2, 8, 1), rng)
    before = net.digest()
    x = rng.standard_normal((5, 2))
    up = rng.standard_normal((5, 1))
    a = forward_backward(net, x, up)
    b = forward_backward(net, x, up)
    assert net.digest() == before
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[2], b[2])
    for p, q in zip(a[1].params(), b[1].params()):
        np.testing.assert_array_equal(p, q)


def test_forward_rejects_bad_input():
    net = kaiming_init((2, 4, 1), np.random.default_rng(0))
    with pytest.raises(ValueError):
        forward(net, np.zeros((3, 3)))
    with pytest.raises(ValueError):
        forward(net, np.zeros((0, 2)))
    with pytest.raises(NonFiniteError):
        forward(net, np.array([[np.nan, 0.0]]))
    with pytest.raises(ValueError):
        forward_backward(net, np.zeros((3, 2)), np.zeros((2, 1)))


def test_mlp_rejects_incompatible_layers():
    with pytest.raises(ValueError):
        Mlp([np.zeros((4, 2)), np.zeros((1, 3))], [np.zeros(4), np.zeros(1)])


def test_sgd_step():
    net = Mlp([np.array([[1.0]])], [np.array([0.0])])
    grads = Gradients([np.array([[2.0]])], [np.array([0.0])])
    out, state = optimizer_step(net, grads, OptimizerState("sgd", 0.1))
    assert out.weights[0][0, 0] == pytest.approx(0.8)
    assert state.step == 1
    assert net.weights[0][0, 0] == 1.0


@pytest.mark.parametrize("kind", ["sgd", "adam"])
def test_zero_gradient_leaves_parameters(kind):
    net = kaiming_init((2, 4, 1), np.random.default_rng(0))
    out, _ = optimizer_step(net, Gradients.zeros_like(net), OptimizerState(kind, 0.1))
    assert out.digest() == net.digest()


def test_adam_first_step_moves_by_learning_rate():
    # m_hat = g, v_hat = g^2 on step one, so every update is lr * g / (|g| + eps)
    net = kaiming_init((3, 4, 2), np.random.default_rng(0))
    ones = Gradients([np.ones_like(w) for w in net.weights], [np.ones_like(b) for b in net.biases])
    lr = 0.01
    out, state = optimizer_step(net, ones, OptimizerState("adam", lr))
    expected = lr * 1.0 / (1.0 + 1e-8)
    for p, q in zip(net.params(), out.params()):
        np.testing.assert_allclose(p - q, expected, rtol=1e-12)
    assert state.step == 1 and len(state.m) == len(net.params())


def test_optimizer_rejects_non_finite_gradient():
    net = kaiming_init((2, 3, 1), np.random.default_rng(0))
    g = Gradients.zeros_like(net)
    g.weights[0][0, 0] = np.inf
    with pytest.raises(NonFiniteError, match="step 1"):
        optimizer_step(net, g, OptimizerState("sgd", 0.1))


def test_gradient_penalty_matches_finite_differences():
    rng = np.random.default_rng(8)
    net = kaiming_init((2, 12, 12, 1), rng)
    net.biases = [rng.normal(0, 0.1, b.shape) for b in net.biases]
    x = away_from_kinks(net, rng.standard_normal((5, 2)), rng, margin=1e-2)
    _, grads = input_gradient_penalty(net, x)
    h = 1e-6
    for p, g in zip(net.params(), grads.params()):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            lp, _ = input_gradient_penalty(net, x)
            p[idx] = old - h
            lm, _ = input_gradient_penalty(net, x)
            p[idx] = old
            num = (lp - lm) / (2 * h)
            assert abs(num - g[idx]) <= 1e-5 * max(1.0, abs(num))


def test_gradient_penalty_needs_piecewise_linear():
    net = kaiming_init((2, 4, 1), np.random.default_rng(0), "tanh")
    with pytest.raises(ValueError):
        input_gradient_penalty(net, np.ones((2, 2)))


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    widths=st.lists(st.integers(1, 6), min_size=1, max_size=3),
    batch=st.integers(1, 4),
)
def test_random_nets_gradients_property(seed, widths, batch):
    rng = np.random.default_rng(seed)
    net = kaiming_init((2, *widths, 1), rng)
    net.biases = [rng.normal(0, 0.1, b.shape) for b in net.biases]
    x = away_from_kinks(net, rng.standard_normal((batch, 2)), rng)
    assert fd_check(net, x, rng.standard_normal((batch, 1))) < 1e-4
