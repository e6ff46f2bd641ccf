import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from advrate.errors import ContractError, NumericError, ShapeError
from advrate.network import (ACTIVATIONS, SWISH_ARGMIN, SWISH_MIN, Activation, Layer, Network,
                             argmax_action, forward, init_network)

from conftest import naive_forward, random_net


def sat2d():
    return Network.from_arrays([[[5, -1], [-1, 3]], [[1, 3]]], [[0, 0], [0]])


def test_sat2d_forward_layers():
    net = sat2d()
    hidden = net.slice(0, 1)
    assert forward(hidden, [2, -1]).tolist() == [11, 0]
    pre = np.array([2, -1]) @ hidden.layers[0].weights.T
    assert pre.tolist() == [11, -5]
    assert forward(net, [2, -1]).tolist() == [11.0]
    assert argmax_action(forward(net, [2, -1])) == 0


@pytest.mark.parametrize("act", ["relu", "leaky_relu", "tanh", "swish", "linear"])
def test_zero_network_gives_zeros(act):
    net = Network.from_arrays([np.zeros((5, 3)), np.zeros((2, 5))], [np.zeros(5), np.zeros(2)], act)
    x = np.random.default_rng(0).normal(size=(7, 3))
    assert np.array_equal(forward(net, x), np.zeros((7, 2)))


def test_matches_naive_evaluator():
    rng = np.random.default_rng(1)
    net = init_network(8, (32, 32), 4, "relu", rng)
    xs = rng.normal(size=(100, 8))
    fast = forward(net, xs)
    for x, y in zip(xs, fast):
        ref = naive_forward(net, x)
        assert np.allclose(y, ref, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("act", ["tanh", "sigmoid", "swish", "leaky_relu"])
def test_naive_agreement_other_activations(act):
    rng = np.random.default_rng(2)
    net = init_network(3, (6, 5), 2, act, rng)
    for x in rng.normal(size=(20, 3)):
        assert np.allclose(forward(net, x), naive_forward(net, x), rtol=1e-12, atol=1e-13)


def test_forward_is_bit_deterministic():
    rng = np.random.default_rng(3)
    net = random_net(rng)
    x = rng.normal(size=(50, net.input_dim))
    assert forward(net, x).tobytes() == forward(net, x).tobytes()


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), cut=st.integers(1, 3))
def test_composition(seed, cut):
    rng = np.random.default_rng(seed)
    net = random_net(rng, max_hidden=3)
    cut = min(cut, len(net.layers) - 1) or 1
    if len(net.layers) < 2:
        return
    x = rng.normal(size=(10, net.input_dim))
    assert np.array_equal(forward(net.slice(cut), forward(net.slice(0, cut), x)), forward(net, x))


def test_activation_closed_forms():
    x = np.linspace(-30, 30, 10_000)
    assert np.array_equal(Activation("relu")(x), np.maximum(x, 0))
    sig = np.array([1 / (1 + math.exp(-v)) for v in x])
    assert np.allclose(Activation("sigmoid")(x), sig, rtol=1e-14, atol=0)
    assert np.allclose(Activation("swish")(x), x * sig, rtol=1e-14, atol=1e-300)
    assert np.allclose(Activation("tanh")(x), np.tanh(x))
    leaky = Activation("leaky_relu", 0.2)(x)
    assert np.array_equal(leaky, np.where(x >= 0, x, 0.2 * x))


def test_sigmoid_no_overflow():
    with np.errstate(over="raise"):
        v = Activation("sigmoid")(np.array([-1000.0, 1000.0]))
    assert v.tolist() == [0.0, 1.0]


def test_swish_minimum_constants():
    sw = Activation("swish")
    xs = np.linspace(-3, 0, 300_001)
    i = int(np.argmin(sw(xs)))
    assert abs(xs[i] - SWISH_ARGMIN) < 1e-4
    assert abs(sw(np.array([SWISH_ARGMIN]))[0] - SWISH_MIN) < 1e-15
    # stationary point
    assert abs(Activation("swish").derivative(np.array([SWISH_ARGMIN]))[0]) < 1e-12


@pytest.mark.parametrize("name", ACTIVATIONS)
def test_derivative_matches_finite_difference(name):
    act = Activation(name)
    x = np.array([-2.3, -0.7, 0.4, 1.9])
    h = 1e-6
    fd = (act(x + h) - act(x - h)) / (2 * h)
    assert np.allclose(act.derivative(x), fd, atol=1e-6)


def test_argmax_ties_and_errors():
    assert argmax_action([0.1, 0.9, 0.3, 0.3]) == 1
    assert argmax_action([0.5, 0.5]) == 0
    with pytest.raises(ContractError):
        argmax_action([])


def test_leaky_slope_validated():
    with pytest.raises(ContractError):
        Activation("leaky_relu", 1.5)
    with pytest.raises(ContractError):
        Activation("softplus")
    assert Activation.parse("leaky").name == "leaky_relu"


def test_layer_and_network_validation():
    with pytest.raises(ShapeError):
        Layer(np.zeros((2, 3)), np.zeros(3))
    with pytest.raises(NumericError):
        Layer([[np.nan]], [0.0])
    with pytest.raises(ShapeError):
        Network([Layer(np.zeros((2, 3)), np.zeros(2), "relu"), Layer(np.zeros((1, 3)), np.zeros(1))])
    with pytest.raises(ContractError):
        Network([Layer(np.zeros((2, 3)), np.zeros(2), "relu")])
    with pytest.raises(ShapeError):
        Network([Layer(np.zeros((1, 3)), np.zeros(1))], input_dim=2)


def test_forward_errors():
    net = sat2d()
    with pytest.raises(ShapeError):
        forward(net, [1.0, 2.0, 3.0])
    with pytest.raises(NumericError):
        forward(net, [np.inf, 0.0])
    big = Network.from_arrays([[[1e200]], [[1e200]]], [[0.0], [0.0]])
    with pytest.raises(NumericError, match="layer 1"):
        forward(big, [1.0])


def test_layers_are_read_only():
    net = sat2d()
    with pytest.raises(ValueError):
        net.layers[0].weights[0, 0] = 7.0


def test_init_network_bounds_and_shape():
    net = init_network(8, (16, 4), 3, "tanh", np.random.default_rng(0))
    assert net.hidden_sizes == [16, 4] and net.output_dim == 3
    for layer in net.layers:
        bound = 1 / math.sqrt(layer.in_dim)
        assert np.all(np.abs(layer.weights) <= bound)
    assert init_network(8, (16,), 3, "relu", 5) == init_network(8, (16,), 3, "relu", 5)
