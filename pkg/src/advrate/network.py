"""Feed-forward networks and their concrete evaluation.

A network is a list of dense layers ``a_l = g(W_l a_{l-1} + b_l)``. The last
layer is always linear: policies are compared on raw output scores, and the
argmax of those scores is what the verifier reasons about.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError, NumericError, ShapeError

ACTIVATIONS = ("relu", "leaky_relu", "tanh", "sigmoid", "swish", "linear")

# Stationary point of x * sigmoid(x): root of 1 + x * (1 - sigmoid(x)) = 0.
SWISH_ARGMIN = -1.2784645427610737
SWISH_MIN = -0.2784645427610738


def _sigmoid(x):
    # Split by sign so exp never overflows.
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class Activation:
    name: str
    slope: float = 0.01

    def __post_init__(self):
        if self.name not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.name!r}")
        if self.name == "leaky_relu" and not 0.0 < self.slope < 1.0:
            raise ContractError(f"leaky_relu slope must lie in (0, 1), got {self.slope}")

    @classmethod
    def parse(cls, value: "str | Activation") -> "Activation":
        if isinstance(value, Activation):
            return value
        if value in ("leaky", "leakyrelu"):
            value = "leaky_relu"
        return cls(value)

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        name = self.name
        if name == "linear":
            return x
        if name == "relu":
            return np.maximum(x, 0.0)
        if name == "leaky_relu":
            return np.where(x >= 0.0, x, self.slope * x)
        if name == "tanh":
            return np.tanh(x)
        if name == "sigmoid":
            return _sigmoid(x)
        return x * _sigmoid(x)

    def derivative(self, pre, post=None):
        """Elementwise g'(pre); ``post`` is g(pre) if already available."""
        pre = np.asarray(pre, dtype=np.float64)
        name = self.name
        if name == "linear":
            return np.ones_like(pre)
        if name == "relu":
            return (pre > 0.0).astype(np.float64)
        if name == "leaky_relu":
            return np.where(pre >= 0.0, 1.0, self.slope)
        if name == "tanh":
            t = np.tanh(pre) if post is None else post
            return 1.0 - t * t
        s = _sigmoid(pre)
        if name == "sigmoid":
            return s * (1.0 - s)
        return s * (1.0 + pre * (1.0 - s))

    def to_dict(self) -> dict:
        d = {"activation": self.name}
        if self.name == "leaky_relu":
            d["slope"] = self.slope
        return d


LINEAR = Activation("linear")


@dataclass(frozen=True, eq=False)
class Layer:
    weights: np.ndarray
    bias: np.ndarray
    activation: Activation = LINEAR

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64).reshape(-1)
        if w.ndim != 2:
            raise ShapeError(f"weights must be a matrix, got shape {w.shape}")
        if b.shape[0] != w.shape[0]:
            raise ShapeError(f"bias length {b.shape[0]} != weight rows {w.shape[0]}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise NumericError("layer parameters must be finite")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "activation", Activation.parse(self.activation))

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


class Network:
    """Immutable feed-forward network with a linear output layer."""

    def __init__(self, layers: Sequence[Layer], input_dim: int | None = None):
        layers = tuple(layers)
        if not layers:
            raise ShapeError("a network needs at least one layer")
        if input_dim is None:
            input_dim = layers[0].in_dim
        if input_dim <= 0:
            raise ShapeError("input_dim must be positive")
        prev = input_dim
        for i, layer in enumerate(layers):
            if layer.in_dim != prev:
                raise ShapeError(f"layer {i} expects {layer.in_dim} inputs, previous width is {prev}")
            prev = layer.out_dim
        if layers[-1].activation.name != "linear":
            raise ContractError("output layer activation must be linear")
        self.layers = layers
        self.input_dim = int(input_dim)

    @classmethod
    def from_arrays(cls, weights, biases, activations="relu"):
        """Build from parallel lists; ``activations`` applies to hidden layers."""
        n = len(weights)
        if isinstance(activations, (str, Activation)):
            activations = [activations] * (n - 1)
        acts = list(activations) + [LINEAR]
        return cls([Layer(w, b, a) for w, b, a in zip(weights, biases, acts)])

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def hidden_sizes(self) -> list[int]:
        return [layer.out_dim for layer in self.layers[:-1]]

    def __repr__(self):
        dims = [self.input_dim] + [layer.out_dim for layer in self.layers]
        acts = ",".join(layer.activation.name for layer in self.layers[:-1]) or "-"
        return f"Network({'->'.join(map(str, dims))}, hidden={acts})"

    def __eq__(self, other):
        if not isinstance(other, Network) or len(self.layers) != len(other.layers):
            return False
        return self.input_dim == other.input_dim and all(
            a.activation == b.activation
            and np.array_equal(a.weights, b.weights)
            and np.array_equal(a.bias, b.bias)
            for a, b in zip(self.layers, other.layers)
        )

    def slice(self, start: int, stop: int | None = None) -> "Network":
        """Sub-network over ``layers[start:stop]`` (skips the linear-output check)."""
        sub = Network.__new__(Network)
        sub.layers = self.layers[start:stop]
        sub.input_dim = sub.layers[0].in_dim
        return sub

    def __call__(self, x):
        return forward(self, x)


def forward(net: Network, x) -> np.ndarray:
    """Evaluate the network on one input vector (or a batch of row vectors)."""
    a = np.asarray(x, dtype=np.float64)
    if a.shape[-1] != net.input_dim or a.ndim not in (1, 2):
        raise ShapeError(f"expected input of width {net.input_dim}, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericError("input contains non-finite entries")
    with np.errstate(over="ignore", invalid="ignore"):
        for i, layer in enumerate(net.layers):
            a = layer.activation(a @ layer.weights.T + layer.bias)
            if not np.all(np.isfinite(a)):
                raise NumericError(f"non-finite activation in layer {i}")
    return a


def argmax_action(y) -> int:
    """Index of the largest score; ties go to the lowest index."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.size == 0:
        raise ContractError("argmax of an empty vector")
    if not np.all(np.isfinite(y)):
        raise NumericError("scores contain non-finite entries")
    # np.argmax returns the first occurrence of the maximum.
    return int(np.argmax(y))


def init_network(input_dim, hidden_sizes, output_dim, activation="relu", rng=None) -> Network:
    """Uniform fan-in scaled initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    rng = np.random.default_rng(rng)
    dims = [input_dim, *hidden_sizes, output_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return Network.from_arrays(weights, biases, activation)
