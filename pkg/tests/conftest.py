from pathlib import Path

import numpy as np
import pytest

from advrate.intervals import Box
from advrate.network import init_network
from advrate.verifier import ArgmaxAtom, LinearAtom, Property

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "advrate" / "fixtures"


@pytest.fixture
def fixtures():
    return FIXTURES


def naive_forward(net, x):
    """Scalar loops, no vectorization: an independent evaluator."""
    a = [float(v) for v in x]
    for layer in net.layers:
        W, b = layer.weights, layer.bias
        z = [sum(W[i][j] * a[j] for j in range(len(a))) + b[i] for i in range(len(b))]
        a = [float(layer.activation(np.array([v]))[0]) for v in z]
    return np.array(a)


def random_net(rng, input_dim=None, max_hidden=2, max_width=32, activation="relu"):
    input_dim = input_dim or int(rng.integers(1, 5))
    depth = int(rng.integers(1, max_hidden + 1))
    hidden = tuple(int(rng.integers(2, max_width + 1)) for _ in range(depth))
    output_dim = int(rng.integers(1, 5))
    return init_network(input_dim, hidden, output_dim, activation, rng)


def random_box(rng, dim, scale=1.0):
    lo = rng.uniform(-scale, scale, dim)
    return Box(lo, lo + rng.uniform(0.1, 2 * scale, dim))


def random_property(rng, net, box=None):
    box = box or random_box(rng, net.input_dim)
    if net.output_dim > 1 and rng.random() < 0.5:
        post = [[ArgmaxAtom(int(rng.integers(net.output_dim)))]]
    else:
        c = rng.normal(size=net.output_dim)
        post = [[LinearAtom(c, float(rng.normal(scale=0.3)), bool(rng.random() < 0.3))]]
        if rng.random() < 0.3:
            post.append([LinearAtom(-c, float(rng.normal(scale=0.3)))])
    return Property(box, post, "random")
