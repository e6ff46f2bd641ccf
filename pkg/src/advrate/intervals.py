"""Interval bound propagation over axis-aligned input boxes.

Affine layers use sign-split interval arithmetic; activations map interval
endpoints through the (monotone) activation, except swish which has a single
interior minimum. No outward rounding is done, so bounds are sound up to
ordinary float64 rounding.

The batched entry points take ``lo``/``hi`` arrays of shape ``(B, d)`` and are
what the verifier uses; the single-box functions are thin wrappers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError, ShapeError
from .network import SWISH_ARGMIN, SWISH_MIN, Activation, Network


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise ContractError(f"interval bounds must be finite: [{self.lo}, {self.hi}]")
        if self.lo > self.hi:
            raise ContractError(f"empty interval [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi

    def issubset(self, other: "Interval") -> bool:
        return other.lo <= self.lo and self.hi <= other.hi

    def __iter__(self):
        yield self.lo
        yield self.hi


class Box:
    """Axis-aligned hyperrectangle ``prod_i [lo_i, hi_i]``; point dimensions allowed."""

    __slots__ = ("lo", "hi")

    def __init__(self, lo, hi):
        lo = np.array(lo, dtype=np.float64).reshape(-1)
        hi = np.array(hi, dtype=np.float64).reshape(-1)
        if lo.shape != hi.shape:
            raise ShapeError(f"bound shapes differ: {lo.shape} vs {hi.shape}")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ContractError("box bounds must be finite")
        if np.any(lo > hi):
            raise ContractError("box has a dimension with lo > hi")
        lo.setflags(write=False)
        hi.setflags(write=False)
        self.lo = lo
        self.hi = hi

    @classmethod
    def from_intervals(cls, dims: Sequence) -> "Box":
        dims = [tuple(d) for d in dims]
        return cls([d[0] for d in dims], [d[1] for d in dims])

    @classmethod
    def point(cls, x) -> "Box":
        return cls(x, x)

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    @property
    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    @property
    def degenerate(self) -> np.ndarray:
        return self.lo == self.hi

    def intervals(self) -> list[Interval]:
        return [Interval(float(a), float(b)) for a, b in zip(self.lo, self.hi)]

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=np.float64)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def issubset(self, other: "Box") -> bool:
        return bool(np.all(other.lo <= self.lo) and np.all(self.hi <= other.hi))

    def split(self, dim: int, at: float | None = None) -> tuple["Box", "Box"]:
        mid = 0.5 * (self.lo[dim] + self.hi[dim]) if at is None else at
        left_hi = self.hi.copy()
        left_hi[dim] = mid
        right_lo = self.lo.copy()
        right_lo[dim] = mid
        return Box(self.lo, left_hi), Box(right_lo, self.hi)

    def sample(self, n: int, rng) -> np.ndarray:
        rng = np.random.default_rng(rng)
        return self.lo + (self.hi - self.lo) * rng.random((n, self.dim))

    def to_list(self) -> list[list[float]]:
        return [[float(a), float(b)] for a, b in zip(self.lo, self.hi)]

    def __eq__(self, other):
        return isinstance(other, Box) and np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi)

    def __repr__(self):
        return "Box(" + " x ".join(f"[{a:g}, {b:g}]" for a, b in zip(self.lo, self.hi)) + ")"


def affine_bounds(lo, hi, weights, bias):
    """Sign-split bounds of ``W x + b`` for ``x`` in ``[lo, hi]`` (row-batched)."""
    w_pos = np.maximum(weights, 0.0)
    w_neg = np.minimum(weights, 0.0)
    out_lo = lo @ w_pos.T + hi @ w_neg.T + bias
    out_hi = hi @ w_pos.T + lo @ w_neg.T + bias
    return out_lo, out_hi


def activation_bounds(act: Activation, lo, hi):
    if act.name != "swish":
        return act(lo), act(hi)
    g_lo, g_hi = act(lo), act(hi)
    upper = np.maximum(g_lo, g_hi)
    lower = np.minimum(g_lo, g_hi)
    straddles = (lo <= SWISH_ARGMIN) & (SWISH_ARGMIN <= hi)
    lower = np.where(straddles, np.minimum(lower, SWISH_MIN), lower)
    return lower, upper


def _check_batch(net: Network, lo, hi):
    lo = np.atleast_2d(np.asarray(lo, dtype=np.float64))
    hi = np.atleast_2d(np.asarray(hi, dtype=np.float64))
    if lo.shape != hi.shape or lo.shape[1] != net.input_dim:
        raise ShapeError(f"box batch of shape {lo.shape} does not match input_dim {net.input_dim}")
    return lo, hi


def hidden_bounds(net: Network, lo, hi):
    """Bounds on the activations feeding the output layer."""
    lo, hi = _check_batch(net, lo, hi)
    for layer in net.layers[:-1]:
        lo, hi = affine_bounds(lo, hi, layer.weights, layer.bias)
        lo, hi = activation_bounds(layer.activation, lo, hi)
    return lo, hi


def propagate_batch(net: Network, lo, hi):
    """Output bounds for a batch of boxes: arrays of shape ``(B, n_out)``."""
    h_lo, h_hi = hidden_bounds(net, lo, hi)
    last = net.layers[-1]
    return affine_bounds(h_lo, h_hi, last.weights, last.bias)


def functional_bounds_batch(net: Network, lo, hi, c_rows, offsets):
    """Bounds on ``C y - offsets`` for a batch of boxes.

    The rows of ``C`` are folded into the output layer before the final
    affine step, so correlations between outputs through the last hidden
    layer are kept. Returns two ``(B, m)`` arrays.
    """
    c_rows = np.atleast_2d(np.asarray(c_rows, dtype=np.float64))
    if c_rows.shape[1] != net.output_dim:
        raise ShapeError(f"functional has {c_rows.shape[1]} columns, network has {net.output_dim} outputs")
    last = net.layers[-1]
    w = c_rows @ last.weights
    b = c_rows @ last.bias - np.asarray(offsets, dtype=np.float64)
    h_lo, h_hi = hidden_bounds(net, lo, hi)
    return affine_bounds(h_lo, h_hi, w, b)


def propagate(net: Network, box: Box) -> list[Interval]:
    """One output interval per network output, sound over the whole box."""
    if box.dim != net.input_dim:
        raise ShapeError(f"box has {box.dim} dims, network expects {net.input_dim}")
    lo, hi = propagate_batch(net, box.lo[None, :], box.hi[None, :])
    return [Interval(float(a), float(b)) for a, b in zip(lo[0], hi[0])]


def propagate_layers(net: Network, box: Box) -> list[tuple[list[Interval], list[Interval]]]:
    """Per-layer (pre-activation, post-activation) intervals, for inspection."""
    if box.dim != net.input_dim:
        raise ShapeError(f"box has {box.dim} dims, network expects {net.input_dim}")
    lo, hi = box.lo[None, :], box.hi[None, :]
    trace = []
    for layer in net.layers:
        pre_lo, pre_hi = affine_bounds(lo, hi, layer.weights, layer.bias)
        lo, hi = activation_bounds(layer.activation, pre_lo, pre_hi)
        trace.append((
            [Interval(float(a), float(b)) for a, b in zip(pre_lo[0], pre_hi[0])],
            [Interval(float(a), float(b)) for a, b in zip(lo[0], hi[0])],
        ))
    return trace


def propagate_functional(net: Network, box: Box, c, b: float) -> Interval:
    """Sound bounds on ``c . y - b`` over the box."""
    if box.dim != net.input_dim:
        raise ShapeError(f"box has {box.dim} dims, network expects {net.input_dim}")
    c = np.asarray(c, dtype=np.float64).reshape(1, -1)
    lo, hi = functional_bounds_batch(net, box.lo[None, :], box.hi[None, :], c, [b])
    return Interval(float(lo[0, 0]), float(hi[0, 0]))
