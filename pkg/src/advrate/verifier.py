"""Decision and Adversarial Rate computation by iterative input splitting.

A property is ``<pre, post>`` where ``pre`` is a bounded box and ``post`` is a
DNF over output atoms describing the *unsafe* event. Sub-boxes are labelled
SAFE (post provably false everywhere), VIOLATING (post provably true
everywhere) or UNKNOWN; unknown boxes are halved along their widest
normalized dimension until every side is at most ``epsilon`` of the original
width.

Widths are tracked as integer split levels per dimension, so a box's
normalized volume is exactly ``2 ** -sum(levels)`` and the three volumes
always add up to one without rounding drift.
"""

from __future__ import annotations

import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import ContractError, ShapeError
from .intervals import Box, functional_bounds_batch
from .network import Network, forward


class Label(Enum):
    SAFE = 0
    VIOLATING = 1
    UNKNOWN = 2


SAFE, VIOLATING, UNKNOWN = 0, 1, 2


@dataclass(frozen=True, eq=False)
class LinearAtom:
    """``c . y >= b``, or ``c . y > b`` when strict."""

    c: np.ndarray
    b: float
    strict: bool = False

    def __post_init__(self):
        c = np.array(self.c, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(c)) or not math.isfinite(self.b):
            raise ContractError("linear atom coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "b", float(self.b))

    def __eq__(self, other):
        return (isinstance(other, LinearAtom) and np.array_equal(self.c, other.c)
                and self.b == other.b and self.strict == other.strict)

    def holds(self, y) -> np.ndarray:
        v = np.asarray(y, dtype=np.float64) @ self.c
        return v > self.b if self.strict else v >= self.b

    def to_dict(self) -> dict:
        return {"linear": {"c": [float(v) for v in self.c], "b": self.b, "strict": self.strict}}


@dataclass(frozen=True)
class ArgmaxAtom:
    """Output ``index`` is the argmax of ``y`` (lowest index wins ties)."""

    index: int

    def holds(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        return np.argmax(y, axis=-1) == self.index

    def to_dict(self) -> dict:
        return {"argmax": int(self.index)}


class Property:
    """Verification query: precondition box and DNF postcondition (the bad event)."""

    def __init__(self, pre: Box, post: Sequence[Sequence], name: str = "property"):
        if not isinstance(pre, Box):
            pre = Box.from_intervals(pre)
        post = tuple(tuple(conj) for conj in post)
        if not post or any(len(conj) == 0 for conj in post):
            raise ContractError(f"{name}: postcondition must be a non-empty DNF of non-empty conjunctions")
        for conj in post:
            for atom in conj:
                if not isinstance(atom, (LinearAtom, ArgmaxAtom)):
                    raise ContractError(f"{name}: unsupported atom {atom!r}")
        self.pre = pre
        self.post = post
        self.name = name

    def __repr__(self):
        return f"Property({self.name!r}, dim={self.pre.dim}, disjuncts={len(self.post)})"

    def __eq__(self, other):
        return (isinstance(other, Property) and self.name == other.name
                and self.pre == other.pre and self.post == other.post)

    def with_pre(self, pre: Box, name: str | None = None) -> "Property":
        return Property(pre, self.post, self.name if name is None else name)

    def validate(self, net: Network) -> None:
        if self.pre.dim != net.input_dim:
            raise ShapeError(f"{self.name}: precondition has {self.pre.dim} dims, network has {net.input_dim} inputs")
        for conj in self.post:
            for atom in conj:
                if isinstance(atom, LinearAtom) and atom.c.shape[0] != net.output_dim:
                    raise ShapeError(f"{self.name}: linear atom has {atom.c.shape[0]} coefficients, "
                                     f"network has {net.output_dim} outputs")
                if isinstance(atom, ArgmaxAtom) and not 0 <= atom.index < net.output_dim:
                    raise ShapeError(f"{self.name}: argmax index {atom.index} out of range")

    def holds(self, y) -> np.ndarray:
        """Concrete evaluation of the postcondition on outputs (row-batched)."""
        y = np.asarray(y, dtype=np.float64)
        result = np.zeros(y.shape[:-1], dtype=bool)
        for conj in self.post:
            term = np.ones(y.shape[:-1], dtype=bool)
            for atom in conj:
                term &= atom.holds(y)
            result |= term
        return result


def check_witness(net: Network, prop: Property, x, tol: float = 0.0) -> bool:
    """True iff ``x`` lies in the precondition and concretely triggers the postcondition."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != net.input_dim or not prop.pre.contains(x, tol):
        return False
    return bool(prop.holds(forward(net, x)))


class _Compiled:
    """All atom functionals of a property stacked into one row matrix."""

    def __init__(self, net: Network, prop: Property):
        prop.validate(net)
        self.net = net
        self.prop = prop
        rows, offsets, self.terms = [], [], []
        n_out = net.output_dim
        for conj in prop.post:
            term = []
            for atom in conj:
                start = len(rows)
                if isinstance(atom, LinearAtom):
                    rows.append(atom.c)
                    offsets.append(atom.b)
                    term.append(("linear", slice(start, start + 1), atom.strict))
                else:
                    for k in range(n_out):
                        if k != atom.index:
                            r = np.zeros(n_out)
                            r[atom.index] = 1.0
                            r[k] = -1.0
                            rows.append(r)
                            offsets.append(0.0)
                    term.append(("argmax", slice(start, len(rows)), False))
            self.terms.append(term)
        self.rows = np.array(rows, dtype=np.float64).reshape(len(rows), n_out)
        self.offsets = np.array(offsets, dtype=np.float64)

    def classify(self, lo, hi) -> np.ndarray:
        n = lo.shape[0]
        if self.rows.shape[0]:
            f_lo, f_hi = functional_bounds_batch(self.net, lo, hi, self.rows, self.offsets)
        else:
            f_lo = f_hi = np.zeros((n, 0))
        any_true = np.zeros(n, dtype=bool)
        all_false = np.ones(n, dtype=bool)
        for term in self.terms:
            term_true = np.ones(n, dtype=bool)
            term_false = np.zeros(n, dtype=bool)
            for kind, sl, strict in term:
                lo_s, hi_s = f_lo[:, sl], f_hi[:, sl]
                if kind == "linear":
                    if strict:
                        true, false = lo_s[:, 0] > 0.0, hi_s[:, 0] <= 0.0
                    else:
                        true, false = lo_s[:, 0] >= 0.0, hi_s[:, 0] < 0.0
                else:
                    # y_j - y_k > 0 for every k proves argmax j; any y_j - y_k < 0 refutes it.
                    true = np.all(lo_s > 0.0, axis=1)
                    false = np.any(hi_s < 0.0, axis=1)
                term_true &= true
                term_false |= false
            any_true |= term_true
            all_false &= term_false
        labels = np.full(n, UNKNOWN, dtype=np.int8)
        labels[all_false] = SAFE
        labels[any_true] = VIOLATING
        return labels


def classify_box(net: Network, post, box: Box) -> Label:
    """Three-way label of a single box from interval bounds."""
    if not isinstance(post, Property):
        post = Property(box, post, "query")
    if box.dim != net.input_dim:
        raise ShapeError(f"box has {box.dim} dims, network expects {net.input_dim}")
    compiled = _Compiled(net, post.with_pre(box))
    return Label(int(compiled.classify(box.lo[None, :], box.hi[None, :])[0]))


@dataclass(frozen=True)
class VerifierConfig:
    epsilon: float = 2.0 ** -8
    max_boxes: int = 2 ** 22
    workers: int = 1
    batch_size: int = 1 << 16
    max_counterexamples: int = 64
    keep_boxes: bool = False

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1.0:
            raise ContractError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if self.max_boxes < 1:
            raise ContractError("max_boxes must be positive")
        if self.workers < 1 or self.batch_size < 1:
            raise ContractError("workers and batch_size must be positive")


@dataclass
class RegionReport:
    """Partition of the precondition into safe / violating / unknown volume."""

    name: str
    safe_volume: float
    violating_volume: float
    unknown_volume: float
    violating_boxes: np.ndarray  # (N, 2, d): [:, 0] lower corners, [:, 1] upper corners
    violating_volumes: np.ndarray
    unknown_boxes: np.ndarray
    unknown_volumes: np.ndarray
    counterexamples: list
    complete: bool
    boxes_processed: int
    n_splits: int
    epsilon: float
    net: Network | None = field(default=None, repr=False, compare=False)
    prop: Property | None = field(default=None, repr=False, compare=False)

    @property
    def rate_lower(self) -> float:
        return self.violating_volume

    @property
    def rate_upper(self) -> float:
        return self.violating_volume + self.unknown_volume

    @property
    def adversarial_rate(self) -> float:
        return self.rate_upper

    def to_dict(self, include_boxes: bool = False) -> dict:
        d = {
            "name": self.name,
            "safe_volume": self.safe_volume,
            "violating_volume": self.violating_volume,
            "unknown_volume": self.unknown_volume,
            "rate_lower": self.rate_lower,
            "rate_upper": self.rate_upper,
            "adversarial_rate": self.adversarial_rate,
            "complete": self.complete,
            "boxes_processed": self.boxes_processed,
            "n_splits": self.n_splits,
            "epsilon": self.epsilon,
            "counterexamples": [[float(v) for v in x] for x in self.counterexamples],
        }
        if include_boxes:
            d["violating_boxes"] = self.violating_boxes.tolist()
            d["unknown_boxes"] = self.unknown_boxes.tolist()
        return d


def _require_bounded(prop: Property):
    if not (np.all(np.isfinite(prop.pre.lo)) and np.all(np.isfinite(prop.pre.hi))):
        raise ContractError("P=true must be supplied as an explicit bounded box")


class _Refinement:
    """FIFO work queue over dyadic sub-boxes of a precondition.

    A queued box is stored as integer ``(level, index)`` pairs per dimension,
    i.e. the sub-interval ``[index, index + 1] * 2**-level`` of the
    normalized side, so the frontier stays small even at millions of boxes.
    Coordinates are materialized one chunk at a time.
    """

    def __init__(self, net: Network, prop: Property, cfg: VerifierConfig):
        _require_bounded(prop)
        self.compiled = _Compiled(net, prop)
        self.cfg = cfg
        pre = prop.pre
        self.pre_lo, self.pre_hi = pre.lo, pre.hi
        self.splittable = (pre.hi - pre.lo) > 0
        self.max_level = min(52, max(0, math.ceil(-math.log2(cfg.epsilon) - 1e-12)))
        d = pre.dim
        self.index_dtype = np.int32 if self.max_level <= 30 else np.int64
        self.queue = deque([(np.zeros((1, d), dtype=np.int8), np.zeros((1, d), dtype=self.index_dtype))])
        self.chunk = cfg.batch_size * cfg.workers
        self.processed = 0
        self.n_splits = 0

    def coords(self, level, index):
        # Convex combination keeps the outer faces exact and makes the shared
        # face of two siblings the same float in both.
        def at(k):
            f = np.ldexp(k.astype(np.float64), -level.astype(np.int64))
            return self.pre_lo * (1.0 - f) + self.pre_hi * f
        return at(index), at(index + 1)

    def classify(self, lo, hi) -> np.ndarray:
        bs = self.cfg.batch_size
        chunks = [slice(i, min(i + bs, lo.shape[0])) for i in range(0, lo.shape[0], bs)]
        if self.cfg.workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(self.cfg.workers) as pool:
                parts = list(pool.map(lambda s: self.compiled.classify(lo[s], hi[s]), chunks))
        else:
            parts = [self.compiled.classify(lo[s], hi[s]) for s in chunks]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int8)

    def volumes(self, level) -> np.ndarray:
        if not level.size:
            return np.zeros(level.shape[0])
        return np.ldexp(1.0, -level[:, self.splittable].sum(axis=1, dtype=np.int64))

    def can_split(self, level) -> np.ndarray:
        if not self.splittable.any():
            return np.zeros(level.shape[0], dtype=bool)
        return level[:, self.splittable].min(axis=1) < self.max_level

    def _take(self, n):
        """Pop up to ``n`` boxes from the front of the queue, in order."""
        levels, indices, got = [], [], 0
        while self.queue and got < n:
            level, index = self.queue.popleft()
            if got + level.shape[0] > n:
                cut = n - got
                self.queue.appendleft((level[cut:], index[cut:]))
                level, index = level[:cut], index[:cut]
            levels.append(level)
            indices.append(index)
            got += level.shape[0]
        if len(levels) == 1:
            return levels[0], indices[0]
        return np.concatenate(levels), np.concatenate(indices)

    def _push_children(self, level, index):
        """Halve each box along its widest normalized (lowest-level) splittable dim."""
        n, d = level.shape
        if not n:
            return
        masked = np.where(self.splittable[None, :], level, np.iinfo(np.int8).max)
        dim = np.argmin(masked, axis=1)
        rows = np.arange(n)
        new_level = level.copy()
        new_level[rows, dim] += 1
        left = index.copy()
        left[rows, dim] *= 2
        right = left.copy()
        right[rows, dim] += 1
        # Interleave so each parent's left child precedes its right child.
        lvl2 = np.stack([new_level, new_level], axis=1).reshape(-1, d)
        idx2 = np.stack([left, right], axis=1).reshape(-1, d)
        self.n_splits += n
        self.queue.append((lvl2, idx2))

    def run(self, step):
        """Drain the queue in FIFO order within the box budget.

        ``step(lo, hi, level, labels)`` returns a mask of boxes to split, or
        ``None`` to stop early. Returns True when the queue was emptied.
        """
        while self.queue:
            budget = self.cfg.max_boxes - self.processed
            if budget <= 0:
                return False
            level, index = self._take(min(self.chunk, budget))
            lo, hi = self.coords(level, index)
            labels = self.classify(lo, hi)
            self.processed += level.shape[0]
            mask = step(lo, hi, level, labels)
            if mask is None:
                return False
            self._push_children(level[mask], index[mask])
        return True

    def leftover(self):
        """Yield ``(lo, hi, level)`` for every box still queued, in order."""
        while self.queue:
            level, index = self._take(self.chunk)
            lo, hi = self.coords(level, index)
            yield lo, hi, level


def _pack(lo, hi) -> np.ndarray:
    if not lo:
        return np.zeros((0, 2, 0))
    return np.stack([np.concatenate(lo), np.concatenate(hi)], axis=1)


def adversarial_rate(net: Network, prop: Property, cfg: VerifierConfig | None = None,
                     on_resolved=None) -> RegionReport:
    """Refine the precondition to ``cfg.epsilon`` and report normalized volumes.

    ``on_resolved(lo, hi, volumes, labels)`` is called for every batch of
    boxes that will not be split further (including boxes left in the queue
    when the budget runs out, which are labelled UNKNOWN). Box lists are only
    retained on the report when ``cfg.keep_boxes`` is set; violating boxes
    are always kept up to ``cfg.max_counterexamples``.
    """
    cfg = cfg or VerifierConfig()
    ref = _Refinement(net, prop, cfg)
    safe_parts, viol_parts, unk_parts = [], [], []
    v_lo, v_hi, v_vol, u_lo, u_hi, u_vol = [], [], [], [], [], []
    kept_violating = 0

    def step(lo, hi, level, labels):
        nonlocal kept_violating
        vol = ref.volumes(level)
        safe_parts.append(math.fsum(vol[labels == SAFE]))
        is_v = labels == VIOLATING
        viol_parts.append(math.fsum(vol[is_v]))
        if cfg.keep_boxes or kept_violating < cfg.max_counterexamples:
            idx = np.flatnonzero(is_v)
            if not cfg.keep_boxes:
                idx = idx[:cfg.max_counterexamples - kept_violating]
            v_lo.append(lo[idx])
            v_hi.append(hi[idx])
            v_vol.append(vol[idx])
            kept_violating += idx.size
        unk = labels == UNKNOWN
        splittable = unk & ref.can_split(level)
        final = unk & ~splittable
        unk_parts.append(math.fsum(vol[final]))
        if cfg.keep_boxes:
            u_lo.append(lo[final])
            u_hi.append(hi[final])
            u_vol.append(vol[final])
        if on_resolved is not None:
            done = ~splittable
            on_resolved(lo[done], hi[done], vol[done], labels[done])
        return splittable

    complete = ref.run(step)
    # Budget ran out: everything still queued counts as unknown.
    for lo, hi, level in ref.leftover():
        vol = ref.volumes(level)
        unk_parts.append(math.fsum(vol))
        if cfg.keep_boxes:
            u_lo.append(lo)
            u_hi.append(hi)
            u_vol.append(vol)
        if on_resolved is not None:
            on_resolved(lo, hi, vol, np.full(lo.shape[0], UNKNOWN, dtype=np.int8))

    viol_boxes = _pack(v_lo, v_hi)
    viol_vols = np.concatenate(v_vol) if v_vol else np.zeros(0)
    report = RegionReport(
        name=prop.name,
        safe_volume=math.fsum(safe_parts),
        violating_volume=math.fsum(viol_parts),
        unknown_volume=math.fsum(unk_parts),
        violating_boxes=viol_boxes,
        violating_volumes=viol_vols,
        unknown_boxes=_pack(u_lo, u_hi),
        unknown_volumes=np.concatenate(u_vol) if u_vol else np.zeros(0),
        counterexamples=[],
        complete=complete,
        boxes_processed=ref.processed,
        n_splits=ref.n_splits,
        epsilon=cfg.epsilon,
        net=net,
        prop=prop,
    )
    report.counterexamples = extract_counterexamples(report, cfg.max_counterexamples)
    return report


@dataclass(frozen=True)
class Decision:
    status: str  # "SAT", "UNSAT" or "UNKNOWN"
    witness: np.ndarray | None = None
    residual_volume: float = 0.0
    n_splits: int = 0
    boxes_processed: int = 0

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "witness": None if self.witness is None else [float(v) for v in self.witness],
            "residual_volume": self.residual_volume,
            "n_splits": self.n_splits,
            "boxes_processed": self.boxes_processed,
        }


def decide(net: Network, prop: Property, cfg: VerifierConfig | None = None) -> Decision:
    """SAT with a concrete witness, UNSAT when every sub-box is SAFE, else UNKNOWN."""
    cfg = cfg or VerifierConfig()
    ref = _Refinement(net, prop, cfg)
    residual = []
    witness = None

    def step(lo, hi, level, labels):
        nonlocal witness
        # Centers of violating boxes are witnesses by soundness, but every
        # candidate is re-checked concretely; unknown centers are free samples.
        candidates = np.flatnonzero(labels != SAFE)
        if candidates.size:
            centers = 0.5 * (lo[candidates] + hi[candidates])
            ok = ref.compiled.prop.holds(forward(net, centers))
            if ok.any():
                witness = centers[int(np.argmax(ok))]
                return None
        unk = labels == UNKNOWN
        splittable = unk & ref.can_split(level)
        residual.append(math.fsum(ref.volumes(level[unk & ~splittable])))
        return splittable

    ref.run(step)
    if witness is not None:
        return Decision("SAT", witness, 0.0, ref.n_splits, ref.processed)
    for _, _, level in ref.leftover():
        residual.append(math.fsum(ref.volumes(level)))
    residual_volume = math.fsum(residual)
    if residual_volume == 0.0:
        return Decision("UNSAT", None, 0.0, ref.n_splits, ref.processed)
    return Decision("UNKNOWN", None, residual_volume, ref.n_splits, ref.processed)


def extract_counterexamples(report: RegionReport, k: int, net: Network | None = None,
                            prop: Property | None = None, sample_unknown: int = 0,
                            rng=None) -> list[np.ndarray]:
    """Up to ``k`` concrete witnesses, largest violating boxes first.

    Each candidate is re-validated through a concrete forward pass. With
    ``sample_unknown > 0`` and too few violating boxes, that many points per
    unknown box (largest first) are also tried.
    """
    net = net or report.net
    prop = prop or report.prop
    if k <= 0:
        return []
    out: list[np.ndarray] = []
    boxes = report.violating_boxes
    if boxes.shape[0]:
        order = np.argsort(-report.violating_volumes, kind="stable")
        centers = 0.5 * (boxes[order, 0] + boxes[order, 1])
        if net is not None and prop is not None:
            centers = centers[prop.holds(forward(net, centers))]
        out.extend(centers[:k])
    if len(out) < k and sample_unknown > 0 and report.unknown_boxes.shape[0] and net is not None:
        rng = np.random.default_rng(rng)
        order = np.argsort(-report.unknown_volumes, kind="stable")
        for idx in order:
            lo, hi = report.unknown_boxes[idx]
            pts = lo + (hi - lo) * rng.random((sample_unknown, lo.shape[0]))
            hits = pts[prop.holds(forward(net, pts))]
            if hits.shape[0]:
                out.append(hits[0])
                if len(out) >= k:
                    break
    return [np.array(x) for x in out[:k]]
