"""Safety property families.

For Jumping World the unsafe event is "the policy picks a direction whose
sensor reports an obstacle". Sensor bits are pinned to exact values (point
intervals) and every combination of the three other bits is enumerated, so
the family covers every state in which a collision is possible.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError
from .intervals import Box
from .jumping_world import ACTION_NAMES, GridConfig
from .network import Network
from .verifier import ArgmaxAtom, Property


@dataclass(frozen=True)
class PropertyFamily:
    properties: tuple
    coverage_note: str = ""
    name: str = "family"

    def __post_init__(self):
        props = tuple(self.properties)
        if not props:
            raise ContractError("a property family needs at least one property")
        names = [p.name for p in props]
        if len(set(names)) != len(names):
            raise ContractError("property names must be unique")
        object.__setattr__(self, "properties", props)

    def __len__(self):
        return len(self.properties)

    def __iter__(self):
        return iter(self.properties)

    def __getitem__(self, i):
        return self.properties[i]

    def validate(self, net: Network) -> None:
        for p in self.properties:
            p.validate(net)


def position_range(cfg: GridConfig):
    """Observed-position bounds: every cell centre plus/minus half a cell."""
    return (-0.5, cfg.width - 0.5), (-0.5, cfg.height - 0.5)


def jumping_world_properties(cfg: GridConfig) -> PropertyFamily:
    (x_lo, x_hi), (y_lo, y_hi) = position_range(cfg)
    props = []
    for d, dname in enumerate(ACTION_NAMES):
        others = [k for k in range(4) if k != d]
        for bits in itertools.product((0.0, 1.0), repeat=3):
            sensors = np.zeros(4)
            sensors[d] = 1.0
            sensors[others] = bits
            lo = [x_lo, y_lo, *sensors, 0.0, 0.0]
            hi = [x_hi, y_hi, *sensors, cfg.width - 1.0, cfg.height - 1.0]
            tag = "".join(str(int(s)) for s in sensors)
            props.append(Property(Box(lo, hi), [[ArgmaxAtom(d)]], f"jw_{dname}_{tag}"))
    note = ("moving toward a sensed obstacle or wall, for each direction and each "
            "assignment of the remaining sensor bits")
    return PropertyFamily(tuple(props), note, f"jumping_world_{cfg.width}x{cfg.height}")


def matching_properties(family: PropertyFamily, obs, y=None) -> list:
    """Properties whose precondition contains ``obs`` (and whose postcondition holds on ``y``)."""
    obs = np.asarray(obs, dtype=np.float64)
    out = []
    for p in family:
        if p.pre.contains(obs) and (y is None or bool(p.holds(y))):
            out.append(p)
    return out


def load_properties(source, net: Network | None = None) -> PropertyFamily:
    """Parse a property file (path, JSON text or dict) and validate it against ``net``."""
    from .io import parse_properties

    family = parse_properties(source)
    if net is not None:
        try:
            family.validate(net)
        except ShapeError as exc:
            raise ShapeError(f"property file does not match network: {exc}") from exc
    return family
