"""JSON file formats, provenance hashing and atomic writes.

Network file::

    {"input_dim": 2,
     "layers": [{"weights": [[5, -1], [-1, 3]], "bias": [0, 0], "activation": "relu"},
                {"weights": [[1, 3]], "bias": [0], "activation": "linear"}]}

``leaky_relu`` layers may carry a ``"slope"``. Property file::

    {"properties": [{"name": "sat2d", "pre": [[-10, 10], [-10, 10]],
                     "post": [[{"linear": {"c": [1], "b": 10, "strict": false}}]]}]}

``post`` is a DNF: a list of conjunctions, each a list of atoms; an atom is
either ``{"linear": {...}}`` or ``{"argmax": k}``. Floats are written with
``repr``, which round-trips float64 exactly.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import AdvRateError, ParseError
from .intervals import Box
from .network import Activation, Layer, Network
from .properties import PropertyFamily
from .verifier import ArgmaxAtom, LinearAtom, Property

FORMAT_VERSION = 1


def _read_json(source, what: str):
    """Accept a dict, a JSON string or a path; return ``(data, label)``."""
    if isinstance(source, dict):
        return source, f"<{what}>"
    if isinstance(source, (str, os.PathLike)) and not str(source).lstrip().startswith("{"):
        path = Path(source)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ParseError(f"cannot read {what} file: {exc.strerror}", str(path)) from exc
        label = str(path)
    else:
        text, label = str(source), f"<{what}>"
    try:
        return json.loads(text), label
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, label, f"line {exc.lineno} column {exc.colno}") from exc


def network_to_dict(net: Network) -> dict:
    layers = []
    for layer in net.layers:
        d = {"weights": layer.weights.tolist(), "bias": layer.bias.tolist()}
        d.update(layer.activation.to_dict())
        layers.append(d)
    return {"input_dim": net.input_dim, "layers": layers}


def parse_network(source) -> Network:
    data, label = _read_json(source, "network")
    if not isinstance(data, dict) or "layers" not in data:
        raise ParseError("expected an object with a 'layers' list", label)
    layers = []
    for i, ld in enumerate(data["layers"]):
        where = f"layers[{i}]"
        try:
            act = Activation(ld.get("activation", "linear"), float(ld.get("slope", 0.01)))
            layers.append(Layer(ld["weights"], ld["bias"], act))
        except KeyError as exc:
            raise ParseError(f"missing field {exc}", label, where) from exc
        except (TypeError, ValueError, AdvRateError) as exc:
            raise ParseError(str(exc), label, where) from exc
    try:
        return Network(layers, data.get("input_dim"))
    except AdvRateError as exc:
        raise ParseError(str(exc), label) from exc


def load_network(path) -> Network:
    return parse_network(path)


def save_network(net: Network, path, metadata: dict | None = None) -> None:
    d = network_to_dict(net)
    if metadata:
        d["metadata"] = metadata
    write_json(path, d)


def _parse_atom(a, label, where):
    if not isinstance(a, dict) or len(a) != 1:
        raise ParseError("atom must be an object with exactly one key", label, where)
    if "argmax" in a:
        if not isinstance(a["argmax"], int) or isinstance(a["argmax"], bool):
            raise ParseError("argmax atom needs an integer index", label, where)
        return ArgmaxAtom(a["argmax"])
    if "linear" in a:
        lin = a["linear"]
        try:
            return LinearAtom(lin["c"], float(lin["b"]), bool(lin.get("strict", False)))
        except KeyError as exc:
            raise ParseError(f"linear atom missing {exc}", label, where) from exc
        except (TypeError, ValueError, AdvRateError) as exc:
            raise ParseError(str(exc), label, where) from exc
    raise ParseError(f"unknown atom kind {next(iter(a))!r}", label, where)


def property_to_dict(p: Property) -> dict:
    return {"name": p.name, "pre": p.pre.to_list(),
            "post": [[atom.to_dict() for atom in conj] for conj in p.post]}


def family_to_dict(family: PropertyFamily) -> dict:
    return {"name": family.name, "coverage_note": family.coverage_note,
            "properties": [property_to_dict(p) for p in family]}


def parse_properties(source) -> PropertyFamily:
    data, label = _read_json(source, "property")
    if not isinstance(data, dict) or not isinstance(data.get("properties"), list):
        raise ParseError("expected an object with a 'properties' list", label)
    props = []
    for i, pd in enumerate(data["properties"]):
        where = f"properties[{i}]"
        try:
            name = str(pd.get("name", f"property_{i}"))
            pre = Box.from_intervals(pd["pre"])
            post = [[_parse_atom(a, label, f"{where}.post[{j}][{k}]") for k, a in enumerate(conj)]
                    for j, conj in enumerate(pd["post"])]
            props.append(Property(pre, post, name))
        except ParseError:
            raise
        except KeyError as exc:
            raise ParseError(f"missing field {exc}", label, where) from exc
        except (TypeError, ValueError, AdvRateError) as exc:
            raise ParseError(str(exc), label, where) from exc
    try:
        return PropertyFamily(tuple(props), data.get("coverage_note", ""), data.get("name", "family"))
    except AdvRateError as exc:
        raise ParseError(str(exc), label) from exc


def save_properties(family: PropertyFamily, path) -> None:
    write_json(path, family_to_dict(family))


def _default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, default=_default) + "\n"


def config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"), default=_default)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def write_text(path, text: str) -> None:
    """Write-temp-then-rename so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    write_text(path, dumps(obj))


def write_result(path, command: str, config: dict, result) -> dict:
    """Result file with a provenance header: the flags and their hash."""
    doc = {"command": command, "config": config, "config_hash": config_hash(config),
           "format_version": FORMAT_VERSION, "result": result}
    write_json(path, doc)
    return doc


def write_csv(path, header, rows) -> None:
    import csv
    import io as _io

    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    write_text(path, buf.getvalue())
