"""Canonical JSON serialization and file formats.

All machine-readable outputs go through canonical_dumps: keys sorted, floats
rendered with %.12g, no whitespace variation. Regenerating the same object
therefore reproduces the same bytes, which the determinism checks rely on.
"""

from __future__ import annotations

import hashlib
import json
import math
import os

import numpy as np

from .function_class import FunctionClass
from .game import TabularMG
from .instances import LinearMGSpec


def _render(obj) -> str:
    if obj is None or obj is True or obj is False:
        return json.dumps(obj)
    if isinstance(obj, (np.integer, int)):
        return str(int(obj))
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if not math.isfinite(x):
            raise ValueError(f"non-finite value {x!r} cannot be serialized")
        return format(x, ".12g")
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return _render(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_render(v) for v in obj) + "]"
    if isinstance(obj, dict):
        items = sorted(obj.items(), key=lambda kv: kv[0])
        return "{" + ",".join(json.dumps(str(k)) + ":" + _render(v) for k, v in items) + "}"
    raise TypeError(f"cannot serialize {type(obj)!r}")


def canonical_dumps(obj) -> str:
    return _render(obj) + "\n"


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        fh.write(canonical_dumps(obj))


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def sha256_of(obj) -> str:
    return hashlib.sha256(canonical_dumps(obj).encode()).hexdigest()


def save_instance(path, mg: TabularMG) -> None:
    write_json(path, mg.to_dict())


def load_instance(path) -> TabularMG:
    return TabularMG.from_dict(read_json(path))


def save_function_class(path, fc: FunctionClass) -> None:
    write_json(path, fc.to_dict())


def load_function_class(path) -> FunctionClass:
    return FunctionClass.from_dict(read_json(path))


def save_linear_spec(path, spec: LinearMGSpec) -> None:
    write_json(path, spec.to_dict())


def load_linear_spec(path) -> LinearMGSpec:
    return LinearMGSpec.from_dict(read_json(path))
