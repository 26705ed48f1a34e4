"""Model files, sample CSVs and diff-stable numeric serialisation.

Model file layout (JSON)::

    {
      "space":   {"labels": ["a", "b"], "mu": [1.0, 1.0]},
      "process": {"variant": "superposition", "components": [
          {"variant": "poisson", "nu": [1.0, 2.0]},
          {"variant": "determinantal",
           "K": [[[0.5, 0.0], [0.25, 0.0]], [[0.25, 0.0], [0.5, 0.0]]]}
      ]}
    }

``mu`` is optional (counting measure). Kernel entries are ``[re, im]``
pairs in row-major order; bare reals are accepted as a shorthand.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Any

import numpy as np

from .model import (
    Determinantal,
    GroundSpace,
    IntensityMeasure,
    Kernel,
    Poisson,
    ProcessModel,
    Superposition,
    TestFunction,
)


class ConfigError(ValueError):
    """Malformed configuration or model file; ``where`` names the offending field."""

    def __init__(self, message: str, where: str = ""):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


# numbers ---------------------------------------------------------------------

def fmt(x: float) -> str:
    """17 significant digits; stable across runs."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _json_value(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if v is None:
        return "null"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return fmt(f) if math.isfinite(f) else json.dumps(fmt(f))
    if isinstance(v, (complex, np.complexfloating)):
        return "[" + _json_value(float(v.real)) + ", " + _json_value(float(v.imag)) + "]"
    if isinstance(v, str):
        return json.dumps(v, ensure_ascii=False)
    if isinstance(v, np.ndarray):
        return _json_value(v.tolist())
    if isinstance(v, dict):
        items = [json.dumps(str(k), ensure_ascii=False) + ": " + _json_value(val) for k, val in v.items()]
        return "{" + ", ".join(items) + "}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_json_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialise {type(v).__name__}")


def dumps(obj: Any) -> str:
    """JSON text with every float printed to 17 significant digits."""
    return _pretty(obj) + "\n"


def write_json(path: Path, obj: Any) -> None:
    Path(path).write_text(dumps(obj), encoding="utf-8")


def _pretty(obj: Any, indent: int = 0) -> str:
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if isinstance(obj, dict) and obj:
        rows = [f"{inner}{json.dumps(str(k), ensure_ascii=False)}: {_pretty(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(rows) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)) and obj and any(isinstance(x, (dict, list, tuple)) for x in obj):
        rows = [inner + _pretty(v, indent + 1) for v in obj]
        return "[\n" + ",\n".join(rows) + "\n" + pad + "]"
    return _json_value(obj)


# models ----------------------------------------------------------------------

def _reals(value: Any, where: str, length: int | None = None) -> np.ndarray:
    if not isinstance(value, list):
        raise ConfigError("expected a list of numbers", where)
    out = []
    for i, v in enumerate(value):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"entry {i} is not a number", where)
        out.append(float(v))
    if length is not None and len(out) != length:
        raise ConfigError(f"expected {length} entries, got {len(out)}", where)
    return np.array(out)


def _complex_entry(v: Any, where: str) -> complex:
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return complex(v)
    if (
        isinstance(v, list)
        and len(v) == 2
        and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v)
    ):
        return complex(v[0], v[1])
    raise ConfigError("kernel entries must be [re, im] pairs or numbers", where)


def space_from_dict(d: Any) -> GroundSpace:
    if not isinstance(d, dict):
        raise ConfigError("expected an object", "space")
    if "labels" not in d:
        raise ConfigError("missing field", "space.labels")
    labels = d["labels"]
    if not isinstance(labels, list) or not labels:
        raise ConfigError("expected a non-empty list", "space.labels")
    mu = d.get("mu")
    mu = np.ones(len(labels)) if mu is None else _reals(mu, "space.mu", len(labels))
    try:
        return GroundSpace(tuple(str(x) for x in labels), mu)
    except ValueError as e:
        raise ConfigError(str(e), "space") from None


def process_from_dict(d: Any, space: GroundSpace, where: str = "process") -> ProcessModel:
    if not isinstance(d, dict):
        raise ConfigError("expected an object", where)
    variant = d.get("variant")
    try:
        if variant == "poisson":
            if "nu" not in d:
                raise ConfigError("missing field", f"{where}.nu")
            return Poisson(IntensityMeasure(space, _reals(d["nu"], f"{where}.nu", space.n)))
        if variant == "determinantal":
            rows = d.get("K")
            if not isinstance(rows, list) or len(rows) != space.n:
                raise ConfigError(f"expected {space.n} rows", f"{where}.K")
            K = np.zeros((space.n, space.n), dtype=complex)
            for i, row in enumerate(rows):
                if not isinstance(row, list) or len(row) != space.n:
                    raise ConfigError(f"expected {space.n} entries", f"{where}.K[{i}]")
                for j, v in enumerate(row):
                    K[i, j] = _complex_entry(v, f"{where}.K[{i}][{j}]")
            return Determinantal(Kernel(space, K))
        if variant == "superposition":
            comps = d.get("components")
            if not isinstance(comps, list) or not comps:
                raise ConfigError("expected a non-empty list", f"{where}.components")
            return Superposition(
                tuple(process_from_dict(c, space, f"{where}.components[{i}]") for i, c in enumerate(comps))
            )
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(str(e), where) from None
    raise ConfigError(f"unknown variant {variant!r}", f"{where}.variant")


def model_from_dict(d: Any) -> tuple[GroundSpace, ProcessModel]:
    if not isinstance(d, dict):
        raise ConfigError("top level must be an object")
    if "space" not in d:
        raise ConfigError("missing field", "space")
    if "process" not in d:
        raise ConfigError("missing field", "process")
    space = space_from_dict(d["space"])
    return space, process_from_dict(d["process"], space)


def load_json(path: Path) -> Any:
    text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e.msg} (line {e.lineno}, column {e.colno})", str(path)) from None


def load_model(path: Path) -> tuple[GroundSpace, ProcessModel]:
    return model_from_dict(load_json(path))


def space_to_dict(space: GroundSpace) -> dict:
    return {"labels": list(space.labels), "mu": [float(x) for x in space.mu]}


def process_to_dict(model: ProcessModel) -> dict:
    if isinstance(model, Poisson):
        return {"variant": "poisson", "nu": [float(x) for x in model.intensity.nu]}
    if isinstance(model, Determinantal):
        K = model.kernel.K
        return {
            "variant": "determinantal",
            "K": [[[float(v.real), float(v.imag)] for v in row] for row in K],
        }
    return {"variant": "superposition", "components": [process_to_dict(c) for c in model.components]}


def model_to_dict(model: ProcessModel) -> dict:
    return {"space": space_to_dict(model.space), "process": process_to_dict(model)}


def model_digest(model: ProcessModel) -> str:
    return hashlib.sha256(_json_value(model_to_dict(model)).encode()).hexdigest()


def test_function_from_list(space: GroundSpace, values: Any, where: str = "phi") -> TestFunction:
    if not isinstance(values, list) or len(values) != space.n:
        raise ConfigError(f"expected {space.n} entries", where)
    return TestFunction(space, np.array([_complex_entry(v, f"{where}[{i}]") for i, v in enumerate(values)]))


test_function_from_list.__test__ = False


# CSV -----------------------------------------------------------------------

def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def write_samples(path: Path, batch) -> None:
    write_csv(path, list(batch.space.labels), (list(map(int, r)) for r in batch.counts))


def read_samples(path: Path, space: GroundSpace | None = None):
    from .samplers import SampleBatch

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError("empty sample file", str(path)) from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ConfigError(f"expected {len(header)} columns, got {len(row)}", f"{path}:{lineno}")
            try:
                rows.append([int(x) for x in row])
            except ValueError:
                raise ConfigError("counts must be integers", f"{path}:{lineno}") from None
    if space is None:
        space = GroundSpace.counting(len(header), header)
    elif list(space.labels) != header:
        raise ConfigError("sample header does not match the model's atom labels", str(path))
    if not rows:
        raise ConfigError("sample file has no rows", str(path))
    return SampleBatch(space, np.array(rows, dtype=np.int64))
