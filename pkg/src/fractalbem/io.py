"""IFS files, deterministic JSON/CSV output and version stamps.

IFS definition files are JSON objects::

    {"name": "unit_square", "ambient_dim": 2, "declared_measure": 1.0,
     "maps": [{"rho": 0.5, "rotation_deg": 0, "reflect": false, "translation": [0, 0]}, ...]}

A map gives its orthogonal part either as ``rotation_deg`` (+ optional
``reflect``, planar maps only) or as an explicit ``orthogonal`` matrix.
Validation errors name the offending field, e.g. ``maps[2].rho``.
"""
from __future__ import annotations

import json
import math
import os
import subprocess
from pathlib import Path

import numpy as np

from . import __version__, defaults
from .ifs import IFSError, IteratedFunctionSystem, SimilarityMap, rotation_matrix

_MAP_KEYS = {"rho", "rotation_deg", "orthogonal", "reflect", "translation"}
_TOP_KEYS = {"name", "ambient_dim", "maps", "declared_measure"}


class ValidationError(IFSError):
    """Invalid user input; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(path, f"expected a number, got {type(value).__name__}")
    if not math.isfinite(value):
        raise ValidationError(path, "must be finite")
    return float(value)


def _vector(value, n: int, path: str) -> np.ndarray:
    if not isinstance(value, list) or len(value) != n:
        raise ValidationError(path, f"expected a list of {n} numbers")
    return np.array([_number(v, f"{path}[{i}]") for i, v in enumerate(value)])


def ifs_from_dict(data, require_n_attractor: bool = False) -> IteratedFunctionSystem:
    """Validate a decoded IFS document and build the system."""
    if not isinstance(data, dict):
        raise ValidationError("$", "expected a JSON object")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ValidationError(sorted(unknown)[0], "unknown key")
    for key in ("ambient_dim", "maps"):
        if key not in data:
            raise ValidationError(key, "missing")
    n = data["ambient_dim"]
    if isinstance(n, bool) or n not in (1, 2):
        raise ValidationError("ambient_dim", "must be 1 or 2")
    name = data.get("name", "ifs")
    if not isinstance(name, str):
        raise ValidationError("name", "must be a string")
    raw_maps = data["maps"]
    if not isinstance(raw_maps, list) or len(raw_maps) < 2:
        raise ValidationError("maps", "need a list of at least two maps")
    maps = []
    for i, m in enumerate(raw_maps):
        p = f"maps[{i}]"
        if not isinstance(m, dict):
            raise ValidationError(p, "expected an object")
        unknown = set(m) - _MAP_KEYS
        if unknown:
            raise ValidationError(f"{p}.{sorted(unknown)[0]}", "unknown key")
        if "rho" not in m:
            raise ValidationError(f"{p}.rho", "missing")
        rho = _number(m["rho"], f"{p}.rho")
        if not 0.0 < rho < 1.0:
            raise ValidationError(f"{p}.rho", f"{rho} is not in (0, 1)")
        if "translation" not in m:
            raise ValidationError(f"{p}.translation", "missing")
        shift = _vector(m["translation"], n, f"{p}.translation")
        reflect = m.get("reflect", False)
        if not isinstance(reflect, bool):
            raise ValidationError(f"{p}.reflect", "must be true or false")
        if "orthogonal" in m and "rotation_deg" in m:
            raise ValidationError(f"{p}.orthogonal", "give either orthogonal or rotation_deg")
        if "orthogonal" in m:
            rows = m["orthogonal"]
            if not isinstance(rows, list) or len(rows) != n:
                raise ValidationError(f"{p}.orthogonal", f"expected {n} rows")
            Q = np.array([_vector(r, n, f"{p}.orthogonal[{j}]") for j, r in enumerate(rows)])
            if not np.allclose(Q @ Q.T, np.eye(n), atol=1e-12, rtol=0):
                raise ValidationError(f"{p}.orthogonal", "matrix is not orthogonal")
            if reflect:
                raise ValidationError(f"{p}.reflect", "not allowed with an explicit orthogonal matrix")
        elif n == 2:
            angle = _number(m.get("rotation_deg", 0.0), f"{p}.rotation_deg")
            Q = rotation_matrix(angle, reflect)
        else:
            if "rotation_deg" in m and _number(m["rotation_deg"], f"{p}.rotation_deg") != 0.0:
                raise ValidationError(f"{p}.rotation_deg", "rotations need ambient_dim 2")
            Q = np.array([[-1.0 if reflect else 1.0]])
        maps.append(SimilarityMap(rho, Q, shift))
    measure = data.get("declared_measure")
    if measure is not None:
        measure = _number(measure, "declared_measure")
        if measure <= 0:
            raise ValidationError("declared_measure", "must be positive")
    ifs = IteratedFunctionSystem(tuple(maps), name, measure)
    if require_n_attractor and not ifs.is_n_attractor:
        total = float(np.sum(ifs.rhos ** n))
        raise ValidationError("maps", f"sum of rho^{n} is {total:.17g}, not 1 (not an n-attractor)")
    return ifs


def ifs_to_dict(ifs: IteratedFunctionSystem) -> dict:
    """Lossless document form (explicit orthogonal matrices)."""
    return {
        "name": ifs.name,
        "ambient_dim": ifs.ambient_dim,
        "declared_measure": ifs.declared_measure,
        "maps": [{"rho": m.rho, "orthogonal": m.orthogonal.tolist(), "translation": m.translation.tolist()}
                 for m in ifs.maps],
    }


def parse_ifs_file(path, require_n_attractor: bool = False) -> IteratedFunctionSystem:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(str(path), f"cannot read file ({exc.strerror})") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(str(path), f"invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return ifs_from_dict(data, require_n_attractor)


def serialize_ifs(ifs: IteratedFunctionSystem) -> str:
    return dumps(ifs_to_dict(ifs))


def ifs_equal(a: IteratedFunctionSystem, b: IteratedFunctionSystem) -> bool:
    return (a.name == b.name and a.declared_measure == b.declared_measure and a.M == b.M
            and all(np.array_equal(x.orthogonal, y.orthogonal) and x.rho == y.rho
                    and np.array_equal(x.translation, y.translation) for x, y in zip(a.maps, b.maps)))


# ---------------------------------------------------------------------------
# deterministic output
# ---------------------------------------------------------------------------
def fmt(x: float) -> str:
    """Float with 17 significant digits (round-trips exactly, always recognizable as a float)."""
    text = format(float(x), f".{defaults.DIGITS}g")
    if math.isfinite(float(x)) and not any(c in text for c in ".en"):
        text += ".0"
    return text


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": _plain(float(obj.real)), "im": _plain(float(obj.imag))}
    if isinstance(obj, (float, np.floating)):
        return _Float(float(obj))
    if isinstance(obj, Path):
        return str(obj)
    return obj


class _Float(float):
    pass


def _encode(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, _Float):
        return fmt(obj) if math.isfinite(obj) else "null"
    return json.dumps(obj)


def dumps(obj, indent: int = 2) -> str:
    """JSON text with every float at 17 significant digits; non-finite floats become ``null``."""
    return _encode(_plain(obj), indent, 0) + "\n"


def write_text(path, text: str) -> Path:
    path = resolve_output(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def write_csv(path, rows) -> Path:
    return write_text(path, "\n".join(rows) + "\n")


def resolve_output(path) -> Path:
    """Relative paths are placed under ``$FRACTALBEM_OUTPUT_DIR`` when it is set."""
    path = Path(path)
    base = os.environ.get("FRACTALBEM_OUTPUT_DIR")
    if base and not path.is_absolute():
        return Path(base) / path
    return path


def version_stamp() -> str:
    """``git describe``-style identifier of the running code (package version outside a checkout)."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=5, check=True)
        described = out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        described = ""
    return f"{__version__}+g{described}" if described else __version__
