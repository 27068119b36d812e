"""Select the kernel-sum implementation at import time.

The compiled ``_ckernels`` extension is used when it imports; setting the
environment variable ``FRACTALBEM_PURE_PYTHON=1`` forces the numpy fallback.
"""
from __future__ import annotations

import os
from types import ModuleType

from . import _pykernels


def _load_compiled() -> ModuleType | None:
    try:
        from . import _ckernels
    except ImportError:
        return None
    return _ckernels


_compiled = _load_compiled()
_forced_pure = os.environ.get("FRACTALBEM_PURE_PYTHON", "").strip() not in ("", "0")

impl: ModuleType = _pykernels if (_forced_pure or _compiled is None) else _compiled
BACKEND: str = impl.NAME


def available() -> dict[str, ModuleType]:
    """All importable implementations keyed by name (for tests and benchmarks)."""
    out = {"python": _pykernels}
    if _compiled is not None:
        out["cython"] = _compiled
    return out


def pair_sums(nodes, weights, offsets, pi, pj, k, mode, t=1.0):
    return impl.pair_sums(nodes, weights, offsets, pi, pj, float(k), int(mode), float(t))


def point_sums(points, nodes, weights, k, mode):
    return impl.point_sums(points, nodes, weights, float(k), int(mode))
