"""Helmholtz fundamental solutions, their singular/smooth splitting and plane waves.

The screen lives in ``R^n x {0}`` inside ``R^(n+1)``; ``n = 2`` uses the 3-D
outgoing fundamental solution ``exp(ikr) / (4 pi r)`` and ``n = 1`` the 2-D one
``(i/4) H_0^(1)(kr)``.

The Hankel function is delegated to :func:`scipy.special.hankel1` (AMOS); the
ascending series used for the ``n = 1`` smooth remainder is written out here
because it is needed in cancellation-free form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

EULER_GAMMA = float(np.euler_gamma)

#: integer codes shared with the compiled kernel backend
MODE_HELMHOLTZ_3D = 0
MODE_REMAINDER_3D = 1
MODE_POWER = 2
MODE_LOG = 3
MODE_HELMHOLTZ_2D = 4
MODE_REMAINDER_2D = 5
MODE_TAIL_3D = 6

# kr below which the n = 1 remainder is summed from the ascending series
_SERIES_SWITCH = 1.0
_SERIES_TERMS = 24


def _positive(name: str, x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise ValueError(f"{name} must be positive")
    return arr


def hankel0_first_kind(x):
    """``H_0^(1)(x) = J_0(x) + i Y_0(x)`` for ``x > 0``."""
    x = _positive("x", x)
    return special.hankel1(0, x)


def _y0_regular_series(z: np.ndarray) -> np.ndarray:
    """``Y_0(z) - (2/pi)(ln(z/2) + gamma) J_0(z)`` by its ascending series."""
    q = 0.25 * z * z
    term = np.ones_like(z)
    harmonic = 0.0
    total = np.zeros_like(z)
    for m in range(1, _SERIES_TERMS + 1):
        term = term * (-q) / (m * m)
        harmonic += 1.0 / m
        total -= harmonic * term
    return (2.0 / math.pi) * total


def _check_dim(n: int) -> None:
    if n not in (1, 2):
        raise ValueError("screen dimension n must be 1 or 2")


def _check_k(k: float) -> None:
    if not k > 0:
        raise ValueError("wavenumber k must be positive")


def fundamental_solution(n: int, k: float, r):
    """Outgoing Helmholtz fundamental solution in ``R^(n+1)`` at distance ``r > 0``."""
    _check_dim(n)
    _check_k(k)
    r = _positive("r", r)
    if n == 2:
        return np.exp(1j * k * r) / (4.0 * math.pi * r)
    return 0.25j * special.hankel1(0, k * r)


def singular_part(n: int, r):
    """Static part removed by :func:`kernel_split`: ``1/(4 pi r)`` or ``-ln(r)/(2 pi)``."""
    _check_dim(n)
    r = _positive("r", r)
    if n == 2:
        return 1.0 / (4.0 * math.pi * r)
    return -np.log(r) / (2.0 * math.pi)


def remainder_diagonal(n: int, k: float) -> complex:
    """Limit of the smooth remainder as ``r -> 0``."""
    _check_dim(n)
    _check_k(k)
    if n == 2:
        return 1j * k / (4.0 * math.pi)
    return 0.25j - (math.log(k / 2.0) + EULER_GAMMA) / (2.0 * math.pi)


def smooth_remainder(n: int, k: float, r):
    """``Phi - singular_part``, continuous up to and including ``r = 0``."""
    _check_dim(n)
    _check_k(k)
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("r must be non-negative")
    out = np.empty(r.shape, dtype=complex)
    zero = r == 0
    out[zero] = remainder_diagonal(n, k)
    rr = r[~zero]
    if n == 2:
        kr = k * rr
        # (exp(ikr) - 1)/(4 pi r) without cancellation
        out[~zero] = (-2.0 * np.sin(0.5 * kr) ** 2 + 1j * np.sin(kr)) / (4.0 * math.pi * rr)
        return out
    out[~zero] = _remainder_2d(k, rr)
    return out


def remainder_tail(k: float, r):
    """``(exp(ikr) - 1 - ikr + (kr)^2/2) / (4 pi r)``: the 3D remainder minus its ``|r|``-linear Taylor part.

    It vanishes like ``r^2`` at the origin and is smooth enough for plain
    tensor rules on touching and coincident cells.
    """
    _check_k(k)
    r = np.asarray(r, dtype=float)
    z = k * r
    out = np.zeros(r.shape, dtype=complex)
    small = (z < 0.5) & (r > 0)
    if np.any(small):
        zs = 1j * z[small]
        term = zs ** 3 / 6.0
        acc = term.copy()
        for m in range(4, 20):
            term = term * zs / m
            acc += term
        out[small] = acc / (4.0 * math.pi * r[small])
    big = z >= 0.5
    if np.any(big):
        zb = z[big]
        out[big] = (np.expm1(1j * zb) - 1j * zb + 0.5 * zb ** 2) / (4.0 * math.pi * r[big])
    return out


def _remainder_2d(k: float, r: np.ndarray) -> np.ndarray:
    z = k * r
    res = np.empty(r.shape, dtype=complex)
    small = z < _SERIES_SWITCH
    if np.any(small):
        zs, rs = z[small], r[small]
        j0 = special.j0(zs)
        # (i/4)J0 - (1/4)Y0 + ln(r)/(2 pi), with the ln r terms combined as ln(r)(1 - J0)
        res[small] = (0.25j * j0
                      - (math.log(0.5 * k) + EULER_GAMMA) * j0 / (2.0 * math.pi)
                      + np.log(rs) * (1.0 - j0) / (2.0 * math.pi)
                      - 0.25 * _y0_regular_series(zs))
    big = ~small
    if np.any(big):
        res[big] = 0.25j * special.hankel1(0, z[big]) + np.log(r[big]) / (2.0 * math.pi)
    return res


def kernel_split(n: int, k: float, r):
    """Return ``(singular_part, smooth_remainder)``; the singular part is ``inf`` at ``r = 0``."""
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        if n == 2:
            sing = np.where(r > 0, 1.0 / (4.0 * math.pi * np.where(r > 0, r, 1.0)), np.inf)
        else:
            _check_dim(n)
            sing = np.where(r > 0, -np.log(np.where(r > 0, r, 1.0)) / (2.0 * math.pi), np.inf)
    return sing, smooth_remainder(n, k, r)


def kernel_values(mode: int, k: float, r: np.ndarray, t: float = 1.0) -> np.ndarray:
    """Vectorized kernel by backend mode code (``r = 0`` entries of singular modes give 0)."""
    r = np.asarray(r, dtype=float)
    if mode == MODE_HELMHOLTZ_3D:
        with np.errstate(divide="ignore", invalid="ignore"):
            v = np.exp(1j * k * r) / (4.0 * math.pi * r)
        return np.where(r > 0, v, 0.0)
    if mode == MODE_REMAINDER_3D:
        return smooth_remainder(2, k, r)
    if mode == MODE_POWER:
        with np.errstate(divide="ignore"):
            return np.where(r > 0, np.where(r > 0, r, 1.0) ** (-t), 0.0).astype(complex)
    if mode == MODE_LOG:
        return np.where(r > 0, np.log(np.where(r > 0, r, 1.0)), 0.0).astype(complex)
    if mode == MODE_HELMHOLTZ_2D:
        pos = r > 0
        out = np.zeros(r.shape, dtype=complex)
        out[pos] = 0.25j * special.hankel1(0, k * r[pos])
        return out
    if mode == MODE_REMAINDER_2D:
        return smooth_remainder(1, k, r)
    if mode == MODE_TAIL_3D:
        return remainder_tail(k, r)
    raise ValueError(f"unknown kernel mode {mode}")


def full_mode(n: int) -> int:
    return MODE_HELMHOLTZ_3D if n == 2 else MODE_HELMHOLTZ_2D


def remainder_mode(n: int) -> int:
    return MODE_REMAINDER_3D if n == 2 else MODE_REMAINDER_2D


def near_tail_mode(n: int) -> int:
    """Kernel left for the tensor rule on unseparated pairs once the non-smooth parts are handled exactly."""
    return MODE_TAIL_3D if n == 2 else MODE_REMAINDER_2D


@dataclass(frozen=True)
class IncidentPlaneWave:
    """Plane wave ``exp(i k theta . x)`` in ``R^(n+1)``."""

    k: float
    direction: tuple[float, ...]

    def __post_init__(self):
        _check_k(self.k)
        d = np.asarray(self.direction, dtype=float)
        if d.ndim != 1 or d.size not in (2, 3):
            raise ValueError("direction must be a vector in R^2 or R^3")
        if abs(np.linalg.norm(d) - 1.0) > 1e-14:
            raise ValueError("direction must be a unit vector")
        object.__setattr__(self, "direction", tuple(float(v) for v in d))

    @classmethod
    def normal(cls, k: float, n: int = 2) -> "IncidentPlaneWave":
        """Wave travelling straight down onto the screen plane."""
        return cls(k, tuple([0.0] * n + [-1.0]))

    @classmethod
    def from_angles(cls, k: float, n: int, polar_deg: float, azimuth_deg: float = 0.0):
        """Direction at ``polar_deg`` from the downward normal."""
        p, a = math.radians(polar_deg), math.radians(azimuth_deg)
        if n == 1:
            return cls(k, (math.sin(p), -math.cos(p)))
        return cls(k, (math.sin(p) * math.cos(a), math.sin(p) * math.sin(a), -math.cos(p)))

    @property
    def n(self) -> int:
        return len(self.direction) - 1

    def __call__(self, x):
        """Evaluate ``u^i`` at points of ``R^(n+1)`` (last axis)."""
        x = np.asarray(x, dtype=float)
        return np.exp(1j * self.k * (x @ np.asarray(self.direction)))


def incident_trace(wave: IncidentPlaneWave, x):
    """Dirichlet datum ``g(x) = -exp(i k theta~ . x)`` for points ``x`` of the screen plane."""
    x = np.asarray(x, dtype=float)
    tangential = np.asarray(wave.direction[:-1])
    if x.shape[-1] != tangential.size:
        raise ValueError(f"points must have {tangential.size} coordinates")
    return -np.exp(1j * wave.k * (x @ tangential))
