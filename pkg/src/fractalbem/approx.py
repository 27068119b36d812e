"""Piecewise-constant L2 projection on fractal meshes and grid Sobolev norms.

Functions on ``Gamma`` are extended by zero to ``R^n``; negative and
fractional norms are evaluated for that extension on a regular grid with
the unitary Fourier transform

    ||u||_{H^s}^2 = int (1 + |xi|^2)^s |u^(xi)|^2 dxi,
    u^(xi) = (2 pi)^(-n/2) int u(x) exp(-i xi.x) dx,

discretized by a zero-padded FFT.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import fft

from .ifs import FractalMesh, MapArray, refine_maps
from .quadrature import CellRules

def poincare_constant(n: int) -> float:
    """Explicit constant of the projection estimate ``||u - P_h u|| <= C h ||grad u||``."""
    return 3.0 ** (1 + n / 2) * math.sqrt(n) / math.pi


@dataclass
class PiecewiseConstant:
    """One value per mesh cell (unnormalized indicator basis)."""

    mesh: FractalMesh
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients)
        if self.coefficients.shape != (len(self.mesh),):
            raise ValueError("need exactly one coefficient per cell")

    def __call__(self, cell_index: np.ndarray) -> np.ndarray:
        return self.coefficients[cell_index]


def _rules(mesh: FractalMesh, h_q: float | None) -> CellRules:
    h_q = mesh.diameters.min() / 32 if h_q is None else h_q
    return CellRules.build(mesh.attractor, mesh.maps, h_q)


def l2_project(f, mesh: FractalMesh, h_q: float | None = None) -> PiecewiseConstant:
    """Cell averages of ``f`` (composite barycenter rule with pieces ``<= h_q``)."""
    rules = _rules(mesh, h_q)
    return PiecewiseConstant(mesh, rules.integrate(f) / mesh.measures)


def l2_error(f, pc: PiecewiseConstant, h_q: float | None = None) -> float:
    """``||f - pc||_{L2(Gamma)}`` by a fine composite rule on every cell."""
    rules = _rules(pc.mesh, h_q)
    owner = np.repeat(np.arange(len(pc.mesh)), rules.counts())
    diff = np.asarray(f(rules.nodes)) - pc.coefficients[owner]
    return float(math.sqrt(np.sum(rules.weights * np.abs(diff) ** 2)))


def l2_norm_on(f, mesh: FractalMesh, h_q: float | None = None) -> float:
    rules = _rules(mesh, h_q)
    return float(math.sqrt(np.sum(rules.weights * np.abs(np.asarray(f(rules.nodes))) ** 2)))


@dataclass
class PoincareReport:
    h: float
    lhs: float
    rhs: float
    constant: float

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs

    @property
    def slack_ratio(self) -> float:
        return self.lhs / self.rhs if self.rhs > 0 else (0.0 if self.lhs == 0 else math.inf)


def poincare_bound_check(f, grad_f, mesh: FractalMesh, h_q: float | None = None) -> PoincareReport:
    """Check ``||f - P_h f|| <= C h ||grad f||`` with the explicit constant ``C``.

    ``h`` is the mesh parameter (every cell has diameter at most ``h``).
    """
    n = mesh.attractor.n
    pc = l2_project(f, mesh, h_q)
    lhs = l2_error(f, pc, h_q)
    grad_norm = l2_norm_on(lambda x: np.linalg.norm(np.atleast_2d(grad_f(x)).reshape(len(x), -1), axis=1),
                           mesh, h_q)
    h = float(mesh.parameter) if mesh.kind == "diameter" else float(mesh.diameters.max())
    C = poincare_constant(n)
    return PoincareReport(h, lhs, C * h * grad_norm, C)


# ---------------------------------------------------------------------------
# grid fields and fractional norms
# ---------------------------------------------------------------------------
@dataclass
class GridField:
    """Samples on the pixel centers ``origin + g * index`` (zero outside the support)."""

    origin: np.ndarray
    spacing: float
    values: np.ndarray

    @property
    def n(self) -> int:
        return self.values.ndim

    def l2_norm(self) -> float:
        return float(math.sqrt(np.sum(np.abs(self.values) ** 2) * self.spacing ** self.n))

    def __sub__(self, other: "GridField") -> "GridField":
        if (other.values.shape != self.values.shape or other.spacing != self.spacing
                or not np.allclose(other.origin, self.origin)):
            raise ValueError("grid fields live on different grids")
        return GridField(self.origin, self.spacing, self.values - other.values)

    def __mul__(self, lam) -> "GridField":
        return GridField(self.origin, self.spacing, self.values * lam)

    __rmul__ = __mul__


def grid_for_model(model, spacing: float, pad: int = 2) -> tuple[np.ndarray, tuple[int, ...]]:
    """Pixel grid aligned with multiples of ``spacing`` covering the bounding ball plus ``pad`` pixels."""
    lo = model.ball_center - model.ball_radius
    hi = model.ball_center + model.ball_radius
    first = np.floor(lo / spacing) - pad
    last = np.ceil(hi / spacing) + pad
    shape = tuple(int(v) for v in (last - first))
    # pixel k spans [ (first + k) g, (first + k + 1) g )
    origin = (first + 0.5) * spacing
    return origin, shape


def deposit(model, maps: MapArray, values, spacing: float, origin=None, shape=None) -> GridField:
    """Rasterize a piecewise constant by mass deposit.

    Each cell is cut into pieces of diameter ``<= spacing / 2``; every piece
    adds ``value * measure / g^n`` to the pixel containing its barycenter.
    """
    if origin is None or shape is None:
        origin, shape = grid_for_model(model, spacing)
    values = np.asarray(values)
    leaves, owner = refine_maps(model.ifs, maps, 0.5 * spacing / model.h0)
    b = leaves.apply(model.barycenter)
    w = leaves.ratio ** model.n * model.measure / spacing ** model.n
    idx = np.rint((b - origin) / spacing).astype(np.int64)
    if np.any(idx < 0) or np.any(idx >= np.array(shape)):
        raise ValueError("grid does not cover the cells")
    flat = np.ravel_multi_index(tuple(idx.T), shape)
    size = int(np.prod(shape))
    v = values[owner] * w
    out = np.bincount(flat, v.real, minlength=size)
    if np.iscomplexobj(v):
        out = out + 1j * np.bincount(flat, v.imag, minlength=size)
    return GridField(np.asarray(origin, float), float(spacing), out.reshape(shape))


def deposit_function(model, f, spacing: float, origin=None, shape=None) -> GridField:
    """Zero extension of ``f`` on ``Gamma`` rasterized by mass deposit of fine pieces."""
    if origin is None or shape is None:
        origin, shape = grid_for_model(model, spacing)
    leaves, _ = refine_maps(model.ifs, MapArray.identity(model.n, False), 0.5 * spacing / model.h0)
    b = leaves.apply(model.barycenter)
    w = leaves.ratio ** model.n * model.measure / spacing ** model.n
    idx = np.rint((b - origin) / spacing).astype(np.int64)
    flat = np.ravel_multi_index(tuple(idx.T), shape)
    v = np.asarray(f(b)) * w
    size = int(np.prod(shape))
    out = np.bincount(flat, v.real, minlength=size)
    if np.iscomplexobj(v):
        out = out + 1j * np.bincount(flat, v.imag, minlength=size)
    return GridField(np.asarray(origin, float), float(spacing), out.reshape(shape))


def fractional_sobolev_norm(field: GridField, s: float, pad_factor: int = 2) -> float:
    """``H^s(R^n)`` norm of the zero extension of a grid field, ``s`` in ``[-1, 1]``."""
    if not -1.0 <= s <= 1.0:
        raise ValueError("s must lie in [-1, 1]")
    u = np.asarray(field.values)
    g, n = field.spacing, u.ndim
    shape = tuple(fft.next_fast_len(pad_factor * m) for m in u.shape)
    U = fft.fftn(u, s=shape)
    xi2 = np.zeros(shape)
    for axis, N in enumerate(shape):
        xi = 2 * math.pi * fft.fftfreq(N, d=g)
        sh = [1] * n
        sh[axis] = N
        xi2 = xi2 + xi.reshape(sh) ** 2
    dxi = np.prod([2 * math.pi / (N * g) for N in shape])
    uhat2 = np.abs(U) ** 2 * (g ** (2 * n) / (2 * math.pi) ** n)
    return float(math.sqrt(np.sum((1.0 + xi2) ** s * uhat2) * dxi))


# ---------------------------------------------------------------------------
# convergence studies
# ---------------------------------------------------------------------------
@dataclass
class RateFit:
    hs: np.ndarray
    errors: np.ndarray
    slope: float
    slope_all: float
    degenerate: bool = False
    notes: list = field(default_factory=list)
    expected: float | None = None

    def as_dict(self) -> dict:
        return {"h": self.hs.tolist(), "error": self.errors.tolist(), "slope": self.slope,
                "slope_all": self.slope_all, "degenerate": self.degenerate, "notes": self.notes,
                "expected_slope": self.expected}

    @property
    def meets_expectation(self) -> bool:
        """Fitted slope at least the predicted ``s2 - s1`` minus 0.15."""
        return (self.expected is not None and not self.degenerate
                and self.slope >= self.expected - 0.15)

    def csv_rows(self):
        yield "h,error,fitted_slope"
        for h, e in zip(self.hs, self.errors):
            yield f"{h:.17g},{e:.17g},{self.slope:.17g}"


def fit_rate(hs, errors, tail: int | None = None, floor: float = 0.0) -> RateFit:
    """Least-squares slope of ``log(error)`` against ``log(h)``.

    ``slope`` uses the last ``ceil(len/2)`` (at least two) points, i.e. the
    finest meshes; ``slope_all`` every point.  Errors at or below ``floor``
    make the fit degenerate (slope ``nan``).
    """
    hs = np.asarray(hs, float)
    errors = np.asarray(errors, float)
    if hs.size < 3:
        raise ValueError("need at least three h values")
    order = np.argsort(-hs)
    hs, errors = hs[order], errors[order]
    if np.any(errors <= floor) or not np.all(np.isfinite(errors)):
        return RateFit(hs, errors, float("nan"), float("nan"), True,
                       ["errors at rounding level: rate undefined"])
    tail = max(2, math.ceil(hs.size / 2)) if tail is None else tail
    x, y = np.log(hs), np.log(errors)
    slope = float(np.polyfit(x[-tail:], y[-tail:], 1)[0])
    slope_all = float(np.polyfit(x, y, 1)[0])
    notes = []
    if np.any(np.diff(errors) > 0):
        notes.append("non-monotone error sequence")
    return RateFit(hs, errors, slope, slope_all, False, notes)


def projection_convergence_study(f, model, hs, s1: float = 0.0, s2: float | None = None,
                                 spacing: float | None = None, h_q_rel: float = 1.0 / 16) -> RateFit:
    """Grid ``H^{s1}`` norm of ``f - P_h f`` (zero extended) for every ``h``.

    ``s2`` is the assumed ``H^{s2}`` regularity of ``f``; the predicted slope
    ``s2 - s1`` is stored on the fit.  The grid spacing defaults to
    ``rho_min * h_min / 4``.

    Errors below ``1e-12 ||f||`` are treated as rounding noise, making the
    fit degenerate.
    """
    from .ifs import generate_diameter_mesh
    hs = np.asarray(sorted(hs, reverse=True), float)
    if hs.size < 3:
        raise ValueError("need at least three h values")
    if not -1.0 <= s1 <= 0.0 or (s2 is not None and not 0.0 <= s2 <= 1.0):
        raise ValueError("need -1 <= s1 <= 0 <= s2 <= 1")
    meshes = [generate_diameter_mesh(model, h) for h in hs]
    if spacing is None:
        spacing = model.ifs.rho_min * min(m.diameters.min() for m in meshes) / 4
    origin, shape = grid_for_model(model, spacing)
    ftilde = deposit_function(model, f, spacing, origin, shape)
    scale = fractional_sobolev_norm(ftilde, s1)
    errs = []
    for mesh in meshes:
        pc = l2_project(f, mesh, h_q_rel * mesh.diameters.min())
        errs.append(fractional_sobolev_norm(ftilde - deposit(model, mesh.maps, pc.coefficients,
                                                              spacing, origin, shape), s1))
    fit = fit_rate(hs, errs, floor=1e-12 * scale)
    fit.expected = None if s2 is None else s2 - s1
    return fit
