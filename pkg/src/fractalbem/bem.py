"""Piecewise-constant Galerkin BEM for sound-soft scattering by a fractal screen.

The screen ``Gamma x {0}`` sits in ``R^(n+1)``.  With the basis
``phi_i = |Omega_i|^(-1/2) chi_{Omega_i}`` on the cells of ``L_h`` the Galerkin
system reads ``A c = b`` with

    A_ij = |Omega_i|^(-1/2) |Omega_j|^(-1/2) int_{Omega_i} int_{Omega_j} Phi(x, y)
    b_i  = -|Omega_i|^(-1/2) int_{Omega_i} g,      g = -u^i on the screen plane,

and the scattered field is ``u = -S phi``.

Entry quadrature is chosen per unordered cell pair from the gap between the
bounding balls relative to the larger diameter:

* ``gap < eta``: the non-smooth part of the kernel via self-similar closures
  plus a tensor rule with pieces ``RULE_NEAR * diam`` for the smooth rest;
* ``eta <= gap < TIER_MID``: tensor rule with pieces ``RULE_FINE * diam``;
* ``TIER_MID <= gap < TIER_FAR``: tensor rule with pieces ``RULE_MID * diam``;
* farther: one barycenter node per cell.
"""
from __future__ import annotations

import dataclasses
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import _backend, defaults
from .approx import GridField, RateFit, deposit, fit_rate, fractional_sobolev_norm, grid_for_model
from .ifs import AttractorModel, FractalMesh, MapArray, generate_diameter_mesh
from .kernels import IncidentPlaneWave, full_mode, incident_trace, near_tail_mode
from .quadrature import CellRules, QuadratureError, helmholtz_static_pairs

logger = logging.getLogger(__name__)

_ROW_BLOCK = 256


class BEMError(RuntimeError):
    """Numerical failure of assembly or solve."""


@dataclass
class ScatteringConfig:
    """Screen, incident wave, mesh parameter and quadrature parameters."""

    attractor: AttractorModel
    wave: IncidentPlaneWave
    mesh_h: float
    eta: float = defaults.ETA
    rule_near: float = defaults.RULE_NEAR
    rule_fine: float = defaults.RULE_FINE
    rule_mid: float = defaults.RULE_MID
    tier_mid: float = defaults.TIER_MID
    tier_far: float = defaults.TIER_FAR
    closure_rule: float = defaults.CLOSURE_RULE

    def __post_init__(self):
        n = self.attractor.n
        if n not in (1, 2):
            raise ValueError("screens must live in R^1 or R^2")
        if self.wave.n != n:
            raise ValueError(f"wave direction must lie in R^{n + 1}")
        if not 0 < self.mesh_h <= self.attractor.h0 + self.attractor.h0_gap:
            raise ValueError("mesh_h must lie in (0, h0]")
        if not (self.eta > 0 and self.tier_mid >= self.eta and self.tier_far >= self.tier_mid):
            raise ValueError("need 0 < eta <= tier_mid <= tier_far")
        for name in ("rule_near", "rule_fine", "rule_mid", "closure_rule"):
            if not 0 < getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")

    def with_h(self, h: float) -> "ScatteringConfig":
        return dataclasses.replace(self, mesh_h=h)

    def as_dict(self) -> dict:
        return {"ifs": self.attractor.ifs.name, "k": self.wave.k, "direction": list(self.wave.direction),
                "mesh_h": self.mesh_h, "eta": self.eta, "rule_near": self.rule_near, "rule_fine": self.rule_fine,
                "rule_mid": self.rule_mid, "tier_mid": self.tier_mid, "tier_far": self.tier_far,
                "closure_rule": self.closure_rule}


@dataclass
class GalerkinSystem:
    config: ScatteringConfig
    mesh: FractalMesh
    matrix: np.ndarray
    rhs: np.ndarray
    normalization: np.ndarray       # |Omega_i|^(-1/2)
    error_estimates: np.ndarray     # max estimated entry error per tier (near, fine, mid, far), normalized basis
    pair_counts: dict

    @property
    def size(self) -> int:
        return self.rhs.size

    @property
    def error_max(self) -> float:
        return float(self.error_estimates.max()) if self.error_estimates.size else 0.0


@dataclass
class DensitySolution:
    system: GalerkinSystem
    coefficients: np.ndarray        # normalized c
    density: np.ndarray             # physical values c_i |Omega_i|^(-1/2)
    residual: float

    @property
    def mesh(self) -> FractalMesh:
        return self.system.mesh

    def functional(self) -> complex:
        """``<g, phi_h> = sum_i density_i int_{Omega_i} g = -c . b`` (bilinear)."""
        return complex(-np.dot(self.coefficients, self.system.rhs))

    def l1_norm(self) -> float:
        return float(np.sum(np.abs(self.density) * self.mesh.measures))

    def as_dict(self) -> dict:
        m = self.mesh
        return {"config": self.system.config.as_dict(), "cells": len(m),
                "indices": [".".join(map(str, i)) if i else "0" for i in m.indices],
                "coefficients_re": self.coefficients.real.tolist(),
                "coefficients_im": self.coefficients.imag.tolist(),
                "density_re": self.density.real.tolist(), "density_im": self.density.imag.tolist(),
                "residual": self.residual, "quadrature_error_max": self.system.error_max,
                "functional_re": self.functional().real, "functional_im": self.functional().imag}


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------
def _pair_blocks(mesh: FractalMesh):
    """Unordered pairs ``i <= j`` in row blocks with their gap / larger-diameter ratio."""
    N = len(mesh)
    c, r, d = mesh.ball_centers, mesh.ball_radii, mesh.diameters
    for lo in range(0, N, _ROW_BLOCK):
        hi = min(N, lo + _ROW_BLOCK)
        I, J = np.nonzero(np.arange(lo, hi)[:, None] <= np.arange(N)[None, :])
        I = I + lo
        dist = np.linalg.norm(c[I] - c[J], axis=1)
        gap = dist - r[I] - r[J]
        yield I, J, gap / np.maximum(d[I], d[J]), dist


def assemble(config: ScatteringConfig, mesh: FractalMesh | None = None) -> GalerkinSystem:
    """Dense symmetric Galerkin matrix and right-hand side (each unordered pair computed once)."""
    model = config.attractor
    n, k = model.n, config.wave.k
    mesh = generate_diameter_mesh(model, config.mesh_h) if mesh is None else mesh
    N = len(mesh)
    diam = mesh.diameters
    s = mesh.measures ** -0.5
    fine = CellRules.build(model, mesh.maps, config.rule_fine * diam)
    mid = CellRules.build(model, mesh.maps, config.rule_mid * diam)
    single = CellRules.build(model, mesh.maps, diam)
    mode = full_mode(n)
    A = np.zeros((N, N), dtype=complex)
    est = np.zeros(4)
    counts = {"near": 0, "fine": 0, "mid": 0, "far": 0}
    near_I, near_J = [], []
    tiers = ((fine, config.rule_fine, "fine", 1), (mid, config.rule_mid, "mid", 2), (single, 1.0, "far", 3))
    for I, J, rel_gap, dist in _pair_blocks(mesh):
        near = rel_gap < config.eta
        near_I.append(I[near])
        near_J.append(J[near])
        bounds = (config.eta, config.tier_mid, config.tier_far, np.inf)
        for (rules, rel, name, slot), lo, hi in zip(tiers, bounds[:-1], bounds[1:]):
            sel = (rel_gap >= lo) & (rel_gap < hi)
            if not sel.any():
                continue
            pi, pj = I[sel], J[sel]
            vals = _backend.pair_sums(rules.nodes, rules.weights, rules.offsets, pi, pj, k, mode)
            A[pi, pj] = vals
            counts[name] += int(sel.sum())
            # a-priori estimate of the barycenter-rule error: second moments over distance^2
            piece = rel * np.maximum(diam[pi], diam[pj])
            est[slot] = max(est[slot], float(np.max(np.abs(vals) * s[pi] * s[pj] * (piece / dist[sel]) ** 2 / 4)))
    pi, pj = np.concatenate(near_I), np.concatenate(near_J)
    counts["near"] = int(pi.size)
    try:
        sing = helmholtz_static_pairs(model, mesh.maps.take(pi), mesh.maps.take(pj), k,
                                      eta=config.eta, rule_ratio=config.closure_rule)
    except QuadratureError as exc:
        raise BEMError(f"singular quadrature failed for pair ({pi[0]}, {pj[0]}) block: {exc}") from exc
    near_rules = CellRules.build(model, mesh.maps, config.rule_near * diam)
    rem = _backend.pair_sums(near_rules.nodes, near_rules.weights, near_rules.offsets, pi, pj, k,
                             near_tail_mode(n))
    vals = sing + rem
    if not np.all(np.isfinite(vals)):
        bad = int(np.nonzero(~np.isfinite(vals))[0][0])
        raise BEMError(f"non-finite near-field entry at ({pi[bad]}, {pj[bad]})")
    A[pi, pj] = vals
    if vals.size:
        # the smooth rest is only C^1 on the diagonal (r^2 log r in 2D): compare with pieces
        # twice as large instead of trusting an a-priori bound; the closures' separated
        # children use pieces closure_rule * child diameter
        coarse_rules = CellRules.build(model, mesh.maps, min(1.0, 2 * config.rule_near) * diam)
        coarse = _backend.pair_sums(coarse_rules.nodes, coarse_rules.weights, coarse_rules.offsets, pi, pj, k,
                                    near_tail_mode(n))
        scale = s[pi] * s[pj]
        est[0] = float(np.max((np.abs(rem - coarse) + np.abs(vals) * config.closure_rule ** 2 / 16) * scale))
    A *= s[:, None] * s[None, :]
    iu = np.triu_indices(N, 1)
    A[(iu[1], iu[0])] = A[iu]
    rhs = -s * fine.integrate(lambda x: incident_trace(config.wave, x))
    return GalerkinSystem(config, mesh, A, rhs, s, est, counts)


def solve(system: GalerkinSystem) -> DensitySolution:
    """Dense LU with partial pivoting."""
    A, b = system.matrix, system.rhs
    try:
        with warnings.catch_warnings():
            # exact singularity is reported below as a BEMError
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu, piv = sla.lu_factor(A, check_finite=True)
    except (ValueError, sla.LinAlgError) as exc:
        raise BEMError(f"LU factorization failed: {exc}") from exc
    diag = np.abs(np.diag(lu))
    if diag.min() <= np.finfo(float).eps * diag.max() * A.shape[0]:
        raise BEMError("Galerkin matrix is singular to working precision (assembly corrupted?)")
    c = sla.lu_solve((lu, piv), b)
    residual = float(np.linalg.norm(A @ c - b) / np.linalg.norm(b))
    return DensitySolution(system, c, c * system.normalization, residual)


def solve_config(config: ScatteringConfig) -> DensitySolution:
    return solve(assemble(config))


# ---------------------------------------------------------------------------
# field evaluation
# ---------------------------------------------------------------------------
def _plane_distance(points: np.ndarray, centers: np.ndarray, radii: np.ndarray) -> np.ndarray:
    n = centers.shape[1]
    d = np.linalg.norm(points[:, None, :n] - centers[None, :, :], axis=2) - radii[None, :]
    return np.sqrt(points[:, None, n] ** 2 + np.maximum(d, 0.0) ** 2)


def _adaptive_nodes(model: AttractorModel, mesh: FractalMesh, density: np.ndarray, x: np.ndarray,
                    theta: float) -> tuple[np.ndarray, np.ndarray]:
    n, M = model.n, model.ifs.M
    floor = max(theta * abs(x[n]), 1e-9 * model.h0)
    cur = MapArray(mesh.maps.ratio, mesh.maps.orth, mesh.maps.shift, None)
    owner = np.arange(len(cur))
    nodes, weights = [], []
    while len(cur):
        d = _plane_distance(x[None], cur.apply(model.ball_center), cur.ratio * model.ball_radius)[0]
        diam = cur.ratio * model.h0
        done = (diam <= theta * d) | (diam <= floor)
        if done.any():
            nodes.append(cur.take(done).apply(model.barycenter))
            weights.append(cur.ratio[done] ** n * model.measure * density[owner[done]])
        if done.all():
            break
        cur = cur.take(~done).children(model.ifs)
        owner = np.repeat(owner[~done], M)
    return np.concatenate(nodes), np.concatenate(weights)


def evaluate_field(solution: DensitySolution, points, theta: float = defaults.FIELD_THETA) -> np.ndarray:
    """Scattered field ``u = -S phi_h`` at points of ``R^(n+1)`` off the screen.

    Pieces of the density are shrunk until ``diam <= theta * distance``;
    points where the precomputed rule already satisfies this use it directly,
    the others get a per-point adaptive refinement.
    """
    mesh = solution.mesh
    model = mesh.attractor
    n, k = model.n, solution.system.config.wave.k
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != n + 1:
        raise ValueError(f"points must have {n + 1} coordinates")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    mode = full_mode(n)
    rel = theta / 4
    rules = CellRules.build(model, mesh.maps, rel * mesh.diameters)
    owner = np.repeat(np.arange(len(mesh)), rules.counts())
    w = rules.weights * solution.density[owner]
    piece = rel * mesh.diameters
    out = np.zeros(pts.shape[0], dtype=complex)
    fast = np.zeros(pts.shape[0], dtype=bool)
    step = max(1, 2 ** 22 // max(1, len(mesh)))
    for lo in range(0, pts.shape[0], step):
        d = _plane_distance(pts[lo:lo + step], mesh.ball_centers, mesh.ball_radii)
        if np.any((pts[lo:lo + step, n] == 0) & (d.min(axis=1) == 0)):
            raise ValueError("evaluation point lies on the screen")
        fast[lo:lo + step] = np.all(piece[None, :] <= theta * d, axis=1)
    if fast.any():
        out[fast] = _backend.point_sums(pts[fast], rules.nodes, w, k, mode)
    for q in np.nonzero(~fast)[0]:
        nodes, weights = _adaptive_nodes(model, mesh, solution.density, pts[q], theta)
        out[q] = _backend.point_sums(pts[q:q + 1], nodes, weights, k, mode)[0]
    return -out


def total_field_on_screen(solution: DensitySolution, heights, cells=None,
                          theta: float = defaults.FIELD_THETA) -> np.ndarray:
    """Mean ``|u + u^i|`` over cell barycenters at every evaluation height."""
    mesh = solution.mesh
    wave = solution.system.config.wave
    cells = np.arange(len(mesh)) if cells is None else np.asarray(cells)
    b = mesh.barycenters[cells]
    out = []
    for z in heights:
        if not z > 0:
            raise ValueError("heights must be positive")
        x = np.concatenate([b, np.full((b.shape[0], 1), float(z))], axis=1)
        out.append(float(np.mean(np.abs(evaluate_field(solution, x, theta) + wave(x)))))
    return np.asarray(out)


def helmholtz_fd_residual(solution: DensitySolution, x, step: float | None = None) -> float:
    """``|Delta_h u + k^2 u| / |k^2 u|`` with the second-order central stencil."""
    x = np.asarray(x, dtype=float)
    k = solution.system.config.wave.k
    step = 1e-2 / k if step is None else step
    dim = x.size
    offs = [np.zeros(dim)]
    for e in range(dim):
        for sgn in (1, -1):
            v = np.zeros(dim)
            v[e] = sgn * step
            offs.append(v)
    u = evaluate_field(solution, x[None] + np.asarray(offs))
    lap = (np.sum(u[1:]) - 2 * dim * u[0]) / step ** 2
    return float(abs(lap + k ** 2 * u[0]) / abs(k ** 2 * u[0]))


def default_far_points(model: AttractorModel) -> np.ndarray:
    """Three points at height ``2 h0`` above and around the screen."""
    n, c, h0 = model.n, model.ball_center, model.h0
    pts = []
    for off in (0.0, 0.5, -0.75):
        p = np.zeros(n + 1)
        p[:n] = c
        p[0] += off * h0
        p[n] = 2.0 * h0
        pts.append(p)
    return np.asarray(pts)


# ---------------------------------------------------------------------------
# convergence study
# ---------------------------------------------------------------------------
@dataclass
class ConvergenceReport:
    hs: np.ndarray
    h_ref: float
    cells: list
    tracks: dict                 # name -> RateFit
    l1_norms: list
    residuals: list
    grid_spacing: float
    notes: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"h": self.hs.tolist(), "h_ref": self.h_ref, "cells": self.cells,
                "tracks": {name: fit.as_dict() for name, fit in self.tracks.items()},
                "l1_norms": self.l1_norms, "residuals": self.residuals,
                "grid_spacing": self.grid_spacing, "notes": self.notes}

    def csv_rows(self):
        names = list(self.tracks)
        yield "h,cells," + ",".join(names)
        for q, h in enumerate(self.hs):
            yield f"{h:.17g},{self.cells[q]}," + ",".join(f"{self.tracks[t].errors[q]:.17g}" for t in names)


def convergence_study(config: ScatteringConfig, hs, h_ref: float | None = None,
                      far_points=None, spacing: float | None = None,
                      theta: float = defaults.FIELD_THETA) -> ConvergenceReport:
    """Self-convergence of ``phi_h`` against a reference solution on ``L_{h_ref}``.

    Tracks: grid ``H^{-1/2}`` norm of the rasterized density difference,
    functional ``<g, phi_h>`` and the field at fixed far points.
    """
    model = config.attractor
    hs = np.asarray(sorted(hs, reverse=True), dtype=float)
    if hs.size < 4:
        raise ValueError("need at least four h values")
    h_ref = hs[-1] / defaults.REFERENCE_FACTOR if h_ref is None else float(h_ref)
    if h_ref > hs[-1] / 4 * (1 + 1e-12):
        raise ValueError("reference h must be at most a quarter of the finest h")
    far_points = default_far_points(model) if far_points is None else np.atleast_2d(far_points)
    ref = solve_config(config.with_h(h_ref))
    if spacing is None:
        spacing = model.ifs.rho_min * ref.mesh.diameters.min() / 4
    origin, shape = grid_for_model(model, spacing)
    ref_grid = deposit(model, ref.mesh.maps, ref.density, spacing, origin, shape)
    ref_functional = ref.functional()
    ref_field = evaluate_field(ref, far_points, theta)
    errs = {"h_minus_half": [], "functional": [], "field": []}
    cells, l1, res = [], [], []
    for h in hs:
        sol = solve_config(config.with_h(h))
        logger.info("h=%g N=%d residual=%.2e", h, len(sol.mesh), sol.residual)
        grid = deposit(model, sol.mesh.maps, sol.density, spacing, origin, shape)
        errs["h_minus_half"].append(fractional_sobolev_norm(grid - ref_grid, -0.5))
        errs["functional"].append(abs(sol.functional() - ref_functional))
        errs["field"].append(float(np.max(np.abs(evaluate_field(sol, far_points, theta) - ref_field))))
        cells.append(len(sol.mesh))
        l1.append(sol.l1_norm())
        res.append(sol.residual)
    tracks = {name: fit_rate(hs, e) for name, e in errs.items()}
    notes = [f"{name}: {note}" for name, fit in tracks.items() for note in fit.notes]
    return ConvergenceReport(hs, h_ref, cells, tracks, l1, res, float(spacing), notes)


def density_grid(solution: DensitySolution, spacing: float) -> GridField:
    """Rasterized physical density (mass deposit)."""
    mesh = solution.mesh
    return deposit(mesh.attractor, mesh.maps, solution.density, spacing)


def strictly_decreasing(values) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(v) < 0))


__all__ = [
    "BEMError", "ConvergenceReport", "DensitySolution", "GalerkinSystem", "RateFit",
    "ScatteringConfig", "assemble", "convergence_study", "default_far_points", "density_grid",
    "evaluate_field", "helmholtz_fd_residual", "solve", "solve_config", "strictly_decreasing",
    "total_field_on_screen",
]
