"""Iterated function systems of contracting similarities and their meshes.

A similarity is stored as ``s(x) = rho * Q @ x + delta``.  Composed maps of
cells in a mesh are kept in vectorized form (ratio, orthogonal part, shift)
so that meshes with tens of thousands of cells stay cheap to build.

Multi-indices follow the usual convention: tuples of 1-based map numbers,
with the empty tuple standing for the root (the attractor itself).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import brentq

logger = logging.getLogger(__name__)

MultiIndex = tuple[int, ...]

ORTHO_TOL = 1e-12


class IFSError(ValueError):
    """Raised when an IFS or one of its maps violates a structural requirement."""


def parent(index: MultiIndex) -> MultiIndex:
    """Drop the last entry; the parent of a length-1 index is the root ``()``."""
    if not index:
        raise IFSError("the root index has no parent")
    return index[:-1]


def rotation_matrix(angle_deg: float, reflect: bool = False) -> np.ndarray:
    a = math.radians(angle_deg)
    c, s = math.cos(a), math.sin(a)
    rot = np.array([[c, -s], [s, c]])
    if reflect:
        # reflection across the x-axis applied before the rotation
        rot = rot @ np.diag([1.0, -1.0])
    return rot


@dataclass(frozen=True, eq=False)
class SimilarityMap:
    """Contracting similarity ``x -> rho * orthogonal @ x + translation``."""

    rho: float
    orthogonal: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        q = np.atleast_2d(np.asarray(self.orthogonal, dtype=float))
        d = np.atleast_1d(np.asarray(self.translation, dtype=float))
        object.__setattr__(self, "orthogonal", q)
        object.__setattr__(self, "translation", d)
        object.__setattr__(self, "rho", float(self.rho))
        n = d.shape[0]
        if q.shape != (n, n):
            raise IFSError(f"orthogonal part has shape {q.shape}, expected {(n, n)}")
        if not np.allclose(q @ q.T, np.eye(n), atol=ORTHO_TOL, rtol=0.0):
            raise IFSError("orthogonal part is not orthogonal")

    @property
    def dim(self) -> int:
        return self.translation.shape[0]

    @classmethod
    def from_angle(cls, rho: float, angle_deg: float = 0.0, translation=(0.0, 0.0),
                   reflect: bool = False) -> "SimilarityMap":
        return cls(rho, rotation_matrix(angle_deg, reflect), np.asarray(translation, float))

    @classmethod
    def scaling(cls, rho: float, translation) -> "SimilarityMap":
        t = np.atleast_1d(np.asarray(translation, dtype=float))
        return cls(rho, np.eye(t.shape[0]), t)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.rho * (x @ self.orthogonal.T) + self.translation

    def compose(self, other: "SimilarityMap") -> "SimilarityMap":
        """Return ``self o other``."""
        return SimilarityMap(self.rho * other.rho,
                             self.orthogonal @ other.orthogonal,
                             self.rho * self.orthogonal @ other.translation + self.translation)

    def inverse(self) -> "SimilarityMap":
        qt = self.orthogonal.T
        return SimilarityMap(1.0 / self.rho, qt, -(qt @ self.translation) / self.rho)

    def fixed_point(self) -> np.ndarray:
        """The unique ``x`` with ``s(x) = x`` (a point of the attractor)."""
        return np.linalg.solve(np.eye(self.dim) - self.rho * self.orthogonal, self.translation)

    def is_close(self, other: "SimilarityMap", tol: float = 1e-12) -> bool:
        return (abs(self.rho - other.rho) <= tol
                and np.allclose(self.orthogonal, other.orthogonal, atol=tol, rtol=0)
                and np.allclose(self.translation, other.translation, atol=tol, rtol=0))


@dataclass(frozen=True, eq=False)
class IteratedFunctionSystem:
    """Ordered collection of ``M >= 2`` contracting similarities in R^n, n in {1, 2}."""

    maps: tuple[SimilarityMap, ...]
    name: str = "ifs"
    declared_measure: float | None = None

    def __post_init__(self):
        maps = tuple(self.maps)
        object.__setattr__(self, "maps", maps)
        if len(maps) < 2:
            raise IFSError("an IFS needs at least two maps")
        dims = {m.dim for m in maps}
        if len(dims) != 1:
            raise IFSError(f"maps act on different dimensions: {sorted(dims)}")
        if dims.pop() not in (1, 2):
            raise IFSError("only ambient dimensions 1 and 2 are supported")
        for i, m in enumerate(maps):
            if not 0.0 < m.rho < 1.0:
                raise IFSError(f"maps[{i}].rho = {m.rho} is not in (0, 1)")
        if self.declared_measure is not None and not self.declared_measure > 0:
            raise IFSError("declared_measure must be positive")

    @property
    def ambient_dim(self) -> int:
        return self.maps[0].dim

    @property
    def M(self) -> int:
        return len(self.maps)

    @property
    def rhos(self) -> np.ndarray:
        return np.array([m.rho for m in self.maps])

    @property
    def orthogonals(self) -> np.ndarray:
        return np.stack([m.orthogonal for m in self.maps])

    @property
    def translations(self) -> np.ndarray:
        return np.stack([m.translation for m in self.maps])

    @property
    def rho_min(self) -> float:
        return float(self.rhos.min())

    @property
    def rho_max(self) -> float:
        return float(self.rhos.max())

    @property
    def is_homogeneous(self) -> bool:
        r = self.rhos
        return bool(np.all(r == r[0]))

    @property
    def is_n_attractor(self) -> bool:
        """True when the similarity dimension equals the ambient dimension."""
        return abs(float(np.sum(self.rhos ** self.ambient_dim)) - 1.0) <= 1e-12

    def with_measure(self, measure: float | None) -> "IteratedFunctionSystem":
        return IteratedFunctionSystem(self.maps, self.name, measure)


def similarity_dimension(ifs: IteratedFunctionSystem) -> float:
    """Solve ``sum_m rho_m**d = 1`` for ``d > 0``."""
    rhos = ifs.rhos
    if ifs.is_homogeneous:
        return math.log(ifs.M) / math.log(1.0 / rhos[0])
    log_r = np.log(rhos)

    def f(d):
        return float(np.sum(np.exp(d * log_r))) - 1.0

    # f is strictly decreasing with f(0) = M - 1 > 0
    hi = 1.0
    while f(hi) > 0:
        hi *= 2.0
    d = brentq(f, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    for _ in range(3):
        p = np.exp(d * log_r)
        step = (float(p.sum()) - 1.0) / float(np.dot(p, log_r))
        d -= step
        if abs(step) < 1e-17:
            break
    return float(d)


def measure_weights(ifs: IteratedFunctionSystem) -> np.ndarray:
    """Self-similar measure weights ``rho_m**d`` (equal to ``rho_m**n`` for n-attractors)."""
    d = ifs.ambient_dim if ifs.is_n_attractor else similarity_dimension(ifs)
    w = ifs.rhos ** d
    return w / w.sum()


def attractor_barycenter(ifs: IteratedFunctionSystem) -> np.ndarray:
    """Barycenter of the self-similar measure: solves ``x = sum_m w_m s_m(x)``."""
    w = measure_weights(ifs)
    n = ifs.ambient_dim
    lin = np.einsum("m,m,mij->ij", w, ifs.rhos, ifs.orthogonals)
    rhs = w @ ifs.translations
    a = np.eye(n) - lin
    cond = np.linalg.cond(a)
    if cond > 1e8:
        logger.warning("barycenter system is badly conditioned (cond=%.3g)", cond)
    x = np.linalg.solve(a, rhs)
    # one refinement step keeps the fixed-point residual at rounding level
    x = x + np.linalg.solve(a, rhs - a @ x)
    return x


def invariant_bounding_ball(ifs: IteratedFunctionSystem,
                            center: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Ball ``B(c, R)`` with ``s_m(B) subset B`` for every map.

    The iteration ``R <- max_m(rho_m R + |s_m(c) - c|)`` is monotone with the
    closed-form limit ``max_m |s_m(c) - c| / (1 - rho_m)``, which is returned.
    """
    c = attractor_barycenter(ifs) if center is None else np.asarray(center, float)
    offsets = np.array([np.linalg.norm(m(c) - c) for m in ifs.maps])
    radius = float(np.max(offsets / (1.0 - ifs.rhos)))
    # guard against rounding so that the containment test holds exactly
    radius = radius * (1 + 4e-16) if radius > 0 else 0.0
    return c, radius


# ---------------------------------------------------------------------------
# vectorized composed maps
# ---------------------------------------------------------------------------
@dataclass
class MapArray:
    """Batch of composed similarities ``x -> ratio * orth @ x + shift``."""

    ratio: np.ndarray          # (K,)
    orth: np.ndarray           # (K, n, n)
    shift: np.ndarray          # (K, n)
    digits: np.ndarray | None = None   # (K, level) 1-based, optional

    def __len__(self):
        return self.ratio.shape[0]

    @classmethod
    def identity(cls, n: int, with_digits: bool = True) -> "MapArray":
        return cls(np.ones(1), np.eye(n)[None], np.zeros((1, n)),
                   np.zeros((1, 0), dtype=np.int16) if with_digits else None)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Apply every map to the single point ``x`` -> (K, n)."""
        return self.ratio[:, None] * np.einsum("kij,j->ki", self.orth, x) + self.shift

    def apply_each(self, x: np.ndarray) -> np.ndarray:
        """Apply map k to point x[k]."""
        return self.ratio[:, None] * np.einsum("kij,kj->ki", self.orth, x) + self.shift

    def take(self, sel) -> "MapArray":
        return MapArray(self.ratio[sel], self.orth[sel], self.shift[sel],
                        None if self.digits is None else self.digits[sel])

    def children(self, ifs: IteratedFunctionSystem) -> "MapArray":
        """All one-step extensions, ordered parent-major."""
        M = ifs.M
        K = len(self)
        ratio = (self.ratio[:, None] * ifs.rhos[None, :]).reshape(-1)
        orth = np.einsum("kij,mjl->kmil", self.orth, ifs.orthogonals).reshape(K * M, *self.orth.shape[1:])
        shift = (self.shift[:, None, :]
                 + self.ratio[:, None, None] * np.einsum("kij,mj->kmi", self.orth, ifs.translations))
        shift = shift.reshape(K * M, self.shift.shape[1])
        digits = None
        if self.digits is not None:
            rep = np.repeat(self.digits, M, axis=0)
            last = np.tile(np.arange(1, M + 1, dtype=np.int16), K)[:, None]
            digits = np.concatenate([rep, last], axis=1)
        return MapArray(ratio, orth, shift, digits)

    def compose(self, other: "MapArray") -> "MapArray":
        """Pointwise ``self[k] o other[k]``."""
        return MapArray(self.ratio * other.ratio,
                        np.einsum("kij,kjl->kil", self.orth, other.orth),
                        self.ratio[:, None] * np.einsum("kij,kj->ki", self.orth, other.shift)
                        + self.shift)

    def inverse(self) -> "MapArray":
        qt = np.transpose(self.orth, (0, 2, 1))
        return MapArray(1.0 / self.ratio, qt,
                        -np.einsum("kij,kj->ki", qt, self.shift) / self.ratio[:, None])

    @classmethod
    def from_maps(cls, maps: Sequence[SimilarityMap]) -> "MapArray":
        return cls(np.array([m.rho for m in maps]), np.stack([m.orthogonal for m in maps]),
                   np.stack([m.translation for m in maps]))

    @staticmethod
    def concat(parts: Sequence["MapArray"], n: int) -> "MapArray":
        parts = [p for p in parts if len(p)]
        if not parts:
            return MapArray(np.zeros(0), np.zeros((0, n, n)), np.zeros((0, n)), None)
        digits = None
        if all(p.digits is not None for p in parts):
            width = max(p.digits.shape[1] for p in parts)
            digits = np.concatenate([
                np.pad(p.digits, ((0, 0), (0, width - p.digits.shape[1])), constant_values=0)
                for p in parts])
        return MapArray(np.concatenate([p.ratio for p in parts]),
                        np.concatenate([p.orth for p in parts]),
                        np.concatenate([p.shift for p in parts]), digits)


def leaf_maps(ifs: IteratedFunctionSystem, max_ratio: float, with_digits: bool = False,
              root: MapArray | None = None, max_cells: int = 50_000_000) -> MapArray:
    """Composed maps of the tree cut where the composed ratio first drops to ``<= max_ratio``.

    With ``max_ratio = h / h0`` this is exactly the index set ``L_h`` (relative to
    ``root``, which defaults to the identity).
    """
    n = ifs.ambient_dim
    current = root if root is not None else MapArray.identity(n, with_digits)
    if not with_digits:
        current = MapArray(current.ratio, current.orth, current.shift, None)
    done: list[MapArray] = []
    total = 0
    while len(current):
        stop = current.ratio <= max_ratio
        if stop.any():
            done.append(current.take(stop))
            total += int(stop.sum())
        rest = current.take(~stop)
        if not len(rest):
            break
        if total + len(rest) * ifs.M > max_cells:
            raise MemoryError(f"tree cut needs more than {max_cells} cells")
        current = rest.children(ifs)
    return MapArray.concat(done, n)


def refine_maps(ifs: IteratedFunctionSystem, roots: MapArray, max_ratio) -> tuple[MapArray, np.ndarray]:
    """Tree cut below every root where the composed ratio first drops to ``<= max_ratio``.

    ``max_ratio`` may be a scalar or one value per root.  Returns the leaves
    grouped by root (root order preserved) and the owning root of each leaf.
    """
    n = ifs.ambient_dim
    limit = np.broadcast_to(np.asarray(max_ratio, dtype=float), (len(roots),))
    current = MapArray(roots.ratio, roots.orth, roots.shift, None)
    owner = np.arange(len(roots))
    done, done_owner = [], []
    while len(current):
        stop = current.ratio <= limit[owner] * (1 + 1e-12)
        done.append(current.take(stop))
        done_owner.append(owner[stop])
        rest = ~stop
        if not rest.any():
            break
        current = current.take(rest).children(ifs)
        owner = np.repeat(owner[rest], ifs.M)
    leaves = MapArray.concat(done, n)
    owner = np.concatenate(done_owner) if done_owner else np.zeros(0, dtype=int)
    order = np.argsort(owner, kind="stable")
    return leaves.take(order), owner[order]


def level_maps(ifs: IteratedFunctionSystem, level: int, with_digits: bool = True) -> MapArray:
    current = MapArray.identity(ifs.ambient_dim, with_digits)
    for _ in range(level):
        current = current.children(ifs)
    return current


# ---------------------------------------------------------------------------
# attractor model
# ---------------------------------------------------------------------------
def attractor_diameter(ifs: IteratedFunctionSystem, center: np.ndarray, radius: float,
                       barycenter: np.ndarray, tol: float | None = None,
                       depth_cap: int = 200, max_pairs: int = 400_000) -> tuple[float, float, bool]:
    """Branch-and-bound estimate of ``diam(Gamma)``.

    Lower bound: largest distance between the generators' fixed points (points
    of ``Gamma``) or between barycenters of cell pairs (barycenters lie in the
    convex hull, whose diameter equals the attractor's).  Upper bound: largest
    ``|c_a - c_b| + r_a + r_b`` over surviving pairs of bounding balls.  Each
    surviving pair is refined by subdividing its larger cell; pairs whose upper
    bound is already within ``tol`` of the lower bound are settled and no longer
    refined.  Returns ``(lower, gap, converged)``: the lower bound is a distance
    actually attained in the convex hull, exact whenever fixed points realize it.
    """
    if radius == 0.0:
        return 0.0, 0.0, True
    tol = 1e-12 * radius if tol is None else tol
    n = ifs.ambient_dim
    M = ifs.M
    A = MapArray.identity(n, False)
    B = MapArray.identity(n, False)
    fixed = np.array([m.fixed_point() for m in ifs.maps])
    lower = float(np.max(np.linalg.norm(fixed[:, None, :] - fixed[None, :, :], axis=2)))
    settled = 0.0
    upper = 2.0 * radius
    converged = truncated = False
    for _ in range(depth_cap):
        ba = A.apply_each(np.broadcast_to(barycenter, (len(A), n)))
        bb = B.apply_each(np.broadcast_to(barycenter, (len(B), n)))
        lower = max(lower, float(np.max(np.linalg.norm(ba - bb, axis=1))))
        ca = A.apply_each(np.broadcast_to(center, (len(A), n)))
        cb = B.apply_each(np.broadcast_to(center, (len(B), n)))
        ub = np.linalg.norm(ca - cb, axis=1) + (A.ratio + B.ratio) * radius
        active = ub > lower + tol
        settled = max(settled, float(ub[~active].max(initial=0.0)))
        upper = max(settled, float(ub[active].max(initial=0.0)))
        if not active.any():
            converged = not truncated
            break
        if len(A) > max_pairs:
            # truncation is heuristic: the reported gap no longer covers
            # the discarded pairs, so the result is flagged as unconverged
            order = np.argsort(-ub)[:max_pairs]
            active = np.zeros_like(active)
            active[order] = True
            truncated = True
        A, B = A.take(active), B.take(active)
        split_a = A.ratio >= B.ratio
        ia, ib = np.nonzero(split_a)[0], np.nonzero(~split_a)[0]
        kids_a = A.take(ia).children(ifs)
        kids_b = B.take(ib).children(ifs)
        A = MapArray.concat([kids_a, A.take(np.repeat(ib, M))], n)
        B = MapArray.concat([B.take(np.repeat(ia, M)), kids_b], n)
    return lower, upper - lower, converged


@dataclass(eq=False)
class AttractorModel:
    """Attractor-level constants of an IFS."""

    ifs: IteratedFunctionSystem
    ball_center: np.ndarray
    ball_radius: float
    h0: float
    h0_gap: float
    measure: float
    measure_error: float
    barycenter: np.ndarray
    measure_flagged: bool = False

    @classmethod
    def from_ifs(cls, ifs: IteratedFunctionSystem, diameter_tol: float | None = None,
                 measure_pixel_size: float | None = None) -> "AttractorModel":
        bary = attractor_barycenter(ifs)
        center, radius = invariant_bounding_ball(ifs, bary)
        h0, gap, ok = attractor_diameter(ifs, center, radius, bary, tol=diameter_tol)
        if not ok:
            logger.warning("diameter of %s only certified to gap %.3g", ifs.name, gap)
        model = cls(ifs, center, radius, h0, gap, float("nan"), float("nan"), bary)
        if ifs.declared_measure is not None:
            model.measure, model.measure_error = float(ifs.declared_measure), 0.0
        else:
            from .geometry import total_measure
            est = total_measure(model, pixel_size=measure_pixel_size)
            model.measure, model.measure_error = est.estimate, est.error_bar
            model.measure_flagged = est.flagged
        return model

    @property
    def n(self) -> int:
        return self.ifs.ambient_dim

    def level_mesh(self, level: int) -> "FractalMesh":
        return generate_level_mesh(self, level)

    def diameter_mesh(self, h: float) -> "FractalMesh":
        return generate_diameter_mesh(self, h)


@dataclass(frozen=True, eq=False)
class Cell:
    index: MultiIndex
    ratio: float
    orthogonal: np.ndarray
    shift: np.ndarray
    diameter: float
    measure: float
    barycenter: np.ndarray

    @property
    def composed_map(self) -> SimilarityMap:
        return SimilarityMap(self.ratio, self.orthogonal, self.shift)


@dataclass(eq=False)
class FractalMesh:
    """Decomposition of an attractor into similar copies ``Gamma_m``."""

    attractor: AttractorModel
    maps: MapArray
    kind: str            # "level" or "diameter"
    parameter: float
    indices: list[MultiIndex] = field(default_factory=list)

    def __post_init__(self):
        a = self.attractor
        self.diameters = self.maps.ratio * a.h0
        self.measures = self.maps.ratio ** a.n * a.measure
        self.barycenters = self.maps.apply(a.barycenter)
        self.ball_centers = self.maps.apply(a.ball_center)
        self.ball_radii = self.maps.ratio * a.ball_radius

    def __len__(self):
        return len(self.maps)

    @property
    def cells(self) -> list[Cell]:
        return [self.cell(i) for i in range(len(self))]

    def cell(self, i: int) -> Cell:
        return Cell(self.indices[i], float(self.maps.ratio[i]), self.maps.orth[i],
                    self.maps.shift[i], float(self.diameters[i]), float(self.measures[i]),
                    self.barycenters[i])


def _sorted_mesh(model: AttractorModel, maps: MapArray, kind: str, param: float) -> FractalMesh:
    indices = [tuple(int(v) for v in row if v > 0) for row in maps.digits]
    order = sorted(range(len(indices)), key=indices.__getitem__)
    maps = maps.take(np.asarray(order, dtype=int))
    return FractalMesh(model, MapArray(maps.ratio, maps.orth, maps.shift, None), kind, param,
                       [indices[i] for i in order])


def generate_level_mesh(model: AttractorModel, level: int) -> FractalMesh:
    """All ``M**level`` cells of ``I_level``."""
    if level < 0:
        raise IFSError("level must be non-negative")
    maps = level_maps(model.ifs, level)
    return _sorted_mesh(model, maps, "level", float(level))


def generate_diameter_mesh(model: AttractorModel, h: float) -> FractalMesh:
    """Cells of ``L_h``: first cells along each branch with ``diam <= h``."""
    if not h > 0:
        raise IFSError("h must be positive")
    if h > model.h0 + model.h0_gap:
        raise IFSError(f"h = {h} exceeds the attractor diameter {model.h0}")
    n = model.n
    ifs = model.ifs
    current = MapArray.identity(n)
    done = []
    while len(current):
        # diameter = (left-to-right ratio product) * h0
        stop = current.ratio * model.h0 <= h
        done.append(current.take(stop))
        rest = current.take(~stop)
        if not len(rest):
            break
        current = rest.children(ifs)
    return _sorted_mesh(model, MapArray.concat(done, n), "diameter", float(h))


def mesh_to_csv_rows(mesh: FractalMesh) -> Iterable[str]:
    n = mesh.attractor.n
    yield "index;diameter;measure;" + ";".join(f"barycenter_{i}" for i in range(n))
    for idx, d, m, b in zip(mesh.indices, mesh.diameters, mesh.measures, mesh.barycenters):
        label = ".".join(str(v) for v in idx) if idx else "0"
        yield f"{label};{d:.17g};{m:.17g};" + ";".join(f"{v:.17g}" for v in b)
