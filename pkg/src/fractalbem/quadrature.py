"""Quadrature on attractor cells and cell pairs.

Three ingredients:

* composite barycenter rules: a cell is cut into the sub-mesh ``L_{h_q}`` of
  its subtree and each piece contributes ``measure * f(barycenter)``;
* a self-similar closure for the static singular kernels ``|x-y|^-t`` and
  ``ln|x-y|`` on non-separated cell pairs;
* Monte-Carlo oracles built on the chaos game, used to validate the above.

The closure works with the unknowns ``J(U) = int_Gamma int_{U Gamma} K(x - y)``
indexed by the relative similarity ``U = s_a^-1 o s_b`` of a cell pair.
Splitting the larger of the two sets into its ``M`` children (both when the
ratios agree) expresses every ``J(U)`` through tensor-rule values of
separated child pairs plus scaled copies of other unknowns; for self-similar
meshes only finitely many ``U`` occur, and the resulting sparse linear system
is solved exactly.  For a homogeneous IFS and ``U = identity`` this is the
classical ``I = sum_{m != m'} I_mm' / (1 - M rho^(2n-t))`` identity.
"""
from __future__ import annotations

import math
import weakref
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _backend
from .ifs import AttractorModel, Cell, MapArray, refine_maps
from .kernels import MODE_LOG, MODE_POWER, full_mode, near_tail_mode

COINCIDENT, NEAR, SEPARATED = 0, 1, 2
_KEY_SCALE = 1e9


class QuadratureError(RuntimeError):
    """Raised when a requested integral is not available (e.g. closure too large)."""


@dataclass
class QuadResult:
    value: complex
    error_estimate: float
    classification: int = NEAR


# ---------------------------------------------------------------------------
# composite barycenter rules
# ---------------------------------------------------------------------------
_reference_cache: "weakref.WeakKeyDictionary[AttractorModel, dict]" = weakref.WeakKeyDictionary()


def reference_rule(model: AttractorModel, rel: float) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the barycenter rule on ``Gamma`` with pieces of relative size ``rel``."""
    cache = _reference_cache.setdefault(model, {})
    key = round(float(rel), 12)
    if key not in cache:
        leaves, _ = refine_maps(model.ifs, MapArray.identity(model.n, False), rel)
        cache[key] = (leaves.apply(model.barycenter), leaves.ratio ** model.n * model.measure)
    return cache[key]


@dataclass
class CellRules:
    """Barycenter rules for a batch of cells, node groups addressed by ``offsets``."""

    nodes: np.ndarray
    weights: np.ndarray
    offsets: np.ndarray

    @classmethod
    def build(cls, model: AttractorModel, maps: MapArray, h_q) -> "CellRules":
        """Cut every cell into pieces of diameter ``<= h_q`` (scalar or per cell)."""
        h_q = np.broadcast_to(np.asarray(h_q, dtype=float), (len(maps),))
        leaves, owner = refine_maps(model.ifs, maps, h_q / model.h0)
        counts = np.bincount(owner, minlength=len(maps))
        offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        return cls(leaves.apply(model.barycenter), leaves.ratio ** model.n * model.measure, offsets)

    def __len__(self):
        return self.offsets.size - 1

    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    def integrate(self, f) -> np.ndarray:
        """``sum_p w_p f(x_p)`` per cell; ``f`` maps (P, n) points to P values."""
        vals = np.asarray(f(self.nodes)) * self.weights
        owner = np.repeat(np.arange(len(self)), self.counts())
        if np.iscomplexobj(vals):
            return (np.bincount(owner, vals.real, minlength=len(self))
                    + 1j * np.bincount(owner, vals.imag, minlength=len(self)))
        return np.bincount(owner, vals, minlength=len(self))


def _as_maps(model: AttractorModel, cell) -> MapArray:
    if cell is None:
        return MapArray.identity(model.n, False)
    if isinstance(cell, MapArray):
        return cell
    if isinstance(cell, Cell):
        return MapArray(np.array([cell.ratio]), cell.orthogonal[None], cell.shift[None])
    raise TypeError("cell must be a Cell, a MapArray or None for the whole attractor")


def integrate_on_cell(model: AttractorModel, cell, f, h_q: float):
    """Composite barycenter rule for ``int_cell f``; ``cell=None`` means ``Gamma`` itself."""
    if not h_q > 0:
        raise ValueError("h_q must be positive")
    rules = CellRules.build(model, _as_maps(model, cell), h_q)
    out = rules.integrate(f)
    return out[0] if out.size == 1 else out


# ---------------------------------------------------------------------------
# pair classification and tensor rules
# ---------------------------------------------------------------------------
def _same_maps(A: MapArray, B: MapArray, tol: float = 1e-13) -> np.ndarray:
    return ((np.abs(A.ratio - B.ratio) <= tol)
            & np.all(np.abs(A.orth - B.orth) <= tol, axis=(1, 2))
            & np.all(np.abs(A.shift - B.shift) <= tol * (1 + np.abs(A.shift)), axis=1))


def classify_pairs(model: AttractorModel, A: MapArray, B: MapArray, eta: float = 1.0) -> np.ndarray:
    """``SEPARATED`` if the bounding-ball gap is ``>= eta * max diameter``; ``COINCIDENT`` for equal cells."""
    ca, cb = A.apply(model.ball_center) if len(A) else A.shift, B.apply(model.ball_center) if len(B) else B.shift
    gap = np.linalg.norm(ca - cb, axis=1) - (A.ratio + B.ratio) * model.ball_radius
    sep = gap >= eta * np.maximum(A.ratio, B.ratio) * model.h0
    out = np.full(len(A), NEAR, dtype=np.int8)
    out[sep] = SEPARATED
    out[~sep & _same_maps(A, B)] = COINCIDENT
    return out


def tensor_pair_sums(model: AttractorModel, A: MapArray, B: MapArray, rel: float,
                     mode: int, k: float = 1.0, t: float = 1.0) -> np.ndarray:
    """Tensor barycenter rule for ``int_{A Gamma} int_{B Gamma} K`` with pieces of relative size ``rel``."""
    K = len(A)
    if K == 0:
        return np.zeros(0, dtype=complex)
    z, w = reference_rule(model, rel)
    P = z.shape[0]
    maps = MapArray.concat([A, B], model.n)
    # node p of group g: maps[g](z_p)
    nodes = (maps.ratio[:, None, None] * np.einsum("gij,pj->gpi", maps.orth, z)
             + maps.shift[:, None, :]).reshape(-1, model.n)
    weights = (maps.ratio[:, None] ** model.n * w[None, :]).reshape(-1)
    offsets = np.arange(2 * K + 1, dtype=np.int64) * P
    return _backend.pair_sums(nodes, weights, offsets, np.arange(K), np.arange(K, 2 * K), k, mode, t)


# ---------------------------------------------------------------------------
# self-similar closure
# ---------------------------------------------------------------------------
def _keys(U: MapArray) -> np.ndarray:
    flat = np.concatenate([U.ratio[:, None], U.orth.reshape(len(U), -1), U.shift], axis=1)
    return np.rint(flat * _KEY_SCALE).astype(np.int64)


def _lex_less(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a != b
    first = np.argmax(diff, axis=1)
    rows = np.arange(a.shape[0])
    return diff.any(axis=1) & (a[rows, first] < b[rows, first])


def canonical_relative(A: MapArray, B: MapArray):
    """Relative similarity of each pair, normalized by the larger cell.

    Returns ``(U, mu, keys)`` with ``int_{A Gamma} int_{B Gamma} K = mu^(2n) * (scaled) J(U)``.
    For equal ratios the lexicographically smaller of ``U`` and ``U^-1`` is used.
    """
    u1 = A.inverse().compose(B)
    u2 = B.inverse().compose(A)
    k1, k2 = _keys(u1), _keys(u2)
    rel = A.ratio / B.ratio
    take2 = rel < 1.0 - 1e-12
    tie = np.abs(rel - 1.0) <= 1e-12
    take2 |= tie & _lex_less(k2, k1)
    U = MapArray(np.where(take2, u2.ratio, u1.ratio),
                 np.where(take2[:, None, None], u2.orth, u1.orth),
                 np.where(take2[:, None], u2.shift, u1.shift))
    U.ratio = np.minimum(U.ratio, 1.0)
    mu = np.maximum(A.ratio, B.ratio)
    keys = np.where(take2[:, None], k2, k1)
    return U, mu, keys


class SelfSimilarClosure:
    """Exact self-similar evaluation of static singular double integrals.

    ``kind="power"`` integrates ``|x-y|^-t`` (requires ``-1 <= t < n``),
    ``kind="log"`` integrates ``ln|x-y|``.  Separated child pairs are handled by
    the tensor barycenter rule with pieces of relative size ``rule_ratio``.
    """

    def __init__(self, model: AttractorModel, kind: str = "power", t: float = 1.0,
                 eta: float = 1.0, rule_ratio: float = 0.25, max_unknowns: int = 20000):
        if kind not in ("power", "log"):
            raise ValueError("kind must be 'power' or 'log'")
        n = model.n
        if kind == "power":
            if not -1 <= t < n:
                raise ValueError(f"power kernel needs -1 <= t < n = {n}")
            # the homogeneous scaling factor sum_m rho_m^(2n-t) must stay below 1
            if np.sum(model.ifs.rhos ** (2 * n - t)) >= 1.0:
                raise ValueError("kernel exponent too large for the self-similar closure")
        self.model, self.kind, self.t = model, kind, float(t)
        self.eta, self.rule_ratio, self.max_unknowns = float(eta), float(rule_ratio), int(max_unknowns)
        self._index: dict[tuple, int] = {}
        self._maps: list[MapArray] = []
        self._rows: list[np.ndarray] = []
        self._cols: list[np.ndarray] = []
        self._coef: list[np.ndarray] = []
        self._known = np.zeros(0)
        self._solution = np.zeros(0)
        self._expanded = 0
        self.tensor_pairs = 0

    @property
    def size(self) -> int:
        return len(self._index)

    @property
    def _mode(self) -> int:
        return MODE_POWER if self.kind == "power" else MODE_LOG

    def _scale(self, mu: np.ndarray) -> np.ndarray:
        n = self.model.n
        return mu ** (2 * n - self.t) if self.kind == "power" else mu ** (2 * n)

    def _register(self, U: MapArray, keys: np.ndarray) -> np.ndarray:
        idx = np.empty(len(U), dtype=np.int64)
        for q, row in enumerate(map(tuple, keys.tolist())):
            j = self._index.get(row)
            if j is None:
                j = len(self._index)
                if j >= self.max_unknowns:
                    raise QuadratureError(f"self-similar closure exceeded {self.max_unknowns} unknowns")
                self._index[row] = j
                self._maps.append(U.take([q]))
            idx[q] = j
        return idx

    def _expand_pending(self) -> None:
        model, ifs = self.model, self.model.ifs
        M, n = ifs.M, model.n
        gens = MapArray.from_maps(ifs.maps)
        while self._expanded < len(self._maps):
            lo, hi = self._expanded, len(self._maps)
            U = MapArray.concat(self._maps[lo:hi], n)
            self._expanded = hi
            eq = np.abs(U.ratio - 1.0) <= 1e-12
            A_parts, B_parts, owner_parts = [], [], []
            ue, un = np.nonzero(eq)[0], np.nonzero(~eq)[0]
            if ue.size:
                # both sets split: pairs (s_m, U s_m')
                Ue = U.take(np.repeat(ue, M * M))
                A_parts.append(gens.take(np.tile(np.repeat(np.arange(M), M), ue.size)))
                B_parts.append(Ue.compose(gens.take(np.tile(np.arange(M), M * ue.size))))
                owner_parts.append(np.repeat(ue, M * M))
            if un.size:
                # only Gamma (the larger set) splits: pairs (s_m, U)
                A_parts.append(gens.take(np.tile(np.arange(M), un.size)))
                B_parts.append(U.take(np.repeat(un, M)))
                owner_parts.append(np.repeat(un, M))
            A = MapArray.concat(A_parts, n)
            B = MapArray.concat(B_parts, n)
            owner = np.concatenate(owner_parts) + lo
            cls = classify_pairs(model, A, B, self.eta)
            sep = cls == SEPARATED
            known = np.zeros(hi - lo)
            if sep.any():
                vals = tensor_pair_sums(model, A.take(sep), B.take(sep), self.rule_ratio, self._mode, t=self.t).real
                known += np.bincount(owner[sep] - lo, vals, minlength=hi - lo)
                self.tensor_pairs += int(sep.sum())
            near = ~sep
            if near.any():
                V, mu, keys = canonical_relative(A.take(near), B.take(near))
                cols = self._register(V, keys)
                self._rows.append(owner[near])
                self._cols.append(cols)
                self._coef.append(self._scale(mu))
                if self.kind == "log":
                    extra = mu ** (2 * n) * model.measure ** 2 * V.ratio ** n * np.log(mu)
                    known += np.bincount(owner[near] - lo, extra, minlength=hi - lo)
            self._known = np.concatenate([self._known, known])

    def _solve(self) -> None:
        N = self.size
        rows = np.concatenate(self._rows) if self._rows else np.zeros(0, dtype=int)
        cols = np.concatenate(self._cols) if self._cols else np.zeros(0, dtype=int)
        coef = np.concatenate(self._coef) if self._coef else np.zeros(0)
        C = sp.csr_matrix((coef, (rows, cols)), shape=(N, N))
        system = (sp.identity(N, format="csr") - C).tocsc()
        sol = spla.spsolve(system, self._known[:N]) if N > 1 else self._known[:1] / system[0, 0]
        self._solution = np.atleast_1d(np.asarray(sol, dtype=float))

    def relative_values(self, U: MapArray, keys: np.ndarray) -> np.ndarray:
        idx = self._register(U, keys)
        if self._expanded < len(self._maps):
            self._expand_pending()
            self._solve()
        return self._solution[idx]

    def pair_integrals(self, A: MapArray, B: MapArray) -> np.ndarray:
        """``int_{A Gamma} int_{B Gamma} K(x - y)`` for every pair of composed maps."""
        if len(A) == 0:
            return np.zeros(0)
        V, mu, keys = canonical_relative(A, B)
        J = self.relative_values(V, keys)
        out = self._scale(mu) * J
        if self.kind == "log":
            out = out + mu ** (2 * self.model.n) * self.model.measure ** 2 * V.ratio ** self.model.n * np.log(mu)
        return out

    def self_integral(self) -> float:
        """``int_Gamma int_Gamma K``."""
        I = MapArray.identity(self.model.n, False)
        return float(self.pair_integrals(I, I)[0])


_closure_cache: "weakref.WeakKeyDictionary[AttractorModel, dict]" = weakref.WeakKeyDictionary()


def get_closure(model: AttractorModel, kind: str, t: float = 1.0, eta: float = 1.0,
                rule_ratio: float = 0.25) -> SelfSimilarClosure:
    """Shared closure per model and parameters (its unknown set only grows)."""
    cache = _closure_cache.setdefault(model, {})
    key = (kind, float(t), float(eta), float(rule_ratio))
    if key not in cache:
        cache[key] = SelfSimilarClosure(model, kind, t, eta, rule_ratio)
    return cache[key]


def homogeneous_self_integral(model: AttractorModel, t: float = 1.0, rule_ratio: float = 0.25,
                              eta: float = 1.0) -> float:
    """Textbook closure ``I = (sum_{m != m'} I_mm') / (1 - M rho^(2n-t))`` for homogeneous IFSs.

    The off-diagonal child pairs are themselves evaluated by the general closure.
    """
    ifs = model.ifs
    if not ifs.is_homogeneous:
        raise ValueError("the scalar closure formula needs a homogeneous IFS")
    n, M, rho = model.n, ifs.M, ifs.rhos[0]
    gens = MapArray.from_maps(ifs.maps)
    a, b = np.nonzero(~np.eye(M, dtype=bool))
    clo = get_closure(model, "power", t, eta, rule_ratio)
    off = clo.pair_integrals(gens.take(a), gens.take(b)).sum()
    return float(off / (1.0 - M * rho ** (2 * n - t)))


# ---------------------------------------------------------------------------
# recursive subdivision (independent of the closure)
# ---------------------------------------------------------------------------
def _split_pairs(ifs, A: MapArray, B: MapArray) -> tuple[MapArray, MapArray]:
    """Children of every pair: split the larger cell, both when the ratios agree."""
    M, n = ifs.M, A.shift.shape[1]
    ratio = A.ratio / B.ratio
    both = np.abs(ratio - 1.0) <= 1e-12
    only_a = ~both & (ratio > 1.0)
    only_b = ~both & ~only_a
    Ap, Bp = [], []
    ib = np.nonzero(both)[0]
    if ib.size:
        ka, kb = A.take(ib).children(ifs), B.take(ib).children(ifs)
        K = ib.size
        sa = np.repeat(np.arange(K * M), M)
        sb = (np.arange(K)[:, None, None] * M + np.arange(M)[None, None, :]).repeat(M, axis=1).reshape(-1)
        Ap.append(ka.take(sa))
        Bp.append(kb.take(sb))
    ia = np.nonzero(only_a)[0]
    if ia.size:
        Ap.append(A.take(ia).children(ifs))
        Bp.append(B.take(np.repeat(ia, M)))
    jb = np.nonzero(only_b)[0]
    if jb.size:
        Ap.append(A.take(np.repeat(jb, M)))
        Bp.append(B.take(jb).children(ifs))
    return MapArray.concat(Ap, n), MapArray.concat(Bp, n)


def recursive_double_integral(model: AttractorModel, A: MapArray | None = None, B: MapArray | None = None,
                              kind: str = "power", t: float = 1.0, depth_cap: int = 8,
                              eta: float = 1.0, rule_ratio: float = 0.25,
                              chunk: int = 50_000) -> QuadResult:
    """Static singular double integral by geometric subdivision down to ``depth_cap``.

    Pairs still unseparated at the cap are estimated with one-node children
    (coincident children contribute nothing).  Because the same estimate is
    available at every level, the truncated sums ``R_d`` for ``d <= depth_cap``
    come out of one pass; the returned value applies Aitken's delta-squared
    extrapolation to the last three of them, and ``error_estimate`` is the size
    of that correction.  The raw ``R_depth_cap`` is kept in ``raw_value``.
    """
    n = model.n
    A = MapArray.identity(n, False) if A is None else A
    B = MapArray.identity(n, False) if B is None else B
    mode = MODE_POWER if kind == "power" else MODE_LOG
    separated = np.zeros(depth_cap + 1)   # separated contributions found at each level
    capped = np.zeros(depth_cap + 1)      # one-node estimate of the unseparated rest at each level
    stack = [(0, A, B)]
    while stack:
        depth, A, B = stack.pop()
        if len(A) > chunk:
            for lo in range(0, len(A), chunk):
                sel = np.arange(lo, min(lo + chunk, len(A)))
                stack.append((depth, A.take(sel), B.take(sel)))
            continue
        cls = classify_pairs(model, A, B, eta)
        sep = cls == SEPARATED
        if sep.any():
            separated[depth] += float(tensor_pair_sums(model, A.take(sep), B.take(sep),
                                                       rule_ratio, mode, t=t).real.sum())
        near = ~sep
        if not near.any():
            continue
        Ac, Bc = _split_pairs(model.ifs, A.take(near), B.take(near))
        capped[depth] += float(tensor_pair_sums(model, Ac, Bc, 1.0, mode, t=t).real.sum())
        if depth + 1 < depth_cap:
            stack.append((depth + 1, Ac, Bc))
    levels = np.cumsum(separated)[:depth_cap] + capped[:depth_cap]
    raw = float(levels[-1])
    value = raw
    if depth_cap >= 3:
        d1, d2 = levels[-1] - levels[-2], levels[-2] - levels[-3]
        if d2 != d1 and abs(d1) < abs(d2):
            value = float(levels[-1] - d1 * d1 / (d1 - d2))
    res = QuadResult(value, abs(value - raw), NEAR)
    res.raw_value = raw
    res.levels = levels
    return res


# ---------------------------------------------------------------------------
# Helmholtz pair integrals
# ---------------------------------------------------------------------------
def double_integral(model: AttractorModel, cell_a=None, cell_b=None, kernel: str = "helmholtz",
                    k: float = 1.0, t: float = 1.0, h_q: float | None = None, eta: float = 1.0,
                    method: str = "closure", depth_cap: int = 8) -> QuadResult:
    """``int_{cell_a} int_{cell_b} K(x, y)`` for one pair of cells.

    ``kernel`` is ``"helmholtz"`` (the screen's fundamental solution with
    wavenumber ``k``), ``"power"`` (``|x-y|^-t``) or ``"log"``.  Unseparated
    Helmholtz pairs use the static singular part plus a tensor rule for the
    smooth remainder.  The error estimate compares rules at ``h_q`` and ``2 h_q``.
    """
    n = model.n
    A, B = _as_maps(model, cell_a), _as_maps(model, cell_b)
    if len(A) != 1 or len(B) != 1:
        raise ValueError("double_integral takes single cells; use the batch helpers for arrays")
    diam = float(max(A.ratio[0], B.ratio[0]) * model.h0)
    h_q = 0.25 * diam if h_q is None else float(h_q)
    rel = min(1.0, h_q / diam)
    rel_coarse = min(1.0, 2 * rel)
    cls = int(classify_pairs(model, A, B, eta)[0])
    if kernel in ("power", "log"):
        mode = MODE_POWER if kernel == "power" else MODE_LOG
        if cls == SEPARATED:
            fine = tensor_pair_sums(model, A, B, rel, mode, t=t)[0].real
            coarse = tensor_pair_sums(model, A, B, rel_coarse, mode, t=t)[0].real
            return QuadResult(float(fine), float(abs(fine - coarse)), cls)
        if method == "recursive":
            res = recursive_double_integral(model, A, B, kernel, t, depth_cap, eta, rel)
            res.classification = cls
            return res
        clo = get_closure(model, kernel, t, eta, rel)
        val = float(clo.pair_integrals(A, B)[0])
        coarse = float(get_closure(model, kernel, t, eta, rel_coarse).pair_integrals(A, B)[0])
        return QuadResult(val, abs(val - coarse), cls)
    if kernel != "helmholtz":
        raise ValueError("kernel must be 'helmholtz', 'power' or 'log'")
    if cls == SEPARATED:
        fine = tensor_pair_sums(model, A, B, rel, full_mode(n), k)[0]
        coarse = tensor_pair_sums(model, A, B, rel_coarse, full_mode(n), k)[0]
        return QuadResult(complex(fine), float(abs(fine - coarse)), cls)
    tail = near_tail_mode(n)
    val = (helmholtz_static_pairs(model, A, B, k, eta, rel)[0]
           + tensor_pair_sums(model, A, B, rel, tail, k)[0])
    val_c = (helmholtz_static_pairs(model, A, B, k, eta, rel_coarse)[0]
             + tensor_pair_sums(model, A, B, rel_coarse, tail, k)[0])
    return QuadResult(complex(val), float(abs(val - val_c)), cls)


def helmholtz_singular_pairs(model: AttractorModel, A: MapArray, B: MapArray, eta: float = 1.0,
                             rule_ratio: float = 0.25) -> np.ndarray:
    """Integrals of the static singular part of the fundamental solution over cell pairs."""
    if model.n == 2:
        return get_closure(model, "power", 1.0, eta, rule_ratio).pair_integrals(A, B) / (4.0 * math.pi)
    return -get_closure(model, "log", 0.0, eta, rule_ratio).pair_integrals(A, B) / (2.0 * math.pi)


def helmholtz_static_pairs(model: AttractorModel, A: MapArray, B: MapArray, k: float,
                           eta: float = 1.0, rule_ratio: float = 0.25) -> np.ndarray:
    """Non-smooth part of the pair integrals of the fundamental solution, evaluated by closures.

    For ``n = 2`` this is the ``1/(4 pi r)`` singularity plus the first two
    Taylor terms ``ik/(4 pi) - k^2 r/(8 pi)`` of the remainder (``r`` is not
    smooth on the diagonal); for ``n = 1`` it is the logarithmic part.  The
    rest of the kernel (:func:`~fractalbem.kernels.near_tail_mode`) is
    smooth enough for the tensor rule.
    """
    sing = helmholtz_singular_pairs(model, A, B, eta, rule_ratio).astype(complex)
    if model.n == 1:
        return sing
    meas = (A.ratio * B.ratio) ** model.n * model.measure ** 2
    lin = get_closure(model, "power", -1.0, eta, rule_ratio).pair_integrals(A, B)
    return sing + 1j * k / (4.0 * math.pi) * meas - k ** 2 / (8.0 * math.pi) * lin


# ---------------------------------------------------------------------------
# Monte-Carlo oracles
# ---------------------------------------------------------------------------
@dataclass
class MonteCarloResult:
    estimate: complex
    stderr: float
    samples: int
    note: str = ""


_block_cache: "weakref.WeakKeyDictionary[AttractorModel, tuple]" = weakref.WeakKeyDictionary()


def _alias_table(prob: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Walker/Vose alias table for O(1) sampling from a discrete law."""
    K = prob.size
    scaled = prob * K / prob.sum()
    accept = np.ones(K)
    alias = np.arange(K)
    small = [i for i in range(K) if scaled[i] < 1.0]
    large = [i for i in range(K) if scaled[i] >= 1.0]
    while small and large:
        s_, l_ = small.pop(), large.pop()
        accept[s_] = scaled[s_]
        alias[s_] = l_
        scaled[l_] -= 1.0 - scaled[s_]
        (small if scaled[l_] < 1.0 else large).append(l_)
    return accept, alias


def _sample_alias(table, size: int, rng: np.random.Generator) -> np.ndarray:
    accept, alias = table
    i = rng.integers(0, accept.size, size=size)
    return np.where(rng.random(size) < accept[i], i, alias[i])


def _digit_blocks(model: AttractorModel):
    """Composed maps of ``L`` consecutive digits with an alias table for their probabilities."""
    if model not in _block_cache:
        ifs = model.ifs
        L = max(1, int(math.log(4096) // math.log(ifs.M)))
        maps = MapArray.identity(model.n, False)
        w = ifs.rhos ** model.n
        w = w / w.sum()
        prob = np.ones(1)
        for _ in range(L):
            maps = maps.children(ifs)
            prob = (prob[:, None] * w[None, :]).reshape(-1)
        _block_cache[model] = (L, maps, _alias_table(prob))
    return _block_cache[model]


def chaos_game(model: AttractorModel, size: int, rng: np.random.Generator,
               depth: int | None = None) -> np.ndarray:
    """Points distributed by the normalized self-similar measure on ``Gamma``.

    Random addresses of length ``depth`` (default: cells below ``1e-6 h0``)
    are applied to the barycenter, a block of digits at a time.
    """
    ifs = model.ifs
    if depth is None:
        depth = int(math.ceil(math.log(1e-6) / math.log(ifs.rho_max)))
    L, maps, table = _digit_blocks(model)
    x = np.broadcast_to(model.barycenter, (size, model.n)).copy()
    for _ in range(-(-depth // L)):
        d = _sample_alias(table, size, rng)
        if model.n == 1:
            x = (maps.ratio[d] * maps.orth[d, 0, 0] * x[:, 0] + maps.shift[d, 0])[:, None]
        else:
            q = maps.orth[d]
            r = maps.ratio[d]
            x0 = r * (q[:, 0, 0] * x[:, 0] + q[:, 0, 1] * x[:, 1]) + maps.shift[d, 0]
            x1 = r * (q[:, 1, 0] * x[:, 0] + q[:, 1, 1] * x[:, 1]) + maps.shift[d, 1]
            x = np.stack([x0, x1], axis=1)
    return x


def _draw_in_children(model, rng, digits: np.ndarray) -> np.ndarray:
    gens = MapArray.from_maps(model.ifs.maps)
    x = chaos_game(model, digits.size, rng)
    return gens.ratio[digits, None] * np.einsum("kij,kj->ki", gens.orth[digits], x) + gens.shift[digits]


def _accumulate(batches):
    vals = np.concatenate(batches)
    mean = vals.mean()
    std = float(np.sqrt(np.mean(np.abs(vals - mean) ** 2)))
    return mean, std / math.sqrt(vals.size), vals.size


def montecarlo_integral(model: AttractorModel, f, samples: int = 100_000, seed: int = 0,
                        cell=None, batch: int = 1_000_000) -> MonteCarloResult:
    """``int_cell f`` by chaos-game sampling; ``cell=None`` integrates over ``Gamma``."""
    if samples < 1000:
        raise ValueError("use at least 1000 samples")
    rng = np.random.default_rng(seed)
    maps = _as_maps(model, cell)
    measure = float(maps.ratio[0] ** model.n * model.measure)
    out = []
    left = samples
    while left:
        m = min(batch, left)
        x = maps.ratio[0] * chaos_game(model, m, rng) @ maps.orth[0].T + maps.shift[0]
        out.append(measure * np.asarray(f(x)))
        left -= m
    mean, se, N = _accumulate(out)
    return MonteCarloResult(mean, se, N)


def montecarlo_singular_self(model: AttractorModel, kind: str = "power", t: float = 1.0,
                             samples: int = 1_000_000, seed: int = 0,
                             batch: int = 1_000_000) -> MonteCarloResult:
    """``int_Gamma int_Gamma K(x - y)`` for the static singular kernels.

    The pair space is split by the longest common address prefix ``p`` of
    ``x`` and ``y``.  ``p`` is sampled by continuing with digit ``m`` with
    probability ``g_m = rho_m^(2n-t)`` (``rho_m^(2n)`` for the log kernel) and
    stopping with probability ``1 - sum g``; the first differing digits
    ``m != m'`` are drawn with probability ``w_m w_m' / (1 - sum w^2)``.  The
    importance weight is then the constant ``|Gamma|^2 (1 - sum w^2)/(1 - sum g)``
    and the kernel is evaluated on the unscaled child points (plus ``ln lambda_p``
    for the log kernel).  The variance is finite because child pairs only meet
    on null sets.
    """
    rng = np.random.default_rng(seed)
    ifs = model.ifs
    n, M = model.n, ifs.M
    w = ifs.rhos ** n
    w = w / w.sum()
    g = ifs.rhos ** (2 * n - t) if kind == "power" else ifs.rhos ** (2 * n)
    G = g.sum()
    if G >= 1:
        raise ValueError("kernel too singular for this estimator")
    off = np.outer(w, w)
    np.fill_diagonal(off, 0.0)
    s_off = off.sum()
    pair_p = (off / s_off).reshape(-1)
    const = model.measure ** 2 * s_off / (1.0 - G)
    out = []
    left = samples
    while left:
        m = min(batch, left)
        pick = rng.choice(M * M, size=m, p=pair_p)
        x = _draw_in_children(model, rng, pick // M)
        y = _draw_in_children(model, rng, pick % M)
        r = np.linalg.norm(x - y, axis=1)
        if kind == "power":
            vals = const * r ** (-t)
        else:
            # sample the prefix: geometric number of steps with digit law g/G
            logscale = np.zeros(m)
            alive = np.ones(m, dtype=bool)
            while alive.any():
                cont = rng.random(alive.sum()) < G
                idx = np.nonzero(alive)[0]
                steps = rng.choice(M, size=idx.size, p=g / G)
                logscale[idx[cont]] += np.log(ifs.rhos[steps[cont]])
                alive[idx[~cont]] = False
            vals = const * (np.log(r) + logscale)
        out.append(vals)
        left -= m
    mean, se, N = _accumulate(out)
    return MonteCarloResult(float(mean), se, N, note="common-prefix importance sampling")


def montecarlo_pair(model: AttractorModel, kernel, samples: int = 1_000_000, seed: int = 0,
                    cell_a=None, cell_b=None, batch: int = 1_000_000) -> MonteCarloResult:
    """``int_a int_b kernel(x, y)`` for a bounded kernel by independent sampling of both cells."""
    rng = np.random.default_rng(seed)
    A, B = _as_maps(model, cell_a), _as_maps(model, cell_b)
    ma = float(A.ratio[0] ** model.n * model.measure)
    mb = float(B.ratio[0] ** model.n * model.measure)
    out = []
    left = samples
    while left:
        m = min(batch, left)
        x = A.ratio[0] * chaos_game(model, m, rng) @ A.orth[0].T + A.shift[0]
        y = B.ratio[0] * chaos_game(model, m, rng) @ B.orth[0].T + B.shift[0]
        out.append(ma * mb * np.asarray(kernel(x, y)))
        left -= m
    mean, se, N = _accumulate(out)
    return MonteCarloResult(mean, se, N)


def montecarlo_helmholtz_self(model: AttractorModel, k: float, samples: int = 1_000_000,
                              seed: int = 0) -> MonteCarloResult:
    """``int_Gamma int_Gamma Phi`` via the split: importance-sampled singular part + plain remainder."""
    from .kernels import smooth_remainder
    n = model.n
    if n == 2:
        s = montecarlo_singular_self(model, "power", 1.0, samples, seed)
        sing, sing_se = s.estimate / (4 * math.pi), s.stderr / (4 * math.pi)
    else:
        s = montecarlo_singular_self(model, "log", 0.0, samples, seed)
        sing, sing_se = -s.estimate / (2 * math.pi), s.stderr / (2 * math.pi)
    rem = montecarlo_pair(model, lambda x, y: smooth_remainder(n, k, np.linalg.norm(x - y, axis=1)),
                          samples, seed + 1)
    return MonteCarloResult(sing + rem.estimate, math.hypot(sing_se, rem.stderr), samples,
                            note="split kernel")
