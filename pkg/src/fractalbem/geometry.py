"""Raster-based geometric probes of attractors.

Everything here works on a pixel raster of the attractor: a pixel belongs to
the *cover* when its center lies in the bounding ball of some deep cell of
the IFS tree (cells are refined until the ball radius is below a quarter
pixel, so the cover is the set of pixel centers within about g/4 of Gamma).
Cover pixels touching a non-cover pixel form the Boundary class, the rest of
the cover is Inside.  All probes therefore report resolution-dependent
tolerances, never certified verdicts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .ifs import AttractorModel, MapArray

OUTSIDE, BOUNDARY, INSIDE, UNKNOWN = 0, 1, 2, 3
DEFAULT_MAX_PIXELS = 64_000_000


class RasterError(ValueError):
    """Invalid raster request (too fine, too coarse or empty)."""


@dataclass
class RasterImage:
    origin: np.ndarray           # coordinates of the center of pixel (0, ..., 0)
    pixel_size: float
    classes: np.ndarray          # int8 labels, axis k <-> coordinate k

    @property
    def shape(self) -> tuple[int, ...]:
        return self.classes.shape

    @property
    def n(self) -> int:
        return self.classes.ndim

    @property
    def cover(self) -> np.ndarray:
        return self.classes != OUTSIDE

    @property
    def inside(self) -> np.ndarray:
        return self.classes == INSIDE

    @property
    def boundary(self) -> np.ndarray:
        return self.classes == BOUNDARY

    def centers(self, mask: np.ndarray | None = None) -> np.ndarray:
        """Coordinates of pixel centers (all, or those selected by ``mask``)."""
        idx = np.argwhere(np.ones(self.shape, bool) if mask is None else mask)
        return self.origin + idx * self.pixel_size

    def lookup(self, points: np.ndarray) -> np.ndarray:
        """Class of the pixel containing each point (``OUTSIDE`` beyond the grid)."""
        idx = np.rint((np.asarray(points, float) - self.origin) / self.pixel_size).astype(np.int64)
        ok = np.all((idx >= 0) & (idx < np.array(self.shape)), axis=1)
        out = np.full(idx.shape[0], OUTSIDE, dtype=np.int8)
        out[ok] = self.classes[tuple(idx[ok].T)]
        return out

    def area(self, label_mask: np.ndarray) -> float:
        return float(np.count_nonzero(label_mask)) * self.pixel_size ** self.n


def _classify(cover: np.ndarray) -> np.ndarray:
    structure = ndimage.generate_binary_structure(cover.ndim, cover.ndim)
    near_out = ndimage.binary_dilation(~cover, structure=structure, border_value=1)
    classes = np.full(cover.shape, OUTSIDE, dtype=np.int8)
    classes[cover] = INSIDE
    classes[cover & near_out] = BOUNDARY
    return classes


def _grid_for(center: np.ndarray, radius: float, g: float, pad: int = 2):
    lo = center - radius
    count = int(math.ceil(2 * radius / g)) + 1 + 2 * pad
    origin = lo - pad * g
    return origin, count


def rasterize_attractor(model: AttractorModel, pixel_size: float,
                        max_pixels: int = DEFAULT_MAX_PIXELS, chunk: int = 400_000) -> RasterImage:
    """Pixel classification of ``Gamma`` at spacing ``pixel_size`` (deterministic)."""
    g = float(pixel_size)
    if not 0 < g < model.h0 / 4:
        raise RasterError("pixel_size must lie in (0, h0/4)")
    n, ifs = model.n, model.ifs
    origin, count = _grid_for(model.ball_center, model.ball_radius, g)
    if count ** n > max_pixels:
        raise RasterError(f"raster would need {count ** n} pixels (cap {max_pixels})")
    cover = np.zeros((count,) * n, dtype=bool)
    R = model.ball_radius
    target = 0.25 * g
    stack = [MapArray.identity(n, False)]
    while stack:
        cur = stack.pop()
        if len(cur) > chunk:
            for lo in range(0, len(cur), chunk):
                stack.append(cur.take(slice(lo, lo + chunk)))
            continue
        small = cur.ratio * R <= target
        if small.any():
            leaf = cur.take(small)
            c = leaf.apply(model.ball_center)
            idx = np.rint((c - origin) / g).astype(np.int64)
            d = np.linalg.norm(origin + idx * g - c, axis=1)
            hit = d <= leaf.ratio * R
            cover[tuple(idx[hit].T)] = True
        if not small.all():
            stack.append(cur.take(~small).children(ifs))
    return RasterImage(origin, g, _classify(cover))


def raster_from_mask(cover: np.ndarray, origin, pixel_size: float) -> RasterImage:
    """Wrap an explicit cover mask (used for analytic test shapes)."""
    return RasterImage(np.asarray(origin, float), float(pixel_size), _classify(np.asarray(cover, bool)))


# ---------------------------------------------------------------------------
# measure
# ---------------------------------------------------------------------------
@dataclass
class MeasureEstimate:
    estimate: float
    error_bar: float
    flagged: bool
    pixel_size: float


def total_measure(model: AttractorModel, pixel_size: float | None = None,
                  target_rel: float = 1e-3, use_declared: bool = True) -> MeasureEstimate:
    """``|Gamma|``: the declared value if present, otherwise a raster bracket.

    Cover pixels are those whose center lies in ``Gamma`` (up to a quarter
    pixel), so every pixel meeting ``Gamma`` lies in the one-pixel dilation of
    the cover, whose area is the upper end.  The Inside pixels (cover pixels
    none of whose neighbours are outside) give the lower end.  The midpoint is
    returned with half the gap as error bar and ``flagged`` set when the bar
    exceeds ``target_rel`` relative.
    """
    declared = model.ifs.declared_measure
    if use_declared and declared is not None:
        return MeasureEstimate(float(declared), 0.0, False, 0.0)
    g = model.h0 / 512 if pixel_size is None else float(pixel_size)
    ras = rasterize_attractor(model, g)
    structure = ndimage.generate_binary_structure(ras.n, ras.n)
    upper = ras.area(ndimage.binary_dilation(ras.cover, structure=structure))
    lower = ras.area(ras.inside)
    est, bar = 0.5 * (upper + lower), 0.5 * (upper - lower)
    return MeasureEstimate(est, bar, bar > target_rel * est, g)


# ---------------------------------------------------------------------------
# box counting
# ---------------------------------------------------------------------------
@dataclass
class DimensionFit:
    scales: np.ndarray
    counts: np.ndarray
    slope: float
    residual: float
    unstable: bool = False

    def as_dict(self) -> dict:
        return {"scales": self.scales.tolist(), "counts": self.counts.tolist(),
                "slope": self.slope, "residual": self.residual, "unstable": self.unstable}


def box_counts(mask: np.ndarray, factors) -> np.ndarray:
    """Number of ``f x f`` pixel blocks meeting ``mask`` for every factor ``f``."""
    out = []
    for f in factors:
        f = int(f)
        pad = [(0, (-s) % f) for s in mask.shape]
        m = np.pad(mask, pad)
        shape = []
        for s in m.shape:
            shape += [s // f, f]
        blocks = m.reshape(shape).any(axis=tuple(range(1, 2 * m.ndim, 2)))
        out.append(int(np.count_nonzero(blocks)))
    return np.array(out)


def fit_dimension(scales, counts, unstable_residual: float = 0.05) -> DimensionFit:
    scales = np.asarray(scales, float)
    counts = np.asarray(counts, float)
    if scales.size < 4:
        raise ValueError("need at least 4 scales")
    if np.log2(scales.max() / scales.min()) < 2:
        raise ValueError("scales must span at least two octaves")
    if np.any(counts <= 0):
        raise ValueError("empty set: box counts vanish")
    x, y = np.log(1.0 / scales), np.log(counts)
    slope, icpt = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * x + icpt)) ** 2)))
    unstable = resid > unstable_residual
    return DimensionFit(scales, counts.astype(int), float(slope), resid, bool(unstable))


def box_counting_dimension(raster: RasterImage, factors=None) -> DimensionFit:
    """Minkowski-dimension estimate of the Boundary pixel set.

    ``factors`` are box sizes in pixels (default: powers of two from 2 pixels
    up to a quarter of the grid).
    """
    mask = raster.boundary
    if not mask.any():
        raise ValueError("raster has no boundary pixels")
    if factors is None:
        top = max(2, min(raster.shape) // 4)
        factors = [2 ** j for j in range(1, int(math.log2(top)) + 1)]
    factors = sorted(int(f) for f in factors)
    counts = box_counts(mask, factors)
    return fit_dimension(np.array(factors) * raster.pixel_size, counts)


def endpoint_box_counts(points: np.ndarray, scales) -> np.ndarray:
    """Box counts of an explicit finite point set on the line (grid anchored at 0)."""
    pts = np.asarray(points, float)
    return np.array([np.unique(np.floor(pts / s)).size for s in scales])


def alpha_boundary_points(alpha: float, smallest: float) -> np.ndarray:
    """Endpoints ``{0} u {alpha^j}`` of the 1-D family down to ``smallest``."""
    j = np.arange(0, int(math.log(smallest) / math.log(alpha)) + 2)
    return np.concatenate([[0.0], alpha ** j])


# ---------------------------------------------------------------------------
# porosity
# ---------------------------------------------------------------------------
@dataclass
class PorosityReport:
    eta: float
    per_trial: np.ndarray
    radii: np.ndarray
    flagged: bool
    failed: bool

    def as_dict(self) -> dict:
        return {"eta": self.eta, "per_trial": self.per_trial.tolist(), "radii": self.radii.tolist(),
                "flagged": self.flagged, "failed": self.failed}


def boundary_distance(raster: RasterImage) -> np.ndarray:
    """Distance from every pixel center to the nearest Boundary pixel center."""
    b = raster.boundary
    if not b.any():
        return np.full(raster.shape, np.inf)
    return ndimage.distance_transform_edt(~b) * raster.pixel_size


def porosity_probe(raster: RasterImage, trials: int = 200, seed: int = 0,
                   r_range: tuple[float, float] | None = None, box=None) -> PorosityReport:
    """Largest empty-ball fraction ``eta`` over random balls ``B(x, r)``, minimized over trials.

    For each trial the best sub-ball ``B(y, rho) subset B(x, r)`` avoiding the
    Boundary set has ``rho = max_y min(D(y), r - |y - x|)`` over pixel centers
    ``y``; ``eta(x, r) = rho / r``.
    """
    g = raster.pixel_size
    D = boundary_distance(raster)
    rng = np.random.default_rng(seed)
    lo_corner = raster.origin
    hi_corner = raster.origin + (np.array(raster.shape) - 1) * g
    if box is not None:
        lo_corner, hi_corner = np.asarray(box[0], float), np.asarray(box[1], float)
    r_lo, r_hi = r_range if r_range is not None else (8 * g, min(1.0, 0.5 * float(np.min(hi_corner - lo_corner))))
    flagged = r_lo < 4 * g
    etas, radii = [], []
    coords = [np.arange(s) * g + raster.origin[k] for k, s in enumerate(raster.shape)]
    for _ in range(trials):
        x = rng.uniform(lo_corner, hi_corner)
        r = rng.uniform(r_lo, r_hi)
        sl = []
        for k in range(raster.n):
            a = max(0, int(math.floor((x[k] - r - raster.origin[k]) / g)))
            b = min(raster.shape[k], int(math.ceil((x[k] + r - raster.origin[k]) / g)) + 1)
            sl.append(slice(a, b))
        grids = np.meshgrid(*[coords[k][sl[k]] for k in range(raster.n)], indexing="ij")
        dist = np.sqrt(sum((grids[k] - x[k]) ** 2 for k in range(raster.n)))
        # pixels beyond the raster are boundary-free, so clipping only underestimates eta
        rho = np.minimum(D[tuple(sl)], r - dist)
        best = float(rho[dist <= r].max(initial=0.0))
        etas.append(max(best, 0.0) / r)
        radii.append(r)
    etas = np.array(etas)
    eta = float(etas.min())
    return PorosityReport(eta, etas, np.array(radii), flagged, failed=eta < 0.5 * g / r_hi)


# ---------------------------------------------------------------------------
# open set condition and overlaps
# ---------------------------------------------------------------------------
@dataclass
class OSCReport:
    escape_fraction: np.ndarray     # per map: share of mapped Inside pixels landing Outside
    overlap_area: np.ndarray        # M x M, pairwise raster overlap of s_m(Inside)
    band_tolerance: np.ndarray      # M x M, one boundary pixel band of the smaller image
    escape_tolerance: float
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def as_dict(self) -> dict:
        return {"escape_fraction": self.escape_fraction.tolist(),
                "overlap_area": self.overlap_area.tolist(),
                "band_tolerance": self.band_tolerance.tolist(),
                "escape_tolerance": self.escape_tolerance, "violations": self.violations}


def osc_and_overlap_probe(model: AttractorModel, raster: RasterImage, samples: int = 20000,
                          seed: int = 0) -> OSCReport:
    """Raster checks that ``s_m(Gamma°) subset Gamma°`` and that the images barely overlap."""
    ifs = model.ifs
    M, g, n = ifs.M, raster.pixel_size, raster.n
    rng = np.random.default_rng(seed)
    inside_pts = raster.centers(raster.inside)
    if inside_pts.shape[0] == 0:
        raise RasterError("raster has no Inside pixels")
    pick = rng.choice(inside_pts.shape[0], size=min(samples, inside_pts.shape[0]), replace=False)
    pts = inside_pts[pick]
    escape = np.array([np.mean(raster.lookup(m(pts)) == OUTSIDE) for m in ifs.maps])
    # image masks: pixel y lies in s_m(Gamma°) iff s_m^-1(y) is Inside
    centers = raster.centers()
    masks, bands = [], []
    for m in ifs.maps:
        inv = m.inverse()
        cls = raster.lookup(inv(centers)).reshape(raster.shape)
        masks.append(cls == INSIDE)
        bands.append(np.count_nonzero(cls == BOUNDARY))
    overlap = np.zeros((M, M))
    tol = np.zeros((M, M))
    for a in range(M):
        for b in range(a + 1, M):
            overlap[a, b] = overlap[b, a] = np.count_nonzero(masks[a] & masks[b]) * g ** n
            tol[a, b] = tol[b, a] = min(bands[a], bands[b]) * g ** n
    # a pixel center within one boundary-layer band may leave the cover
    band_share = np.count_nonzero(raster.boundary) / max(1, np.count_nonzero(raster.cover))
    escape_tol = 2.0 * band_share
    violations = []
    for m in range(M):
        if escape[m] > escape_tol:
            violations.append(f"map {m + 1}: {escape[m]:.3g} of interior leaves Gamma")
    for a in range(M):
        for b in range(a + 1, M):
            if overlap[a, b] > tol[a, b]:
                violations.append(f"maps {a + 1},{b + 1}: overlap {overlap[a, b]:.3g} > band {tol[a, b]:.3g}")
    return OSCReport(escape, overlap, tol, escape_tol, violations)


# ---------------------------------------------------------------------------
# distance-integral probes
# ---------------------------------------------------------------------------
@dataclass
class TrendReport:
    probe: str
    exponent: float
    radii: np.ndarray
    max_values: np.ndarray          # max over sampled boundary points, per radius
    band_slopes: np.ndarray         # per radius, log2-slope of dyadic distance-band contributions
    radius_slope: float             # slope of log(max value) against log(1/r)
    band_slope: float               # mean of band_slopes
    verdict: str
    excluded_mass: np.ndarray       # pixel area of the excluded boundary band, per radius
    params: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"probe": self.probe, "params": dict(self.params, exponent=self.exponent),
                "per_scale": [{"r": float(r), "max_value": float(v), "band_slope": float(b),
                               "excluded_mass": float(e)}
                              for r, v, b, e in zip(self.radii, self.max_values, self.band_slopes,
                                                    self.excluded_mass)],
                "radius_slope": self.radius_slope, "band_slope": self.band_slope,
                "verdict": self.verdict,
                "tolerances": {"pixel_size": self.params.get("pixel_size"),
                               "bounded_below": -BAND_THRESHOLD, "growing_above": BAND_THRESHOLD}}


BAND_THRESHOLD = 0.05


def _distance_integral_trend(raster: RasterImage, t: float, radii, points: int, seed: int,
                             probe: str, normalization: float) -> TrendReport:
    g, n = raster.pixel_size, raster.n
    radii = np.sort(np.asarray(radii, float))[::-1]
    if np.any(radii <= 0) or np.any(radii > 1):
        raise ValueError("radii must lie in (0, 1]")
    if radii.min() < 16 * g:
        raise RasterError("smallest radius must span at least 16 pixels")
    D = boundary_distance(raster)
    rng = np.random.default_rng(seed)
    bpts = np.argwhere(raster.boundary)
    sel = bpts[rng.choice(bpts.shape[0], size=min(points, bpts.shape[0]), replace=False)]
    maxima, slopes, excluded = [], [], []
    for r in radii:
        rp = int(math.ceil(r / g))
        offs = np.arange(-rp, rp + 1)
        grid = np.stack(np.meshgrid(*([offs] * n), indexing="ij"), axis=-1).reshape(-1, n)
        rad = np.linalg.norm(grid, axis=1) * g
        grid, rad = grid[rad <= r], rad[rad <= r]
        nbands = int(math.floor(math.log2(r / (2 * g))))
        vals, band_rows, excl = [], [], []
        for p in sel:
            idx = p + grid
            ok = np.all((idx >= 0) & (idx < np.array(raster.shape)), axis=1)
            d = np.full(idx.shape[0], np.inf)
            d[ok] = D[tuple(idx[ok].T)]
            pos = d > 0
            contrib = np.where(pos, np.where(pos, d, 1.0) ** (-t), 0.0) * g ** n
            contrib[~np.isfinite(d)] = 0.0
            vals.append(normalization(r) * contrib.sum())
            excl.append(np.count_nonzero(~pos) * g ** n)
            # dyadic bands r 2^-(j+1) < D <= r 2^-j, resolved ones only
            with np.errstate(divide="ignore", invalid="ignore"):
                j = np.floor(np.log2(r / np.where(pos & np.isfinite(d), d, r * 2.0 ** 60))).astype(int)
            keep = pos & np.isfinite(d) & (j >= 0) & (j < nbands)
            band_rows.append(np.bincount(j[keep], contrib[keep], minlength=nbands)[:nbands])
        vals = np.array(vals)
        maxima.append(vals.max())
        excluded.append(max(excl))
        bands = np.mean(band_rows, axis=0)
        jj = np.nonzero(bands > 0)[0]
        # ignore the two outermost bands, which feel the ball's edge
        jj = jj[jj >= 2]
        slopes.append(np.polyfit(jj, np.log2(bands[jj]), 1)[0] if jj.size >= 3 else np.nan)
    maxima = np.array(maxima)
    slopes = np.array(slopes)
    radius_slope = float(np.polyfit(np.log(1 / radii), np.log(maxima), 1)[0]) if radii.size > 1 else float("nan")
    # too few resolved bands at every radius leaves nothing to fit
    band_slope = float(np.nanmean(slopes)) if np.isfinite(slopes).any() else float("nan")
    if band_slope < -BAND_THRESHOLD:
        verdict = "bounded"
    elif band_slope > BAND_THRESHOLD:
        verdict = "growing"
    else:
        verdict = "inconclusive"
    return TrendReport(probe, t, radii, maxima, slopes, radius_slope, band_slope, verdict,
                       np.array(excluded), {"points": int(sel.shape[0]), "seed": seed, "pixel_size": g})


def dt_class_probe(raster: RasterImage, t: float, radii=(0.5, 0.25, 0.125), points: int = 32,
                   seed: int = 0) -> TrendReport:
    """``r^(t-n) int_{B(x,r)} dist(y, boundary)^-t dy`` at sampled boundary points.

    The verdict comes from the dyadic decomposition of the integral by
    distance to the boundary: band ``j`` (distances near ``r 2^-j``) carries
    ``~ 2^(j (t - (n - dim)))``, so a negative log2-slope means the integral
    stays bounded as the resolution improves, a positive one that it grows.
    """
    if not 0 < t < 1:
        raise ValueError("t must lie in (0, 1)")
    n = raster.n
    return _distance_integral_trend(raster, t, radii, points, seed, "dt_class",
                                    lambda r: r ** (t - n))


def aikawa_integral_probe(raster: RasterImage, s: float, radii=(0.5, 0.25, 0.125), points: int = 32,
                          seed: int = 0) -> TrendReport:
    """``r^-s int_{B(x,r)} dist(y, boundary)^(s-n) dy``; bounded iff ``s`` exceeds the Aikawa dimension."""
    n = raster.n
    if not 0 < s:
        raise ValueError("s must be positive")
    return _distance_integral_trend(raster, n - s, radii, points, seed, "aikawa",
                                    lambda r: r ** (-s))


def square_boundary_distance(points: np.ndarray) -> np.ndarray:
    """Exact distance to the boundary of ``[0, 1]^2`` (inside and outside)."""
    p = np.asarray(points, float)
    x, y = p[:, 0], p[:, 1]
    inside = (x >= 0) & (x <= 1) & (y >= 0) & (y <= 1)
    din = np.minimum.reduce([x, 1 - x, y, 1 - y])
    dx = np.maximum(np.maximum(-x, x - 1), 0)
    dy = np.maximum(np.maximum(-y, y - 1), 0)
    return np.where(inside, din, np.hypot(dx, dy))

