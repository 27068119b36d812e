"""Built-in n-attractors.

The Koch snowflake uses the classical seven-map decomposition: a central copy
scaled by 1/sqrt(3) and rotated by 30 degrees, and six copies scaled by 1/3
centred two thirds of the way out to each tip.  Tips sit at radius 1/2, so
the diameter is 1.  The maps are a derived construction, checked
geometrically against the polygon limit :func:`koch_polygon`.
"""
from __future__ import annotations

import math

import numpy as np

from .ifs import IteratedFunctionSystem, SimilarityMap

KOCH_TIP_RADIUS = 0.5


def unit_interval() -> IteratedFunctionSystem:
    return IteratedFunctionSystem(
        (SimilarityMap.scaling(0.5, [0.0]), SimilarityMap.scaling(0.5, [0.5])),
        "unit_interval", 1.0)


def unit_square() -> IteratedFunctionSystem:
    maps = tuple(SimilarityMap.scaling(0.5, [0.5 * i, 0.5 * j]) for j in (0, 1) for i in (0, 1))
    return IteratedFunctionSystem(maps, "unit_square", 1.0)


def touching_squares() -> IteratedFunctionSystem:
    """``[0,1]^2 u [1,2]^2``: two unit squares meeting at the point (1, 1)."""
    maps = []
    for base in ((0.0, 0.0), (1.0, 1.0)):
        bx, by = base
        # diagonal pair of quarter squares
        maps.append(SimilarityMap.from_angle(0.5, 0.0, (bx, by)))
        # anti-diagonal pair: rotate by 90 degrees and shift back
        maps.append(SimilarityMap.from_angle(0.5, 90.0, (bx + 1.0, by)))
    return IteratedFunctionSystem(tuple(maps), "touching_squares", 2.0)


def separated_squares() -> IteratedFunctionSystem:
    """``[0,1]^2 u [2,3]x[0,1]``: each copy pairs two quarter-columns two apart."""
    maps = []
    for sx in (0.0, 2.0):
        for col in (0, 1):
            for row in range(4):
                maps.append(SimilarityMap.scaling(0.25, [sx + 0.25 * col, 0.25 * row]))
    return IteratedFunctionSystem(tuple(maps), "separated_squares", 2.0)


def alpha_family(alpha: float = 0.5) -> IteratedFunctionSystem:
    """1-D attractor ``{0} u U_m [alpha^(2m+1), alpha^(2m)]``; measure ``1/(1+alpha)``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    maps = (SimilarityMap.scaling(alpha ** 2, [0.0]),
            SimilarityMap.scaling(1.0 - alpha, [alpha]),
            SimilarityMap.scaling(alpha * (1.0 - alpha), [alpha]))
    return IteratedFunctionSystem(maps, f"alpha_family_{alpha:g}", 1.0 / (1.0 + alpha))


def infinitely_many_components() -> IteratedFunctionSystem:
    """Product of the alpha = 1/2 set with [0, 1] (ten maps)."""
    maps = [SimilarityMap.scaling(0.25, [0.0, (m - 1) / 4]) for m in range(1, 5)]
    maps += [SimilarityMap.scaling(0.25, [0.5, (m - 5) / 4]) for m in range(5, 9)]
    maps += [SimilarityMap.scaling(0.5, [0.5, 0.0]), SimilarityMap.scaling(0.5, [0.5, 0.5])]
    return IteratedFunctionSystem(tuple(maps), "infinitely_many_components", 2.0 / 3.0)


def koch_snowflake() -> IteratedFunctionSystem:
    R = KOCH_TIP_RADIUS
    maps = [SimilarityMap.from_angle(1.0 / math.sqrt(3.0), 30.0, (0.0, 0.0))]
    for k in range(6):
        theta = math.radians(90.0 + 60.0 * k)
        maps.append(SimilarityMap.scaling(1.0 / 3.0, [2 * R / 3 * math.cos(theta),
                                                     2 * R / 3 * math.sin(theta)]))
    area = 6.0 * math.sqrt(3.0) * R ** 2 / 5.0
    return IteratedFunctionSystem(tuple(maps), "koch_snowflake", area)


def koch_polygon(level: int, tip_radius: float = KOCH_TIP_RADIUS) -> np.ndarray:
    """Vertices of the level-``level`` Koch snowflake polygon (counter-clockwise).

    Starts from the equilateral triangle whose vertices are three of the tips.
    """
    angles = np.radians(90.0 + 120.0 * np.arange(3))
    pts = tip_radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    for _ in range(level):
        nxt = []
        for a, b in zip(pts, np.roll(pts, -1, axis=0)):
            d = (b - a) / 3.0
            p1, p2 = a + d, a + 2 * d
            # outward bump for a counter-clockwise polygon is a clockwise turn
            rot = np.array([[0.5, math.sqrt(3) / 2], [-math.sqrt(3) / 2, 0.5]])
            peak = p1 + rot @ d
            nxt.extend([a, p1, peak, p2])
        pts = np.array(nxt)
    return pts


LIBRARY = {
    "unit_interval": unit_interval,
    "unit_square": unit_square,
    "touching_squares": touching_squares,
    "separated_squares": separated_squares,
    "alpha_family": alpha_family,
    "infinitely_many_components": infinitely_many_components,
    "koch_snowflake": koch_snowflake,
}


def get(name: str) -> IteratedFunctionSystem:
    try:
        return LIBRARY[name]()
    except KeyError:
        raise KeyError(f"unknown attractor {name!r}; choose from {sorted(LIBRARY)}") from None
