"""Closed-form and quadrature oracles shared by the test modules."""
import math

import numpy as np
from scipy import integrate

SQRT2 = math.sqrt(2.0)
# int_[0,1]^2 int_[0,1]^2 |x - y|^-1
SQUARE_INV_DIST = 4 * math.log(1 + SQRT2) + 4 / 3 * (1 - SQRT2)
# mean distance between two uniform points of the unit square
SQUARE_MEAN_DIST = (2 + SQRT2 + 5 * math.log(1 + SQRT2)) / 15


def square_distance_density(r):
    """Density of |x - y| for independent uniform points of the unit square."""
    if r <= 1:
        return 2 * r * (math.pi - 4 * r + r * r)
    return 2 * r * (4 * math.sqrt(r * r - 1) - (r * r + 2 - math.pi) - 4 * math.acos(1 / r))


def radial_square_integral(kernel):
    """``int int_{[0,1]^2 x [0,1]^2} kernel(|x - y|)`` as a 1-D integral over the distance."""
    out = 0j
    for part in (np.real, np.imag):
        for a, b in ((0.0, 1.0), (1.0, SQRT2)):
            val, _ = integrate.quad(lambda r: float(part(square_distance_density(r) * kernel(r))), a, b,
                                    epsabs=1e-14, epsrel=1e-13, limit=200)
            out += val if part is np.real else 1j * val
    return out
