"""Pure-numpy implementation of the hot kernel sums.

Same signatures and results as the compiled ``_ckernels`` module; work is
chunked so that temporaries stay around a few million entries.
"""
from __future__ import annotations

import numpy as np

from .kernels import kernel_values

NAME = "python"
_CHUNK = 1 << 21


def pair_sums(nodes, weights, offsets, pi, pj, k, mode, t=1.0):
    """For each pair ``(pi[q], pj[q])`` of node groups return ``sum_a sum_b w_a w_b K(|x_a - y_b|)``.

    Group ``c`` owns ``nodes[offsets[c]:offsets[c+1]]``.
    """
    nodes = np.ascontiguousarray(nodes, dtype=float)
    if nodes.ndim == 1:
        nodes = nodes[:, None]
    weights = np.asarray(weights, dtype=float)
    offsets = np.asarray(offsets, dtype=np.int64)
    pi = np.asarray(pi, dtype=np.int64)
    pj = np.asarray(pj, dtype=np.int64)
    out = np.zeros(pi.shape[0], dtype=complex)
    if pi.size == 0:
        return out
    start_i, start_j = offsets[pi], offsets[pj]
    cnt_i = offsets[pi + 1] - start_i
    cnt_j = offsets[pj + 1] - start_j
    sizes = cnt_i * cnt_j
    bounds = np.cumsum(sizes)
    lo = 0
    while lo < pi.size:
        # largest block of pairs whose tensor size fits the chunk (at least one pair)
        base = bounds[lo - 1] if lo else 0
        hi = int(np.searchsorted(bounds, base + _CHUNK, side="right"))
        hi = max(hi, lo + 1)
        sz = sizes[lo:hi]
        total = int(sz.sum())
        pid = np.repeat(np.arange(hi - lo), sz)
        local = np.arange(total) - np.repeat(np.cumsum(sz) - sz, sz)
        cj = cnt_j[lo:hi][pid]
        a = start_i[lo:hi][pid] + local // cj
        b = start_j[lo:hi][pid] + local % cj
        r = np.sqrt(np.sum((nodes[a] - nodes[b]) ** 2, axis=1))
        vals = weights[a] * weights[b] * kernel_values(mode, k, r, t)
        out[lo:hi] = (np.bincount(pid, vals.real, minlength=hi - lo)
                      + 1j * np.bincount(pid, vals.imag, minlength=hi - lo))
        lo = hi
    return out


def point_sums(points, nodes, weights, k, mode):
    """``u_q = sum_p w_p K(|x_q - (y_p, 0)|)`` for points ``x_q`` in ``R^(n+1)``."""
    points = np.ascontiguousarray(points, dtype=float)
    nodes = np.ascontiguousarray(nodes, dtype=float)
    if nodes.ndim == 1:
        nodes = nodes[:, None]
    weights = np.asarray(weights, dtype=complex)
    n = nodes.shape[1]
    out = np.zeros(points.shape[0], dtype=complex)
    step = max(1, _CHUNK // max(1, nodes.shape[0]))
    for lo in range(0, points.shape[0], step):
        p = points[lo:lo + step]
        d2 = np.sum((p[:, None, :n] - nodes[None, :, :]) ** 2, axis=2) + p[:, None, n] ** 2
        out[lo:lo + step] = kernel_values(mode, k, np.sqrt(d2)) @ weights
    return out
