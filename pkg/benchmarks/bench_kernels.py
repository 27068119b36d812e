"""Compare the compiled and pure-Python kernel-sum backends.

Workloads mirror the Galerkin assembly: tensor-rule pair sums for the 3D and
2D Helmholtz kernels and the near-field tail, plus field point sums.  For
each workload the script reports wall time per backend, the speed-up and the
largest relative difference between the two results.

    python benchmarks/bench_kernels.py [--cells 256] [--repeat 3] [--json out.json]
"""
from __future__ import annotations

import argparse
import json
import time

import numpy as np

from fractalbem import _backend, library
from fractalbem.ifs import AttractorModel, generate_diameter_mesh
from fractalbem.kernels import MODE_HELMHOLTZ_2D, MODE_HELMHOLTZ_3D, MODE_TAIL_3D
from fractalbem.quadrature import CellRules


def _workloads(cells: int, rng: np.random.Generator):
    sq = AttractorModel.from_ifs(library.get("unit_square"))
    h = sq.h0 / np.sqrt(cells)
    mesh = generate_diameter_mesh(sq, h)
    rules = CellRules.build(sq, mesh.maps, 0.25 * mesh.diameters)
    N = len(mesh)
    pi, pj = np.triu_indices(N)
    yield "pair 3D Helmholtz", "pair_sums", (rules.nodes, rules.weights, rules.offsets, pi, pj, 5.0,
                                             MODE_HELMHOLTZ_3D, 1.0)
    near = np.abs(pi - pj) <= 2
    yield "pair 3D tail", "pair_sums", (rules.nodes, rules.weights, rules.offsets, pi[near], pj[near],
                                        5.0, MODE_TAIL_3D, 1.0)
    seg = AttractorModel.from_ifs(library.get("unit_interval"))
    m1 = generate_diameter_mesh(seg, 1.0 / cells)
    r1 = CellRules.build(seg, m1.maps, 0.125 * m1.diameters)
    qi, qj = np.triu_indices(len(m1))
    yield "pair 2D Hankel", "pair_sums", (r1.nodes, r1.weights, r1.offsets, qi, qj, 5.0,
                                          MODE_HELMHOLTZ_2D, 1.0)
    pts = np.column_stack([rng.uniform(-1, 2, (2000, 2)), rng.uniform(0.5, 3, 2000)])
    w = rng.standard_normal(rules.weights.size) + 1j * rng.standard_normal(rules.weights.size)
    yield "field 3D points", "point_sums", (pts, rules.nodes, w, 5.0, MODE_HELMHOLTZ_3D)


def run(cells: int = 256, repeat: int = 3, seed: int = 0) -> list[dict]:
    impls = _backend.available()
    rng = np.random.default_rng(seed)
    rows = []
    for name, func, args in _workloads(cells, rng):
        times, results = {}, {}
        for label, mod in impls.items():
            best = np.inf
            for _ in range(repeat):
                t0 = time.perf_counter()
                out = getattr(mod, func)(*args)
                best = min(best, time.perf_counter() - t0)
            times[label], results[label] = best, out
        row = {"workload": name, "times_s": times}
        if len(results) == 2:
            a, b = results["python"], results["cython"]
            row["speedup"] = times["python"] / times["cython"]
            row["max_rel_diff"] = float(np.max(np.abs(a - b)) / np.max(np.abs(a)))
        rows.append(row)
    return rows


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--cells", type=int, default=256, help="cells of the square mesh (default: 256)")
    ap.add_argument("--repeat", type=int, default=3, help="timing repetitions, best kept (default: 3)")
    ap.add_argument("--seed", type=int, default=0, help="seed for the field points (default: 0)")
    ap.add_argument("--json", default=None, help="also write the results to this file")
    args = ap.parse_args()
    rows = run(args.cells, args.repeat, args.seed)
    print(f"active backend: {_backend.BACKEND}; available: {', '.join(_backend.available())}")
    print(f"{'workload':<20}{'python [s]':>12}{'cython [s]':>12}{'speed-up':>10}{'max rel diff':>14}")
    for r in rows:
        t = r["times_s"]
        cy = t.get("cython", float("nan"))
        print(f"{r['workload']:<20}{t['python']:>12.4f}{cy:>12.4f}{r.get('speedup', float('nan')):>10.1f}"
              f"{r.get('max_rel_diff', float('nan')):>14.2e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
