"""``fractalbem`` command line.

Subcommand groups::

    fractalbem attractor info|mesh|render
    fractalbem geom      dim|porosity|osc|dt|aikawa
    fractalbem approx    project|converge
    fractalbem bem       solve|converge|field

Every command prints a JSON summary (config echo, version stamp, results) to
stdout; tabular artifacts go to ``--out`` as CSV.  ``--config file.json``
supplies option values (keys are the long option names with ``_``); unknown
keys are rejected.  Exit codes: 0 success, 2 invalid input, 3 numerical
failure; failures print a JSON error object to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys

import numpy as np
import scipy.linalg as sla

from . import approx, bem, defaults, geometry, io, library
from .ifs import AttractorModel, IFSError, generate_diameter_mesh, generate_level_mesh, mesh_to_csv_rows
from .ifs import similarity_dimension
from .kernels import IncidentPlaneWave
from .quadrature import QuadratureError

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3

logger = logging.getLogger("fractalbem")


class CLIError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------
FUNCTIONS = {
    "one": (lambda x: np.ones(len(x)), lambda x: np.zeros_like(x)),
    "x1": (lambda x: x[:, 0].copy(), lambda x: np.eye(x.shape[1])[0] + 0 * x),
    "sinsin": (lambda x: np.prod(np.sin(math.pi * x), axis=1),
               lambda x: np.stack([math.pi * np.cos(math.pi * x[:, i])
                                   * np.prod(np.sin(math.pi * np.delete(x, i, axis=1)), axis=1)
                                   for i in range(x.shape[1])], axis=1)),
    "x1sq": (lambda x: x[:, 0] ** 2, lambda x: np.eye(x.shape[1])[0] * 2 * x[:, :1]),
}


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _load_model(args, require_n_attractor: bool = False) -> AttractorModel:
    if args.ifs:
        ifs = io.parse_ifs_file(args.ifs, require_n_attractor)
    else:
        try:
            ifs = library.get(args.attractor)
        except KeyError as exc:
            raise CLIError(str(exc.args[0])) from None
        if require_n_attractor and not ifs.is_n_attractor:
            raise CLIError(f"{ifs.name} is not an n-attractor")
    if args.measure is not None:
        ifs = ifs.with_measure(args.measure)
    return AttractorModel.from_ifs(ifs)


def _raster(model: AttractorModel, pixel: float | None) -> geometry.RasterImage:
    g = model.h0 / 256 if pixel is None else pixel
    return geometry.rasterize_attractor(model, g)


def _wave(args, n: int) -> IncidentPlaneWave:
    return IncidentPlaneWave.from_angles(args.k, n, args.polar, args.azimuth)


def _out_csv(args, rows) -> str | None:
    if args.out:
        return str(io.write_csv(args.out, rows))
    return None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------
def cmd_attractor_info(args):
    model = _load_model(args)
    ifs = model.ifs
    return {"name": ifs.name, "ambient_dim": ifs.ambient_dim, "maps": ifs.M,
            "rhos": ifs.rhos, "similarity_dimension": similarity_dimension(ifs),
            "n_attractor": ifs.is_n_attractor, "homogeneous": ifs.is_homogeneous,
            "diameter": model.h0, "diameter_gap": model.h0_gap,
            "ball_center": model.ball_center, "ball_radius": model.ball_radius,
            "barycenter": model.barycenter, "measure": model.measure,
            "measure_error": model.measure_error, "measure_flagged": model.measure_flagged,
            "ifs": io.ifs_to_dict(ifs)}


def cmd_attractor_mesh(args):
    model = _load_model(args)
    if (args.h is None) == (args.level is None):
        raise CLIError("give exactly one of --h and --level")
    mesh = generate_level_mesh(model, args.level) if args.level is not None else generate_diameter_mesh(model, args.h)
    rows = list(mesh_to_csv_rows(mesh))
    path = _out_csv(args, rows)
    if path is None:
        sys.stdout.write("\n".join(rows) + "\n")
        return None
    return {"cells": len(mesh), "kind": mesh.kind, "parameter": mesh.parameter,
            "measure_sum": float(mesh.measures.sum()), "measure": model.measure,
            "max_diameter": float(mesh.diameters.max()), "min_diameter": float(mesh.diameters.min()),
            "csv": path}


def cmd_attractor_render(args):
    model = _load_model(args)
    r = _raster(model, args.pixel)
    sel = r.classes != geometry.OUTSIDE
    pts = r.centers(sel)
    labels = r.classes[sel]
    header = ",".join(f"x{i + 1}" for i in range(model.n)) + ",class"
    rows = [header] + [",".join(io.fmt(v) for v in p) + f",{int(c)}" for p, c in zip(pts, labels)]
    path = _out_csv(args, rows)
    if path is None:
        sys.stdout.write("\n".join(rows) + "\n")
        return None
    return {"pixel_size": r.pixel_size, "shape": list(r.shape),
            "inside_pixels": int(r.inside.sum()), "boundary_pixels": int(r.boundary.sum()),
            "cover_area": r.area(r.cover), "classes": {"outside": geometry.OUTSIDE,
                                                      "boundary": geometry.BOUNDARY,
                                                      "inside": geometry.INSIDE}, "csv": path}


def cmd_geom_dim(args):
    model = _load_model(args)
    r = _raster(model, args.pixel)
    fit = geometry.box_counting_dimension(r, args.factors)
    return {"probe": "box_dimension", "params": {"pixel_size": r.pixel_size}, **fit.as_dict()}


def cmd_geom_porosity(args):
    model = _load_model(args)
    r = _raster(model, args.pixel)
    return {"probe": "porosity", **geometry.porosity_probe(r, args.trials, args.seed).as_dict()}


def cmd_geom_osc(args):
    model = _load_model(args)
    r = _raster(model, args.pixel)
    rep = geometry.osc_and_overlap_probe(model, r, args.samples, args.seed)
    return {"probe": "osc", "ok": rep.ok, **rep.as_dict()}


def cmd_geom_dt(args):
    model = _load_model(args)
    r = _raster(model, args.pixel)
    return geometry.dt_class_probe(r, args.t, args.radii, args.points, args.seed).as_dict()


def cmd_geom_aikawa(args):
    model = _load_model(args)
    r = _raster(model, args.pixel)
    return geometry.aikawa_integral_probe(r, args.s, args.radii, args.points, args.seed).as_dict()


def cmd_approx_project(args):
    model = _load_model(args)
    f, grad = FUNCTIONS[args.function]
    mesh = generate_diameter_mesh(model, args.h)
    pc = approx.l2_project(f, mesh)
    rep = approx.poincare_bound_check(f, grad, mesh)
    rows = ["index,value"] + [f"{'.'.join(map(str, i)) or '0'},{io.fmt(v)}"
                              for i, v in zip(mesh.indices, pc.coefficients)]
    path = _out_csv(args, rows)
    return {"cells": len(mesh), "l2_error": rep.lhs, "poincare_rhs": rep.rhs,
            "poincare_constant": rep.constant, "poincare_holds": rep.holds,
            "slack_ratio": rep.slack_ratio, "csv": path}


def cmd_approx_converge(args):
    model = _load_model(args, require_n_attractor=True)
    f, _ = FUNCTIONS[args.function]
    fit = approx.projection_convergence_study(f, model, args.h_list, args.s1, args.s2, args.pixel)
    path = _out_csv(args, fit.csv_rows())
    return {"study": "projection", **fit.as_dict(), "meets_expectation": fit.meets_expectation,
            "csv": path}


def _config(args, model) -> bem.ScatteringConfig:
    return bem.ScatteringConfig(model, _wave(args, model.n), args.h, eta=args.eta,
                                closure_rule=args.closure_rule)


def cmd_bem_solve(args):
    model = _load_model(args, require_n_attractor=True)
    sol = bem.solve_config(_config(args, model))
    doc = sol.as_dict()
    if args.out:
        io.write_text(args.out, io.dumps(doc))
    return {"cells": doc["cells"], "residual": sol.residual,
            "quadrature_error_max": sol.system.error_max, "functional": sol.functional(),
            "l1_norm": sol.l1_norm(), "pair_counts": sol.system.pair_counts,
            "solution": str(io.resolve_output(args.out)) if args.out else doc}


def cmd_bem_converge(args):
    model = _load_model(args, require_n_attractor=True)
    cfg = _config(args, model)
    rep = bem.convergence_study(cfg.with_h(max(args.h_list)), args.h_list, args.h_ref)
    path = _out_csv(args, rep.csv_rows())
    return {"study": "bem_convergence", **rep.as_dict(), "csv": path}


def cmd_bem_field(args):
    model = _load_model(args, require_n_attractor=True)
    n = model.n
    counts, box = args.grid, args.box
    if len(counts) != n + 1 or len(box) != 2 * (n + 1):
        raise CLIError(f"--grid needs {n + 1} counts and --box {2 * (n + 1)} bounds")
    axes = [np.linspace(box[2 * i], box[2 * i + 1], c) for i, c in enumerate(counts)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n + 1)
    sol = bem.solve_config(_config(args, model))
    u = bem.evaluate_field(sol, pts, args.refine_ratio)
    names = ["x", "y", "z"][: n + 1] if n == 2 else ["x", "z"]
    rows = [",".join(names) + ",re_u,im_u,abs_u"]
    rows += [",".join(io.fmt(v) for v in p) + f",{io.fmt(c.real)},{io.fmt(c.imag)},{io.fmt(abs(c))}"
             for p, c in zip(pts, u)]
    path = _out_csv(args, rows)
    if path is None:
        sys.stdout.write("\n".join(rows) + "\n")
        return None
    return {"points": int(pts.shape[0]), "cells": len(sol.mesh), "residual": sol.residual,
            "max_abs_u": float(np.max(np.abs(u))), "csv": path}


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------
def _common(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--ifs", help="IFS definition file (JSON)")
    src.add_argument("--attractor", default="unit_square", choices=sorted(library.LIBRARY),
                     help="built-in attractor (default: unit_square)")
    p.add_argument("--measure", type=float, default=None,
                   help="override the declared measure |Gamma| (default: the file's value)")
    p.add_argument("--out", default=None, help="output file (relative paths honor $FRACTALBEM_OUTPUT_DIR)")
    p.add_argument("--config", default=None, help="JSON file with option values")
    p.add_argument("--threads", type=int, default=None, help="cap BLAS/FFT worker threads (default: no cap)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _pixel(p, what="raster pixel size (default: h0/256)"):
    p.add_argument("--pixel", type=float, default=None, help=what)


def _seed(p):
    p.add_argument("--seed", type=int, required=True, help="RNG seed (required for randomized probes)")


def _wave_opts(p):
    p.add_argument("--k", type=float, default=defaults.K, help=f"wavenumber (default: {defaults.K})")
    p.add_argument("--polar", "--theta", dest="polar", type=float, default=0.0,
                   help="incidence angle from the downward normal in degrees (default: 0)")
    p.add_argument("--azimuth", type=float, default=0.0, help="azimuth in degrees (default: 0)")
    p.add_argument("--eta", type=float, default=defaults.ETA,
                   help=f"near-pair separation parameter (default: {defaults.ETA})")
    p.add_argument("--closure-rule", type=float, default=defaults.CLOSURE_RULE,
                   help=f"relative rule size inside the singular closure (default: {defaults.CLOSURE_RULE})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fractalbem", description=__doc__.split("\n")[0],
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    groups = parser.add_subparsers(dest="group", required=True)

    g = groups.add_parser("attractor", help="attractor constants, meshes and rasters").add_subparsers(
        dest="command", required=True)
    p = g.add_parser("info", help="similarity dimension, diameter, measure, barycenter")
    _common(p)
    p.set_defaults(func=cmd_attractor_info)
    p = g.add_parser("mesh", help="cells of L_h or I_level as CSV")
    _common(p)
    p.add_argument("--h", type=float, default=None, help="mesh parameter h (cells with diam <= h)")
    p.add_argument("--level", type=int, default=None, help="uniform level instead of --h")
    p.set_defaults(func=cmd_attractor_mesh)
    p = g.add_parser("render", help="raster classification as CSV (x..., class)")
    _common(p)
    _pixel(p)
    p.set_defaults(func=cmd_attractor_render)

    g = groups.add_parser("geom", help="geometry diagnostics").add_subparsers(dest="command", required=True)
    p = g.add_parser("dim", help="box-counting dimension of the boundary")
    _common(p)
    _pixel(p)
    p.add_argument("--factors", type=_int_list, default=None,
                   help="box sizes in pixels (default: powers of two up to a quarter of the grid)")
    p.set_defaults(func=cmd_geom_dim)
    p = g.add_parser("porosity", help="ball-condition porosity estimate")
    _common(p)
    _pixel(p)
    _seed(p)
    p.add_argument("--trials", type=int, default=200, help="random balls (default: 200)")
    p.set_defaults(func=cmd_geom_porosity)
    p = g.add_parser("osc", help="open-set-condition and overlap probe")
    _common(p)
    _pixel(p)
    _seed(p)
    p.add_argument("--samples", type=int, default=20000, help="sampled Inside pixels (default: 20000)")
    p.set_defaults(func=cmd_geom_osc)
    for name, exp, helptext in (("dt", "t", "D^t boundary-distance integral trend"),
                                ("aikawa", "s", "Aikawa-type integral trend")):
        p = g.add_parser(name, help=helptext)
        _common(p)
        _pixel(p)
        _seed(p)
        p.add_argument(f"--{exp}", type=float, required=True, help=f"exponent {exp}")
        p.add_argument("--radii", type=_float_list, default=[0.5, 0.25, 0.125],
                       help="ball radii (default: 0.5,0.25,0.125)")
        p.add_argument("--points", type=int, default=32, help="boundary centers (default: 32)")
        p.set_defaults(func=cmd_geom_dt if name == "dt" else cmd_geom_aikawa)

    g = groups.add_parser("approx", help="projection and fractional norms").add_subparsers(
        dest="command", required=True)
    p = g.add_parser("project", help="L2 projection of a test function and the Poincare bound")
    _common(p)
    p.add_argument("--function", choices=sorted(FUNCTIONS), default="sinsin",
                   help="test function (default: sinsin)")
    p.add_argument("--h", type=float, required=True, help="mesh parameter")
    p.set_defaults(func=cmd_approx_project)
    p = g.add_parser("converge", help="grid H^s1 error of the projection over an h list")
    _common(p)
    _pixel(p, "grid spacing (default: rho_min * h_min / 4)")
    p.add_argument("--function", choices=sorted(FUNCTIONS), default="sinsin",
                   help="test function (default: sinsin)")
    p.add_argument("--h-list", type=_float_list, required=True, help="comma-separated h values (>= 3)")
    p.add_argument("--s1", type=float, default=0.0, help="norm index in [-1, 0] (default: 0)")
    p.add_argument("--s2", type=float, default=None, help="assumed regularity in [0, 1] (default: none)")
    p.set_defaults(func=cmd_approx_converge)

    g = groups.add_parser("bem", help="Galerkin BEM for the screen").add_subparsers(dest="command", required=True)
    p = g.add_parser("solve", help="assemble and solve; --out receives the solution JSON")
    _common(p)
    _wave_opts(p)
    p.add_argument("--h", type=float, required=True, help="mesh parameter")
    p.set_defaults(func=cmd_bem_solve)
    p = g.add_parser("converge", help="self-convergence study (three error tracks)")
    _common(p)
    _wave_opts(p)
    p.add_argument("--h-list", type=_float_list, required=True, help="comma-separated h values (>= 4)")
    p.add_argument("--h-ref", type=float, default=None,
                   help=f"reference h (default: min h / {defaults.REFERENCE_FACTOR:g})")
    p.set_defaults(func=cmd_bem_converge)
    p = g.add_parser("field", help="scattered field on a grid as CSV (x,y,z,re_u,im_u,abs_u)")
    _common(p)
    _wave_opts(p)
    p.add_argument("--h", type=float, required=True, help="mesh parameter")
    p.add_argument("--grid", type=_int_list, required=True, help="points per axis, e.g. 20,20,10")
    p.add_argument("--box", type=_float_list, required=True, help="x0,x1,y0,y1,z0,z1 (or x0,x1,z0,z1)")
    p.add_argument("--refine-ratio", type=float, default=defaults.FIELD_THETA,
                   help=f"near-field refinement ratio (default: {defaults.FIELD_THETA})")
    p.set_defaults(func=cmd_bem_field)
    return parser


_INTERNAL = {"func", "group", "command", "config", "out", "verbose", "threads"}


def _find_subparser(parser: argparse.ArgumentParser, group: str, command: str) -> argparse.ArgumentParser:
    # argparse has no public API for reaching nested subparsers
    sub = parser._subparsers._group_actions[0].choices[group]            # noqa: SLF001
    return sub._subparsers._group_actions[0].choices[command]            # noqa: SLF001


def _config_path(argv: list[str]) -> str | None:
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def parse_args(argv=None) -> argparse.Namespace:
    """Parse the command line; values from ``--config`` act as defaults (explicit options win)."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    path = _config_path(argv)
    positional = [t for t in argv if not t.startswith("-")]
    if path is not None and len(positional) >= 2:
        try:
            with open(path) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CLIError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise CLIError("config must be a JSON object")
        try:
            sub = _find_subparser(parser, positional[0], positional[1])
        except KeyError:
            sub = None
        if sub is not None:
            actions = {a.dest: a for a in sub._actions}              # noqa: SLF001
            allowed = set(actions) - _INTERNAL - {"help"}
            unknown = sorted(set(cfg) - allowed)
            if unknown:
                raise CLIError(f"config: unknown key {unknown[0]!r}")
            for key in cfg:
                actions[key].required = False
            sub.set_defaults(**cfg)
    return parser.parse_args(argv)


def config_echo(args: argparse.Namespace) -> dict:
    """Option values as a config document (round-trips through ``--config``)."""
    return {k: v for k, v in sorted(vars(args).items()) if k not in _INTERNAL}


def _error(code: int, exc: BaseException) -> int:
    sys.stderr.write(io.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}))
    return code


def run(argv=None) -> int:
    try:
        args = parse_args(argv)
    except CLIError as exc:
        return _error(exc.code, exc)
    except SystemExit as exc:                     # argparse usage errors / --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.threads is not None:
            if args.threads < 1:
                raise CLIError("--threads must be positive")
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=args.threads):
                result = args.func(args)
        else:
            result = args.func(args)
    except CLIError as exc:
        return _error(exc.code, exc)
    except (bem.BEMError, QuadratureError, sla.LinAlgError, ArithmeticError, RuntimeError,
            MemoryError) as exc:
        return _error(EXIT_NUMERIC, exc)
    except (IFSError, ValueError, KeyError, argparse.ArgumentTypeError) as exc:
        return _error(EXIT_INPUT, exc)
    if result is not None:
        summary = {"command": f"{args.group} {args.command}", "version": io.version_stamp(),
                   "config": config_echo(args), "result": result}
        sys.stdout.write(io.dumps(summary))
    return EXIT_OK


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
