"""Command-line front end.

Exit codes: 0 success, 1 bad arguments, configuration or I/O (one line on
stderr starting with ``error:``), 2 solver stopped at ``max_outer`` without
converging (the best iterate is still written).
"""

from __future__ import annotations

import argparse
import logging
import math
import re
import sys
import time
from pathlib import Path

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from . import __version__
from .blowup import ClassifyConfig, classify, classify_all, stratify
from .diagnostics import (
    acf,
    coarea_perimeter,
    constant_sign_component,
    density,
    flatness,
    viscosity_slope,
    weiss_profile,
)
from .errors import ConfigError, ResolutionError, VecBernError
from .fields import Grid, positivity_mask
from .io import dump_doc, read_doc, read_field, sha256_file, write_csv, write_doc, write_field
from .oracles import halfplane, linear, oracle_1d
from .solver import BoundaryDatum, SolveConfig, solve

log = logging.getLogger("vecbern")

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --- parsing helpers -------------------------------------------------------

def _floats(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals or not all(math.isfinite(v) for v in vals):
        raise ConfigError(f"expected finite numbers, got {text!r}")
    return vals


def _split_top(text: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch in "[{(":
            depth += 1
        elif ch in "]})":
            depth -= 1
        if ch in ",;" and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return [p.strip() for p in parts if p.strip()]


def parse_params(text: str | None) -> dict:
    """``key=value`` pairs (values in YAML syntax), a YAML mapping, or a file path."""
    if not text:
        return {}
    path = Path(text)
    if path.is_file():
        return read_doc(path)
    try:
        if re.match(r"^\s*[A-Za-z_]\w*\s*=", text):
            out = {}
            for part in _split_top(text):
                key, sep, val = part.partition("=")
                if not sep:
                    raise ConfigError(f"bad parameter {part!r}")
                out[key.strip()] = yaml.safe_load(val)
            return out
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse parameters: {str(exc).splitlines()[0]}") from None
    if not isinstance(data, dict):
        raise ConfigError("parameters must be a mapping")
    return data


def grid_from_mapping(data: dict, default_lower=-1.0, default_upper=1.0) -> Grid:
    try:
        d = int(data["d"])
        n = int(data["n"])
    except (KeyError, TypeError, ValueError):
        raise ConfigError("grid needs integer entries d and n") from None
    lower = data.get("lower", default_lower)
    upper = data.get("upper", default_upper)
    try:
        lower = np.broadcast_to(np.asarray(lower, float), (d,))
        upper = np.broadcast_to(np.asarray(upper, float), (d,))
    except ValueError:
        raise ConfigError("grid bounds must be numbers or lists of length d") from None
    side = upper - lower
    if np.any(side <= 0) or not np.allclose(side, side[0], rtol=1e-12):
        raise ConfigError("grid box must be a cube with upper > lower")
    try:
        return Grid(d, n, float(side[0]) / (n - 1), tuple(float(v) for v in lower))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"bad grid: {exc}") from None


def boundary_from_mapping(data: dict, grid_data: dict | None, lam: float) -> BoundaryDatum:
    kind = data.get("type")
    if kind == "file":
        if "path" not in data:
            raise ConfigError("file boundary needs a path")
        return BoundaryDatum.from_field(read_field(data["path"]))
    if grid_data is None:
        raise ConfigError("a grid section is required")
    if kind == "oned":
        grid = grid_from_mapping({"d": 1, **grid_data}, 0.0, 1.0)
        a = float(data.get("a", 0.0))
        left = float(data.get("left", a))
        right = float(data.get("right", 0.0))
        vals = np.zeros(grid.shape)
        vals[0], vals[-1] = left, right
        return BoundaryDatum(grid, vals)
    grid = grid_from_mapping(grid_data)
    if kind == "halfplane":
        xi = np.atleast_1d(np.asarray(data.get("xi", [math.sqrt(lam)]), float))
        nu = np.asarray(data.get("nu", np.eye(grid.d)[-1]), float)
        if nu.shape != (grid.d,) or np.linalg.norm(nu) == 0:
            raise ConfigError("nu must be a nonzero vector of length d")
        nu = nu / np.linalg.norm(nu)
        s = np.maximum(np.tensordot(nu, grid.coords(), axes=1), 0.0)
        return BoundaryDatum(grid, xi.reshape((-1,) + (1,) * grid.d) * s[None])
    if kind == "linear":
        A = np.atleast_2d(np.asarray(data.get("A"), float))
        if A.ndim != 2 or A.shape[1] != grid.d:
            raise ConfigError("A must be a k x d matrix")
        return BoundaryDatum(grid, np.tensordot(A, grid.coords(), axes=1))
    raise ConfigError(f"unknown boundary type {kind!r} (halfplane, linear, oned, file)")


def _radii(text: str, grid: Grid) -> list[float]:
    radii = sorted(_floats(text))
    for r in radii:
        if r < 4 * grid.h * (1 - 1e-9):
            raise ResolutionError(f"radius {r:g} is below 4h = {4 * grid.h:g}")
    return radii


# --- commands --------------------------------------------------------------

def cmd_solve(args) -> int:
    t0 = time.perf_counter()
    cfg_path = Path(args.config)
    raw = read_doc(cfg_path)
    unknown = set(raw) - {"grid", "boundary", "solver", "output"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    scfg = SolveConfig.from_mapping(raw.get("solver") or {})
    if "boundary" not in raw or not isinstance(raw["boundary"], dict):
        raise ConfigError("config needs a boundary section")
    phi = boundary_from_mapping(raw["boundary"], raw.get("grid"), scfg.lam)
    grid = phi.grid
    out = Path(args.out or raw.get("output") or cfg_path.with_suffix("")).resolve()
    out.mkdir(parents=True, exist_ok=True)
    log.info("solving on %d^%d nodes, k=%d, lambda=%g", grid.n, grid.d, phi.k, scfg.lam)
    t1 = time.perf_counter()
    U, report = solve(grid, phi, scfg)
    t2 = time.perf_counter()
    field_path, report_path = out / "field.vf", out / "report.yaml"
    write_field(field_path, U)
    write_doc(report_path, {"grid": {"d": grid.d, "n": grid.n, "h": grid.h,
                                     "origin": list(grid.origin)},
                            "k": U.k, "solve": report.as_dict()})
    code = EXIT_OK if report.converged else EXIT_NOT_CONVERGED
    manifest = {
        "tool": "vecbern", "version": __version__, "command": "solve",
        "config": raw,
        "inputs": {"config": {"path": str(cfg_path.resolve()), "sha256": sha256_file(cfg_path)}},
        "outputs": {name: {"path": str(p), "sha256": sha256_file(p)}
                    for name, p in (("field", field_path), ("report", report_path))},
        "timings": {"solve_seconds": t2 - t1, "total_seconds": time.perf_counter() - t0},
        "threads": args.threads, "exit_code": code,
    }
    write_doc(out / "manifest.yaml", manifest)
    log.info("energy %.10g, converged=%s, written to %s", report.final_energy.total,
             report.converged, out)
    return code


def _safe(fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except VecBernError as exc:
        return {"error": str(exc)}


def cmd_diagnose(args) -> int:
    U = read_field(args.field)
    g = U.grid
    x0 = np.asarray(_floats(args.point))
    if x0.shape != (g.d,):
        raise ConfigError(f"point must have {g.d} coordinates")
    radii = _radii(args.radii, g)
    for r in radii:
        g.require_ball(x0, r)
    lam = args.lam
    mask = positivity_mask(U)
    samples, violation = weiss_profile(U, lam, x0, radii, mask)
    doc = {
        "field": str(args.field), "lambda": lam, "point": x0.tolist(), "h": g.h,
        "weiss": {"samples": [s.as_dict() for s in samples], "monotone_violation": violation},
        "density": [{"r": r, "value": density(mask, x0, r)} for r in radii],
        "flatness": [],
        "constant_sign": [],
    }
    for r in radii:
        fs = _safe(flatness, mask, x0, r)
        doc["flatness"].append(fs if isinstance(fs, dict) else fs.as_dict())
        cs = constant_sign_component(U, mask, x0, r)
        doc["constant_sign"].append({"r": r, "index": cs.index, "sign": cs.sign,
                                     "c_sign": cs.c_sign} if cs else {"r": r, "index": None})
    if U.k == 1:
        doc["acf"] = [{"r": r, "value": acf(U, x0, r)} for r in radii]
    slope = _safe(viscosity_slope, U, mask, x0, lam)
    doc["viscosity_slope"] = slope if isinstance(slope, dict) else slope.as_dict()
    doc["coarea"] = []
    for eps in _floats(args.eps):
        try:
            doc["coarea"].append(coarea_perimeter(U, lam, eps).as_dict())
        except ValueError as exc:
            doc["coarea"].append({"eps": eps, "error": str(exc)})
    _emit(doc, args.out)
    return EXIT_OK


def cmd_classify(args) -> int:
    U = read_field(args.field)
    cfg = ClassifyConfig(delta=args.delta)
    if args.point:
        x0 = np.asarray(_floats(args.point))
        if x0.shape != (U.grid.d,):
            raise ConfigError(f"point must have {U.grid.d} coordinates")
        reports, skipped = [classify(U, args.lam, x0, cfg=cfg)], []
    else:
        reports, skipped = classify_all(U, args.lam, cfg=cfg)
    strata = stratify(U, args.lam, [r for r in reports if r.cls == "Branching"], cfg)
    counts: dict[str, int] = {}
    for r in reports:
        counts[r.cls] = counts.get(r.cls, 0) + 1
    doc = {"field": str(args.field), "lambda": args.lam, "delta": args.delta,
           "summary": counts, "skipped": len(skipped),
           "points": [r.as_dict() for r in reports],
           "strata": [s.as_dict() for s in strata]}
    _emit(doc, args.out)
    return EXIT_OK


def cmd_oracle(args) -> int:
    params = parse_params(args.params)
    lam = float(params.pop("lambda", params.pop("lam", 1.0)))
    if args.case == "oned":
        grid = grid_from_mapping({"d": 1, "n": params.pop("n", 1025)}, 0.0, 1.0)
        case = oracle_1d(float(params.pop("a", 0.5)), lam, grid)
    else:
        d = int(params.pop("d", 2))
        grid = grid_from_mapping({"d": d, "n": params.pop("n", 129),
                                  "lower": params.pop("lower", -1.0),
                                  "upper": params.pop("upper", 1.0)})
        if args.case == "halfplane":
            xi = params.pop("xi", [math.sqrt(lam)])
            nu = params.pop("nu", np.eye(d)[-1].tolist())
            case = halfplane(xi, nu, grid, lam)
        else:
            if "A" not in params:
                raise ConfigError("linear oracle needs A")
            case, _ = linear(params.pop("A"), grid, lam)
    if params:
        raise ConfigError(f"unused oracle parameters: {sorted(params)}")
    out = Path(args.out or f"oracle_{args.case}").resolve()
    out.mkdir(parents=True, exist_ok=True)
    field_path = out / "field.vf"
    write_field(field_path, case.exact_field)
    manifest = case.manifest()
    manifest["outputs"] = {"field": {"path": str(field_path), "sha256": sha256_file(field_path)}}
    manifest["version"] = __version__
    write_doc(out / "manifest.yaml", manifest)
    if not args.quiet:
        sys.stdout.write(dump_doc(manifest))
    return EXIT_OK


def cmd_export_csv(args) -> int:
    U = read_field(args.field)
    write_csv(args.out, U)
    log.info("wrote %s", args.out)
    return EXIT_OK


def _emit(doc: dict, out) -> None:
    text = dump_doc(doc)
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vecbern", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=1, help="BLAS/OpenMP thread cap")
    p.add_argument("--quiet", action="store_true", help="only errors on stderr")
    p.add_argument("--version", action="version", version=f"vecbern {__version__}")
    # the global flags are also accepted after the subcommand name
    common = _Parser(add_help=False)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add = sub.add_parser

    def add_parser(name, **kw):
        return _add(name, parents=[common], **kw)

    sub.add_parser = add_parser

    s = sub.add_parser("solve", help="minimize for the boundary data in a config file")
    s.add_argument("config")
    s.add_argument("--out", help="output directory (default: from config)")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("diagnose", help="Weiss, density, flatness, ACF and slope at a point")
    s.add_argument("--field", required=True)
    s.add_argument("--point", required=True, help="comma-separated coordinates")
    s.add_argument("--radii", required=True, help="comma-separated radii (length units)")
    s.add_argument("--lambda", dest="lam", type=float, required=True)
    s.add_argument("--eps", default="0.05,0.1,0.2", help="coarea band widths")
    s.add_argument("--out", help="report path (default: stdout)")
    s.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("classify", help="classify free-boundary points")
    s.add_argument("--field", required=True)
    s.add_argument("--lambda", dest="lam", type=float, required=True)
    grp = s.add_mutually_exclusive_group(required=True)
    grp.add_argument("--all-boundary", action="store_true")
    grp.add_argument("--point", help="comma-separated coordinates")
    s.add_argument("--delta", type=float, default=0.05, help="density band half-width")
    s.add_argument("--out", help="report path (default: stdout)")
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("oracle", help="write an exact reference field")
    s.add_argument("--case", required=True, choices=("halfplane", "linear", "oned"))
    s.add_argument("--params", help="key=value pairs, a YAML mapping, or a YAML file")
    s.add_argument("--out", help="output directory (default: oracle_<case>)")
    s.set_defaults(func=cmd_oracle)

    s = sub.add_parser("export-csv", help="write a field file as CSV")
    s.add_argument("--field", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export_csv)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr, force=True)
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_ERROR
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except (VecBernError, ValueError, OSError, KeyError, TypeError, yaml.YAMLError) as exc:
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
