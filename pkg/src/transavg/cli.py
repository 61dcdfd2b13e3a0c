"""Command-line entry point: ``transavg {gen,solve,eval,sweep,toy-grid,toy-squash}``.

Exit codes: 0 success, 2 parse error, 3 graph error, 4 solver error,
5 config error. Failures print one machine-readable line to stderr::

    error code=<n> kind=<kind> message=<text>
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .core import DegenerateInputError, GraphError, SingularSystemError, TransAvgError
from .experiments import (
    METHODS,
    SWEEP_COLUMNS,
    ConfigError,
    SweepGrid,
    format_value,
    method_config,
    run_method,
    run_sweep,
    run_toy_grid,
    run_toy_squash,
)
from .metrics import nrmse, nrmse_per_cluster, robust_align, squash_r1_r2, squash_r3
from .synthetic import SynthConfig, TwoClusterConfig, gen_instance, gen_two_cluster, with_rotation_proxy

EXIT_OK, EXIT_PARSE, EXIT_GRAPH, EXIT_SOLVER, EXIT_CONFIG = 0, 2, 3, 4, 5


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags, which would collide with the parse-error code
    def error(self, message):
        raise ConfigError(message)


# ---------------------------------------------------------------- config handling


def read_config(path) -> dict:
    """Plain ``key = value`` lines; ``#`` starts a comment; dashes in keys become underscores."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = val
    return out


def _apply_config(args, parser_for_cmd, conf: dict):
    """Fill options the user did not pass on the command line from the config file."""
    actions = {a.dest: a for a in parser_for_cmd._actions}
    for key, raw in conf.items():
        if key not in actions or key in ("command", "config", "help"):
            raise ConfigError(f"unknown config key {key!r} for '{args.command}'")
        if getattr(args, key) is not None and getattr(args, key) is not False:
            continue
        act = actions[key]
        if act.nargs == 0:  # store_true
            val = raw.lower() in ("1", "true", "yes", "on")
        else:
            try:
                val = act.type(raw) if act.type else raw
            except (TypeError, ValueError):
                raise ConfigError(f"bad value {raw!r} for config key {key!r}") from None
            if act.choices is not None and val not in act.choices:
                raise ConfigError(f"config key {key!r} must be one of {', '.join(map(str, act.choices))}")
        setattr(args, key, val)


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _pq_list(text: str) -> list[tuple[float, float]]:
    out = []
    for item in text.replace(" ", "").split(","):
        if not item:
            continue
        try:
            p, q = item.split(":")
            out.append((float(p), float(q)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected p:q pairs, got {item!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty (p, q) list")
    return out


def _method_opts(args) -> dict:
    opts = {k: getattr(args, k, None) for k in ("loss", "alpha", "delta", "beta", "irls_iter", "bcd_iter", "conv_tol", "c")}
    opts["init"] = getattr(args, "init", None)
    if opts["init"] == "file":
        if not getattr(args, "init_file", None):
            raise ConfigError("--init file needs --init-file")
        opts["init_locations"] = io.read_locations(args.init_file)
    return opts


# ---------------------------------------------------------------- commands


def cmd_gen(args) -> int:
    seed = args.seed or 0
    n = args.n if args.n is not None else 200
    p = args.p if args.p is not None else 0.3
    q = args.q if args.q is not None else 0.0
    s = args.sigma_deg if args.sigma_deg is not None else 0.0
    if args.L is not None:
        inst = gen_two_cluster(TwoClusterConfig(n_per_cluster=n // 2, L=args.L, p=p, q=q, sigma_deg=s, seed=seed))
    else:
        inst = gen_instance(SynthConfig(n=n, p=p, q=q, sigma_deg=s, seed=seed))
    if args.rot_proxy:
        inst = with_rotation_proxy(inst)
    prefix = args.output
    io.write_view_graph(f"{prefix}.graph", inst.graph)
    io.write_locations(f"{prefix}.truth", inst.truth)
    Path(f"{prefix}.side").write_text(io.format_sidecar(inst.labels, inst.outlier), encoding="utf-8")
    print(f"gen n={inst.graph.n} m={inst.graph.m} outliers={int(inst.outlier.sum())} dropped={inst.dropped_cameras}")
    return EXIT_OK


def format_diagnostics(method: str, diag, seconds: float | None) -> str:
    lines = []
    if seconds is not None:
        lines.append(f"# wall_seconds {seconds!r}")
    lines += [
        f"method {method}",
        f"iterations {diag.outer_iterations_used}",
        f"converged {int(diag.converged)}",
        f"init_objective {format_value(diag.init_objective)}",
        f"final_objective {format_value(diag.final_objective)}",
    ]
    lines += [f"objective {k} {format_value(f)}" for k, f in enumerate(diag.objective_trace)]
    return "\n".join(lines) + "\n"


def cmd_solve(args) -> int:
    if not args.method:
        raise ConfigError("solve needs --method")
    if not args.input or not args.output:
        raise ConfigError("solve needs --input and --output")
    g = io.read_view_graph(args.input)
    cfg = method_config(args.method, _method_opts(args), seed=args.seed or 0, strict=True)
    t0 = time.perf_counter()
    t, diag = run_method(args.method, g, cfg)
    elapsed = time.perf_counter() - t0
    io.write_locations(args.output, t)
    diag_path = args.diagnostics or f"{args.output}.diag"
    Path(diag_path).write_text(format_diagnostics(args.method, diag, elapsed), encoding="utf-8")
    print(f"solve method={args.method} iterations={diag.outer_iterations_used} converged={int(diag.converged)}")
    return EXIT_OK


def _write_csv(path, header, rows, comment: str | None = None):
    buf = _io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([format_value(x) for x in r])
    if path:
        Path(path).write_text(buf.getvalue(), encoding="utf-8")
    else:
        sys.stdout.write(buf.getvalue())


def cmd_eval(args) -> int:
    if not args.input or not args.truth:
        raise ConfigError("eval needs --input (estimate) and --truth")
    est = io.read_locations(args.input)
    gt = io.read_locations(args.truth)
    if est.shape != gt.shape:
        raise ConfigError(f"estimate has {len(est)} cameras, truth has {len(gt)}")
    labels = io.read_sidecar(args.sidecar)[0] if args.sidecar else None
    rows = [("nrmse", nrmse(est, gt))]
    if labels is not None:
        rows.append(("nrmse_per_cluster", nrmse_per_cluster(est, gt, labels)))
        rows += [("r3", squash_r3(est, labels)), ("gt_r3", squash_r3(gt, labels))]
    if args.graph:
        g = io.read_view_graph(args.graph)
        if g.n != len(est):
            raise ConfigError("graph and locations differ in camera count")
        sq, sq_gt = squash_r1_r2(g, est), squash_r1_r2(g, gt)
        rows += [("r1", sq.r1), ("r2", sq.r2), ("gt_r1", sq_gt.r1), ("gt_r2", sq_gt.r2)]
    if args.align:
        rep = robust_align(est, gt)
        rows += [("aligned_median_error", rep.median_error), ("aligned_mean_error", rep.mean_error),
                 ("aligned_scale", rep.scale), ("aligned_reflection", int(rep.reflection_suspected))]
    _write_csv(args.output, ("metric", "value"), rows)
    return EXIT_OK


def read_grid_spec(path) -> dict:
    conf = read_config(path)
    out = {}
    parsers = {"pq": _pq_list, "sigma_deg": _float_list, "L": _float_list, "trials": int, "n": int}
    for key, raw in conf.items():
        if key not in parsers:
            raise ConfigError(f"unknown grid-spec key {key!r}; expected one of {', '.join(parsers)}")
        try:
            out[key] = parsers[key](raw)
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise ConfigError(f"grid-spec {key}: {exc}") from None
    return out


def cmd_sweep(args) -> int:
    spec = read_grid_spec(args.grid_spec) if args.grid_spec else {}
    default = SweepGrid()
    pq = args.pq or spec.get("pq")
    if pq is None and (args.p is not None or args.q is not None):
        pq = [(args.p if args.p is not None else 0.3, args.q if args.q is not None else 0.0)]
    sig = args.sigma_list or spec.get("sigma_deg")
    if sig is None and args.sigma_deg is not None:
        sig = [args.sigma_deg]
    Ls = args.L_list or spec.get("L")
    if Ls is None and args.L is not None:
        Ls = [args.L]
    grid = SweepGrid(
        pq=pq or default.pq,
        sigmas=sig or default.sigmas,
        Ls=Ls,
        trials=args.trials if args.trials is not None else spec.get("trials", default.trials),
        n=args.n if args.n is not None else spec.get("n", default.n),
    )
    methods = args.methods.split(",") if args.methods else ([args.method] if args.method else list(METHODS))
    rows = run_sweep(grid, methods, _method_opts(args), seed=args.seed or 0, rot_proxy=args.rot_proxy,
                     cluster_nrmse=args.cluster_nrmse, timing=args.timing)
    comment = f"generated {time.strftime('%Y-%m-%dT%H:%M:%S')}" if args.timing else None
    _write_csv(args.output, SWEEP_COLUMNS, ([r[c] for c in SWEEP_COLUMNS] for r in rows), comment)
    return EXIT_OK


def cmd_toy_grid(args) -> int:
    noise = args.noise_deg if args.noise_deg is not None else 3.0
    res = args.resolution if args.resolution is not None else 0.01
    coarse = run_toy_grid(noise, res)
    fine = run_toy_grid(noise, res / 2.0)
    rows = []
    for r in (coarse, fine):
        rows.append(("magnitude", r.resolution, *r.magnitude_min, r.magnitude_value, r.magnitude_dist))
        rows.append(("angular", r.resolution, *r.angular_min, r.angular_value, r.angular_dist))
    _write_csv(args.output, ("objective", "resolution", "x", "y", "value", "dist_to_truth"), rows)
    shift_m = float(np.linalg.norm(coarse.magnitude_min - fine.magnitude_min))
    shift_a = float(np.linalg.norm(coarse.angular_min - fine.angular_min))
    summary = {
        "noise_deg": noise,
        "resolution": res,
        "magnitude_dist": coarse.magnitude_dist,
        "angular_dist": coarse.angular_dist,
        "angular_closer": int(coarse.angular_dist < coarse.magnitude_dist),
        "refine_shift_magnitude": shift_m,
        "refine_shift_angular": shift_a,
    }
    out = sys.stderr if not args.output else sys.stdout
    for k, v in summary.items():
        print(f"{k}={format_value(v)}", file=out)
    return EXIT_OK


def cmd_toy_squash(args) -> int:
    noise = args.noise_deg if args.noise_deg is not None else 3.0
    c = args.c if args.c is not None else 1.0
    res = run_toy_squash(noise, c, seed=args.seed or 0)
    cols = ("method", "edge", "i", "j", "length", "residual")
    _write_csv(args.output, cols, ([e[k] for k in cols] for e in res.edge_rows))
    summary = res.summary()
    summary["regime2_le_regime1"] = int(res.regime2_objective <= res.regime1_objective)
    summary["lud_closer_than_revisedlud"] = int(res.ratio_lud < res.ratio_revisedlud)
    out = sys.stderr if not args.output else sys.stdout
    for k, v in summary.items():
        print(f"{k}={format_value(v)}", file=out)
    if args.summary_json:
        Path(args.summary_json).write_text(
            json.dumps({k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in summary.items()},
                       indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="file of 'key = value' lines; command-line flags win")
    common.add_argument("--seed", type=int)
    common.add_argument("--output", "-o")

    solver = _Parser(add_help=False)
    solver.add_argument("--method", choices=METHODS)
    solver.add_argument("--loss", choices=("l2", "huber", "cauchy", "l21"))
    solver.add_argument("--alpha", type=float, help="Cauchy width")
    solver.add_argument("--delta", type=float, help="Huber threshold")
    solver.add_argument("--beta", type=float, help="weight of the rotation residual")
    solver.add_argument("--irls-iter", type=int)
    solver.add_argument("--bcd-iter", type=int)
    solver.add_argument("--conv-tol", type=float)
    solver.add_argument("--init", choices=("random", "convex", "file"))
    solver.add_argument("--init-file")
    solver.add_argument("--c", type=float, help="LUD lower bound on the scales")

    synth = _Parser(add_help=False)
    synth.add_argument("--n", type=int)
    synth.add_argument("--p", type=float)
    synth.add_argument("--q", type=float)
    synth.add_argument("--sigma-deg", type=float)
    synth.add_argument("--L", type=float, help="cluster separation (two-cluster instances)")
    synth.add_argument("--rot-proxy", action="store_true", default=None,
                       help="rotation residual 2 on outlier edges, 0 on inliers")

    top = _Parser(prog="transavg", description="Translation averaging: BATA and baselines.")
    sub = top.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("gen", parents=[common, synth], help="generate a synthetic instance")

    p = sub.add_parser("solve", parents=[common, solver], help="solve a view graph")
    p.add_argument("--input", "-i")
    p.add_argument("--diagnostics")

    p = sub.add_parser("eval", parents=[common], help="score estimated locations")
    p.add_argument("--input", "-i")
    p.add_argument("--truth")
    p.add_argument("--graph")
    p.add_argument("--sidecar")
    p.add_argument("--align", action="store_true", default=None)

    p = sub.add_parser("sweep", parents=[common, solver, synth], help="run a synthetic sweep")
    p.add_argument("--methods", help="comma-separated subset of " + ",".join(METHODS))
    p.add_argument("--trials", type=int)
    p.add_argument("--pq", type=_pq_list, help="cells as p:q pairs, e.g. 0.3:0,0.3:0.2")
    p.add_argument("--sigma-list", type=_float_list)
    p.add_argument("--L-list", type=_float_list)
    p.add_argument("--grid-spec")
    p.add_argument("--cluster-nrmse", action="store_true", default=None,
                   help="normalize each cluster separately for NRMSE")
    p.add_argument("--timing", action="store_true", default=None,
                   help="fill the seconds column (makes output run-dependent)")

    p = sub.add_parser("toy-grid", parents=[common], help="2D grid-search toy")
    p.add_argument("--noise-deg", type=float)
    p.add_argument("--resolution", type=float)

    p = sub.add_parser("toy-squash", parents=[common], help="four-camera squashing toy")
    p.add_argument("--noise-deg", type=float)
    p.add_argument("--c", type=float)
    p.add_argument("--summary-json")
    return top


_COMMANDS = {
    "gen": cmd_gen,
    "solve": cmd_solve,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "toy-grid": cmd_toy_grid,
    "toy-squash": cmd_toy_squash,
}


def _fail(code: int, kind: str, message: str) -> int:
    message = " ".join(str(message).split())
    print(f"error code={code} kind={kind} message={message}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config:
            sub = parser._subparsers._group_actions[0].choices[args.command]
            _apply_config(args, sub, read_config(args.config))
        for flag in ("rot_proxy", "align", "cluster_nrmse", "timing"):
            if hasattr(args, flag):
                setattr(args, flag, bool(getattr(args, flag)))
        return _COMMANDS[args.command](args)
    except io.ParseError as exc:
        return _fail(EXIT_PARSE, "parse", exc)
    except (GraphError, DegenerateInputError) as exc:
        return _fail(EXIT_GRAPH, "graph", exc)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except (SingularSystemError, ArithmeticError) as exc:
        return _fail(EXIT_SOLVER, "solver", exc)
    except OSError as exc:
        return _fail(EXIT_CONFIG, "config", f"{exc.filename}: {exc.strerror}")
    except (TransAvgError, ValueError) as exc:
        return _fail(EXIT_SOLVER, "solver", exc)


if __name__ == "__main__":
    sys.exit(main())
