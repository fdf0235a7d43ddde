"""Command line: run, dual, analyze, compare, sweep."""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .averaging import StaggerSchedule, staggered_run, write_frames_csv
from .dual import UNDETERMINED, GeometryEstimate, primal_grid_opt, primal_opt, probe_geometry, solve_dual
from .engine import CHECKPOINTS, EVERY_K, FULL, RunConfig, read_trace_csv, run, write_trace_csv
from .instances import resolve_problem
from .phase import (MODES, ORACLE_START, PLAIN, STAGGERED, concentration_check, constants, convergence_curve,
                    curve_to_csv, empirical_radius, first_below, increment_check, negative_drift_check)
from .problem import compute_C, validate

OUT_ENV = "DPPTAVG_OUT"


class CliError(Exception):
    pass


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV, "dpptavg-out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(name: str):
    try:
        problem = resolve_problem(name)
    except FileNotFoundError as exc:
        raise CliError(f"problem not found: {name}") from exc
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise CliError(f"invalid problem {name}: {exc}") from exc
    issues = validate(problem)
    if issues:
        raise CliError("invalid problem: " + "; ".join(issues))
    return problem


def _tag(problem_name: str) -> str:
    return Path(problem_name).stem


def _vtag(V: float) -> str:
    return f"{V:g}"


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not JSON serializable: {type(v).__name__}")


def _schedule(args) -> StaggerSchedule:
    if args.mode == STAGGERED:
        return StaggerSchedule(args.stagger_base)
    return StaggerSchedule.none()


def _positive(values, what):
    for v in values:
        if not v > 0:
            raise CliError(f"{what} must be positive")


# -- subcommands ----------------------------------------------------------------

def cmd_run(args) -> int:
    problem = _load(args.problem)
    _positive(args.V, "V")
    if args.horizon < 1:
        raise CliError("horizon must be at least 1")
    if args.mode == ORACLE_START:
        raise CliError("run supports --mode plain or staggered; oracle-start needs analyze")
    out = _out_dir(args)
    tag = _tag(args.problem)
    schedule = _schedule(args)
    for V in args.V:
        for seed in args.seeds:
            cfg = RunConfig(V, args.horizon, seed, trace_granularity=args.granularity, every=args.every,
                            checkpoints=tuple(args.checkpoints or ()))
            trace = run(problem, cfg)
            stem = f"{tag}_V{_vtag(V)}_seed{seed}"
            write_trace_csv(trace, out / f"{stem}_trace.csv")
            write_frames_csv(staggered_run(trace, schedule), problem.J, out / f"{stem}_frames.csv")
            print(out / f"{stem}_trace.csv")
    return 0


def dual_report(problem, starts: int = 16, tol: float = 1e-3, resolution: int = 200, seed: int = 0) -> dict:
    sol = solve_dual(problem, starts=starts, tol=tol, seed=seed)
    report = sol.to_dict()
    report["lambda_star"]["lam"] = sol.lambda_star.lam.tolist()
    if problem.I <= 3:
        try:
            report["grid_opt"] = primal_grid_opt(problem, resolution)
        except ValueError as exc:
            report["grid_opt"] = None
            report["grid_error"] = str(exc)
    geo = probe_geometry(problem, sol, seed=seed)
    report["geometry"] = geo.to_dict()
    report["C"] = compute_C(problem)
    return report


def cmd_dual(args) -> int:
    problem = _load(args.problem)
    report = dual_report(problem, args.starts, args.tol, args.resolution, args.seed)
    report["problem"] = problem.name
    out = _out_dir(args)
    path = out / f"{_tag(args.problem)}_dual.json"
    _dump(report, path)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def _geometry_from(report: dict) -> GeometryEstimate:
    g = report["geometry"]
    return GeometryEstimate(g["kind"], g.get("L_P"), g.get("L_G"), g.get("L_G_prime"), g.get("S"),
                            g.get("sample_count", 0))


def cmd_analyze(args) -> int:
    problem = _load(args.problem)
    for p in (args.trace, args.dual):
        if not Path(p).is_file():
            raise CliError(f"missing input: {p}")
    table = read_trace_csv(args.trace)
    report = json.loads(Path(args.dual).read_text())
    lam = np.asarray(report["lambda_star"]["w"] + report["lambda_star"]["z"], dtype=float)
    if lam.size != problem.J + problem.I or table.Q.shape[1] != lam.size:
        raise CliError("trace, dual report and problem dimensions disagree")
    K = np.linalg.norm(table.Q - args.V * lam, axis=1)
    out_json = {"V": args.V, "trace": Path(args.trace).name, "samples": int(len(K))}
    geo = _geometry_from(report)
    consts = None
    if geo.kind != UNDETERMINED:
        consts = constants(problem, args.V, geo)
        out_json["constants"] = consts.to_dict()
    B = args.B if args.B is not None else (consts.B if consts else empirical_radius([K]))
    tr = first_below(K, B)
    out_json["transient"] = {"B": B, "T_hat": int(table.t[tr.T_hat]) if len(K) else 0, "reached": tr.reached}
    inc = increment_check(K, compute_C(problem))
    out_json["increment_check"] = {"passed": inc.passed, "max_increment": inc.max_increment, "limit": inc.limit}
    if consts is not None and tr.reached:
        out_json["concentration"] = concentration_check(K, consts, tr.T_hat).to_dict()
        out_json["negative_drift"] = negative_drift_check(K, tr.T_hat, consts.B).__dict__
    # convergence of the running average from slot 0 over the recorded rows
    contiguous = len(table.t) > 0 and np.array_equal(table.t, np.arange(len(table.t)))
    out_dir = _out_dir(args)
    stem = Path(args.trace).stem.removesuffix("_trace")
    if contiguous:
        T = np.arange(1, len(table.t) + 1)[:, None]
        xbar = np.cumsum(table.x, axis=0) / T
        grid = np.unique(np.geomspace(1, len(T), 40).astype(int))
        f_opt = report["f_opt"]
        lines = ["V,T,err,viol"]
        for n in grid:
            xb = xbar[n - 1]
            g = problem.g(xb)
            lines.append(f"{args.V:.17g},{n},{abs(float(problem.f(xb)) - f_opt):.17g},"
                         f"{(float(g.max()) if g.size else 0.0):.17g}")
        (out_dir / f"{stem}_convergence.csv").write_text("\n".join(lines) + "\n")
    else:
        out_json["convergence_note"] = "trace is not full granularity; convergence table skipped"
    _dump(out_json, out_dir / f"{stem}_phase.json")
    print(json.dumps(out_json, indent=2, sort_keys=True, default=_jsonable))
    return 0


def cmd_compare(args) -> int:
    """Error and violation curves of plain (ALG) vs staggered (STG) averaging, replication means."""
    problem = _load(args.problem)
    _positive(args.V, "V")
    f_opt = primal_opt(problem).f_opt
    out = _out_dir(args)
    rows = ["V,T,alg_err,alg_viol,stg_err,stg_viol"]
    schedule = StaggerSchedule(args.stagger_base)
    for V in args.V:
        traces = [run(problem, RunConfig(V, args.horizon, s)) for s in args.seeds]
        # frame boundaries: the staggered average there covers one completed frame
        grid = schedule.restart_slots(args.horizon) + [args.horizon]
        alg = convergence_curve(traces, f_opt, PLAIN, T_grid=grid)
        stg = convergence_curve(traces, f_opt, STAGGERED, T_grid=grid, schedule=schedule)
        for a, s in zip(alg, stg):
            rows.append(f"{V:.17g},{a.T},{a.err_mean:.17g},{a.viol_mean:.17g},{s.err_mean:.17g},{s.viol_mean:.17g}")
    path = out / f"{_tag(args.problem)}_compare.csv"
    path.write_text("\n".join(rows) + "\n")
    print(path)
    return 0


def cmd_sweep(args) -> int:
    """Convergence table across V for one averaging mode."""
    problem = _load(args.problem)
    _positive(args.V, "V")
    f_opt = primal_opt(problem).f_opt
    traces, T_hats = [], []
    lam = None
    if args.mode == ORACLE_START:
        lam = solve_dual(problem).lambda_star.lam
    for V in args.V:
        batch = [run(problem, RunConfig(V, args.horizon, s)) for s in args.seeds]
        if lam is not None:
            Ks = [tr.K(lam) for tr in batch]
            B = empirical_radius(Ks)
            T_hats += [first_below(k, B).T_hat for k in Ks]
        traces += batch
    rows = convergence_curve(traces, f_opt, args.mode, schedule=StaggerSchedule(args.stagger_base),
                             T_hats=T_hats if lam is not None else None)
    path = _out_dir(args) / f"{_tag(args.problem)}_sweep_{args.mode}.csv"
    path.write_text(curve_to_csv(rows))
    print(path)
    return 0


# -- parser ---------------------------------------------------------------------

def _common(p, runs: bool = True):
    p.add_argument("--problem", required=True, help="builtin name or problem JSON path")
    p.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./dpptavg-out)")
    if runs:
        p.add_argument("--V", type=float, nargs="+", default=[100.0])
        p.add_argument("--horizon", type=int, default=100_000)
        p.add_argument("--seeds", "--seed", type=int, nargs="+", default=[0], dest="seeds")
        p.add_argument("--mode", choices=MODES, default=STAGGERED)
        p.add_argument("--stagger-base", type=float, default=2.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpptavg", description="Drift-plus-penalty time-average experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate and write trace and frame CSVs")
    _common(p)
    p.add_argument("--granularity", choices=(FULL, EVERY_K, CHECKPOINTS), default=FULL)
    p.add_argument("--every", type=int, default=1)
    p.add_argument("--checkpoints", type=int, nargs="*")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("dual", help="solve the dual and probe its geometry")
    _common(p, runs=False)
    p.add_argument("--starts", type=int, default=16)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--resolution", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_dual)

    p = sub.add_parser("analyze", help="phase report and convergence table for a trace")
    _common(p, runs=False)
    p.add_argument("--trace", required=True)
    p.add_argument("--dual", required=True, help="JSON written by the dual subcommand")
    p.add_argument("--V", type=float, required=True)
    p.add_argument("--B", type=float, default=None, help="ball radius for the transient (default: analytic)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("compare", help="plain vs staggered averaging curves")
    _common(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="convergence table over a V grid")
    _common(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
