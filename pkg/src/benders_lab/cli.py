"""Experiment runner: instance I/O, method selection, CSV trace emission.

Subcommands:
  solve     run one method on one instance, write summary/trace CSVs
  generate  write a seeded instance of one of the built-in families
  compare   run a list of methods from a JSON experiment config
  validate  check an instance file against its schema and invariants

Methods: de, gapm, single, multi, adaptive, adaptive-single (continuous;
binary first stages are relaxed with a note), and bnb-single / bnb-multi /
bnb-adaptive for the branch-and-bound drivers. CSV columns are fixed-order
with '.' decimals so reruns diff cleanly; wall-time columns are the only
nondeterministic ones.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import lp_core
from .benders import Method, SolveConfig, SolveReport, SolveStatus, TraceRecord, run
from .errors import BendersLabError
from .gapm import run_gapm
from .mip import solve_binary
from .model import build_deterministic_equivalent
from .partition import singleton_partition
from .problems import (
    build_cpp,
    build_flcvar,
    build_smcf,
    generate_cpp,
    generate_flcvar,
    generate_smcf,
    instance_to_dict,
    load_instance,
    save_instance,
    validate_instance,
)
from .problems.io import AnyInstance, family_of

CONTINUOUS_METHODS = ("de", "gapm", "single", "multi", "adaptive", "adaptive-single")
BNB_METHODS = ("bnb-single", "bnb-multi", "bnb-adaptive")
ALL_METHODS = CONTINUOUS_METHODS + BNB_METHODS

SUMMARY_COLUMNS = (
    "instance",
    "method",
    "status",
    "objective",
    "z_lower",
    "z_upper",
    "wall_time",
    "iterations",
    "optimality_cuts",
    "feasibility_cuts",
    "refinements",
    "final_partition_size",
)
TRACE_COLUMNS = ("elapsed_seconds", "z_lower", "z_upper", "gap", "partition_size", "total_cuts")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if not np.isfinite(value):
            return "inf" if value > 0 else "-inf"
        return f"{value:.12g}"
    return str(value)


def build_problem(inst: AnyInstance):
    builder = {"cpp": build_cpp, "smcf": build_smcf, "flcvar": build_flcvar}[family_of(inst)]
    return builder(inst)


def _solve_de(problem, config: SolveConfig) -> SolveReport:
    start = time.monotonic()
    de, index_map = build_deterministic_equivalent(problem, singleton_partition(problem.n_scenarios))
    out = lp_core.solve(de)
    elapsed = time.monotonic() - start
    status = {
        lp_core.LpStatus.OPTIMAL: SolveStatus.OPTIMAL,
        lp_core.LpStatus.INFEASIBLE: SolveStatus.INFEASIBLE,
    }.get(out.status)
    if status is None:
        raise BendersLabError("deterministic equivalent is unbounded")
    obj = out.objective if out.is_optimal else None
    z = obj if obj is not None else (np.inf if status is SolveStatus.INFEASIBLE else -np.inf)
    trace = [TraceRecord(elapsed, z, z, problem.n_scenarios, 0)]
    return SolveReport(
        status=status,
        x=index_map.x(out.primal) if out.is_optimal else None,
        objective=obj,
        z_lower=z,
        z_upper=z,
        bounds_trace=trace,
        optimality_cuts=0,
        feasibility_cuts=0,
        iterations=1,
        refinements=0,
        partition_sizes=[problem.n_scenarios],
        method="de",
    )


def run_method(name: str, inst: AnyInstance, config: SolveConfig) -> SolveReport:
    problem, extractor = build_problem(inst)
    cfg = SolveConfig(**{**config.__dict__, "key_extractor": extractor})
    if name in BNB_METHODS:
        if not problem.first_stage_binary:
            raise BendersLabError(f"{name} needs binary first-stage variables")
        return solve_binary(problem, Method(name.removeprefix("bnb-")), cfg)
    if problem.first_stage_binary:
        print(f"note: relaxing binary first stage for method '{name}'", file=sys.stderr)
        problem = problem.relax_binary()
    if name == "de":
        return _solve_de(problem, cfg)
    if name == "gapm":
        return run_gapm(problem, cfg)
    return run(Method(name), problem, cfg)


def _trace_gap(rec: TraceRecord, reference: Optional[float]) -> float:
    if reference is not None and abs(reference) > 0:
        return (reference - rec.z_lower) / abs(reference)
    if not np.isfinite(rec.z_upper) or not np.isfinite(rec.z_lower):
        return float("inf")
    return (rec.z_upper - rec.z_lower) / (1.0 + abs(rec.z_upper))


def write_trace(path: Path, report: SolveReport, reference: Optional[float]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for rec in report.bounds_trace:
            writer.writerow(
                [
                    _fmt(rec.elapsed),
                    _fmt(rec.z_lower),
                    _fmt(rec.z_upper),
                    _fmt(_trace_gap(rec, reference)),
                    rec.partition_size,
                    rec.total_cuts,
                ]
            )


def run_experiment(config: dict) -> int:
    """Run every configured method on the instance; write report files.

    Returns a process exit status: nonzero only for configuration errors.
    Per-method failures are recorded in summary.csv and do not abort the run.
    """
    methods = config.get("methods")
    if not methods:
        print("error: config must list at least one method", file=sys.stderr)
        return 2
    unknown = [m for m in methods if m not in ALL_METHODS]
    if unknown:
        print(f"error: unknown methods {unknown}; choose from {ALL_METHODS}", file=sys.stderr)
        return 2
    for key in ("time_limit", "iter_limit"):
        if key in config and config[key] <= 0:
            print(f"error: {key} must be positive", file=sys.stderr)
            return 2

    try:
        inst, instance_name = _resolve_instance(config)
    except (BendersLabError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    out_dir = Path(config.get("out_dir", "benders-lab-out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    save_instance(inst, out_dir / "instance.json")

    cfg = SolveConfig(
        tol_gap=float(config.get("tol_gap", 1e-6)),
        iter_limit=int(config.get("iter_limit", 5000)),
        time_limit=float(config.get("time_limit", 3600.0)),
        refine_tol=float(config.get("refine_tol", 1e-6)),
        parallel=int(config.get("parallel_subproblems", 0)),
    )
    reference = config.get("reference_objective")

    rows = []
    for name in methods:
        start = time.monotonic()
        try:
            report = run_method(name, inst, cfg)
            error = None
        except BendersLabError as exc:
            report, error = None, str(exc)
        wall = time.monotonic() - start
        if report is None:
            rows.append([instance_name, name, f"error: {error}"] + [""] * (len(SUMMARY_COLUMNS) - 3))
            continue
        write_trace(out_dir / f"trace_{name}.csv", report, reference)
        rows.append(
            [
                instance_name,
                name,
                report.status.value,
                _fmt(report.objective),
                _fmt(report.z_lower),
                _fmt(report.z_upper),
                _fmt(wall),
                report.iterations,
                report.optimality_cuts,
                report.feasibility_cuts,
                report.refinements,
                report.partition_sizes[-1],
            ]
        )

    with (out_dir / "summary.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        writer.writerows(rows)
    for row in rows:
        print(f"{row[1]:>16}: status={row[2]} objective={row[3]}")
    return 0


def _resolve_instance(config: dict) -> tuple[AnyInstance, str]:
    if "instance" in config:
        path = config["instance"]
        inst = load_instance(path)
        inst.validate()
        return inst, Path(path).stem
    gen = config.get("generator")
    if not gen:
        raise ValueError("config needs either 'instance' or 'generator'")
    inst = _generate(dict(gen))
    name = f"{gen['family']}-s{gen.get('scenarios', 10)}-seed{gen.get('seed', 0)}"
    return inst, name


def _generate(spec: dict) -> AnyInstance:
    family = spec.pop("family")
    scenarios = int(spec.pop("scenarios", 10))
    seed = int(spec.pop("seed", 0))
    if family == "cpp":
        return generate_cpp(n_scenarios=scenarios, seed=seed, **spec)
    if family == "smcf":
        return generate_smcf(n_scenarios=scenarios, seed=seed, **spec)
    if family == "flcvar":
        return generate_flcvar(n_scenarios=scenarios, seed=seed, **spec)
    raise ValueError(f"unknown family '{family}'")


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="benders-lab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="run one method on one instance")
    p_solve.add_argument("--instance", required=True)
    p_solve.add_argument("--method", required=True, choices=ALL_METHODS)
    p_solve.add_argument("--tol-gap", type=float, default=1e-6)
    p_solve.add_argument("--time-limit", type=float, default=3600.0)
    p_solve.add_argument("--iter-limit", type=int, default=5000)
    p_solve.add_argument("--out", default="benders-lab-out")
    p_solve.add_argument("--parallel-subproblems", type=int, default=0)

    p_gen = sub.add_parser("generate", help="write a seeded instance")
    p_gen.add_argument("--family", required=True, choices=("cpp", "smcf", "flcvar"))
    p_gen.add_argument("--scenarios", type=int, required=True)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--correlation", type=float, default=None, help="SMCF demand correlation")
    p_gen.add_argument("--out", required=True)

    p_cmp = sub.add_parser("compare", help="run methods from a JSON experiment config")
    p_cmp.add_argument("--config", required=True)

    p_val = sub.add_parser("validate", help="check an instance file")
    p_val.add_argument("--instance", required=True)

    args = parser.parse_args(argv)

    if args.command == "solve":
        config = {
            "instance": args.instance,
            "methods": [args.method],
            "tol_gap": args.tol_gap,
            "time_limit": args.time_limit,
            "iter_limit": args.iter_limit,
            "out_dir": args.out,
            "parallel_subproblems": args.parallel_subproblems,
        }
        return run_experiment(config)

    if args.command == "generate":
        spec = {"family": args.family, "scenarios": args.scenarios, "seed": args.seed}
        if args.correlation is not None:
            if args.family != "smcf":
                print("error: --correlation applies to the smcf family only", file=sys.stderr)
                return 2
            spec["correlation"] = args.correlation
        try:
            inst = _generate(spec)
        except BendersLabError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        save_instance(inst, args.out)
        print(f"wrote {args.out}")
        return 0

    if args.command == "compare":
        try:
            config = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: cannot read config: {exc}", file=sys.stderr)
            return 2
        return run_experiment(config)

    if args.command == "validate":
        if not Path(args.instance).exists():
            print(f"error: no such file: {args.instance}", file=sys.stderr)
            return 2
        problems = validate_instance(args.instance)
        if problems:
            print(f"violation: {problems[0]}", file=sys.stderr)
            return 1
        print("ok")
        return 0

    return 2


if __name__ == "__main__":
    sys.exit(main())
