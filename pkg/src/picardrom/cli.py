"""Command-line interface for the experiment harness.

Subcommands: ``reference`` (plain Picard run), ``run`` (accelerated run
measured against a reference), ``compare-criteria`` (sweep of the quality
criteria with validation on/off), ``bench`` (runtime statistics over repeated
runs) and ``paths`` (prints the decreasing-path enumeration). Exit codes:
0 converged, 2 iteration budget exceeded, 1 any other error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

from . import coupling, harness
from .errors import MaxIterationsExceeded, PicardRomError

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_KMAX = 2

_CRITERION_ALIASES = {"upper": "upper_bound"}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="INI experiment config")
    parser.add_argument("--problem", choices=harness.PROBLEM_NAMES)
    parser.add_argument("--rom", choices=("none", "1", "2", "both"))
    parser.add_argument("--nb", type=int, help="snapshot window capacity")
    parser.add_argument("--eps", type=float, help="solver tolerance")
    parser.add_argument("--eps-rb", type=float, help="basis energy tolerance")
    parser.add_argument("--criterion",
                        choices=("residual", "upper", "asymptotic", "propagation"))
    parser.add_argument("--no-validation", action="store_true",
                        help="skip the outer validation loop")
    parser.add_argument("--reps", type=int, help="repetitions (bench)")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--seed", type=int, help="RNG seed for benchmarking noise")
    parser.add_argument("--exact-constants", action="store_true",
                        help="use exact operator norms (linear problems only)")
    parser.add_argument("--kmax", type=int, help="iteration budget")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="picardrom",
        description="Reduced-order accelerated Picard iteration experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, desc in (
        ("reference", "plain Picard reference run"),
        ("run", "accelerated run measured against the reference"),
        ("compare-criteria", "sweep quality criteria with validation on/off"),
        ("bench", "runtime statistics over repeated runs"),
    ):
        p = sub.add_parser(name, help=desc)
        _add_common(p)
    p = sub.add_parser("paths", help="print the decreasing-path enumeration")
    p.add_argument("--from", dest="j", type=int, required=True,
                   help="source index j (the later system)")
    p.add_argument("--to", dest="i", type=int, required=True,
                   help="target index i < j")
    p.add_argument("--p", type=int, default=None, help="graph order (default j)")
    return parser


def _experiment_config(args) -> harness.ExperimentConfig:
    cfg = harness.load_config(args.config) if args.config else harness.ExperimentConfig()
    updates = {}
    if args.problem:
        updates["problem"] = args.problem
    if args.rom:
        updates["rom"] = args.rom
    if args.nb is not None:
        updates["n_b"] = args.nb
    if args.eps is not None:
        updates["eps"] = args.eps
    if args.eps_rb is not None:
        updates["eps_rb"] = args.eps_rb
    if args.criterion:
        updates["criterion"] = _CRITERION_ALIASES.get(args.criterion, args.criterion)
    if args.no_validation:
        updates["validation"] = False
    if args.reps is not None:
        updates["repetitions"] = args.reps
    if args.out is not None:
        updates["output_dir"] = str(args.out)
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.exact_constants:
        updates["exact_constants"] = True
    if args.kmax is not None:
        updates["k_max"] = args.kmax
    return dataclasses.replace(cfg, **updates)


def _out_dir(cfg: harness.ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _report_exit(converged: bool) -> int:
    return EXIT_OK if converged else EXIT_KMAX


def _cmd_reference(cfg: harness.ExperimentConfig) -> int:
    out = _out_dir(cfg)
    problem = harness.build_problem(cfg)
    try:
        result = harness.run_reference(cfg, problem)
    except MaxIterationsExceeded as exc:
        print(f"reference: {exc}", file=sys.stderr)
        return EXIT_KMAX
    harness.emit_report(result.report, out / "reference_report.json")
    harness.emit_trace(result.report, out / "reference_trace.csv")
    if cfg.problem != "scalar":
        grid = _problem_grid(cfg)
        n = grid.n
        harness.dump_field(result.solution[:n], grid, out / "reference_field1.txt")
        harness.dump_field(result.solution[n:], grid, out / "reference_field2.txt")
    print(f"reference converged in {result.report.iterations} iterations "
          f"(reports in {out})")
    return EXIT_OK


def _problem_grid(cfg: harness.ExperimentConfig):
    from . import problems
    if cfg.problem == "rd":
        return problems.Grid2D(cfg.grid_n, cfg.grid_n, 1.0, 1.0)
    return problems.ThermalFlowSurrogate().grid


def _cmd_run(cfg: harness.ExperimentConfig) -> int:
    out = _out_dir(cfg)
    problem = harness.build_problem(cfg)
    result = harness.run_accelerated(cfg, problem)
    rep = result.report
    harness.emit_report(rep, out / "run_report.json",
                        extra={"error_vs_reference": result.error_vs_reference})
    harness.emit_trace(rep, out / "run_trace.csv")
    print(f"iterations={rep.iterations} converged={rep.converged} "
          f"fom_solves={rep.fom_solves} rom_solves={rep.rom_solves} "
          f"error_vs_reference={result.error_vs_reference:.3e}")
    return _report_exit(rep.converged)


def _cmd_compare(cfg: harness.ExperimentConfig) -> int:
    out = _out_dir(cfg)
    rows = harness.compare_criteria(cfg)
    harness.write_comparison_csv(rows, out / "criteria_comparison.csv")
    for row in rows:
        print(f"{row['criterion']:<12} validation={str(row['validation']):<5} "
              f"iters={row['iterations']:<4} fom={row['fom_iterations']:<4} "
              f"true={row['true_error']:.3e} est={row['internal_estimate']:.3e}")
    return EXIT_OK if all(r["converged"] for r in rows) else EXIT_KMAX


def _cmd_bench(cfg: harness.ExperimentConfig) -> int:
    out = _out_dir(cfg)
    reps = max(cfg.repetitions, 5)
    problem = harness.build_problem(cfg)
    reference = harness.run_reference(cfg, problem)
    run_cfg = harness.build_run_config(cfg, problem.p)
    base_cfg = dataclasses.replace(cfg, rom="none")
    base_run_cfg = harness.build_run_config(base_cfg, problem.p)
    accel, base = [], []
    for _ in range(reps):
        t0 = time.perf_counter()
        harness.run_accelerated(cfg, problem, reference, run_cfg)
        accel.append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        harness.run_accelerated(base_cfg, problem, reference, base_run_cfg)
        base.append(time.perf_counter() - t0)
    stats = harness.bench_stats(accel, base)
    payload = dataclasses.asdict(stats)
    (out / "bench.json").write_text(json.dumps(payload, indent=2) + "\n")
    print(f"mean={stats.mean:.4f}s CI=({stats.mean_ci[0]:.4f}, {stats.mean_ci[1]:.4f}) "
          f"median={stats.median:.4f}s speedup={stats.speedup_pct_mean:.1f}% "
          f"(median {stats.speedup_pct_median:.1f}%)")
    return EXIT_OK


def _cmd_paths(args) -> int:
    p = args.p if args.p is not None else args.j
    graph = coupling.make_graph(max(p, 1))
    paths = coupling.enumerate_paths(graph, args.i, args.j)
    print(f"|d_{{{args.i},{args.j}}}| = {len(paths)}")
    for path in paths:
        print(" -> ".join(str(n) for n in path))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "paths":
            return _cmd_paths(args)
        cfg = _experiment_config(args)
        if args.command == "reference":
            return _cmd_reference(cfg)
        if args.command == "run":
            return _cmd_run(cfg)
        if args.command == "compare-criteria":
            return _cmd_compare(cfg)
        if args.command == "bench":
            return _cmd_bench(cfg)
        raise AssertionError(f"unhandled command {args.command}")
    except MaxIterationsExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_KMAX
    except (PicardRomError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
