"""Experiment runner: configuration, reference comparisons and statistics.

Wraps the driver with an INI-style configuration file, a reference
(plain-Picard) run, accelerated runs measured against that reference, a
criteria-comparison sweep, runtime statistics with Student-t and
order-statistic confidence intervals, and CSV/JSON/plain-text emission.
"""

from __future__ import annotations

import configparser
import csv
import json
import math
import statistics
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy.stats

from . import driver, numerics, problems
from .driver import CRITERIA, CoupledProblem, RunConfig, RunReport, accelerated_run
from .errors import ConfigError, MaxIterationsExceeded, TooFewSamples

PROBLEM_NAMES = ("rd", "thermal", "scalar")
TRACE_COLUMNS = ("k", "err", "delta_k", "step_norm", "event")


@dataclass
class ExperimentConfig:
    """Everything one experiment needs: problem choice, run settings, I/O."""

    problem: str = "rd"
    grid_n: int = 32                  # rd: n x n interior points
    rom: str = "1"                    # none | 1 | 2 | both
    eps: float = 1e-6
    reference_eps: float | None = None  # defaults to eps
    k_max: int = 1000
    n_b: int = 5
    eps_rb: float = 1e-7
    criterion: str = "propagation"
    basis_method: str = "svd"
    validation: bool = True
    tau_res: float | None = None
    exact_constants: bool = False
    criteria: tuple[str, ...] = CRITERIA
    repetitions: int = 1
    output_dir: str = "out"
    seed: int = 0

    def __post_init__(self):
        if self.problem not in PROBLEM_NAMES:
            raise ConfigError(f"unknown problem {self.problem!r}")
        if self.rom not in ("none", "1", "2", "both"):
            raise ConfigError(f"unknown rom selection {self.rom!r}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        for c in self.criteria:
            if c not in CRITERIA:
                raise ConfigError(f"unknown criterion {c!r}")


_BOOL_FIELDS = {"validation", "exact_constants"}
_INT_FIELDS = {"grid_n", "k_max", "n_b", "repetitions", "seed"}
_FLOAT_FIELDS = {"eps", "reference_eps", "eps_rb", "tau_res"}


def save_config(cfg: ExperimentConfig, path) -> None:
    """Write the configuration as an INI file with a single [experiment] section."""
    parser = configparser.ConfigParser()
    parser["experiment"] = {}
    for f in fields(cfg):
        val = getattr(cfg, f.name)
        if val is None:
            continue
        if f.name == "criteria":
            parser["experiment"][f.name] = ",".join(val)
        else:
            parser["experiment"][f.name] = repr(val) if isinstance(val, float) else str(val)
    with open(path, "w") as fh:
        parser.write(fh)


def load_config(path) -> ExperimentConfig:
    """Read an INI configuration; unknown keys are rejected."""
    parser = configparser.ConfigParser()
    if not parser.read(str(path)):
        raise ConfigError(f"cannot read config file {path}")
    if "experiment" not in parser:
        raise ConfigError("config file needs an [experiment] section")
    known = {f.name for f in fields(ExperimentConfig)}
    kwargs = {}
    for key, raw in parser["experiment"].items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        if key in _BOOL_FIELDS:
            kwargs[key] = parser["experiment"].getboolean(key)
        elif key in _INT_FIELDS:
            kwargs[key] = int(raw)
        elif key in _FLOAT_FIELDS:
            kwargs[key] = float(raw)
        elif key == "criteria":
            kwargs[key] = tuple(s.strip() for s in raw.split(",") if s.strip())
        else:
            kwargs[key] = raw
    return ExperimentConfig(**kwargs)


def build_problem(cfg: ExperimentConfig) -> CoupledProblem:
    if cfg.problem == "rd":
        pair = problems.linear_rd_pair(problems.LinearRdParams(n=cfg.grid_n))
        return problems.make_coupled_problem(pair, exact_constants=cfg.exact_constants)
    if cfg.problem == "thermal":
        return problems.make_coupled_problem(problems.ThermalFlowSurrogate())
    return problems.make_coupled_problem(
        problems.ScalarToy(), exact_constants=cfg.exact_constants)


def _rom_set(cfg: ExperimentConfig, p: int) -> frozenset[int]:
    if cfg.rom == "none":
        return frozenset()
    if cfg.rom == "both":
        return frozenset(range(1, p + 1))
    idx = int(cfg.rom)
    if idx > p:
        raise ConfigError(f"rom system {idx} but problem has p={p}")
    return frozenset({idx})


def build_run_config(cfg: ExperimentConfig, p: int, *,
                     criterion: str | None = None,
                     validation: bool | None = None) -> RunConfig:
    return RunConfig(
        eps=cfg.eps,
        k_max=cfg.k_max,
        n_b=cfg.n_b,
        eps_rb=cfg.eps_rb,
        rom_set=_rom_set(cfg, p),
        criterion=criterion or cfg.criterion,
        basis_method=cfg.basis_method,
        validation_loop=cfg.validation if validation is None else validation,
        tau_res=cfg.tau_res,
    )


@dataclass
class ReferenceResult:
    report: RunReport
    solution: np.ndarray


def run_reference(cfg: ExperimentConfig,
                  problem: CoupledProblem | None = None) -> ReferenceResult:
    """Plain Picard iteration to the reference tolerance (no reduced models)."""
    problem = problem or build_problem(cfg)
    eps = cfg.reference_eps if cfg.reference_eps is not None else cfg.eps
    run_cfg = RunConfig(eps=eps, k_max=cfg.k_max, n_b=cfg.n_b,
                        rom_set=frozenset(), validation_loop=False)
    solution = {}

    def observer(ev):
        solution["x"] = ev["x_next"]

    report = accelerated_run(problem, run_cfg, observer=observer)
    if not report.converged:
        raise MaxIterationsExceeded(
            f"reference run did not converge in {cfg.k_max} iterations")
    return ReferenceResult(report=report, solution=solution["x"])


@dataclass
class AcceleratedResult:
    report: RunReport
    solution: np.ndarray
    error_vs_reference: float


def run_accelerated(cfg: ExperimentConfig,
                    problem: CoupledProblem | None = None,
                    reference: ReferenceResult | None = None,
                    run_cfg: RunConfig | None = None) -> AcceleratedResult:
    """Accelerated run plus Euclidean error against the reference solution."""
    problem = problem or build_problem(cfg)
    if reference is None:
        reference = run_reference(cfg, problem)
    run_cfg = run_cfg or build_run_config(cfg, problem.p)
    solution = {}

    def observer(ev):
        solution["x"] = ev["x_next"]

    report = accelerated_run(problem, run_cfg, observer=observer)
    x = solution.get("x", problem.x0)
    error = numerics.norm2(x - reference.solution)
    return AcceleratedResult(report=report, solution=x, error_vs_reference=error)


COMPARE_COLUMNS = ("criterion", "validation", "iterations", "fom_iterations",
                   "true_error", "internal_estimate", "validation_cycles",
                   "converged")


def _internal_estimate(report: RunReport, criterion: str) -> float:
    if criterion == "propagation":
        return report.final_err
    if criterion == "residual":
        return report.final_residual
    return report.final_delta


def compare_criteria(cfg: ExperimentConfig, validation_modes=(True, False)) -> list[dict]:
    """One accelerated run per (criterion, validation) cell, vs one reference.

    Returns rows with iteration counts, full-order iteration counts for the
    reduced system, the true error against the reference and the criterion's
    own internal error estimate.
    """
    if len(cfg.criteria) < 2:
        raise ConfigError("criteria comparison needs at least 2 criteria")
    problem = build_problem(cfg)
    reference = run_reference(cfg, problem)
    rom = _rom_set(cfg, problem.p)
    rows = []
    for criterion in cfg.criteria:
        for validation in validation_modes:
            run_cfg = build_run_config(cfg, problem.p, criterion=criterion,
                                       validation=validation)
            result = run_accelerated(cfg, problem, reference, run_cfg)
            rep = result.report
            fom_iters = max((rep.fom_solves[i - 1] for i in rom), default=rep.iterations)
            rows.append({
                "criterion": criterion,
                "validation": validation,
                "iterations": rep.iterations,
                "fom_iterations": fom_iters,
                "true_error": result.error_vs_reference,
                "internal_estimate": _internal_estimate(rep, criterion),
                "validation_cycles": rep.validation_cycles,
                "converged": rep.converged,
            })
    return rows


def write_comparison_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=COMPARE_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


@dataclass(frozen=True)
class StatsSummary:
    """Runtime statistics with 95% confidence intervals and speedups."""

    mean: float
    median: float
    stdev: float
    mean_ci: tuple[float, float]
    median_ci: tuple[float, float]
    speedup_pct_mean: float    # 100 * (1 - mean/baseline_mean)
    speedup_pct_median: float

    def __post_init__(self):
        if not (self.mean_ci[0] <= self.mean <= self.mean_ci[1]):
            raise ValueError("mean must lie inside its confidence interval")
        if not (self.median_ci[0] <= self.median <= self.median_ci[1]):
            raise ValueError("median must lie inside its confidence interval")


def _mean_ci(samples, level: float = 0.95) -> tuple[float, float]:
    n = len(samples)
    mean = statistics.fmean(samples)
    sd = statistics.stdev(samples)
    if sd == 0.0:
        return (mean, mean)
    half = scipy.stats.t.ppf(0.5 + level / 2.0, n - 1) * sd / math.sqrt(n)
    return (mean - half, mean + half)


def _median_ci(samples, level: float = 0.95) -> tuple[float, float]:
    """Distribution-free order-statistic interval from binomial(n, 1/2) ranks."""
    srt = sorted(samples)
    n = len(srt)
    alpha = 1.0 - level
    lo_rank = int(scipy.stats.binom.ppf(alpha / 2.0, n, 0.5))        # 0-based floor
    hi_rank = int(scipy.stats.binom.ppf(1.0 - alpha / 2.0, n, 0.5))  # 0-based ceil
    lo = srt[max(0, lo_rank)]
    hi = srt[min(n - 1, hi_rank)]
    med = statistics.median(srt)
    return (min(lo, med), max(hi, med))


def bench_stats(samples, baseline) -> StatsSummary:
    """Summarize runtimes against a baseline (speedup = 100*(1 - t/t_base))."""
    samples = [float(s) for s in samples]
    baseline = [float(b) for b in baseline]
    if len(samples) < 5 or len(baseline) < 5:
        raise TooFewSamples("bench_stats needs at least 5 samples per series")
    mean = statistics.fmean(samples)
    median = statistics.median(samples)
    base_mean = statistics.fmean(baseline)
    base_median = statistics.median(baseline)
    return StatsSummary(
        mean=mean,
        median=median,
        stdev=statistics.stdev(samples),
        mean_ci=_mean_ci(samples),
        median_ci=_median_ci(samples),
        speedup_pct_mean=100.0 * (1.0 - mean / base_mean),
        speedup_pct_median=100.0 * (1.0 - median / base_median),
    )


def emit_trace(report: RunReport, path) -> None:
    """CSV trace with columns k, err, delta_k, step_norm, event."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for row in report.trace:
            delta = "" if row.delta is None else repr(float(row.delta))
            writer.writerow([row.k, repr(float(row.err)), delta,
                             repr(float(row.step_norm)), row.event])


def emit_report(report: RunReport, path, extra: dict | None = None) -> None:
    """JSON dump of the run report (plus optional extra keys)."""
    payload = report.to_dict()
    if extra:
        payload.update(extra)

    def _default(obj):
        if isinstance(obj, float) and not math.isfinite(obj):
            return str(obj)
        raise TypeError(f"not serializable: {type(obj)}")

    text = json.dumps(payload, indent=2, default=_default)
    # JSON has no Infinity literal; emit strings for non-finite floats
    text = text.replace("Infinity", '"inf"').replace("NaN", '"nan"')
    Path(path).write_text(text + "\n")


def dump_field(values: np.ndarray, grid: problems.Grid2D, path) -> None:
    """Plain-text grid dump: header 'nx ny hx hy', then one value per line."""
    values = np.asarray(values, dtype=float).ravel()
    if values.size != grid.n:
        raise ConfigError(f"field size {values.size} != grid size {grid.n}")
    with open(path, "w") as fh:
        fh.write(f"{grid.nx} {grid.ny} {float(grid.hx)!r} {float(grid.hy)!r}\n")
        for v in values:
            fh.write(f"{float(v)!r}\n")


def load_field(path) -> tuple[np.ndarray, tuple[int, int, float, float]]:
    """Inverse of :func:`dump_field`."""
    lines = Path(path).read_text().splitlines()
    nx_s, ny_s, hx_s, hy_s = lines[0].split()
    header = (int(nx_s), int(ny_s), float(hx_s), float(hy_s))
    values = np.array([float(s) for s in lines[1:]])
    return values, header
