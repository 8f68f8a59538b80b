"""Multi-start benchmark runs, CSV persistence and median summaries.

Run seeds are ``derive_seed(master, run_id, method)``; starting points are
one Latin hypercube of ``n_runs`` points drawn from
``derive_seed(master, "starts")`` and shared by every method, so runs with
the same ``run_id`` are paired.
"""

from __future__ import annotations

import csv
import json
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .baseline import QnConfig, bfgs_minimize
from .optimizer import BoConfig, run as bo_run
from .problems import Problem, make_problem
from .sampling import derive_seed, latin_hypercube
from .trace import RunTrace, read_trace_csv, write_trace_csv

METHODS = ("bo", "bfgs")
NOT_ACHIEVED = "not achieved"


@dataclass
class ExperimentConfig:
    problem: str
    methods: Sequence[str] = ("bo", "bfgs")
    n_runs: int = 5
    seed: int = 0
    out: str = "results"
    # start box; None takes the problem's own box
    lower: Optional[Sequence[float]] = None
    upper: Optional[Sequence[float]] = None
    f_tol: float = 1e-5
    opt_orders: float = 10.0
    grad_noise: float = 0.0
    bo: Dict = field(default_factory=dict)
    bfgs: Dict = field(default_factory=dict)
    lorenz: Dict = field(default_factory=dict)
    workers: int = 1

    def __post_init__(self):
        self.methods = tuple(self.methods)
        if self.n_runs < 1:
            raise ValueError("n_runs must be at least 1")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ValueError(f"unknown methods {bad}; choose from {METHODS}")
        for b in (self.lower, self.upper):
            if b is not None and not np.all(np.isfinite(b)):
                raise ValueError("start bounds must be finite")
        if self.grad_noise < 0:
            raise ValueError("grad_noise must be nonnegative")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


def build_problem(cfg: ExperimentConfig, run_id: int = 0) -> Problem:
    # the noise stream depends on the run only, so paired runs see the same draws
    return make_problem(cfg.problem, cfg.grad_noise, derive_seed(cfg.seed, run_id, "noise"), cfg.lorenz or None)


def starting_points(cfg: ExperimentConfig, problem: Problem) -> np.ndarray:
    """One Latin hypercube over the start box.

    A start that violates the problem's linear constraints is reflected
    through the box centre, which keeps the stratification; a start that is
    still infeasible is kept as drawn.
    """
    lb = np.asarray(cfg.lower if cfg.lower is not None else problem.start_lower, dtype=float)
    ub = np.asarray(cfg.upper if cfg.upper is not None else problem.start_upper, dtype=float)
    if lb.shape != (problem.n_d,) or ub.shape != (problem.n_d,):
        raise ValueError(f"start bounds must have {problem.n_d} entries")
    if np.any(ub <= lb):
        raise ValueError("start box must have upper > lower")
    X = latin_hypercube(cfg.n_runs, lb, ub, np.random.default_rng(derive_seed(cfg.seed, "starts")))
    for i, x in enumerate(X):
        if not problem.feasible(x):
            mirrored = lb + ub - x
            if problem.feasible(mirrored):
                X[i] = mirrored
    return X


def bo_config(cfg: ExperimentConfig) -> BoConfig:
    return BoConfig.from_flat(cfg.bo)


def qn_config(cfg: ExperimentConfig) -> QnConfig:
    return QnConfig(**cfg.bfgs)


def _run_one(cfg: ExperimentConfig, method: str, run_id: int, x0) -> RunTrace:
    problem = build_problem(cfg, run_id)
    try:
        if method == "bo":
            return bo_run(problem, x0, bo_config(cfg), derive_seed(cfg.seed, run_id, method), run_id)
        return bfgs_minimize(problem, x0, qn_config(cfg), run_id)
    except Exception as exc:  # a broken run is recorded, never fatal
        trace = RunTrace(run_id, method, problem.name, status="failed", message=f"{type(exc).__name__}: {exc}")
        return trace


def trace_path(out, method: str, run_id: int) -> Path:
    return Path(out) / f"trace_{method}_{run_id:02d}.csv"


def run_experiment(cfg: ExperimentConfig) -> List[RunTrace]:
    """Run every method from every start, write the CSVs and return the traces.

    Files written to ``cfg.out``: ``trace_<method>_<run>.csv`` for every run
    that produced at least one evaluation, ``runs.csv`` (status of every
    run), ``summary.csv`` and ``experiment.json`` (the resolved
    configuration).
    """
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    # validate overrides before spending any evaluations
    bo_config(cfg)
    qn_config(cfg)
    problem = build_problem(cfg)
    X0 = starting_points(cfg, problem)
    jobs = [(m, r) for r in range(cfg.n_runs) for m in cfg.methods]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(_run_one, cfg, m, r, X0[r]) for m, r in jobs]
            traces = [f.result() for f in futures]
    else:
        traces = [_run_one(cfg, m, r, X0[r]) for m, r in jobs]
    for tr in traces:
        if tr.records:
            write_trace_csv(tr, trace_path(out, tr.method, tr.run_id))
    write_run_index(traces, out / "runs.csv")
    write_summary(summarize(traces, cfg.f_tol, cfg.opt_orders, problem.n_d), out / "summary.csv")
    with (out / "experiment.json").open("w", encoding="utf-8") as fh:
        # the output location is not part of the experiment
        resolved = {k: v for k, v in asdict(cfg).items() if k != "out"}
        json.dump(_jsonable(resolved), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return traces


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def evals_to_tolerance(trace: RunTrace, f_tol: float = 1e-5, opt_orders: float = 10.0) -> float:
    """First evaluation count with ``f_best <= f_tol`` and the optimality
    ratio at or below ``10**-opt_orders``; ``inf`` if never reached."""
    lim = 10.0 ** (-opt_orders)
    for r in trace.records:
        if r.f_best <= f_tol and r.opt_ratio <= lim:
            return float(r.n_feval)
    return math.inf


def median_evals(counts: Sequence[float]):
    """Median with non-achieving runs counted as ``inf``.

    Returns :data:`NOT_ACHIEVED` when fewer than half the runs reach the
    tolerance, or when the median itself lands on an ``inf`` entry.
    """
    counts = list(counts)
    if not counts:
        raise ValueError("no runs to summarize")
    n_ok = sum(math.isfinite(c) for c in counts)
    if 2 * n_ok < len(counts):
        return NOT_ACHIEVED
    med = statistics.median(counts)
    return med if math.isfinite(med) else NOT_ACHIEVED


SUMMARY_COLS = ["method", "problem", "n_d", "n_runs", "n_success", "n_failed", "median_evals",
                "median_f_best", "median_opt_ratio"]


def summarize(traces: Sequence[RunTrace], f_tol: float = 1e-5, opt_orders: float = 10.0,
              n_d: Optional[int] = None) -> List[dict]:
    """One row per (method, problem)."""
    if not traces:
        raise ValueError("no traces to summarize")
    groups: Dict[tuple, List[RunTrace]] = {}
    for tr in traces:
        groups.setdefault((tr.method, tr.problem), []).append(tr)
    rows = []
    for (method, prob), group in sorted(groups.items()):
        counts = [evals_to_tolerance(t, f_tol, opt_orders) for t in group]
        dims = {t.records[0].x.size for t in group if t.records}
        done = [t for t in group if t.records]
        rows.append({
            "method": method,
            "problem": prob,
            "n_d": n_d if n_d is not None else (dims.pop() if len(dims) == 1 else ""),
            "n_runs": len(group),
            "n_success": sum(math.isfinite(c) for c in counts),
            "n_failed": sum(t.status == "failed" for t in group),
            "median_evals": median_evals(counts),
            "median_f_best": statistics.median(t.f_best for t in done) if done else math.nan,
            "median_opt_ratio": statistics.median(t.records[-1].opt_ratio for t in done) if done else math.nan,
        })
    return rows


def _cell(v) -> str:
    if isinstance(v, float):
        if v.is_integer() and math.isfinite(v) and abs(v) < 1e15:
            return str(int(v))
        return repr(v)
    return str(v)


def write_summary(rows: List[dict], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLS)
        for row in rows:
            w.writerow([_cell(row[c]) for c in SUMMARY_COLS])


INDEX_COLS = ["run_id", "method", "problem", "status", "n_feval", "message"]


def write_run_index(traces: Sequence[RunTrace], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INDEX_COLS)
        for t in traces:
            w.writerow([t.run_id, t.method, t.problem, t.status, t.n_feval, t.message])


def load_traces(directory) -> List[RunTrace]:
    """Traces from ``trace_*.csv`` plus empty entries for runs listed in
    ``runs.csv`` that never produced an evaluation."""
    directory = Path(directory)
    traces = [read_trace_csv(f) for f in sorted(directory.glob("trace_*.csv"))]
    index = directory / "runs.csv"
    if index.exists():
        seen = {(t.method, t.run_id) for t in traces}
        with index.open(newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                key = (row["method"], int(row["run_id"]))
                if key not in seen:
                    traces.append(RunTrace(key[1], key[0], row["problem"], status=row["status"],
                                           message=row["message"]))
    if not traces:
        raise FileNotFoundError(f"no traces in {directory}")
    return traces


def report_medians(directory, f_tol: float = 1e-5, opt_orders: float = 10.0, write: bool = True) -> List[dict]:
    """Summary table rebuilt from the trace CSVs in ``directory``."""
    rows = summarize(load_traces(directory), f_tol, opt_orders)
    if write:
        write_summary(rows, Path(directory) / "summary.csv")
    return rows
