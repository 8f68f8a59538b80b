"""Per-evaluation run records and their CSV form.

Floats are written with ``repr`` so reading a file back gives bit-identical
values; wall-clock time is kept off the records so reruns produce
byte-identical files.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import List

import numpy as np

STATUSES = ("converged", "stalled", "budget_exhausted", "failed", "running")


@dataclass
class EvalRecord:
    """One objective and gradient evaluation."""

    iter: int
    n_feval: int
    x: np.ndarray
    f: float
    grad_norm: float
    f_best: float
    opt_norm: float
    opt_ratio: float
    u_c: float = math.nan
    u_sigma: float = math.nan
    sigma_grad_hat: float = math.nan
    n_data: int = 0
    flags: str = ""

    def __eq__(self, other):
        if not isinstance(other, EvalRecord):
            return NotImplemented
        for fl in fields(self):
            a, b = getattr(self, fl.name), getattr(other, fl.name)
            if fl.name == "x":
                if a.shape != b.shape or not np.array_equal(a, b, equal_nan=True):
                    return False
            elif isinstance(a, float):
                if not (a == b or (math.isnan(a) and math.isnan(b))):
                    return False
            elif a != b:
                return False
        return True


@dataclass
class RunTrace:
    run_id: int
    method: str
    problem: str
    records: List[EvalRecord] = field(default_factory=list)
    status: str = "running"
    message: str = ""
    # not persisted
    wall_time: float = field(default=0.0, compare=False)

    @property
    def n_feval(self) -> int:
        return self.records[-1].n_feval if self.records else 0

    @property
    def f_best(self) -> float:
        return self.records[-1].f_best if self.records else math.inf

    @property
    def final_opt_norm(self) -> float:
        return self.records[-1].opt_norm if self.records else math.inf

    def best_x(self) -> np.ndarray:
        best = min(self.records, key=lambda r: (r.f, r.n_feval))
        return best.x


_SCALAR_COLS = ["run_id", "method", "problem", "iter", "n_feval", "f", "f_best", "opt_norm", "opt_ratio",
                "u_c", "u_sigma", "grad_norm", "sigma_grad_hat", "n_data", "flags", "status"]


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_trace_csv(trace: RunTrace, path) -> None:
    path = Path(path)
    n_d = trace.records[0].x.size if trace.records else 0
    header = _SCALAR_COLS + [f"x_{i}" for i in range(n_d)]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in trace.records:
            row = [trace.run_id, trace.method, trace.problem, r.iter, r.n_feval, r.f, r.f_best, r.opt_norm,
                   r.opt_ratio, r.u_c, r.u_sigma, r.grad_norm, r.sigma_grad_hat, r.n_data, r.flags, trace.status]
            w.writerow([_fmt(v) for v in row] + [_fmt(v) for v in r.x])


def read_trace_csv(path) -> RunTrace:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path} holds no records")
    xcols = sorted((k for k in rows[0] if k.startswith("x_")), key=lambda k: int(k[2:]))
    first = rows[0]
    trace = RunTrace(int(first["run_id"]), first["method"], first["problem"], status=first["status"])
    for row in rows:
        trace.records.append(EvalRecord(
            iter=int(row["iter"]), n_feval=int(row["n_feval"]),
            x=np.array([float(row[k]) for k in xcols]),
            f=float(row["f"]), grad_norm=float(row["grad_norm"]), f_best=float(row["f_best"]),
            opt_norm=float(row["opt_norm"]), opt_ratio=float(row["opt_ratio"]),
            u_c=float(row["u_c"]), u_sigma=float(row["u_sigma"]),
            sigma_grad_hat=float(row["sigma_grad_hat"]), n_data=int(row["n_data"]), flags=row["flags"],
        ))
    return trace


class TraceBuilder:
    """Appends records while keeping the best-so-far bookkeeping.

    ``opt_norm`` is the noise-free gradient norm at the best point so far
    and ``opt_ratio`` divides it by the one at the first evaluation.
    """

    def __init__(self, trace: RunTrace):
        self.trace = trace
        self.f_best = math.inf
        self.opt_best = math.nan
        self.opt0 = math.nan
        self.x_best = None
        self.n_feval = 0
        # observed-gradient counterparts, used by stopping rules
        self.obs_best = math.nan
        self.obs0 = math.nan

    def add(self, iteration, x, f, grad_obs, grad_true, **extra) -> EvalRecord:
        self.n_feval += 1
        gt = float(np.linalg.norm(grad_true))
        go = float(np.linalg.norm(grad_obs))
        if self.n_feval == 1:
            self.opt0 = gt
            self.obs0 = go
        if f < self.f_best:
            self.f_best = float(f)
            self.opt_best = gt
            self.obs_best = go
            self.x_best = np.array(x, dtype=float)
        ratio = self.opt_best / self.opt0 if self.opt0 > 0 else (0.0 if self.opt_best == 0 else math.nan)
        rec = EvalRecord(iter=int(iteration), n_feval=self.n_feval, x=np.array(x, dtype=float), f=float(f),
                         grad_norm=go, f_best=self.f_best,
                         opt_norm=self.opt_best, opt_ratio=float(ratio), **extra)
        self.trace.records.append(rec)
        return rec
