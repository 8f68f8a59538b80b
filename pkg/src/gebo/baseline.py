"""BFGS with a strong-Wolfe line search, used as the comparison baseline.

Every objective/gradient call, line-search probes included, becomes one
trace record, so the comparison with the surrogate optimizer is on equal
evaluation counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .problems import Problem
from .trace import RunTrace, TraceBuilder


@dataclass(frozen=True)
class QnConfig:
    c1: float = 1e-4
    c2: float = 0.9
    max_ls_evals: int = 25
    # stop when the gradient norm at the best point drops by this factor
    grad_ratio_tol: float = 1e-10
    step_tol: float = 1e-16
    max_evals: int = 1000
    curvature_eps: float = 1e-10

    def __post_init__(self):
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("need 0 < c1 < c2 < 1")
        if self.max_ls_evals < 1 or self.max_evals < 1:
            raise ValueError("evaluation limits must be positive")


class _Budget(Exception):
    pass


class _Evaluator:
    def __init__(self, problem, builder, cfg):
        self.problem = problem
        self.builder = builder
        self.cfg = cfg
        self.iteration = 0

    def __call__(self, x):
        if self.builder.n_feval >= self.cfg.max_evals:
            raise _Budget
        try:
            f, g, gt = self.problem.evaluate(x)
            f = float(f)
        except Exception:
            f, g, gt = math.inf, np.full(x.size, np.nan), np.full(x.size, np.nan)
        if not math.isfinite(f):
            f = math.inf
        self.builder.add(self.iteration, x, f, g, gt)
        return f, np.asarray(g, dtype=float)


def _interpolate(a_lo, a_hi, f_lo, f_hi, d_lo):
    """Minimizer of the quadratic through ``f_lo, d_lo, f_hi``, safeguarded."""
    span = a_hi - a_lo
    if math.isfinite(f_hi) and math.isfinite(d_lo):
        denom = 2.0 * (f_hi - f_lo - d_lo * span)
        if denom > 0:
            a = a_lo - d_lo * span * span / denom
            lo, hi = sorted((a_lo, a_hi))
            margin = 0.1 * (hi - lo)
            if lo + margin <= a <= hi - margin:
                return a
    return 0.5 * (a_lo + a_hi)


def strong_wolfe_search(phi, f0, d0, alpha1, alpha_max, cfg: QnConfig):
    """Bracketing and zoom search for a strong-Wolfe step.

    ``phi(a)`` returns ``(f, g)`` at ``x + a p`` together with the
    directional derivative.  Returns ``(alpha, f, g)`` or ``None``.
    """
    c1, c2 = cfg.c1, cfg.c2
    evals = 0

    def probe(a):
        nonlocal evals
        evals += 1
        return phi(a)

    def zoom(a_lo, a_hi, f_lo, g_lo, d_lo, f_hi):
        nonlocal evals
        while evals < cfg.max_ls_evals:
            a = _interpolate(a_lo, a_hi, f_lo, f_hi, d_lo)
            f, g, d = probe(a)
            if f > f0 + c1 * a * d0 or f >= f_lo:
                a_hi, f_hi = a, f
            else:
                if abs(d) <= -c2 * d0:
                    return a, f, g
                if d * (a_hi - a_lo) >= 0:
                    a_hi, f_hi = a_lo, f_lo
                a_lo, f_lo, g_lo, d_lo = a, f, g, d
            if abs(a_hi - a_lo) <= 1e-16 * max(1.0, abs(a_lo)):
                break
        return None

    a_prev, f_prev, g_prev, d_prev = 0.0, f0, None, d0
    a = min(alpha1, alpha_max)
    first = True
    while evals < cfg.max_ls_evals:
        f, g, d = probe(a)
        if f > f0 + c1 * a * d0 or (not first and f >= f_prev):
            return zoom(a_prev, a, f_prev, g_prev, d_prev, f)
        if abs(d) <= -c2 * d0:
            return a, f, g
        if d >= 0:
            return zoom(a, a_prev, f, g, d, f_prev)
        if a >= alpha_max:
            # sufficient decrease at the feasible boundary; take it
            return a, f, g
        a_prev, f_prev, g_prev, d_prev = a, f, g, d
        a = min(2.0 * a, alpha_max)
        first = False
    return None


def bfgs_inverse_update(H, s, y):
    """BFGS update of the inverse Hessian; needs ``y @ s > 0``."""
    rho = 1.0 / float(y @ s)
    Hy = H @ y
    H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho * rho * float(y @ Hy) + rho) * np.outer(s, s)
    return 0.5 * (H + H.T)


def _max_step(x, p, constraints):
    if constraints is None:
        return math.inf
    A, b = constraints
    Ap = A @ p
    slack = b - A @ x
    with np.errstate(divide="ignore", invalid="ignore"):
        lim = np.where(Ap > 0, np.maximum(slack, 0.0) / np.where(Ap > 0, Ap, 1.0), np.inf)
    return float(np.min(lim)) if lim.size else math.inf


def bfgs_minimize(problem: Problem, x0, cfg: QnConfig = QnConfig(), run_id: int = 0) -> RunTrace:
    """Minimize with inverse-Hessian BFGS; returns the full evaluation trace.

    Linear inequality constraints of the problem, when present, only cap the
    line-search step so iterates stay feasible.
    """
    trace = RunTrace(run_id, "bfgs", problem.name)
    builder = TraceBuilder(trace)
    ev = _Evaluator(problem, builder, cfg)
    x = np.array(x0, dtype=float)
    n = x.size
    try:
        f, g = ev(x)
        if not math.isfinite(f) or not np.all(np.isfinite(g)):
            trace.status, trace.message = "failed", "non-finite value at the starting point"
            return trace
        g0 = float(np.linalg.norm(g))
        H = np.eye(n)
        first_step = True
        while True:
            gn = float(np.linalg.norm(g))
            if gn <= cfg.grad_ratio_tol * g0 or gn == 0.0:
                trace.status = "converged"
                break
            ev.iteration += 1
            p = -H @ g
            d0 = float(g @ p)
            if not d0 < 0:
                # lost descent; restart from steepest descent
                H = np.eye(n)
                p = -g
                d0 = float(g @ p)
            a_max = _max_step(x, p, problem.linear_constraints)
            if a_max <= 0:
                trace.status, trace.message = "stalled", "blocked by a constraint"
                break
            a1 = min(1.0, 1.0 / gn) if first_step else 1.0

            def phi(a, x=x, p=p):
                fa, ga = ev(x + a * p)
                return fa, ga, float(ga @ p) if np.all(np.isfinite(ga)) else math.nan

            res = strong_wolfe_search(phi, f, d0, a1, a_max, cfg)
            if res is None:
                trace.status, trace.message = "stalled", "line search found no Wolfe point"
                break
            a, f_new, g_new = res
            s = a * p
            y = g_new - g
            x, f, g = x + s, f_new, g_new
            if np.linalg.norm(s) <= cfg.step_tol * max(1.0, float(np.linalg.norm(x))):
                trace.status, trace.message = "stalled", "step below tolerance"
                break
            ys = float(y @ s)
            if ys > cfg.curvature_eps * np.linalg.norm(y) * np.linalg.norm(s):
                if first_step:
                    H = (ys / float(y @ y)) * np.eye(n)
                H = bfgs_inverse_update(H, s, y)
            first_step = False
    except _Budget:
        trace.status = "budget_exhausted"
    return trace
