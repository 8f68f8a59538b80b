"""Outer loop of the gradient-enhanced local Bayesian optimizer."""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .acquisition import AcqSolverConfig, AcquisitionKind, minimize_acquisition
from .gp import DEFAULT_COND_MAX, DataSet, fit_surrogate
from .kernels import KernelKind
from .likelihood import HpSearchConfig, layout_for, search_hyperparameters
from .local_model import (
    TrustRegionConfig,
    TrustRegionState,
    circular_tr_value,
    select_data_region,
    update_trust_region,
)
from .problems import Problem
from .trace import RunTrace, TraceBuilder


@dataclass(frozen=True)
class BoConfig:
    kernel: KernelKind = KernelKind()
    cond_max: float = DEFAULT_COND_MAX
    acquisition: AcquisitionKind = AcquisitionKind()
    n_close: int = 20
    n_last: int = 3
    tr: TrustRegionConfig = TrustRegionConfig()
    hp: HpSearchConfig = field(default_factory=HpSearchConfig)
    acq: AcqSolverConfig = AcqSolverConfig()
    # orders of magnitude of gradient-norm reduction that count as converged
    opt_orders: float = 10.0
    stall_limit: int = 20
    max_evals: int = 500

    def __post_init__(self):
        if not self.cond_max > 1:
            raise ValueError("cond_max must exceed 1")
        if self.n_close < 1 or self.n_last < 0:
            raise ValueError("invalid data-region sizes")
        if self.stall_limit < 1 or self.max_evals < 1:
            raise ValueError("stall_limit and max_evals must be positive")

    @property
    def noisy_mode(self) -> bool:
        return self.hp.noisy_mode

    @classmethod
    def from_flat(cls, flat: dict) -> "BoConfig":
        """Build from a flat key set such as ``{"kernel": "matern", "rho_inc": 3}``."""
        flat = dict(flat)
        top, tr, hp, acq = {}, {}, {}, {}
        for key, val in flat.items():
            if key == "kernel":
                top[key] = KernelKind.from_name(val) if isinstance(val, str) else val
            elif key == "acquisition":
                top[key] = AcquisitionKind.from_name(val) if isinstance(val, str) else val
            elif key in FLAT_TOP:
                top[key] = val
            elif key in FLAT_TR:
                tr[key] = val
            elif key in FLAT_HP:
                hp[FLAT_HP[key]] = val
            elif key in FLAT_ACQ:
                acq[FLAT_ACQ[key]] = val
            else:
                raise KeyError(f"unknown optimizer option {key!r}")
        return cls(tr=TrustRegionConfig(**tr), hp=HpSearchConfig(**hp), acq=AcqSolverConfig(**acq), **top)


FLAT_TOP = {"cond_max", "n_close", "n_last", "opt_orders", "stall_limit", "max_evals"}
FLAT_TR = {f.name for f in dataclasses.fields(TrustRegionConfig)}
FLAT_HP = {f.name: f.name for f in dataclasses.fields(HpSearchConfig)}
FLAT_HP["hp_max_iter"] = FLAT_HP.pop("max_iter")
FLAT_HP["hp_gtol"] = FLAT_HP.pop("gtol")
FLAT_ACQ = {"acq_n_lhs": "n_lhs", "n_best": "n_best", "acq_max_iter": "max_iter", "acq_ftol": "ftol",
            "sigma_tol": "sigma_tol", "lin_tol": "lin_tol", "dup_tol": "dup_tol"}


def stop_check(trace: RunTrace, cfg: BoConfig) -> str:
    """``"continue"``, ``"converged"``, ``"stalled"`` or ``"budget_exhausted"``.

    Convergence compares the observed gradient norm at the best point with
    the one at the first point.
    """
    recs = trace.records
    if not recs:
        raise ValueError("empty trace")
    g0 = recs[0].grad_norm
    best = min(range(len(recs)), key=lambda i: (recs[i].f, i))
    if len(recs) > 1 or g0 == 0.0:
        if recs[best].grad_norm <= 10.0 ** (-cfg.opt_orders) * g0:
            return "converged"
    last_improve = 0
    for i in range(1, len(recs)):
        if recs[i].f_best < recs[i - 1].f_best:
            last_improve = i
    if len(recs) - 1 - last_improve >= cfg.stall_limit:
        return "stalled"
    if recs[-1].n_feval >= cfg.max_evals:
        return "budget_exhausted"
    return "continue"


def _evaluate(problem, x):
    try:
        f, g, gt = problem.evaluate(x)
    except Exception as exc:  # any oracle failure is handled by the caller
        return None, repr(exc)
    f = float(f)
    g = np.asarray(g, dtype=float)
    if not math.isfinite(f) or not np.all(np.isfinite(g)):
        return None, f"non-finite evaluation f={f}"
    return (f, g, np.asarray(gt, dtype=float)), ""


def run(problem: Problem, x0, cfg: BoConfig = BoConfig(), rng_seed=0, run_id: int = 0) -> RunTrace:
    """Minimize ``problem`` from the single point ``x0``.

    Each iteration selects the data region, fits the hyperparameters,
    updates both trust regions, minimizes the acquisition and evaluates
    the objective and gradient once at the chosen point.
    """
    t_start = time.perf_counter()
    rng = np.random.default_rng(rng_seed)
    trace = RunTrace(run_id, "bo", problem.name)
    builder = TraceBuilder(trace)
    x0 = np.array(x0, dtype=float).ravel()
    out, msg = _evaluate(problem, x0)
    if out is None:
        trace.status, trace.message = "failed", f"initial evaluation failed: {msg}"
        return trace
    f0, g0, gt0 = out
    builder.add(0, x0, f0, g0, gt0)
    X, F, G = [x0], [f0], [g0]
    state = TrustRegionState(u_c=cfg.tr.u_c0)
    hp_history = []
    layout = layout_for(x0.size, cfg.kernel, cfg.hp)
    g_c_prev = g_s_prev = 0.0
    iteration = 0
    try:
        while True:
            status = stop_check(trace, cfg)
            if status != "continue":
                trace.status = status
                break
            iteration += 1
            Xa, Fa = np.array(X), np.array(F)
            i_best = int(np.argmin(Fa))
            x_best = Xa[i_best]
            region = select_data_region(Xa, x_best, cfg.n_close, cfg.n_last)
            idx = region.indices
            data = DataSet.from_evaluations(Xa[idx], Fa[idx], np.array(G)[idx])

            sel = search_hyperparameters(data, cfg.hp, cfg.kernel, cfg.cond_max, rng, hp_history)
            flags = ["hp_fallback"] if sel.fallback else []
            hp_history.append(layout.pack(layout.unpack(sel.log_theta)))
            fitted = fit_surrogate(data, sel.hp, cfg.kernel, cfg.cond_max)

            if len(F) > 1:
                state = update_trust_region(state, F[-1], F[-2] if len(F) > 2 else None, min(F[:-1]),
                                            g_c_prev, g_s_prev, region, cfg.tr)
            f_star = float(np.min(fitted.mean_at_data())) if cfg.noisy_mode else float(Fa[i_best])

            attempts = 0
            while True:
                res = minimize_acquisition(fitted, cfg.acquisition, state, x_best, data.X, data.f, f_star, rng,
                                           problem.linear_constraints, cfg.acq)
                if res.fallback:
                    flags.append("acq_fallback")
                out, msg = _evaluate(problem, res.x)
                if out is not None:
                    break
                attempts += 1
                flags.append("oracle_retry")
                if attempts >= 2:
                    raise _OracleFailure(msg)
                state = dataclasses.replace(state, u_c=cfg.tr.rho_dec * state.u_c)

            g_c_prev = circular_tr_value(res.x, x_best)[0]
            g_s_prev = fitted.variance_ratio(res.x)
            f, g, gt = out
            X.append(res.x)
            F.append(f)
            G.append(g)
            builder.add(iteration, res.x, f, g, gt, u_c=state.u_c, u_sigma=state.u_sigma,
                        sigma_grad_hat=sel.hp.sigma_grad if cfg.noisy_mode else math.nan,
                        n_data=region.n_data, flags=";".join(dict.fromkeys(flags)))
    except _OracleFailure as exc:
        trace.status, trace.message = "failed", f"two consecutive oracle failures: {exc}"
    except Exception as exc:
        trace.status, trace.message = "failed", f"{type(exc).__name__}: {exc}"
    trace.wall_time = time.perf_counter() - t_start
    return trace


class _OracleFailure(RuntimeError):
    pass
