"""Command line entry point: ``gebo run ...`` and ``gebo report ...``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml

from .harness import ExperimentConfig, NOT_ACHIEVED, load_traces, report_medians, run_experiment


def load_overrides(path) -> dict:
    """Read a YAML or JSON file of the form
    ``{"bo": {...}, "bfgs": {...}, "lorenz": {...}}``.

    Keys outside those three sections are treated as BO options.
    """
    text = Path(path).read_text(encoding="utf-8")
    data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    data = data or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a mapping at the top level")
    sections = {k: dict(data.pop(k) or {}) for k in ("bo", "bfgs", "lorenz") if k in data}
    sections.setdefault("bo", {}).update(data)
    return sections


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gebo", description="Gradient-enhanced Bayesian optimization benchmarks.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment and write trace CSVs")
    r.add_argument("--problem", required=True, help="quad:<n>, bowl:<n>, rosen:<n>[:<a>] or lorenz[:<t_J>]")
    r.add_argument("--method", default="bo,bfgs", help="comma-separated subset of bo,bfgs")
    r.add_argument("--runs", type=int, default=5)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    r.add_argument("--grad-noise", type=float, default=0.0, help="std of additive gradient noise")
    r.add_argument("--config", help="YAML or JSON file with bo/bfgs/lorenz overrides")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--lower", type=float, nargs="+", help="start box lower bounds")
    r.add_argument("--upper", type=float, nargs="+", help="start box upper bounds")

    s = sub.add_parser("report", help="rebuild summary.csv from trace CSVs")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--f-tol", type=float, default=1e-5)
    s.add_argument("--opt-orders", type=float, default=10.0)
    s.add_argument("--plots", action="store_true", help="also write convergence PNGs")
    return p


def _print_rows(rows):
    for row in rows:
        med = row["median_evals"]
        med = med if med == NOT_ACHIEVED else f"{med:g}"
        print(f"{row['method']:>5} {row['problem']:<16} success {row['n_success']}/{row['n_runs']}"
              f"  median evals {med}  median f_best {row['median_f_best']:.3e}")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _dispatch(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"gebo: error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    if args.command == "run":
        over = load_overrides(args.config) if args.config else {}
        # box given on the command line wins over one in the config file
        cfg = ExperimentConfig(
            problem=args.problem,
            methods=[m.strip() for m in args.method.split(",") if m.strip()],
            n_runs=args.runs,
            seed=args.seed,
            out=args.out,
            lower=args.lower,
            upper=args.upper,
            grad_noise=args.grad_noise,
            bo=over.get("bo", {}),
            bfgs=over.get("bfgs", {}),
            lorenz=over.get("lorenz", {}),
            workers=args.workers,
        )
        traces = run_experiment(cfg)
        for t in traces:
            print(f"{t.method:>5} run {t.run_id}: {t.status} after {t.n_feval} evaluations, f_best {t.f_best:.6e}"
                  + (f" ({t.message})" if t.message else ""))
        return 0 if all(t.status != "failed" for t in traces) else 1

    rows = report_medians(args.inp, args.f_tol, args.opt_orders)
    _print_rows(rows)
    if args.plots:
        from .plotting import plot_convergence

        for path in plot_convergence(load_traces(args.inp), args.inp):
            print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
