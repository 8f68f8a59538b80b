"""Convergence plots rendered from trace CSVs."""

from __future__ import annotations

import re
from pathlib import Path
from typing import List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .trace import RunTrace  # noqa: E402

COLORS = {"bo": "tab:green", "bfgs": "tab:blue"}


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", name).strip("_")


def _series(trace: RunTrace, attr: str):
    n = np.array([r.n_feval for r in trace.records])
    y = np.array([getattr(r, attr) for r in trace.records], dtype=float)
    # nonpositive values have no place on a log axis
    y[~(y > 0)] = np.nan
    return n, y


def plot_convergence(traces: Sequence[RunTrace], out_dir) -> List[Path]:
    """Best objective and optimality ratio against evaluations.

    Writes ``<problem>_objective.png`` and ``<problem>_optimality.png`` for
    every problem found in ``traces`` and returns the paths.
    """
    out_dir = Path(out_dir)
    by_problem = {}
    for t in traces:
        if t.records:
            by_problem.setdefault(t.problem, []).append(t)
    written = []
    for problem, group in sorted(by_problem.items()):
        for attr, label, suffix in (("f_best", "best objective", "objective"),
                                    ("opt_ratio", "optimality / initial optimality", "optimality")):
            fig, ax = plt.subplots(figsize=(6.0, 4.0))
            seen = set()
            for t in sorted(group, key=lambda t: (t.method, t.run_id)):
                n, y = _series(t, attr)
                ax.semilogy(n, y, color=COLORS.get(t.method, "tab:gray"), lw=1.0, alpha=0.8,
                            label=None if t.method in seen else t.method)
                seen.add(t.method)
            ax.set_xlabel("function evaluations")
            ax.set_ylabel(label)
            ax.set_title(problem)
            ax.grid(True, which="major", alpha=0.3)
            ax.legend()
            fig.tight_layout()
            path = out_dir / f"{_slug(problem)}_{suffix}.png"
            fig.savefig(path, dpi=120)
            plt.close(fig)
            written.append(path)
    return written
