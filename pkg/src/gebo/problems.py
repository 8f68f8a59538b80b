"""Benchmark objectives with gradients, plus a gradient-noise wrapper.

A problem is called as ``problem(x) -> (f, grad)``; that is what an
optimizer sees.  ``problem.exact(x)`` returns the noise-free pair and is
only used for reporting.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .lorenz import LorenzConfig, lorenz_value_and_gradient


def coupling_matrix(n_d: int) -> np.ndarray:
    """``A_ij = exp(-(i - j)^2 / 2) / 10``."""
    i = np.arange(n_d)
    return 0.1 * np.exp(-0.5 * (i[:, None] - i[None, :]) ** 2)


def quadratic_eval(x, A=None):
    x = np.asarray(x, dtype=float)
    A = coupling_matrix(x.size) if A is None else A
    e = x - 1.0
    Ae = A @ e
    return float(0.5 * e @ Ae), Ae


def bowl_eval(x, A=None):
    x = np.asarray(x, dtype=float)
    A = coupling_matrix(x.size) if A is None else A
    e = x - 1.0
    Ae = A @ e
    g = np.exp(-0.5 * e @ Ae)
    f = 1.0 - g + e @ e / 100.0 + np.sum(e**4) / 1000.0
    return float(f), g * Ae + e / 50.0 + e**3 / 250.0


def rosenbrock_eval(x, a: float = 100.0):
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        raise ValueError("Rosenbrock needs at least two variables")
    if not a > 0:
        raise ValueError("a must be positive")
    x0, x1 = x[:-1], x[1:]
    r = x1 - x0**2
    f = float(np.sum(a * r**2 + (1.0 - x0) ** 2))
    g = np.zeros_like(x)
    g[:-1] = -4.0 * a * r * x0 - 2.0 * (1.0 - x0)
    g[1:] += 2.0 * a * r
    return f, g


class Problem:
    """Objective with gradient; subclasses implement :meth:`exact`."""

    name = "problem"
    n_d = 0
    linear_constraints = None
    start_lower = None
    start_upper = None

    def exact(self, x):
        raise NotImplementedError

    def __call__(self, x):
        return self.exact(x)

    def evaluate(self, x):
        """``(f, observed gradient, noise-free gradient)``."""
        f, g = self.exact(x)
        return f, g, g

    def feasible(self, x, tol: float = 1e-8) -> bool:
        if self.linear_constraints is None:
            return True
        A, b = self.linear_constraints
        return bool(np.all(A @ np.asarray(x, dtype=float) - b <= tol))


class AnalyticProblem(Problem):
    """Quadratic, bowl or Rosenbrock test function with minimum 0 at ``x = 1``."""

    def __init__(self, kind: str, n_d: int, a: float = 100.0):
        if kind not in ("quad", "bowl", "rosen"):
            raise ValueError(f"unknown analytic problem {kind!r}")
        if n_d < 1 or (kind == "rosen" and n_d < 2):
            raise ValueError(f"invalid dimension {n_d} for {kind}")
        self.kind = kind
        self.n_d = int(n_d)
        self.a = float(a)
        self._A = coupling_matrix(self.n_d)
        self.name = f"rosen:{n_d}:{a:g}" if kind == "rosen" else f"{kind}:{n_d}"
        self.start_lower = -10.0 * np.ones(self.n_d)
        self.start_upper = 10.0 * np.ones(self.n_d)

    def exact(self, x):
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.n_d:
            raise ValueError(f"expected {self.n_d} variables, got {x.size}")
        if self.kind == "quad":
            return quadratic_eval(x, self._A)
        if self.kind == "bowl":
            return bowl_eval(x, self._A)
        return rosenbrock_eval(x, self.a)


class NoisyGradient(Problem):
    """Adds independent ``Normal(0, sigma^2)`` noise to every gradient entry.

    The objective value is left exact.  Draws come from a private generator
    so a fixed seed and call sequence give a fixed noise sequence.
    """

    def __init__(self, base: Problem, sigma: float, seed=0):
        if not sigma >= 0:
            raise ValueError("noise level must be nonnegative")
        self.base = base
        self.sigma = float(sigma)
        self.rng = np.random.default_rng(seed)
        self.name = base.name
        self.n_d = base.n_d
        self.linear_constraints = base.linear_constraints
        self.start_lower = base.start_lower
        self.start_upper = base.start_upper

    def exact(self, x):
        return self.base.exact(x)

    def __call__(self, x):
        return self.evaluate(x)[:2]

    def evaluate(self, x):
        f, g = self.base(x)
        if self.sigma == 0.0:
            return f, g, g
        return f, g + self.rng.normal(0.0, self.sigma, size=np.shape(g)), g


class LorenzProblem(Problem):
    """Lorenz-63 objective over ``(rho, beta)`` with energy-method gradients.

    The gradient is approximate by construction and is also what
    :meth:`exact` reports, since no better one is available.
    """

    n_d = 2

    def __init__(self, cfg: LorenzConfig = LorenzConfig()):
        self.cfg = cfg
        self.name = f"lorenz:{cfg.t_J:g}"
        self.linear_constraints = (np.atleast_2d(np.array(cfg.constraint_c, dtype=float)),
                                   np.atleast_1d(float(cfg.constraint_b)))
        self.start_lower = np.array(cfg.lower, dtype=float)
        self.start_upper = np.array(cfg.upper, dtype=float)

    def exact(self, x):
        rho, beta = np.asarray(x, dtype=float).ravel()
        return lorenz_value_and_gradient(rho, beta, self.cfg)


def make_problem(spec: str, grad_noise: float = 0.0, seed=0, lorenz_cfg: Optional[dict] = None) -> Problem:
    """Build a problem from ``"quad:<n_d>"``, ``"bowl:<n_d>"``, ``"rosen:<n_d>:<a>"`` or ``"lorenz:<t_J>"``."""
    parts = spec.strip().lower().split(":")
    kind = parts[0]
    try:
        if kind in ("quad", "bowl"):
            if len(parts) != 2:
                raise ValueError
            base = AnalyticProblem(kind, int(parts[1]))
        elif kind == "rosen":
            if len(parts) not in (2, 3):
                raise ValueError
            base = AnalyticProblem("rosen", int(parts[1]), float(parts[2]) if len(parts) == 3 else 100.0)
        elif kind == "lorenz":
            if len(parts) > 2:
                raise ValueError
            opts = dict(lorenz_cfg or {})
            if len(parts) == 2:
                opts["t_J"] = float(parts[1])
            base = LorenzProblem(LorenzConfig(**opts))
        else:
            raise ValueError
    except ValueError as exc:
        if str(exc):
            raise
        raise ValueError(f"cannot parse problem {spec!r}") from None
    if grad_noise > 0:
        return NoisyGradient(base, grad_noise, seed)
    return base
