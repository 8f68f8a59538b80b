"""Acquisition functions and their trust-region-constrained minimization."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import optimize
from scipy.stats import norm

from .gp import FittedSurrogate
from .local_model import TrustRegionState
from .sampling import latin_hypercube

# below this sigma / sigma_K the expected improvement uses its zero-variance limit
SIGMA_FLOOR = 1e-12


@dataclass(frozen=True)
class AcquisitionKind:
    """``"ei"`` (negated expected improvement) or ``"uc"`` with weight ``omega``."""

    name: str = "ei"
    omega: float = 0.0

    def __post_init__(self):
        if self.name not in ("ei", "uc"):
            raise ValueError(f"unknown acquisition {self.name!r}")
        if not self.omega >= 0:
            raise ValueError("omega must be nonnegative")

    @classmethod
    def from_name(cls, spec: str) -> "AcquisitionKind":
        """Parse ``"ei"``, ``"uc"`` or ``"uc:<omega>"``."""
        name, _, arg = spec.strip().lower().partition(":")
        if name == "uc":
            return cls("uc", float(arg) if arg else 0.0)
        if name == "ei" and not arg:
            return cls("ei")
        raise ValueError(f"cannot parse acquisition {spec!r}")

    def __str__(self):
        return "ei" if self.name == "ei" else f"uc:{self.omega:g}"


def _scaled_acq(kind, mu, dmu, ratio, dratio, f_best, sigma_k):
    """Acquisition divided by ``sigma_k`` (and its gradient)."""
    root = math.sqrt(ratio)
    dmu = dmu / sigma_k
    dsig = dratio / (2.0 * root) if root > 0 else np.zeros_like(dratio)
    if kind.name == "uc":
        return mu / sigma_k - kind.omega * root, dmu - kind.omega * dsig
    delta = (f_best - mu) / sigma_k
    if root < SIGMA_FLOOR:
        if delta > 0:
            return -delta, dmu
        return 0.0, np.zeros_like(dmu)
    z = delta / root
    Phi = norm.cdf(z)
    phi = norm.pdf(z)
    return -(delta * Phi + root * phi), Phi * dmu - phi * dsig


def acq_value_grad(kind: AcquisitionKind, s: FittedSurrogate, x, f_best: Optional[float] = None):
    """Acquisition value and gradient at ``x``.

    Upper confidence is ``mu - omega * sigma``.  Expected improvement is
    negated so that smaller is better, and needs ``f_best``.
    """
    if kind.name == "ei" and f_best is None:
        raise ValueError("expected improvement needs f_best")
    mu, dmu, ratio, dratio = s.predict(x)
    sk = math.sqrt(s.sigma_k2)
    if sk == 0.0:
        # degenerate fit: the posterior is its mean
        if kind.name == "uc":
            return mu, dmu
        return (-(f_best - mu), dmu) if mu < f_best else (0.0, np.zeros_like(dmu))
    q, dq = _scaled_acq(kind, mu, dmu, ratio, dratio, 0.0 if f_best is None else f_best, sk)
    return q * sk, dq * sk


@dataclass
class AcqResult:
    x: np.ndarray
    q: float
    fallback: bool
    n_candidates: int


@dataclass(frozen=True)
class AcqSolverConfig:
    n_lhs: int = 5
    n_best: int = 5
    max_iter: int = 200
    ftol: float = 1e-12
    # feasibility tolerances for the variance and linear constraints
    sigma_tol: float = 1e-6
    lin_tol: float = 1e-8
    # candidates this close (max-norm) to a data point are discarded
    dup_tol: float = 0.0


def minimize_acquisition(s: FittedSurrogate, kind: AcquisitionKind, tr: TrustRegionState, x_best,
                         X_region, J_region, f_best: Optional[float], rng,
                         linear_constraints=None, cfg: AcqSolverConfig = AcqSolverConfig()) -> AcqResult:
    """Multi-start local minimization of the acquisition inside both trust regions.

    Parameters
    ----------
    s : FittedSurrogate
    kind : AcquisitionKind
    tr : TrustRegionState
        ``u_c`` bounds the squared distance to ``x_best``; ``u_sigma`` (when
        finite) bounds the posterior variance ratio.
    x_best : array
    X_region, J_region : arrays
        Data-region points and merit values; the ``n_best`` lowest seed
        local solves.
    f_best : float or None
        Reference value for expected improvement.
    rng : numpy Generator
    linear_constraints : (A, b) or None
        Extra constraints ``A @ x <= b``.

    Notes
    -----
    Points are searched as ``x = x_best + sqrt(u_c) * y`` with ``|y| <= 1`` and
    the acquisition scaled by ``sigma_K``, so the local solver sees
    order-one quantities whatever the current step length or objective
    scale.
    """
    x_best = np.asarray(x_best, dtype=float).ravel()
    d = x_best.size
    radius = math.sqrt(tr.u_c)
    sk = math.sqrt(s.sigma_k2)
    scale = sk if sk > 0 else 1.0
    fb = 0.0 if f_best is None else f_best
    u_sig = tr.u_sigma if tr.sigma_active else None
    if linear_constraints is not None:
        A, b = (np.atleast_2d(np.asarray(linear_constraints[0], dtype=float)),
                np.atleast_1d(np.asarray(linear_constraints[1], dtype=float)))
    else:
        A = b = None

    cache = {}

    def evaluate(y):
        key = y.tobytes()
        if key not in cache:
            x = x_best + radius * y
            mu, dmu, ratio, dratio = s.predict(x)
            if sk > 0:
                q, dq = _scaled_acq(kind, mu, dmu, ratio, dratio, fb, sk)
            else:
                q, dq = acq_value_grad(kind, s, x, fb)
            cache[key] = (q, dq * radius, ratio, dratio * radius)
        return cache[key]

    def fun(y):
        q, dq, _, _ = evaluate(y)
        return q, dq

    cons = [{"type": "ineq", "fun": lambda y: 1.0 - y @ y, "jac": lambda y: -2.0 * y}]
    if u_sig is not None:
        cons.append({"type": "ineq", "fun": lambda y: np.array([u_sig - evaluate(y)[2]]),
                     "jac": lambda y: -evaluate(y)[3][None, :]})
    if A is not None:
        cons.append({"type": "ineq", "fun": lambda y: b - A @ (x_best + radius * y),
                     "jac": lambda y: -radius * A})

    def project(y):
        n = np.linalg.norm(y)
        return y / n if n > 1.0 else y

    def feasible(y):
        if y @ y > 1.0 + 1e-12:
            return False
        if u_sig is not None and evaluate(y)[2] > u_sig + cfg.sigma_tol:
            return False
        if A is not None and np.any(A @ (x_best + radius * y) - b > cfg.lin_tol):
            return False
        return True

    starts = [latin_hypercube(cfg.n_lhs, -np.ones(d), np.ones(d), rng)] if cfg.n_lhs > 0 else []
    X_region = np.atleast_2d(np.asarray(X_region, dtype=float))
    J_region = np.asarray(J_region, dtype=float).ravel()
    if cfg.n_best > 0 and J_region.size:
        best = np.argsort(J_region, kind="stable")[: cfg.n_best]
        starts.append((X_region[best] - x_best) / radius)
    starts = np.vstack(starts) if starts else np.zeros((1, d))

    # a repeat of an evaluated point carries no new information
    Y_data = (X_region - x_best) / radius
    dup_tol = cfg.dup_tol / radius

    def duplicate(y):
        return bool(np.any(np.max(np.abs(Y_data - y), axis=1) <= dup_tol))

    sols, spare = [], []
    for y0 in starts:
        spare.append(project(np.array(y0)))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = optimize.minimize(fun, y0, jac=True, method="SLSQP", constraints=cons,
                                    options={"maxiter": cfg.max_iter, "ftol": cfg.ftol})
        if np.all(np.isfinite(res.x)):
            sols.append(project(np.asarray(res.x, dtype=float)))

    best_y, best_q = None, math.inf
    for y in sols:
        if feasible(y) and not duplicate(y):
            q = evaluate(y)[0]
            if q < best_q:
                best_y, best_q = y, q
    n_cand = len(sols)
    if best_y is not None:
        return AcqResult(x_best + radius * best_y, best_q * scale, False, n_cand)

    # nothing usable: back off toward x_best from the least violating new point
    def violation(y):
        v = max(y @ y - 1.0, 0.0)
        if u_sig is not None:
            v += max(evaluate(y)[2] - u_sig, 0.0)
        if A is not None:
            v += float(np.sum(np.maximum(A @ (x_best + radius * y) - b, 0.0)))
        return v

    pool = [y for y in sols + spare if not duplicate(y)] or sols + spare
    y = min(pool, key=lambda y: (violation(y), evaluate(y)[0]))
    for _ in range(60):
        if feasible(y):
            break
        y = 0.5 * y
    return AcqResult(x_best + radius * y, evaluate(y)[0] * scale, True, n_cand)
