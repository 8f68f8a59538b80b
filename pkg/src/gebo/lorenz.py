"""Lorenz-63 objective with tangent sensitivities stabilized by eigenvalue clipping.

The state equation is written as ``du/dt = rhs(u)``; in residual form
``du/dt + r_x(u) = 0`` one has ``r_x = -rhs`` and ``dr_x/du = -J_rhs``.
Everything is marched with the implicit trapezoidal rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

SIGMA = 10.0
Z_TARGET = 35.0
BETA_WEIGHT = 20.0


class IntegrationError(RuntimeError):
    """Newton iteration of an implicit step did not converge."""


def lorenz_rhs(u, rho: float, beta: float, sigma: float = SIGMA) -> np.ndarray:
    x, y, z = u
    return np.array([sigma * (y - x), x * (rho - z) - y, x * y - beta * z])


def lorenz_jacobian(u, rho: float, beta: float, sigma: float = SIGMA) -> np.ndarray:
    x, y, z = u
    return np.array([
        [-sigma, sigma, 0.0],
        [rho - z, -1.0, -x],
        [y, x, -beta],
    ])


def lorenz_param_sens(u, rho: float, beta: float):
    """Derivatives of ``rhs`` with respect to ``rho`` and ``beta``."""
    x, y, z = u
    return np.array([0.0, x, 0.0]), np.array([0.0, 0.0, -z])


def _fd_jacobian(rhs, u, h=1e-7):
    f0 = rhs(u)
    J = np.empty((f0.size, u.size))
    for j in range(u.size):
        e = np.zeros_like(u)
        e[j] = h * max(1.0, abs(u[j]))
        J[:, j] = (rhs(u + e) - rhs(u - e)) / (2.0 * e[j])
    return J


def trapezoidal_step(rhs, jac, u, dt, f_u=None, tol=1e-12, max_iter=20):
    """One implicit trapezoidal step solved by Newton's method."""
    f_u = rhs(u) if f_u is None else f_u
    base = u + 0.5 * dt * f_u
    # explicit Euler predictor
    v = u + dt * f_u
    eye = np.eye(u.size)
    for it in range(max_iter):
        f_v = rhs(v)
        res = v - base - 0.5 * dt * f_v
        if np.max(np.abs(res)) <= tol * max(1.0, np.max(np.abs(v))):
            return v, f_v
        v = v - np.linalg.solve(eye - 0.5 * dt * jac(v), res)
    f_v = rhs(v)
    res = v - base - 0.5 * dt * f_v
    if np.max(np.abs(res)) <= tol * max(1.0, np.max(np.abs(v))):
        return v, f_v
    raise IntegrationError(
        f"Newton did not converge in {max_iter} iterations: residual {np.max(np.abs(res)):.3e}, "
        f"state {v}, dt {dt}"
    )


def _n_steps(t_end, dt):
    n = int(round(t_end / dt))
    if n < 1 or abs(n * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError(f"t_end={t_end} is not a whole number of steps of {dt}")
    return n


def trapezoidal_integrate(rhs: Callable, u0, dt: float, t_end: float, jac: Optional[Callable] = None,
                          tol: float = 1e-12, max_iter: int = 20):
    """Implicit trapezoidal trajectory.

    Returns ``(t, U)`` with ``U[n]`` the state at ``t[n] = n * dt``.
    ``jac`` defaults to a central-difference Jacobian of ``rhs``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    n = _n_steps(t_end, dt)
    u = np.array(u0, dtype=float)
    jac = jac or (lambda v: _fd_jacobian(rhs, v))
    U = np.empty((n + 1, u.size))
    U[0] = u
    f_u = rhs(u)
    for k in range(n):
        u, f_u = trapezoidal_step(rhs, jac, u, dt, f_u, tol, max_iter)
        U[k + 1] = u
    return np.arange(n + 1) * dt, U


def energy_clip(J) -> np.ndarray:
    """Symmetric correction ``A`` with ``v^T (J + A) v >= 0`` for every ``v``.

    The non-positive eigenvalues of ``J + J^T`` are kept, the positive ones
    zeroed, and ``A = -E Lambda_minus E^T``.
    """
    J = np.asarray(J, dtype=float)
    lam, E = np.linalg.eigh(J + J.T)
    lam_minus = np.minimum(lam, 0.0)
    A = -(E * lam_minus) @ E.T
    return 0.5 * (A + A.T)


@dataclass(frozen=True)
class LorenzConfig:
    sigma: float = SIGMA
    dt: float = 0.01
    t0: float = 20.0
    t_J: float = 10.0
    u0: tuple = (1.0, 1.0, 1.0)
    # linear constraint c . (rho, beta) <= b, a diagonal of the start box
    constraint_c: tuple = (0.2, -1.0)
    constraint_b: float = 3.5
    lower: tuple = (25.0, 1.5)
    upper: tuple = (35.0, 3.5)

    def __post_init__(self):
        if not self.dt > 0 or not self.t_J > 0 or self.t0 < 0:
            raise ValueError("need dt > 0, t_J > 0 and t0 >= 0")


def _window(cfg: LorenzConfig):
    n0 = _n_steps(cfg.t0, cfg.dt) if cfg.t0 > 0 else 0
    n1 = _n_steps(cfg.t0 + cfg.t_J, cfg.dt)
    return n0, n1


def _trajectory(rho, beta, cfg: LorenzConfig, n_end):
    rhs = lambda v: lorenz_rhs(v, rho, beta, cfg.sigma)
    jac = lambda v: lorenz_jacobian(v, rho, beta, cfg.sigma)
    return trapezoidal_integrate(rhs, cfg.u0, cfg.dt, n_end * cfg.dt, jac)[1]


def lorenz_objective(rho: float, beta: float, cfg: LorenzConfig = LorenzConfig()) -> float:
    """Mean squared distance of ``z`` from 35 over the window plus ``20 / beta``."""
    if beta == 0:
        raise ValueError("beta must be nonzero")
    n0, n1 = _window(cfg)
    U = _trajectory(rho, beta, cfg, n1)
    z = U[n0 + 1 : n1 + 1, 2]
    return float(np.mean((z - Z_TARGET) ** 2) + BETA_WEIGHT / beta)


def lorenz_value_and_gradient(rho: float, beta: float, cfg: LorenzConfig = LorenzConfig(), clip: bool = True):
    """Objective and its tangent-based gradient over ``(rho, beta)``.

    Both tangents start from zero at ``t = 0`` and are marched with the
    trapezoidal rule alongside the state.  With ``clip`` the Jacobian is
    stabilized at every step by :func:`energy_clip`.
    """
    if beta == 0:
        raise ValueError("beta must be nonzero")
    n0, n1 = _window(cfg)
    U = _trajectory(rho, beta, cfg, n1)
    dt = cfg.dt
    eye = np.eye(3)
    V = np.zeros((3, 2))

    def op(u):
        Jr = lorenz_jacobian(u, rho, beta, cfg.sigma)
        if clip:
            Jr = Jr - energy_clip(-Jr)
        return Jr, np.column_stack(lorenz_param_sens(u, rho, beta))

    M0, b0 = op(U[0])
    acc = np.zeros(2)
    for k in range(n1):
        M1, b1 = op(U[k + 1])
        V = np.linalg.solve(eye - 0.5 * dt * M1, (eye + 0.5 * dt * M0) @ V + 0.5 * dt * (b0 + b1))
        if k + 1 > n0:
            acc += 2.0 * (U[k + 1, 2] - Z_TARGET) * V[2]
        M0, b0 = M1, b1
    z = U[n0 + 1 : n1 + 1, 2]
    n_t = n1 - n0
    f = float(np.mean((z - Z_TARGET) ** 2) + BETA_WEIGHT / beta)
    grad = acc / n_t
    grad[1] -= BETA_WEIGHT / beta**2
    return f, grad


def lorenz_gradient_energy(rho: float, beta: float, cfg: LorenzConfig = LorenzConfig()) -> np.ndarray:
    return lorenz_value_and_gradient(rho, beta, cfg, clip=True)[1]


def tangent_norm_history(rho: float, beta: float, t_end: float = 30.0, clip: bool = True,
                         v0=(1.0, 0.0, 0.0), cfg: LorenzConfig = LorenzConfig()) -> np.ndarray:
    """``|v(t)|`` of the homogeneous tangent started from ``v0``."""
    n = _n_steps(t_end, cfg.dt)
    U = _trajectory(rho, beta, cfg, n)
    dt = cfg.dt
    eye = np.eye(3)

    def op(u):
        Jr = lorenz_jacobian(u, rho, beta, cfg.sigma)
        return Jr - energy_clip(-Jr) if clip else Jr

    v = np.array(v0, dtype=float)
    out = np.empty(n + 1)
    out[0] = np.linalg.norm(v)
    M0 = op(U[0])
    for k in range(n):
        M1 = op(U[k + 1])
        v = np.linalg.solve(eye - 0.5 * dt * M1, (eye + 0.5 * dt * M0) @ v)
        out[k + 1] = np.linalg.norm(v)
        M0 = M1
    return out
