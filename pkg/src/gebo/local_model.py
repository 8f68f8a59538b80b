"""Data-region selection and the two trust-region bound updates."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class DataRegion:
    """Subset of the evaluation history used to fit the surrogate.

    Attributes
    ----------
    indices : ndarray of int
        Rows of the full history, in history order.
    radius : float
        Largest distance from ``x_best`` allowed into the region.
    """

    indices: np.ndarray
    radius: float

    @property
    def n_data(self) -> int:
        return int(self.indices.size)


def select_data_region(X_all, x_best, n_close: int = 20, n_last: int = 3) -> DataRegion:
    """Closest and most recent evaluation points around ``x_best``.

    Parameters
    ----------
    X_all : (n_x, n_d) array
        Every evaluated point, oldest first.
    x_best : (n_d,) array
        Incumbent; must be one of the rows of ``X_all``.
    n_close, n_last : int
        Minimum number of closest and of most recent points to include.
    """
    X_all = np.atleast_2d(np.asarray(X_all, dtype=float))
    x_best = np.asarray(x_best, dtype=float).ravel()
    n_x = X_all.shape[0]
    if n_x < 1:
        raise ValueError("history is empty")
    if n_close < 1 or n_last < 0:
        raise ValueError("n_close must be positive and n_last nonnegative")
    dist = np.linalg.norm(X_all - x_best, axis=1)
    if n_x <= n_close:
        return DataRegion(np.arange(n_x), float(np.max(dist)))
    l_last = float(np.max(dist[max(n_x - n_last, 0) :])) if n_last > 0 else 0.0
    l_close = float(np.sort(dist)[n_close - 1])
    radius = max(l_last, l_close)
    return DataRegion(np.flatnonzero(dist <= radius), radius)


def circular_tr_value(x, x_best):
    """Squared distance to the incumbent and its gradient."""
    diff = np.asarray(x, dtype=float).ravel() - np.asarray(x_best, dtype=float).ravel()
    return float(diff @ diff), 2.0 * diff


@dataclass(frozen=True)
class TrustRegionConfig:
    rho_inc: float = 2.0
    rho_dec: float = 0.5
    rho_data: float = 0.9
    u_c0: float = 1.0
    u_sigma0: float = 0.2**2
    u_sigma_min: float = 0.05**2
    u_sigma_max: float = 0.4**2
    # n_data below which the sigma bound is off, and from which the circle is capped
    n_sigma_active: int = 10
    n_data_cap: int = 5

    def __post_init__(self):
        if not 0 < self.rho_dec < 1 < self.rho_inc:
            raise ValueError("need 0 < rho_dec < 1 < rho_inc")
        if not self.rho_data > 0 or not self.u_c0 > 0:
            raise ValueError("rho_data and u_c0 must be positive")
        if not 0 < self.u_sigma_min <= self.u_sigma0 < self.u_sigma_max <= 1:
            raise ValueError("need 0 < u_sigma_min <= u_sigma0 < u_sigma_max <= 1")


@dataclass(frozen=True)
class TrustRegionState:
    """Current bounds.  ``u_sigma`` is ``inf`` while the sigma region is off."""

    u_c: float = 1.0
    u_sigma: float = math.inf

    @property
    def sigma_active(self) -> bool:
        return math.isfinite(self.u_sigma)


def _progress_branch(J_i, J_prev, J_best_prev):
    if J_i < J_best_prev:
        return "increase"
    if J_prev is not None and J_prev <= J_best_prev:
        return "keep"
    return "decrease"


def update_circular_bound(u_prev: float, J_i: float, J_prev, J_best_prev: float, g_prev: float,
                          n_data: int, radius: float, cfg: TrustRegionConfig = TrustRegionConfig()) -> float:
    """New bound on the squared step length.

    ``J_i`` is the newest merit value, ``J_prev`` the one before it (``None``
    if there is none), ``J_best_prev`` the best value before ``J_i`` and
    ``g_prev`` the squared step length of the newest point.
    """
    if n_data <= 1:
        u = cfg.u_c0
    else:
        branch = _progress_branch(J_i, J_prev, J_best_prev)
        if branch == "increase":
            u = max(cfg.rho_inc * g_prev, u_prev)
        elif branch == "keep":
            u = u_prev
        else:
            u = cfg.rho_dec * u_prev
    if n_data >= cfg.n_data_cap and radius > 0:
        u = min(u, cfg.rho_data * radius)
    return float(u)


def update_sigma_bound(u_prev: float, J_i: float, J_prev, J_best_prev: float, g_prev: float,
                       n_data: int, cfg: TrustRegionConfig = TrustRegionConfig()) -> float:
    """New bound on the posterior variance ratio, or ``inf`` when inactive.

    The first active iteration (``n_data`` reaching the activation size, or
    an inactive previous bound) starts from ``u_sigma0``.
    """
    if n_data < cfg.n_sigma_active:
        return math.inf
    if n_data == cfg.n_sigma_active or not math.isfinite(u_prev):
        return float(cfg.u_sigma0)
    branch = _progress_branch(J_i, J_prev, J_best_prev)
    if branch == "increase":
        u = max(min(cfg.rho_inc * g_prev, cfg.u_sigma_max), u_prev)
    elif branch == "keep":
        u = u_prev
    else:
        u = max(cfg.rho_dec * u_prev, cfg.u_sigma_min)
    return float(u)


def update_trust_region(state: TrustRegionState, J_i, J_prev, J_best_prev, g_c_prev, g_sigma_prev,
                        region: DataRegion, cfg: TrustRegionConfig = TrustRegionConfig()) -> TrustRegionState:
    """Apply both bound updates."""
    u_c = update_circular_bound(state.u_c, J_i, J_prev, J_best_prev, g_c_prev, region.n_data, region.radius, cfg)
    u_s = update_sigma_bound(state.u_sigma, J_i, J_prev, J_best_prev, g_sigma_prev, region.n_data, cfg)
    return replace(state, u_c=u_c, u_sigma=u_s)
