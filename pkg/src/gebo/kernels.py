"""Stationary kernels and their analytic derivatives.

Every kernel here is written as a function of the squared scaled radius
``s = sum_d (gamma_d * (x_d - y_d))**2``.  Working in ``s`` instead of
``|r|`` keeps all the derivatives needed by the gradient-enhanced
covariance free of ``1/|r|`` factors, so coincident points need no special
casing (the one exception is the third derivative of the Matern form, which
only ever appears multiplied by a power of ``r`` that cancels it).

With ``k1 = dk/ds``, ``k2 = d2k/ds2`` and ``delta = x - y``::

    dk/dx_d        =  2 g_d delta_d k1
    dk/dy_d        = -2 g_d delta_d k1
    d2k/dx_d dy_e  = -4 g_d g_e delta_d delta_e k2 - 2 g_d [d == e] k1

where ``g_d = gamma_d**2``.  All three kernels have ``k1(0) = -1/2``, hence
``k(x, x) = 1`` and a cross-Hessian of ``diag(gamma**2)`` at ``x = y``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

SQRT3 = np.sqrt(3.0)
KERNEL_NAMES = ("gaussian", "matern", "ratquad")

# exp(-t) is flushed to an exact zero past this argument
_EXP_CUTOFF = 745.0


@dataclass(frozen=True)
class KernelKind:
    """Kernel selector.

    ``name`` is one of ``"gaussian"``, ``"matern"`` (the printed
    ``(1 + sqrt(3) r + r^2) exp(-sqrt(3) r)`` form) or ``"ratquad"``.
    ``alpha`` is the rational-quadratic shape parameter; it is ignored by
    the other two kernels.
    """

    name: str = "gaussian"
    alpha: Optional[float] = None

    def __post_init__(self):
        if self.name not in KERNEL_NAMES:
            raise ValueError(f"unknown kernel {self.name!r}, expected one of {KERNEL_NAMES}")
        if self.name == "ratquad":
            if self.alpha is None:
                object.__setattr__(self, "alpha", 1.0)
            if not self.alpha > 0:
                raise ValueError(f"rational quadratic alpha must be positive, got {self.alpha}")

    @classmethod
    def from_name(cls, spec: str) -> "KernelKind":
        """Parse ``"gaussian"``, ``"matern"``, ``"ratquad"`` or ``"ratquad:<alpha>"``."""
        name, _, arg = spec.strip().lower().partition(":")
        if name == "ratquad":
            return cls(name, float(arg) if arg else 1.0)
        if arg:
            raise ValueError(f"kernel {name!r} takes no argument")
        return cls(name)

    @property
    def has_alpha(self) -> bool:
        return self.name == "ratquad"

    def with_alpha(self, alpha: Optional[float]) -> "KernelKind":
        if alpha is None or not self.has_alpha:
            return self
        return KernelKind(self.name, float(alpha))

    def __str__(self):
        if self.has_alpha:
            return f"ratquad:{self.alpha:g}"
        return self.name


def _safe_exp_neg(t):
    t = np.asarray(t, dtype=float)
    with np.errstate(under="ignore"):
        return np.where(t > _EXP_CUTOFF, 0.0, np.exp(-np.minimum(t, _EXP_CUTOFF)))


def profile(kind: KernelKind, s, order: int = 2):
    """Kernel value and its first ``order`` derivatives with respect to ``s``.

    Returns a tuple ``(k, k1, ..., k_order)`` of arrays shaped like ``s``;
    ``order`` may be 0 to 3.
    """
    s = np.asarray(s, dtype=float)
    if kind.name == "gaussian":
        k = _safe_exp_neg(0.5 * s)
        out = (k, -0.5 * k, 0.25 * k, -0.125 * k)
    elif kind.name == "matern":
        r = np.sqrt(s)
        e = _safe_exp_neg(SQRT3 * r)
        k = (1.0 + SQRT3 * r + s) * e
        k1 = -0.5 * (1.0 + SQRT3 * r) * e
        k2 = 0.75 * e
        if order >= 3:
            with np.errstate(divide="ignore", invalid="ignore"):
                k3 = np.where(r > 0.0, -3.0 * SQRT3 * e / (8.0 * np.where(r > 0, r, 1.0)), 0.0)
        else:
            k3 = None
        out = (k, k1, k2, k3)
    else:
        a = kind.alpha
        u = 1.0 + s / (2.0 * a)
        k = u ** (-a)
        out = (
            k,
            -0.5 * k / u,
            (a + 1.0) / (4.0 * a) * k / u**2,
            -(a + 1.0) * (a + 2.0) / (8.0 * a * a) * k / u**3,
        )
    return out[: order + 1]


def alpha_profile(kind: KernelKind, s):
    """Derivatives of ``(k, k1, k2)`` with respect to the rational-quadratic alpha."""
    if not kind.has_alpha:
        raise ValueError("alpha derivatives only exist for the rational quadratic kernel")
    s = np.asarray(s, dtype=float)
    a = kind.alpha
    k, k1, k2 = profile(kind, s, 2)
    u = 1.0 + s / (2.0 * a)
    lnu = np.log1p(s / (2.0 * a))
    w = s / (2.0 * a * a) / u
    ka = k * (-lnu + a * w)
    k1a = k1 * (-lnu + (a + 1.0) * w)
    k2a = k2 * (1.0 / (a + 1.0) - 1.0 / a - lnu + (a + 2.0) * w)
    return ka, k1a, k2a


def _check_pair(kind, x, y, gamma):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    if x.ndim != 1 or x.shape != y.shape or x.shape != gamma.shape:
        raise ValueError(
            f"dimension mismatch: x {x.shape}, y {y.shape}, gamma {gamma.shape}"
        )
    if np.any(~(gamma > 0)):
        raise ValueError("gamma entries must be strictly positive")
    if not isinstance(kind, KernelKind):
        raise TypeError("kind must be a KernelKind")
    return x, y, gamma


def kernel_value(kind: KernelKind, x, y, gamma) -> float:
    """k(x, y) for one pair of points."""
    x, y, gamma = _check_pair(kind, x, y, gamma)
    s = np.sum((gamma * (x - y)) ** 2)
    return float(profile(kind, s, 0)[0])


def kernel_first_derivs(kind: KernelKind, x, y, gamma):
    """Return ``(dk/dx, dk/dy)``; the two are negatives of each other."""
    x, y, gamma = _check_pair(kind, x, y, gamma)
    g2 = gamma**2
    delta = x - y
    s = np.sum(g2 * delta**2)
    _, k1 = profile(kind, s, 1)
    dkdx = 2.0 * g2 * delta * k1
    return dkdx, -dkdx


def kernel_cross_hessian(kind: KernelKind, x, y, gamma) -> np.ndarray:
    """Matrix of mixed second derivatives ``d2k / dx_d dy_e``."""
    x, y, gamma = _check_pair(kind, x, y, gamma)
    g2 = gamma**2
    delta = x - y
    s = np.sum(g2 * delta**2)
    _, k1, k2 = profile(kind, s, 2)
    gd = g2 * delta
    return -4.0 * k2 * np.outer(gd, gd) - 2.0 * k1 * np.diag(g2)
