"""Gradient-enhanced Gaussian process with a condition-bounded covariance.

Observations are stored as one flat vector in block order: all function
values first, then the derivative along x_1 at every point, then along x_2,
and so on.  Covariance matrices follow the same layout, so entry
``(b * n + i, c * n + j)`` couples block ``b`` at point ``i`` with block
``c`` at point ``j`` (block 0 holds function values).

The covariance actually factorized is the diagonally preconditioned one,
``Kdot + eta I`` with ``Kdot = P^-1 B P^-1`` and ``P = sqrt(diag(B))``,
where ``B`` is the covariance divided by the signal variance.  The nugget
``eta`` is sized from the largest absolute row sum of ``Kdot`` so that the
condition number of ``Kdot + eta I`` can never exceed ``cond_max``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

from .kernels import KernelKind, profile

DEFAULT_COND_MAX = 1e10


class FactorizationError(RuntimeError):
    """Cholesky of the preconditioned covariance failed.

    The nugget makes this impossible in exact arithmetic, so hitting it means
    the inputs were invalid (non-finite hyperparameters or data).
    """


@dataclass(frozen=True)
class DataSet:
    """Evaluation points and their stacked function/gradient observations."""

    X: np.ndarray
    fgrad: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        fgrad = np.asarray(self.fgrad, dtype=float).ravel()
        n, d = X.shape
        if n < 1:
            raise ValueError("a data set needs at least one point")
        if fgrad.size != n * (d + 1):
            raise ValueError(f"expected {n * (d + 1)} observations for {n} points in {d}-d, got {fgrad.size}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "fgrad", fgrad)

    @classmethod
    def from_evaluations(cls, X, f, grads) -> "DataSet":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        f = np.asarray(f, dtype=float).ravel()
        grads = np.asarray(grads, dtype=float).reshape(X.shape)
        return cls(X, np.concatenate([f, grads.T.ravel()]))

    @property
    def n_x(self) -> int:
        return self.X.shape[0]

    @property
    def n_d(self) -> int:
        return self.X.shape[1]

    @property
    def f(self) -> np.ndarray:
        return self.fgrad[: self.n_x]

    @property
    def grads(self) -> np.ndarray:
        return self.fgrad[self.n_x :].reshape(self.n_d, self.n_x).T

    def subset(self, idx) -> "DataSet":
        idx = np.asarray(idx, dtype=int)
        return DataSet.from_evaluations(self.X[idx], self.f[idx], self.grads[idx])


@dataclass(frozen=True)
class Hyperparameters:
    """GP hyperparameters.

    ``sigma_k`` and ``beta`` may be left as ``None``; :func:`fit_surrogate`
    then fills them in with their likelihood-maximizing closed forms (the
    closed form for ``sigma_k`` exists only without noise).
    """

    gamma: np.ndarray
    sigma_k: Optional[float] = None
    beta: Optional[float] = None
    sigma_f: float = 0.0
    sigma_grad: float = 0.0
    alpha: Optional[float] = None

    def __post_init__(self):
        gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        if np.any(~(gamma > 0)) or not np.all(np.isfinite(gamma)):
            raise ValueError(f"gamma must be finite and positive, got {gamma}")
        if self.sigma_k is not None and not self.sigma_k >= 0:
            raise ValueError("sigma_k must be nonnegative")
        if not (self.sigma_f >= 0 and self.sigma_grad >= 0):
            raise ValueError("noise estimates must be nonnegative")
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError("alpha must be positive")
        object.__setattr__(self, "gamma", gamma)

    @property
    def noisy(self) -> bool:
        return self.sigma_f > 0 or self.sigma_grad > 0

    def replace(self, **changes) -> "Hyperparameters":
        return dataclasses.replace(self, **changes)


def pairwise_differences(X: np.ndarray) -> np.ndarray:
    """``D[d, i, j] = X[i, d] - X[j, d]``."""
    X = np.asarray(X, dtype=float)
    return X.T[:, :, None] - X.T[:, None, :]


def _assemble(D, g2, k, k1, k2):
    """Block covariance from differences ``D`` (d, n, m) and kernel profiles (n, m)."""
    d, n, m = D.shape
    G = np.empty((d + 1, d + 1, n, m))
    gD = g2[:, None, None] * D
    G[0, 0] = k
    G[0, 1:] = -2.0 * gD * k1
    G[1:, 0] = 2.0 * gD * k1
    G[1:, 1:] = -4.0 * gD[:, None] * gD[None, :] * k2
    idx = np.arange(d)
    G[idx + 1, idx + 1] -= 2.0 * g2[:, None, None] * k1
    return G.transpose(0, 2, 1, 3).reshape((d + 1) * n, (d + 1) * m)


def build_grad_kernel_matrix(X, kind: KernelKind, gamma) -> np.ndarray:
    """Gradient-enhanced kernel matrix (function/derivative blocks, direct method)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    if X.shape[1] != gamma.size:
        raise ValueError(f"points are {X.shape[1]}-d but gamma has {gamma.size} entries")
    if X.shape[0] < 1:
        raise ValueError("need at least one point")
    g2 = gamma**2
    D = pairwise_differences(X)
    s = np.einsum("d,dij->ij", g2, D**2)
    k, k1, k2 = profile(kind, s, 2)
    Kg = _assemble(D, g2, k, k1, k2)
    # exact symmetry regardless of rounding in the off-diagonal blocks
    return 0.5 * (Kg + Kg.T)


def precondition_and_nugget(B: np.ndarray, cond_max: float = DEFAULT_COND_MAX):
    """Diagonal preconditioner and condition-bounding nugget.

    Parameters
    ----------
    B : ndarray
        Covariance without nugget, divided by the signal variance.
    cond_max : float
        Upper bound on the condition number of ``Kdot + eta I``.

    Returns
    -------
    P_diag, Kdot, eta
    """
    if not cond_max > 1:
        raise ValueError("cond_max must exceed 1")
    diag = np.diag(B)
    if np.any(~(diag > 0)):
        raise ValueError("covariance diagonal must be positive; hyperparameters are invalid")
    P = np.sqrt(diag)
    Kdot = B / np.outer(P, P)
    np.fill_diagonal(Kdot, 1.0)
    eta = np.max(np.sum(np.abs(Kdot), axis=1)) * nugget_margin(B.shape[0], cond_max) / (cond_max - 1.0)
    return P, Kdot, eta


def nugget_margin(size: int, cond_max: float) -> float:
    """Relative enlargement of the nugget that absorbs rounding.

    The row-sum bound is attained exactly when ``Kdot`` is singular (repeated
    points), and a computed smallest eigenvalue then carries an error of
    about ``eps * |Kdot|``.  Growing the nugget by ``size * eps * cond_max``
    keeps the computed condition number under ``cond_max``.
    """
    return 1.0 + size * np.finfo(float).eps * cond_max


class CovFactor:
    """Cholesky factor of ``C = B + eta diag(B) = P (Kdot + eta I) P``."""

    def __init__(self, B: np.ndarray, cond_max: float = DEFAULT_COND_MAX):
        self.P, self.Kdot, self.eta = precondition_and_nugget(B, cond_max)
        A = self.Kdot.copy()
        A[np.diag_indices_from(A)] += self.eta
        try:
            self.L = linalg.cholesky(A, lower=True, check_finite=True)
        except (linalg.LinAlgError, ValueError) as exc:
            finite = bool(np.all(np.isfinite(A)))
            raise FactorizationError(
                f"Cholesky failed on preconditioned covariance: size={A.shape[0]}, "
                f"eta={self.eta:.3e}, finite={finite}, "
                f"diag range=({np.min(np.diag(B)):.3e}, {np.max(np.diag(B)):.3e})"
            ) from exc
        self.size = A.shape[0]

    def solve(self, v: np.ndarray) -> np.ndarray:
        """``C^-1 v``; ``v`` may be a vector or a matrix of columns."""
        Pv = v / (self.P if v.ndim == 1 else self.P[:, None])
        y = linalg.cho_solve((self.L, True), Pv, check_finite=False)
        return y / (self.P if v.ndim == 1 else self.P[:, None])

    def half_solve(self, v: np.ndarray) -> np.ndarray:
        """``Ldot^-1 P^-1 v``, so that ``|half_solve(v)|^2 = v^T C^-1 v``."""
        Pv = v / (self.P if v.ndim == 1 else self.P[:, None])
        return linalg.solve_triangular(self.L, Pv, lower=True, check_finite=False)

    def inverse(self) -> np.ndarray:
        Ainv, info = lapack.dpotri(self.L, lower=1)
        if info != 0:
            raise FactorizationError(f"potri failed with info={info}")
        # potri fills only the lower triangle
        Ainv = np.tril(Ainv) + np.tril(Ainv, -1).T
        return Ainv / np.outer(self.P, self.P)

    def logdet(self) -> float:
        return 2.0 * np.sum(np.log(self.P)) + 2.0 * np.sum(np.log(np.diag(self.L)))

    def preconditioned(self) -> np.ndarray:
        A = self.Kdot.copy()
        A[np.diag_indices_from(A)] += self.eta
        return A


def noise_diagonal(n_x: int, n_d: int, sigma_f: float, sigma_grad: float) -> np.ndarray:
    """Diagonal of the observation-noise covariance in block order."""
    return np.concatenate([np.full(n_x, sigma_f**2), np.full(n_x * n_d, sigma_grad**2)])


def one_mod(n_x: int, n_d: int) -> np.ndarray:
    out = np.zeros(n_x * (n_d + 1))
    out[:n_x] = 1.0
    return out


def beta_closed_form(factor: CovFactor, fgrad: np.ndarray, n_x: int) -> float:
    """Constant mean that maximizes the marginal likelihood."""
    one = np.zeros_like(fgrad)
    one[:n_x] = 1.0
    c1 = factor.solve(one)
    den = one @ c1
    if not den > 0:
        raise FactorizationError(f"non-positive 1^T C^-1 1 = {den}")
    return float(c1 @ fgrad / den)


def sigk2_closed_form(factor: CovFactor, fgrad: np.ndarray, beta: float, n_x: int) -> float:
    """Noise-free signal variance that maximizes the marginal likelihood."""
    r = fgrad.copy()
    r[:n_x] -= beta
    val = float(r @ factor.solve(r)) / r.size
    if val < 0:
        raise FactorizationError(f"negative quadratic form {val}")
    return val


class FittedSurrogate:
    """Immutable fitted gradient-enhanced GP.

    Build with :func:`fit_surrogate`.  ``hp`` holds the resolved
    hyperparameters (``beta`` and ``sigma_k`` are always set).
    """

    def __init__(self, data: DataSet, hp: Hyperparameters, kind: KernelKind, factor: CovFactor, cond_max: float):
        self.data = data
        self.hp = hp
        self.kind = kind.with_alpha(hp.alpha)
        self.factor = factor
        self.cond_max = cond_max
        self._g2 = hp.gamma**2
        r = data.fgrad.copy()
        r[: data.n_x] -= hp.beta
        # sigma_K^2 Sigma_g^-1 (f - m) = C^-1 (f - m)
        self._w = factor.solve(r)
        self._w.setflags(write=False)

    @property
    def P_diag(self) -> np.ndarray:
        return self.factor.P

    @property
    def eta(self) -> float:
        return self.factor.eta

    @property
    def L(self) -> np.ndarray:
        return self.factor.L

    @property
    def beta(self) -> float:
        return self.hp.beta

    @property
    def sigma_k2(self) -> float:
        return self.hp.sigma_k**2

    def _cross(self, x, grad: bool):
        x = np.asarray(x, dtype=float).ravel()
        X = self.data.X
        if x.size != X.shape[1]:
            raise ValueError(f"query point is {x.size}-d, surrogate is {X.shape[1]}-d")
        delta = (X - x).T  # (d, n): x_i - x'
        g2 = self._g2
        s = g2 @ delta**2
        k, k1, k2 = profile(self.kind, s, 2)
        gd = g2[:, None] * delta
        kvec = np.concatenate([k, (2.0 * gd * k1).ravel()])
        if not grad:
            return kvec, None
        D = delta[:, :, None]
        J = _assemble(D, g2, k[:, None], k1[:, None], k2[:, None])
        # columns 1.. are d/dy_e of each entry, i.e. the derivative wrt x'
        return kvec, J[:, 1:]

    def mean(self, x) -> float:
        kvec, _ = self._cross(x, False)
        return float(self.hp.beta + kvec @ self._w)

    def mean_grad(self, x) -> np.ndarray:
        _, dk = self._cross(x, True)
        return dk.T @ self._w

    def variance_ratio(self, x) -> float:
        """Posterior variance over signal variance, always in [0, 1]."""
        kvec, _ = self._cross(x, False)
        v = self.factor.half_solve(kvec)
        return _clamp_ratio(1.0 - v @ v)

    def variance(self, x) -> float:
        return self.sigma_k2 * self.variance_ratio(x)

    def predict(self, x, grad: bool = True):
        """Mean, variance ratio and (optionally) their gradients at one point.

        Returns ``(mu, ratio)`` or ``(mu, dmu, ratio, dratio)``.
        """
        kvec, dk = self._cross(x, grad)
        mu = float(self.hp.beta + kvec @ self._w)
        ck = self.factor.solve(kvec)
        ratio = _clamp_ratio(1.0 - kvec @ ck)
        if not grad:
            return mu, ratio
        return mu, dk.T @ self._w, ratio, -2.0 * (dk.T @ ck)

    def mean_at_data(self) -> np.ndarray:
        """Posterior mean at every training point."""
        n, d = self.data.n_x, self.data.n_d
        Kg = build_grad_kernel_matrix(self.data.X, self.kind, self.hp.gamma)
        return self.hp.beta + Kg[:n] @ self._w


def _clamp_ratio(ratio: float) -> float:
    if ratio < -1e-10 or ratio > 1.0 + 1e-10:
        raise FactorizationError(f"variance ratio {ratio} outside [0, 1]")
    return float(min(max(ratio, 0.0), 1.0))


def scaled_covariance(data: DataSet, hp: Hyperparameters, kind: KernelKind) -> np.ndarray:
    """Covariance without nugget divided by the signal variance."""
    kind = kind.with_alpha(hp.alpha)
    B = build_grad_kernel_matrix(data.X, kind, hp.gamma)
    if hp.noisy:
        if hp.sigma_k is None or hp.sigma_k == 0:
            raise ValueError("noisy hyperparameters need an explicit positive sigma_k")
        B[np.diag_indices_from(B)] += noise_diagonal(data.n_x, data.n_d, hp.sigma_f, hp.sigma_grad) / hp.sigma_k**2
    return B


def fit_surrogate(data: DataSet, hp: Hyperparameters, kind: KernelKind = KernelKind(),
                  cond_max: float = DEFAULT_COND_MAX) -> FittedSurrogate:
    """Factorize the preconditioned covariance and resolve beta / sigma_k."""
    if hp.gamma.size != data.n_d:
        raise ValueError(f"gamma has {hp.gamma.size} entries for {data.n_d}-d data")
    B = scaled_covariance(data, hp, kind)
    factor = CovFactor(B, cond_max)
    beta = hp.beta if hp.beta is not None else beta_closed_form(factor, data.fgrad, data.n_x)
    sigma_k = hp.sigma_k
    if sigma_k is None:
        sigma_k = np.sqrt(sigk2_closed_form(factor, data.fgrad, beta, data.n_x))
    return FittedSurrogate(data, hp.replace(beta=float(beta), sigma_k=float(sigma_k)), kind, factor, cond_max)
