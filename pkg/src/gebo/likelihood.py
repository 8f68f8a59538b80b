"""Marginal log-likelihood, its analytic gradient, and hyperparameter search.

Hyperparameters are optimized as natural logs.  The active set depends on
the mode:

* noise-free: ``ln gamma_d`` (plus ``ln alpha`` for the rational quadratic
  kernel); ``beta`` and ``sigma_K`` come from their closed forms and the
  reduced likelihood ``-N/2 ln sigma_K^2 - 1/2 ln det(Kg + eta W)`` is used.
* noisy: additionally ``ln sigma_K``, ``ln sigma_grad`` and optionally
  ``ln sigma_f``; ``beta`` is still closed-form.

Gradients are exact for the nugget-regularized matrix, including the
dependence of the nugget on the hyperparameters through the row sums of
the preconditioned matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from .gp import (
    DEFAULT_COND_MAX,
    CovFactor,
    DataSet,
    FactorizationError,
    Hyperparameters,
    _assemble,
    beta_closed_form,
    fit_surrogate,
    noise_diagonal,
    nugget_margin,
    pairwise_differences,
)
from .kernels import KernelKind, alpha_profile, profile
from .sampling import latin_hypercube

LN10 = math.log(10.0)


@dataclass
class HpSearchConfig:
    """Settings of the seeded hyperparameter search."""

    n_lhs: int = 50
    n_med: int = 5
    n_log: float = 3.0
    gamma_init: float = 1e-2
    sigma_f_init: float = 1e-5
    sigma_grad_init: float = 1e-5
    sigma_k_init: float = 1.0
    alpha_init: float = 1.0
    noisy_mode: bool = False
    # also estimate the function-value noise (objective assumed exact otherwise)
    noisy_f: bool = False
    # run a local solve from every sample instead of only the best one
    multistart: bool = False
    # screen the previous selection too, clipped into the current box
    warm_start: bool = True
    max_iter: int = 100
    gtol: float = 1e-6

    def __post_init__(self):
        if self.n_lhs < 1:
            raise ValueError("n_lhs must be at least 1")
        if not self.n_log > 0:
            raise ValueError("n_log must be positive")
        if self.n_med < 1:
            raise ValueError("n_med must be at least 1")


@dataclass(frozen=True)
class HpLayout:
    """Which hyperparameters are free and where they sit in the log vector."""

    n_d: int
    has_alpha: bool = False
    noisy: bool = False
    noisy_f: bool = False

    @property
    def names(self) -> list:
        out = [f"gamma_{d}" for d in range(self.n_d)]
        if self.has_alpha:
            out.append("alpha")
        if self.noisy:
            out.append("sigma_k")
            if self.noisy_f:
                out.append("sigma_f")
            out.append("sigma_grad")
        return out

    @property
    def size(self) -> int:
        return len(self.names)

    def initial(self, cfg: HpSearchConfig) -> np.ndarray:
        vals = [cfg.gamma_init] * self.n_d
        if self.has_alpha:
            vals.append(cfg.alpha_init)
        if self.noisy:
            vals.append(cfg.sigma_k_init)
            if self.noisy_f:
                vals.append(cfg.sigma_f_init)
            vals.append(cfg.sigma_grad_init)
        return np.array(vals, dtype=float)

    def pack(self, hp: Hyperparameters) -> np.ndarray:
        """Positive values of the active hyperparameters."""
        vals = list(hp.gamma)
        if self.has_alpha:
            vals.append(hp.alpha)
        if self.noisy:
            vals.append(hp.sigma_k)
            if self.noisy_f:
                vals.append(hp.sigma_f)
            vals.append(hp.sigma_grad)
        return np.array(vals, dtype=float)

    def unpack(self, theta) -> Hyperparameters:
        """Hyperparameters from a log vector (beta, and sigma_k when noise-free, left unresolved)."""
        v = np.exp(np.asarray(theta, dtype=float))
        d = self.n_d
        pos = d
        alpha = None
        if self.has_alpha:
            alpha = float(v[pos])
            pos += 1
        sigma_k = sigma_f = sigma_grad = None
        if self.noisy:
            sigma_k = float(v[pos])
            pos += 1
            if self.noisy_f:
                sigma_f = float(v[pos])
                pos += 1
            sigma_grad = float(v[pos])
        return Hyperparameters(
            gamma=v[:d].copy(),
            sigma_k=sigma_k,
            sigma_f=sigma_f or 0.0,
            sigma_grad=sigma_grad or 0.0,
            alpha=alpha,
        )


def layout_for(n_d: int, kind: KernelKind, cfg: HpSearchConfig) -> HpLayout:
    return HpLayout(n_d, kind.has_alpha, cfg.noisy_mode, cfg.noisy_mode and cfg.noisy_f)


# --------------------------------------------------------------------------
# derivative pieces of the gradient-enhanced kernel matrix


class _KgParts:
    def __init__(self, X, kind, gamma, order):
        self.kind = kind
        self.g2 = np.asarray(gamma, dtype=float) ** 2
        self.D = pairwise_differences(X)
        self.D2 = self.D**2
        self.s = np.einsum("d,dij->ij", self.g2, self.D2)
        prof = profile(kind, self.s, order)
        self.k, self.k1, self.k2 = prof[:3]
        self.k3 = prof[3] if order >= 3 else None
        self.n_x = X.shape[0]
        self.n_d = X.shape[1]

    def matrix(self):
        Kg = _assemble(self.D, self.g2, self.k, self.k1, self.k2)
        return 0.5 * (Kg + Kg.T)


def dkg_dlngamma(parts: _KgParts, m: int, rows=None) -> np.ndarray:
    """Derivative of the kernel matrix (or of some of its point-rows) wrt ``ln gamma_m``.

    ``rows`` selects point indices ``i`` so the result has shape
    ``((d + 1) * len(rows), (d + 1) * n)``; used for single-row queries and
    as a brute-force reference for the traced form.
    """
    D = parts.D if rows is None else parts.D[:, rows, :]
    sl = slice(None) if rows is None else rows
    k1, k2, k3 = parts.k1[sl], parts.k2[sl], parts.k3[sl]
    g2 = parts.g2
    ds = 2.0 * g2[m] * D[m] ** 2
    out = _assemble(D, g2, k1 * ds, k2 * ds, k3 * ds)
    # explicit dependence on g2_m (d g2_m / d ln gamma_m = 2 g2_m)
    d, n, mm = D.shape
    G = np.zeros((d + 1, d + 1, n, mm))
    c = 2.0 * g2[m]
    G[0, 1 + m] = -2.0 * D[m] * k1 * c
    G[1 + m, 0] = 2.0 * D[m] * k1 * c
    G[1 + m, 1:] += -4.0 * D[m][None] * (g2[:, None, None] * D) * k2 * c
    G[1:, 1 + m] += -4.0 * (g2[:, None, None] * D) * D[m][None] * k2 * c
    G[1 + m, 1 + m] += -2.0 * k1 * c
    return out + G.transpose(0, 2, 1, 3).reshape((d + 1) * n, (d + 1) * mm)


def dkg_dalpha(parts: _KgParts, rows=None) -> np.ndarray:
    """Derivative of the kernel matrix wrt the rational-quadratic alpha."""
    D = parts.D if rows is None else parts.D[:, rows, :]
    s = parts.s if rows is None else parts.s[rows]
    ka, k1a, k2a = alpha_profile(parts.kind, s)
    return _assemble(D, parts.g2, ka, k1a, k2a)


def _trace_lngamma(M4, parts: _KgParts) -> np.ndarray:
    """``sum(M * dKg/d ln gamma_m)`` for every m, without forming dKg."""
    g2, D, D2 = parts.g2, parts.D, parts.D2
    k1, k2, k3 = parts.k1, parts.k2, parts.k3
    d = parts.n_d
    idx = np.arange(d)
    M00 = M4[0, 0]
    M0e = M4[0, 1:]
    Mde = M4[1:, 1:]
    T0 = np.einsum("e,eij,eij->ij", g2, M0e, D)
    Q = np.einsum("meij,e,eij->mij", Mde, g2, D)
    U = np.einsum("d,dij,dij->ij", g2, D, Q)
    Mdd = Mde[idx, idx]
    Z = np.einsum("d,dij->ij", g2, Mdd)
    t = (
        2.0 * np.einsum("ij,mij->m", M00 * k1, D2)
        - 8.0 * np.einsum("mij,mij->m", M0e * k1, D)
        - 8.0 * np.einsum("ij,mij->m", T0 * k2, D2)
        - 16.0 * np.einsum("mij,mij->m", D * k2, Q)
        - 8.0 * np.einsum("ij,mij->m", U * k3, D2)
        - 4.0 * np.einsum("mij,ij->m", Mdd, k1)
        - 4.0 * np.einsum("ij,mij->m", Z * k2, D2)
    )
    return g2 * t


def _trace_alpha(M4, parts: _KgParts) -> float:
    ka, k1a, k2a = alpha_profile(parts.kind, parts.s)
    g2, D = parts.g2, parts.D
    d = parts.n_d
    idx = np.arange(d)
    T0 = np.einsum("e,eij,eij->ij", g2, M4[0, 1:], D)
    Q = np.einsum("meij,e,eij->mij", M4[1:, 1:], g2, D)
    U = np.einsum("d,dij,dij->ij", g2, D, Q)
    Z = np.einsum("d,dij->ij", g2, M4[1:, 1:][idx, idx])
    return float(np.sum(M4[0, 0] * ka - 4.0 * T0 * k1a - 4.0 * U * k2a - 2.0 * Z * k1a))


# --------------------------------------------------------------------------
# likelihood


def _one_mod_residual(fgrad, n_x, beta):
    r = fgrad.copy()
    r[:n_x] -= beta
    return r


def _evaluate(data: DataSet, layout: HpLayout, theta, kind: KernelKind, cond_max: float,
              want_grad: bool, beta: Optional[float] = None):
    theta = np.asarray(theta, dtype=float)
    hp = layout.unpack(theta)
    kind = kind.with_alpha(hp.alpha)
    n, d = data.n_x, data.n_d
    parts = _KgParts(data.X, kind, hp.gamma, 3 if want_grad else 2)
    Kg = parts.matrix()
    if layout.noisy:
        sk2 = hp.sigma_k**2
        noise = noise_diagonal(n, d, hp.sigma_f, hp.sigma_grad)
        Sig0 = sk2 * Kg
        Sig0[np.diag_indices_from(Sig0)] += noise
    else:
        sk2 = 1.0
        Sig0 = Kg
    factor = CovFactor(Sig0, cond_max)
    if beta is None:
        beta = beta_closed_form(factor, data.fgrad, n)
    r = _one_mod_residual(data.fgrad, n, beta)
    a = factor.solve(r)
    N = r.size
    quad = float(r @ a)
    logdet = factor.logdet()
    if layout.noisy:
        value = -0.5 * logdet - 0.5 * quad
        scale = 1.0
    else:
        s2 = max(quad / N, 1e-300)
        value = -0.5 * N * math.log(s2) - 0.5 * logdet
        scale = 1.0 / s2
    if not want_grad:
        return value, None

    M = scale * np.outer(a, a) - factor.inverse()
    M4 = M.reshape(d + 1, n, d + 1, n).transpose(0, 2, 1, 3)
    S = np.diag(Sig0).copy()
    P = factor.P
    Kd = factor.Kdot
    rowsum = np.sum(np.abs(Kd), axis=1)
    astar = int(np.argmax(rowsum))
    sgn = np.sign(Kd[astar])
    diagM = np.diag(M).copy()
    trMS = diagM @ S
    eta = factor.eta
    cm1 = (cond_max - 1.0) / nugget_margin(N, cond_max)
    pt, bi = divmod(astar, n)  # block index, point index of the max row

    def assemble_grad(tr_dSig, dS, drow):
        deta = np.sum(sgn * (drow / (P[astar] * P) - 0.5 * Kd[astar] * (dS[astar] / S[astar] + dS / S))) / cm1
        return 0.5 * (tr_dSig + eta * (diagM @ dS) + deta * trMS)

    grad = np.empty(layout.size)
    tr_g = sk2 * _trace_lngamma(M4, parts)
    for m in range(d):
        dS = np.zeros(N)
        dS[(m + 1) * n : (m + 2) * n] = sk2 * 2.0 * parts.g2[m]
        drow_full = dkg_dlngamma(parts, m, rows=[bi])
        drow = sk2 * drow_full[pt]
        grad[m] = assemble_grad(tr_g[m], dS, drow)
    pos = d
    if layout.has_alpha:
        tr_a = sk2 * _trace_alpha(M4, parts) * hp.alpha
        drow = sk2 * dkg_dalpha(parts, rows=[bi])[pt] * hp.alpha
        grad[pos] = assemble_grad(tr_a, np.zeros(N), drow)
        pos += 1
    if layout.noisy:
        # ln sigma_k
        dS = 2.0 * sk2 * np.diag(Kg)
        grad[pos] = assemble_grad(2.0 * sk2 * np.sum(M * Kg), dS, 2.0 * sk2 * Kg[astar])
        pos += 1
        blocks = []
        if layout.noisy_f:
            blocks.append((slice(0, n), hp.sigma_f))
        blocks.append((slice(n, N), hp.sigma_grad))
        for sl, sig in blocks:
            dS = np.zeros(N)
            dS[sl] = 2.0 * sig**2
            drow = np.zeros(N)
            drow[astar] = dS[astar]
            grad[pos] = assemble_grad(float(diagM @ dS), dS, drow)
            pos += 1
    return value, grad


def _mode_layout(data, hp, kind, mode):
    if mode not in ("noisy", "noise-free"):
        raise ValueError(f"mode must be 'noisy' or 'noise-free', got {mode!r}")
    if mode == "noise-free":
        return HpLayout(data.n_d, kind.has_alpha, False, False)
    return HpLayout(data.n_d, kind.has_alpha, True, hp.sigma_f > 0)


def _theta_for(layout, hp, kind):
    if layout.has_alpha and hp.alpha is None:
        hp = hp.replace(alpha=kind.alpha)
    if layout.noisy and hp.sigma_k is None:
        raise ValueError("noisy mode needs sigma_k")
    if layout.noisy and not hp.sigma_grad > 0:
        raise ValueError("noisy mode needs a positive sigma_grad")
    return np.log(layout.pack(hp))


def mll(data: DataSet, hp: Hyperparameters, kind: KernelKind = KernelKind(),
        cond_max: float = DEFAULT_COND_MAX, mode: str = "noise-free") -> float:
    """Marginal log-likelihood with constant terms dropped.

    In ``"noise-free"`` mode the reduced form with closed-form ``beta`` and
    ``sigma_K`` is returned and those fields of ``hp`` are ignored.  In
    ``"noisy"`` mode ``hp.beta`` is used when given, else the closed form.
    """
    layout = _mode_layout(data, hp, kind, mode)
    theta = _theta_for(layout, hp, kind)
    beta = hp.beta if layout.noisy else None
    return _evaluate(data, layout, theta, kind, cond_max, False, beta)[0]


def mll_grad_log_hp(data: DataSet, hp: Hyperparameters, kind: KernelKind = KernelKind(),
                    cond_max: float = DEFAULT_COND_MAX, mode: str = "noise-free"):
    """Gradient of :func:`mll` with respect to the logs of the active hyperparameters.

    Returns ``(grad, names)``.  Noise-free mode only has ``gamma`` (and
    ``alpha``) entries; noisy mode adds ``sigma_k``, ``sigma_f`` (when
    positive) and ``sigma_grad``.  ``beta`` is taken at its closed form.
    """
    layout = _mode_layout(data, hp, kind, mode)
    theta = _theta_for(layout, hp, kind)
    return _evaluate(data, layout, theta, kind, cond_max, True)[1], layout.names


# --------------------------------------------------------------------------
# search


def hp_lhs_starts(history: Sequence[np.ndarray], cfg: HpSearchConfig, rng, initial=None,
                  n: Optional[int] = None) -> np.ndarray:
    """Log-space Latin hypercube samples around the recent median.

    ``history`` holds positive hyperparameter vectors from previous
    iterations; the median of the last ``n_med`` is the box center, or
    ``initial`` when there is no history.  The box spans ``n_log`` decades
    each way.  Rows of the result are natural logs.
    """
    if history:
        recent = np.asarray(history[-cfg.n_med :], dtype=float)
        center = np.log(np.median(recent, axis=0))
    else:
        if initial is None:
            raise ValueError("need initial values when the history is empty")
        center = np.log(np.asarray(initial, dtype=float))
    half = cfg.n_log * LN10
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return latin_hypercube(n or cfg.n_lhs, center - half, center + half, rng)


@dataclass
class HpSelection:
    hp: Hyperparameters
    log_theta: np.ndarray
    value: float
    fallback: bool = False
    n_evals: int = 0
    names: list = field(default_factory=list)


def _safe_value(data, layout, theta, kind, cond_max):
    try:
        v, _ = _evaluate(data, layout, theta, kind, cond_max, False)
    except (FactorizationError, FloatingPointError, ValueError):
        return -np.inf
    return v if np.isfinite(v) else -np.inf


def search_hyperparameters(data: DataSet, cfg: HpSearchConfig, kind: KernelKind = KernelKind(),
                           cond_max: float = DEFAULT_COND_MAX, rng_seed=0,
                           history: Sequence[np.ndarray] = ()) -> HpSelection:
    """Latin hypercube screening followed by bounded quasi-Newton refinement."""
    layout = layout_for(data.n_d, kind, cfg)
    init = layout.initial(cfg)
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    starts = hp_lhs_starts(list(history), cfg, rng, initial=init)
    half = cfg.n_log * LN10
    center = np.log(np.median(np.asarray(history[-cfg.n_med :]), axis=0)) if len(history) else np.log(init)
    bounds = list(zip(center - half, center + half))
    if cfg.warm_start and len(history):
        starts = np.vstack([starts, np.clip(np.log(history[-1]), center - half, center + half)])

    values = np.array([_safe_value(data, layout, t, kind, cond_max) for t in starts])
    n_evals = len(starts)
    if not np.any(np.isfinite(values)):
        theta = np.log(init)
        hp = layout.unpack(theta)
        return HpSelection(_resolve(data, hp, kind, cond_max), theta, -np.inf, True, n_evals, layout.names)

    def neg(theta):
        try:
            v, g = _evaluate(data, layout, theta, kind, cond_max, True)
        except (FactorizationError, FloatingPointError, ValueError):
            return np.inf, np.zeros_like(theta)
        if not np.isfinite(v) or not np.all(np.isfinite(g)):
            return np.inf, np.zeros_like(theta)
        return -v, -g

    order = np.argsort(-values, kind="stable")
    seeds = [starts[i] for i in order if np.isfinite(values[i])]
    if not cfg.multistart:
        seeds = seeds[:1]
    best_theta, best_val = starts[order[0]], values[order[0]]
    for t0 in seeds:
        res = optimize.minimize(
            neg, t0, jac=True, method="L-BFGS-B", bounds=bounds,
            options={"maxiter": cfg.max_iter, "gtol": cfg.gtol},
        )
        n_evals += res.nfev
        if np.isfinite(res.fun) and -res.fun > best_val:
            best_theta, best_val = np.array(res.x), -float(res.fun)
    hp = layout.unpack(best_theta)
    return HpSelection(_resolve(data, hp, kind, cond_max), best_theta, best_val, False, n_evals, layout.names)


def _resolve(data, hp, kind, cond_max):
    fitted = fit_surrogate(data, hp, kind, cond_max)
    return fitted.hp


def select_hyperparameters(data: DataSet, cfg: HpSearchConfig, kind: KernelKind = KernelKind(),
                           cond_max: float = DEFAULT_COND_MAX, rng_seed=0,
                           history: Sequence[np.ndarray] = ()) -> Hyperparameters:
    """Likelihood-maximizing hyperparameters with ``beta``/``sigma_k`` resolved."""
    return search_hyperparameters(data, cfg, kind, cond_max, rng_seed, history).hp
