"""Gaussian-approximation and subsampling confidence sets for the mean function."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from math import ceil, log

import numpy as np
from scipy import stats
from scipy.spatial import cKDTree

from .design_weights import PooledDesign, weights as design_weights
from .estimate import (
    RHO_1D,
    _pair_count,
    _unpack,
    coefficients_from_weights,
    estimate_K1,
    optimal_constant,
    optimal_L,
    pilot_residuals,
    regime,
)
from .fourier import basis_matrix, enumerate_indices, midpoint_grid, phi_vector, regular_grid, vp_eval
from .rng import STAGE_BAND, STAGE_SUBSAMPLE, generator


class NumericalFailure(RuntimeError):
    """An invariant of a numerical routine was violated."""


def rates(data, L, D=None):
    """Normalising rates ``r1 = sqrt(M_bar / L^D)`` and ``r2 = M_bar / sqrt(sum M_i(M_i - 1))``."""
    if L < 1:
        raise ValueError("L must be >= 1")
    T, _, groups = _unpack(data)
    D = T.shape[1] if D is None else D
    n = T.shape[0]
    pairs = _pair_count(groups)
    r1 = float(np.sqrt(n / L**D))
    r2 = float(n / np.sqrt(pairs)) if pairs > 0 else float("inf")
    return r1, r2


@dataclass(frozen=True)
class SigmaMatrix:
    """Covariance of the estimated coefficients, indexed by ``enumerate_indices(D, 4L - 2)``."""

    L: int
    D: int
    entries: np.ndarray
    mode: str
    meta: dict = field(default_factory=dict)

    def quadratic_form(self, phi):
        """``phi^T Sigma phi`` row-wise for ``phi`` of shape (p,) or (n, p)."""
        phi = np.atleast_2d(phi)
        return np.einsum("ij,jk,ik->i", phi, self.entries, phi)

    def sqrt(self):
        """Symmetric square root with negative eigenvalues clipped to zero.

        Returns the root and the largest clipped magnitude.
        """
        vals, vecs = np.linalg.eigh(self.entries)
        clipped = float(max(0.0, -vals.min()))
        root = (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T
        return root, clipped


def _quadrature_nodes(D, n_quad):
    n_quad = (1024 if D == 1 else 64) if n_quad is None else int(n_quad)
    return midpoint_grid(n_quad, D), n_quad


def sigma_from_functions(M_bar, pair_count, density, L, diag_var, cov_gram=None, D=1, rho=None, n_quad=None,
                         mode="oracle"):
    """Leading-order coefficient covariance by tensor midpoint quadrature.

    Parameters
    ----------
    diag_var : callable
        ``t -> sigma^2(t) + gamma(t, t)``.
    cov_gram : callable, optional
        ``(s, t) -> gamma`` Gram matrix; omitted means no between-point term.
    """
    rho = RHO_1D if rho is None else float(rho)
    nodes, n_quad = _quadrature_nodes(D, n_quad)
    f = density.pdf(nodes)
    if np.any(f <= 0):
        raise NumericalFailure("design density vanishes at a quadrature node")
    iset = enumerate_indices(D, 4 * L - 2)
    B = basis_matrix(iset, nodes)
    Q = nodes.shape[0]
    v = np.asarray(diag_var(nodes), dtype=float)
    first = (rho / M_bar) * (B.T @ (B * (v / f)[:, None])) / Q
    c2 = pair_count / (M_bar * (M_bar - 1.0))
    second = np.zeros_like(first)
    if c2 > 0 and cov_gram is not None:
        G = cov_gram(nodes, nodes)
        second = c2 * (B.T @ G @ B) / Q**2
    S = first + second
    S = 0.5 * (S + S.T)
    return SigmaMatrix(L, D, S, mode, {"rho": rho, "n_quad": n_quad, "dense_factor": c2})


def sigma_matrix(data, density, L, mode="oracle", noise=None, cov=None, rho=None, n_quad=None, pilot_L=None):
    """Coefficient covariance at level ``L``.

    ``mode="oracle"`` uses the supplied ``noise`` and ``cov`` specifications;
    ``mode="plug-in"`` estimates the diagonal ``sigma^2 + gamma(t, t)`` by
    nearest-neighbour averaging of squared pilot residuals and the
    between-point term from within-curve residual cross products.
    """
    T, Y, groups = _unpack(data)
    D = T.shape[1]
    n = T.shape[0]
    pairs = _pair_count(groups)
    if mode == "oracle":
        if noise is None and cov is None:
            raise ValueError("oracle mode needs noise and/or covariance specifications")

        def diag_var(t):
            out = np.zeros(t.shape[0])
            if noise is not None:
                out += noise.variance(t)
            if cov is not None:
                out += cov.diag(t)
            return out

        gram = None if cov is None or cov.kind == "zero" else cov.gram
        return sigma_from_functions(n, pairs, density, L, diag_var, gram, D, rho, n_quad, mode)
    if mode != "plug-in":
        raise ValueError(f"unknown sigma mode {mode!r}")
    r, _ = pilot_residuals((T, Y, groups), density, pilot_L)
    k = min(n, int(ceil(n ** (D / (D + 2.0)))))
    tree = cKDTree(T)

    def diag_var(t):
        _, idx = tree.query(t, k=k)
        idx = idx.reshape(t.shape[0], -1)
        return (r[idx] ** 2).mean(axis=1)

    S = sigma_from_functions(n, pairs, density, L, diag_var, None, D, rho, n_quad, mode)
    if pairs > 0:
        iset = enumerate_indices(D, 4 * L - 2)
        Z = basis_matrix(iset, T) * (r / density.pdf(T))[:, None]
        _, inv = np.unique(groups, return_inverse=True)
        U = np.zeros((inv.max() + 1, Z.shape[1]))
        np.add.at(U, inv, Z)
        cross = (U.T @ U - Z.T @ Z) / pairs
        # project onto the PSD cone: the raw cross-product estimate need not be
        vals, vecs = np.linalg.eigh(0.5 * (cross + cross.T))
        cross = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
        c2 = pairs / (n * (n - 1.0))
        entries = S.entries + c2 * cross
        S = SigmaMatrix(L, D, 0.5 * (entries + entries.T), mode, {**S.meta, "dense_factor": c2, "neighbors": k})
    else:
        S.meta["neighbors"] = k
    return S


def _z(level):
    if not 0.0 <= level < 1.0:
        raise ValueError("level must lie in [0, 1)")
    return 0.0 if level == 0.0 else float(stats.norm.ppf(0.5 + level / 2.0))


def pointwise_variance(sigma, t):
    phi = phi_vector(sigma.L, t, sigma.D)
    v = sigma.quadratic_form(phi)
    if np.any(v < -1e-10):
        raise NumericalFailure(f"negative pointwise variance {v.min():.3e}")
    return np.clip(v, 0.0, None)


def pointwise_interval(model, sigma, t, level=0.95, rates=None):
    """Normal interval ``mu_hat(t) -+ z sqrt(Phi^T Sigma Phi)``.

    ``rates`` is accepted for symmetry with the normalised statistic; the
    normalisation cancels and the interval uses the raw variance.
    """
    if sigma.L != model.L or sigma.D != model.D:
        raise ValueError("sigma and model levels differ")
    center = np.atleast_1d(vp_eval(model, t))
    half = _z(level) * np.sqrt(pointwise_variance(sigma, t))
    return center - half, center + half


@dataclass
class BandResult:
    grid: np.ndarray
    center: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    method: str
    critical_value: float
    rate: float = float("nan")
    meta: dict = field(default_factory=dict)
    pointwise_lower: np.ndarray | None = None
    pointwise_upper: np.ndarray | None = None

    @property
    def half_width(self):
        return 0.5 * (self.upper - self.lower)

    def covers(self, values):
        values = np.asarray(values, dtype=float)
        return bool(np.all((self.lower <= values) & (values <= self.upper)))

    def sidecar(self):
        return {
            "method": self.method,
            "level": self.level,
            "critical_value": self.critical_value,
            "rate": self.rate,
            **self.meta,
        }

    def write(self, csv_path, json_path=None):
        D = self.grid.shape[1]
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"t_{d + 1}" for d in range(D)] + ["center", "lower", "upper"])
            for g, c, lo, up in zip(self.grid, self.center, self.lower, self.upper):
                w.writerow([repr(float(v)) for v in g] + [repr(float(c)), repr(float(lo)), repr(float(up))])
        if json_path is not None:
            with open(json_path, "w") as fh:
                json.dump(self.sidecar(), fh, sort_keys=True, default=float)


def default_band_grid(D, n_per_axis=None):
    n = (512 if D == 1 else 64) if n_per_axis is None else int(n_per_axis)
    return regular_grid(n, D)


def undersmoothed_L(M_bar, alpha, D, vartheta=None):
    """Inflated level ``ceil(vartheta M_bar^{1/(2 alpha + D)})`` for bands around the mean itself."""
    vt = max(log(log(M_bar)), 1.0) if vartheta is None else float(vartheta)
    return int(ceil(vt * M_bar ** (1.0 / (2.0 * alpha + D))))


def uniform_band_gaussian(model, sigma, level=0.95, grid=None, n_draws=2000, seed=0, rate=float("nan"),
                          centering="truncation"):
    """Band ``mu_hat -+ c`` with ``c`` the ``level``-quantile of ``sup_t |(Sigma^{1/2} Z)^T Phi_L(t)|``.

    ``centering="mean"`` only records that ``model`` was fitted at the
    inflated level of :func:`undersmoothed_L`.
    """
    if sigma.L != model.L or sigma.D != model.D:
        raise ValueError("sigma and model levels differ")
    D = model.D
    grid = default_band_grid(D) if grid is None else np.asarray(grid, dtype=float).reshape(-1, D)
    try:
        root, clipped = sigma.sqrt()
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigendecomposition failed: {exc}") from exc
    phi = np.atleast_2d(phi_vector(model.L, grid, D))
    Z = generator(seed, STAGE_BAND).standard_normal((int(n_draws), root.shape[0]))
    sup = np.abs((Z @ root) @ phi.T).max(axis=1)
    crit = float(np.quantile(sup, level, method="inverted_cdf")) if level > 0 else 0.0
    center = np.atleast_1d(vp_eval(model, grid))
    lo, up = pointwise_interval(model, sigma, grid, level)
    return BandResult(
        grid, center, center - crit, center + crit, level, "gaussian", crit, rate,
        {"sigma_mode": sigma.mode, "clipped": clipped, "n_draws": int(n_draws), "seed": int(seed),
         "L": model.L, "centering": centering, "undersmoothed": centering == "mean"},
        pointwise_lower=lo, pointwise_upper=up,
    )


def tau(sizes, alpha, D, vartheta):
    """Subsample normaliser ``min(vartheta n^{a/(2a+D)}, n / sqrt(sum m(m-1)))`` from per-curve counts."""
    sizes = np.asarray(sizes, dtype=np.int64)
    n = sizes.sum()
    first = vartheta * n ** (alpha / (2.0 * alpha + D))
    rad = float((sizes * (sizes - 1)).sum())
    second = n / np.sqrt(rad) if rad > 0 else np.inf
    return float(min(first, second))


def _vartheta(n, dense, value):
    if value is not None:
        return float(value)
    return 1.0 if dense else max(log(log(n)), 1.0)


def subsampling_bands(data, density, alpha_mu, level=0.95, N_s=None, vartheta=None, seed=0, grid=None,
                      C_vp=1.0, K1=None, rho=None, sampling="flat"):
    """Pointwise intervals and a uniform band from ``N_s`` half-size subsamples.

    Each subset is refitted at its own optimal level; the normalised
    deviations ``tau_A (mu_A - mu_hat)`` give the empirical quantiles.

    Parameters
    ----------
    N_s : int, optional
        Number of subsets, default ``2 N``.
    vartheta : float, optional
        Fixed multiplier of ``tau``; by default 1 in the dense regime and
        ``max(log log n, 1)`` otherwise.
    sampling : {"flat", "curves"}
        Draw observations uniformly from the pooled set, or draw half the curves.
    """
    T, Y, groups = _unpack(data)
    n, D = T.shape
    if n < 8:
        raise ValueError("subsampling needs at least 8 observations")
    _, inv = np.unique(groups, return_inverse=True)
    N = inv.max() + 1
    N_s = 2 * N if N_s is None else int(N_s)
    grid = default_band_grid(D) if grid is None else np.asarray(grid, dtype=float).reshape(-1, D)
    dense = regime((T, Y, groups), alpha_mu, D).label == "dense"
    dw = design_weights(PooledDesign(T, curve=inv), density)
    if K1 is None:
        K1 = estimate_K1((T, Y, inv), density, weights=dw)
    K1 = max(float(K1), 1e-12)
    L_full = optimal_L(alpha_mu, C_vp, K1, D, n, rho)
    full = coefficients_from_weights(T, Y, dw, density, L_full)
    center = np.atleast_1d(vp_eval(full, grid))
    tau_E = tau(np.bincount(inv), alpha_mu, D, _vartheta(n, dense, vartheta))

    rng = generator(seed, STAGE_SUBSAMPLE)
    devs = np.empty((N_s, grid.shape[0]))
    flags = []
    for s in range(N_s):
        if sampling == "flat":
            sel = np.sort(rng.choice(n, size=n // 2, replace=False))
        elif sampling == "curves":
            chosen = rng.choice(N, size=max(1, N // 2), replace=False)
            sel = np.flatnonzero(np.isin(inv, chosen))
        else:
            raise ValueError(f"unknown sampling {sampling!r}")
        TA, YA, gA = T[sel], Y[sel], inv[sel]
        m = sel.size
        raw_L = optimal_constant_level(alpha_mu, C_vp, K1, D, m, rho)
        if raw_L < 1:
            flags.append(f"subset {s}: level clamped to 1")
        LA = max(1, raw_L)
        dwA = design_weights(PooledDesign(TA, curve=gA, min_size=2), density)
        fitA = coefficients_from_weights(TA, YA, dwA, density, LA)
        tA = tau(np.bincount(gA)[np.bincount(gA) > 0], alpha_mu, D, _vartheta(m, dense, vartheta))
        devs[s] = tA * (np.atleast_1d(vp_eval(fitA, grid)) - center)

    a = 1.0 - level
    q_hi = np.quantile(devs, 1.0 - a / 2.0, axis=0, method="inverted_cdf")
    q_lo = np.quantile(devs, a / 2.0, axis=0, method="inverted_cdf")
    sup = np.abs(devs).max(axis=1)
    c_inf = float(np.quantile(sup, level, method="inverted_cdf"))
    half = c_inf / tau_E
    return BandResult(
        grid, center, center - half, center + half, level, "subsampling", c_inf, tau_E,
        {"N_s": N_s, "L": L_full, "K1": K1, "sampling": sampling, "dense": dense, "seed": int(seed), "flags": flags},
        pointwise_lower=center - q_hi / tau_E,
        pointwise_upper=center - q_lo / tau_E,
    )


def optimal_constant_level(alpha, C_vp, K1, D, M_bar, rho=None):
    """``floor(C* M_bar^{1/(2a+D)})`` before clamping at 1."""
    return int(np.floor(optimal_constant(alpha, C_vp, K1, D, rho) * M_bar ** (1.0 / (2.0 * alpha + D))))
