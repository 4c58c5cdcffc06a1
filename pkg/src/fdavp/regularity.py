"""Adaptive estimation of the Hölder exponent of the mean function.

The unit cube is cut into ``K^D`` cells. Pooled cell averages of the
responses are differenced between neighbouring cells; the mean squared
difference ``g`` behaves like ``K^{-2 alpha}``. Regularising ``g`` with
``K^{-2 H_j}`` on a grid ``H_j = j / J`` and locating where the regularised
log-ratio stops tracking ``H_j`` gives ``alpha``.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from math import exp, floor, log

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .estimate import _unpack, optimal_L

# default tuning profile, see the README for how it was chosen
DEFAULT_TAU = 0.95
DEFAULT_TAU_PRIME = 0.7
DEFAULT_R_PRIME = 1.0
DEFAULT_CAP = 100.0


@dataclass(frozen=True)
class PartitionSpec:
    """``K`` cells per axis on ``[0, 1]^D`` with a neighbour rule ``adjacent`` or ``shell``."""

    K: int
    D: int = 1
    neighbor_mode: str = "adjacent"

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("need at least 2 cells per axis")
        if self.neighbor_mode not in ("adjacent", "shell"):
            raise ValueError(f"unknown neighbour mode {self.neighbor_mode!r}")

    def centers(self):
        axis = (np.arange(self.K) + 0.5) / self.K
        mesh = np.meshgrid(*([axis] * self.D), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def cell_of(self, t):
        """Multi-index of the cell holding each point; the face ``t_d = 1`` joins the last cell."""
        t = np.asarray(t, dtype=float).reshape(-1, self.D)
        return np.minimum(np.floor(t * self.K).astype(np.int64), self.K - 1)

    def flat(self, cells):
        return np.ravel_multi_index(tuple(np.asarray(cells).T), (self.K,) * self.D)

    def index_set(self):
        """Cells ``k`` with ``|k|_1 <= D(K - 1) - 1``: every cell but the top corner."""
        top = self.D * (self.K - 1) - 1
        return [k for k in itertools.product(range(self.K), repeat=self.D) if sum(k) <= top]

    def neighbors(self, k):
        k = tuple(k)
        if self.neighbor_mode == "adjacent":
            out = []
            for d in range(self.D):
                if k[d] + 1 <= self.K - 1:
                    kp = list(k)
                    kp[d] += 1
                    out.append(tuple(kp))
            return out
        target = sum(k) + 1
        return [kp for kp in itertools.product(range(self.K), repeat=self.D) if sum(kp) == target]


def cell_weights(data, partition):
    """Per-observation cell label and weight ``1 / count(cell)``.

    Returns ``(flat cell index, weight, counts per cell)``; the weights of
    each non-empty cell sum to one and empty cells carry nothing.
    """
    T, _, _ = _unpack(data)
    flat = partition.flat(partition.cell_of(T))
    counts = np.bincount(flat, minlength=partition.K**partition.D)
    return flat, 1.0 / counts[flat], counts


def _cell_sums(data, partition):
    T, Y, _ = _unpack(data)
    flat, _, counts = cell_weights((T, Y, None), partition)
    # sum_m Y F_k = cell mean, and 0 for an empty cell; divide once for accuracy
    totals = np.bincount(flat, weights=Y, minlength=partition.K**partition.D)
    sums = np.divide(totals, counts, out=np.zeros_like(totals), where=counts > 0)
    return sums, counts


def _pairs(partition):
    ks = partition.index_set()
    shape = (partition.K,) * partition.D
    if partition.neighbor_mode == "adjacent" or partition.D == 1:
        # vectorised adjacent pairs
        src, dst = [], []
        grid = np.indices(shape).reshape(partition.D, -1).T
        for d in range(partition.D):
            ok = grid[:, d] + 1 <= partition.K - 1
            g = grid[ok]
            gp = g.copy()
            gp[:, d] += 1
            src.append(np.ravel_multi_index(tuple(g.T), shape))
            dst.append(np.ravel_multi_index(tuple(gp.T), shape))
        src = np.concatenate(src)
        dst = np.concatenate(dst)
    else:
        src, dst = [], []
        for k in ks:
            for kp in partition.neighbors(k):
                src.append(np.ravel_multi_index(k, shape))
                dst.append(np.ravel_multi_index(kp, shape))
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
    cells = np.array([np.ravel_multi_index(k, shape) for k in ks], dtype=np.int64)
    return cells, src, dst


def b_hat_all(data, partition):
    """``b_k`` for every cell of the index set, in :meth:`PartitionSpec.index_set` order."""
    sums, _ = _cell_sums(data, partition)
    cells, src, dst = _pairs(partition)
    n_cells = partition.K**partition.D
    sq = (sums[src] - sums[dst]) ** 2
    tot = np.bincount(src, weights=sq, minlength=n_cells)
    num = np.bincount(src, minlength=n_cells)
    out = np.full(cells.size, np.nan)
    ok = num[cells] > 0
    out[ok] = tot[cells[ok]] / num[cells[ok]]
    return out


def b_hat(data, partition, k):
    """Average over neighbours ``k+`` of the squared difference of cell averages."""
    k = tuple(int(v) for v in np.atleast_1d(k))
    nbrs = partition.neighbors(k)
    if not nbrs:
        raise ValueError(f"cell {k} has no neighbours")
    sums, _ = _cell_sums(data, partition)
    shape = (partition.K,) * partition.D
    a = sums[np.ravel_multi_index(k, shape)]
    return float(np.mean([(a - sums[np.ravel_multi_index(kp, shape)]) ** 2 for kp in nbrs]))


def g_hat(data, partition):
    """Mean of ``b_k`` over the index set (cells without neighbours excluded)."""
    b = b_hat_all(data, partition)
    b = b[np.isfinite(b)]
    if b.size == 0:
        raise ValueError("no cell has a neighbour")
    return float(b.mean())


def H_hat(g, K, H):
    """``-log(g + K^{-2H}) / (2 log K)``."""
    if g < 0:
        raise ValueError("g must be non-negative")
    if K < 2:
        raise ValueError("K must be >= 2")
    H = np.asarray(H, dtype=float)
    out = -np.log(g + float(K) ** (-2.0 * H)) / (2.0 * log(K))
    return float(out) if out.ndim == 0 else out


def theoretical_K(N, tau):
    return int(floor(exp(log(N) ** tau)))


def grid_size(N, r_prime):
    return max(4, int(floor(log(N) ** r_prime)))


@dataclass
class RegularityEstimate:
    K: int
    K_theory: int
    J: int
    tau: float
    tau_prime: float
    r_prime: float
    threshold: float
    g_hat: float
    H_grid: np.ndarray
    H_hat: np.ndarray
    j0_hat: int
    alpha_hat: float
    neighbor_mode: str = "adjacent"
    C_hat: float | None = None
    L_hat: int | None = None
    flags: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "K": self.K,
            "K_theory": self.K_theory,
            "J": self.J,
            "tau": self.tau,
            "tau_prime": self.tau_prime,
            "r_prime": self.r_prime,
            "threshold": self.threshold,
            "neighbor_mode": self.neighbor_mode,
            "g_hat": self.g_hat,
            "H_grid": [{"j": j + 1, "Hj": float(h), "Hhat": float(hh)} for j, (h, hh) in enumerate(zip(self.H_grid, self.H_hat))],
            "j0_hat": self.j0_hat,
            "alpha_hat": self.alpha_hat,
            "C_hat": self.C_hat,
            "L_hat": self.L_hat,
            "flags": list(self.flags),
            "diagnostics": dict(self.diagnostics),
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def estimate_alpha(data, tau=DEFAULT_TAU, tau_prime=DEFAULT_TAU_PRIME, r_prime=DEFAULT_R_PRIME,
                   neighbor_mode="adjacent", K=None, J=None):
    """Grid estimate ``alpha_hat = (j0 + 1/2) / J`` of the Hölder exponent.

    ``K`` defaults to ``floor(exp(log(N)^tau))`` clamped to
    ``[2, floor((M_bar / 8)^{1/D})]``; ``J`` to ``max(4, floor(log(N)^r_prime))``.
    """
    T, Y, groups = _unpack(data)
    n, D = T.shape
    N = np.unique(groups).size
    if N < 3:
        raise ValueError("need at least 3 curves")
    flags = []
    K_theory = theoretical_K(N, tau)
    K_max = int(floor((n / 8.0) ** (1.0 / D)))
    if K is None:
        K = min(max(2, K_theory), max(2, K_max))
        if K != K_theory:
            flags.append(f"K clamped from {K_theory} to {K}")
    if K_max < 2:
        flags.append("fewer than 8 observations per cell on average")
    J = grid_size(N, r_prime) if J is None else int(J)
    part = PartitionSpec(int(K), D, neighbor_mode)
    g = g_hat((T, Y, groups), part)
    H = np.arange(1, J + 1) / J
    Hh = H_hat(g, part.K, H)
    thr = log(N) ** (-tau_prime)
    ok = np.abs(Hh - H) <= thr
    if g > 0:
        # the accepted set is a down-set when g > 0
        last = np.flatnonzero(ok)
        if last.size and not ok[: last[-1] + 1].all():
            flags.append("acceptance set is not a down-set")
    if ok.any():
        j0 = int(np.flatnonzero(ok)[-1] + 1)
    else:
        j0 = 0
        flags.append("empty acceptance set")
    _, M = np.unique(groups, return_counts=True)
    if M.max() / M.min() > 20:
        flags.append("unbalanced curve sizes")
    diag = {
        "N_eff": float(n**2 / (M.astype(float) ** 2).sum()),
        "m_frak": float((M.astype(float) ** 2).sum() / n),
    }
    return RegularityEstimate(
        K=part.K, K_theory=K_theory, J=J, tau=tau, tau_prime=tau_prime, r_prime=r_prime, threshold=thr,
        g_hat=g, H_grid=H, H_hat=np.asarray(Hh), j0_hat=j0, alpha_hat=(j0 + 0.5) / J,
        neighbor_mode=neighbor_mode, flags=flags, diagnostics=diag,
    )


def plug_in_L(estimate, K1, C_vp, M_bar, D, rho=None):
    """Optimal truncation level at the estimated exponent."""
    return optimal_L(estimate.alpha_hat, C_vp, K1, D, M_bar, rho)


def holder_constant(data, partition, estimate, cap=DEFAULT_CAP):
    """Capped ``max_k sqrt(b_k / v_k)`` with ``v_k`` the mean pairwise distance power between cells."""
    if cap <= 0:
        raise ValueError("cap must be positive")
    T, Y, groups = _unpack(data)
    beta = estimate.alpha_hat - 3.0 / (2.0 * estimate.J)
    flat, _, counts = cell_weights((T, Y, groups), partition)
    b = b_hat_all((T, Y, groups), partition)
    cells, src, dst = _pairs(partition)
    order = np.argsort(flat, kind="stable")
    starts = np.concatenate(([0], np.cumsum(counts)))
    members = [order[starts[c]:starts[c + 1]] for c in range(counts.size)]
    n_cells = counts.size
    vsum = np.zeros(n_cells)
    vnum = np.zeros(n_cells)
    for s, d in zip(src, dst):
        vnum[s] += 1
        a, c = members[s], members[d]
        if a.size == 0 or c.size == 0:
            continue
        dist = np.sqrt(((T[a][:, None, :] - T[c][None, :, :]) ** 2).sum(axis=2))
        vsum[s] += (dist**beta).mean()
    pos = {int(c): i for i, c in enumerate(cells)}
    ratios = []
    for c in cells:
        if vnum[c] == 0:
            continue
        v = vsum[c] / vnum[c]
        bk = b[pos[int(c)]]
        if v > 0 and np.isfinite(bk):
            ratios.append(np.sqrt(bk / v))
    if not ratios:
        raise ValueError("every cell has zero distance weight; constant undefined")
    return float(min(max(ratios), cap))


class RegularityEstimator(BaseEstimator):
    """Estimator wrapper around :func:`estimate_alpha`, :func:`holder_constant` and :func:`plug_in_L`.

    Parameters
    ----------
    tau, tau_prime, r_prime : float
        Partition exponent, acceptance exponent and grid exponent.
    neighbor_mode : {"adjacent", "shell"}
    cap : float
        Upper bound on the Hölder constant.
    K1, C_vp : float
        Constants for the plug-in truncation level.
    K, J : int, optional
        Override the partition size or grid size.
    """

    def __init__(self, tau=DEFAULT_TAU, tau_prime=DEFAULT_TAU_PRIME, r_prime=DEFAULT_R_PRIME,
                 neighbor_mode="adjacent", cap=DEFAULT_CAP, K1=1.0, C_vp=1.0, K=None, J=None):
        self.tau = tau
        self.tau_prime = tau_prime
        self.r_prime = r_prime
        self.neighbor_mode = neighbor_mode
        self.cap = cap
        self.K1 = K1
        self.C_vp = C_vp
        self.K = K
        self.J = J

    def fit(self, X, y, groups=None):
        X = check_array(X, ensure_min_samples=4)
        y = np.asarray(y, dtype=float).ravel()
        groups = np.arange(X.shape[0]) if groups is None else np.asarray(groups)
        data = (X, y, groups)
        est = estimate_alpha(data, self.tau, self.tau_prime, self.r_prime, self.neighbor_mode, self.K, self.J)
        part = PartitionSpec(est.K, X.shape[1], self.neighbor_mode)
        try:
            est.C_hat = holder_constant(data, part, est, self.cap)
        except ValueError as exc:
            est.flags.append(str(exc))
        est.L_hat = plug_in_L(est, self.K1, self.C_vp, X.shape[0], X.shape[1])
        self.estimate_ = est
        self.alpha_ = est.alpha_hat
        self.n_features_in_ = X.shape[1]
        return self

    def fit_dataset(self, data):
        return self.fit(*data.arrays())

    def report(self):
        check_is_fitted(self, "estimate_")
        return self.estimate_.to_dict()
