"""Control-neighbour integration weights over a pooled design.

For a design ``T_1, ..., T_n`` the leave-one-out nearest neighbour of
``T_l`` is the closest other design point (ties resolved towards the
lexicographically smallest location). Two statistics per point follow:

* the degree ``d_j``: how many points have ``T_j`` as that neighbour;
* the cumulative volume ``c_j``: the sum over ``l != j`` of the
  ``f_T``-mass of the Voronoi cell of ``T_j`` in the design without ``T_l``.

The weights ``w_j = (1 + c_j - d_j) / n`` integrate against ``f_T``
unbiasedly and sum to one.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import qmc

from .density import DesignDensity, UniformDensity
from .rng import STAGE_VOLUMES, generator

# degrees switch from the brute-force scan to a k-d tree above this size
BRUTE_FORCE_MAX = 500


class PooledDesign:
    """All observation locations of all curves, flattened.

    Parameters
    ----------
    points : array-like of shape (n, D)
    curve : array-like of int, optional
        Curve label ``i`` of each point (defaults to one curve per point).
    index : array-like of int, optional
        Position ``m`` of the point within its curve.
    min_size : int
        Smallest accepted ``n``; estimation needs 4, geometry only 2.
    """

    def __init__(self, points, curve=None, index=None, min_size=2):
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2:
            raise ValueError("points must be a 2-d array of shape (n, D)")
        n = pts.shape[0]
        if n < min_size:
            raise ValueError(f"pooled design needs at least {min_size} points, got {n}")
        if not np.all(np.isfinite(pts)) or pts.min() < 0.0 or pts.max() > 1.0:
            raise ValueError("design locations must lie in [0, 1]^D")
        if np.unique(pts, axis=0).shape[0] != n:
            raise ValueError("duplicate design locations are not allowed")
        self.points = pts
        self.curve = np.arange(n) if curve is None else np.asarray(curve, dtype=np.int64)
        self.index = np.zeros(n, dtype=np.int64) if index is None else np.asarray(index, dtype=np.int64)
        if self.curve.shape != (n,) or self.index.shape != (n,):
            raise ValueError("curve and index labels must have one entry per point")

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def D(self):
        return self.points.shape[1]

    def __len__(self):
        return self.n


def _as_design(design):
    return design if isinstance(design, PooledDesign) else PooledDesign(design)


@dataclass(frozen=True)
class WeightConfig:
    """How volumes are obtained.

    ``route`` is ``"auto"`` (exact for D=1 with a cdf, Monte Carlo
    otherwise), ``"exact"`` or ``"mc"``. ``Q`` defaults to
    ``max(10**5, 100 n)`` draws.
    """

    route: str = "auto"
    Q: int | None = None
    seed: int = 0
    threads: int = 1

    @classmethod
    def from_any(cls, cfg):
        if cfg is None:
            return cls()
        if isinstance(cfg, cls):
            return cfg
        return cls(**dict(cfg))


@dataclass(frozen=True)
class DesignWeights:
    degree: np.ndarray
    volume: np.ndarray
    weight: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for arr in (self.degree, self.volume, self.weight):
            arr.setflags(write=False)

    @property
    def n(self):
        return self.weight.shape[0]


def _lex_first(points, candidates):
    # lexicographically smallest location among tied candidates
    cand = np.asarray(candidates)
    keys = points[cand]
    order = np.lexsort(keys.T[::-1])
    return int(cand[order[0]])


def nearest_neighbors_brute(points):
    """Leave-one-out nearest neighbour of each point by an O(n^2) scan."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    n = pts.shape[0]
    out = np.empty(n, dtype=np.int64)
    for l in range(n):
        dist = np.sqrt(((pts - pts[l]) ** 2).sum(axis=1))
        dist[l] = np.inf
        best = dist.min()
        out[l] = _lex_first(pts, np.flatnonzero(dist == best))
    return out


def _nearest_neighbors_sorted_1d(x):
    n = x.size
    order = np.argsort(x, kind="stable")
    s = x[order]
    nn_sorted = np.empty(n, dtype=np.int64)
    nn_sorted[0] = 1
    nn_sorted[-1] = n - 2
    if n > 2:
        left = s[1:-1] - s[:-2]
        right = s[2:] - s[1:-1]
        # equal gaps go to the left neighbour, the lexicographically smaller one
        nn_sorted[1:-1] = np.where(left <= right, np.arange(0, n - 2), np.arange(2, n))
    nn = np.empty(n, dtype=np.int64)
    nn[order] = order[nn_sorted]
    return nn


def _nearest_neighbors_tree(pts):
    n = pts.shape[0]
    tree = cKDTree(pts)
    k = min(3, n)
    dist, idx = tree.query(pts, k=k)
    nn = idx[:, 1].astype(np.int64)
    if k == 3:
        suspect = np.flatnonzero(dist[:, 2] <= dist[:, 1] * (1.0 + 1e-9))
    else:
        suspect = np.arange(0)
    for l in suspect:
        cand = tree.query_ball_point(pts[l], dist[l, 1] * (1.0 + 1e-9) + 1e-300)
        cand = np.array([c for c in cand if c != l])
        d = np.sqrt(((pts[cand] - pts[l]) ** 2).sum(axis=1))
        nn[l] = _lex_first(pts, cand[d == d.min()])
    return nn


def nearest_neighbors(design):
    """Leave-one-out nearest neighbour index of each design point."""
    design = _as_design(design)
    pts = design.points
    if design.D == 1:
        return _nearest_neighbors_sorted_1d(pts[:, 0])
    if design.n <= BRUTE_FORCE_MAX:
        return nearest_neighbors_brute(pts)
    return _nearest_neighbors_tree(pts)


def degrees(design):
    """Number of points whose leave-one-out nearest neighbour is each point.

    Examples
    --------
    >>> degrees([0.1, 0.3, 0.4, 0.7, 0.9]).tolist()
    [0, 2, 1, 1, 1]
    """
    design = _as_design(design)
    return np.bincount(nearest_neighbors(design), minlength=design.n).astype(np.int64)


def cumulative_volumes_direct_1d(design, density):
    """Cumulative leave-one-out cell masses by removing each point in turn (O(n^2))."""
    design = _as_design(design)
    if design.D != 1:
        raise ValueError("direct 1-d volumes need D=1")
    x = design.points[:, 0]
    n = x.size
    order = np.argsort(x)
    s = x[order]
    out = np.zeros(n)
    for l in range(n):
        keep = np.delete(np.arange(n), l)
        r = s[keep]
        edges = np.concatenate(([0.0], density.cdf((r[:-1] + r[1:]) / 2.0), [1.0]))
        out[keep] += np.diff(edges)
    res = np.empty(n)
    res[order] = out
    return res


def cumulative_volumes_exact_1d(design, density):
    """Closed-form cumulative volumes on the order statistics (D=1).

    Falls back to :func:`cumulative_volumes_direct_1d` below five points.
    """
    design = _as_design(design)
    if design.D != 1:
        raise ValueError("exact volumes are only available for D=1")
    n = design.n
    if n < 5:
        return cumulative_volumes_direct_1d(design, density)
    x = design.points[:, 0]
    order = np.argsort(x)
    s = x[order]
    F = density.cdf
    mid = F((s[:-1] + s[1:]) / 2.0)
    a = np.concatenate(([0.0], mid))
    b = np.concatenate((mid, [1.0]))
    # cell edges once the left (right) neighbour has been removed
    a_skip = np.concatenate(([0.0, 0.0], F((s[:-2] + s[2:]) / 2.0)))
    b_skip = np.concatenate((F((s[:-2] + s[2:]) / 2.0), [1.0, 1.0]))
    has_left = np.ones(n)
    has_left[0] = 0.0
    has_right = np.ones(n)
    has_right[-1] = 0.0
    c = (n - 1 - has_left - has_right) * (b - a) + has_left * (b - a_skip) + has_right * (b_skip - a)
    res = np.empty(n)
    res[order] = c
    return res


def _uniform_stream(D, Q, rng, chunk):
    # scrambled Sobol blocks of size 2^k keep the balance property within each block
    sobol = qmc.Sobol(d=D, scramble=True, seed=rng)
    done = 0
    while done < Q:
        m = min(chunk, Q - done)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            yield sobol.random(m)
        done += m


def cumulative_volumes_mc(design, density, Q=None, seed=0, threads=1, chunk=2**17, sampler="sobol"):
    """Monte Carlo cumulative volumes from first and second nearest design points.

    Each draw ``u ~ f_T`` credits ``n - 1`` to its nearest point and ``1`` to
    its second nearest, so the volumes sum to ``n`` exactly.

    Parameters
    ----------
    sampler : {"sobol", "iid"}
        ``"sobol"`` uses randomised quasi-Monte Carlo pushed through the
        density's inverse CDF (unbiased, much smaller variance). Densities
        without ``ppf`` fall back to i.i.d. draws.
    """
    design = _as_design(design)
    n = design.n
    Q = max(100_000, 100 * n) if Q is None else int(Q)
    if Q < 1:
        raise ValueError("Q must be >= 1")
    if sampler not in ("sobol", "iid"):
        raise ValueError(f"unknown sampler {sampler!r}")
    rng = generator(seed, STAGE_VOLUMES)
    use_qmc = sampler == "sobol" and density.ppf(np.full((1, design.D), 0.5)) is not None
    if use_qmc:
        draws = (density.ppf(u) for u in _uniform_stream(design.D, Q, rng, chunk))
    else:
        draws = (density.sample(rng, min(chunk, Q - s)) for s in range(0, Q, chunk))
    tree = cKDTree(design.points)
    first = np.zeros(n)
    second = np.zeros(n)
    for u in draws:
        _, idx = tree.query(u, k=2, workers=threads)
        first += np.bincount(idx[:, 0], minlength=n)
        second += np.bincount(idx[:, 1], minlength=n)
    return ((n - 1) * first + second) / Q


def weights(design, density=None, config=None):
    """Integration weights ``(1 + c - d) / n`` for ``design`` under ``density``."""
    design = _as_design(design)
    density = density if density is not None else UniformDensity(design.D)
    if not isinstance(density, DesignDensity):
        raise TypeError("density must be a DesignDensity")
    if density.D != design.D:
        raise ValueError(f"density dimension {density.D} does not match design dimension {design.D}")
    cfg = WeightConfig.from_any(config)
    route = cfg.route
    if route == "auto":
        route = "exact" if design.D == 1 and density.has_cdf else "mc"
    n = design.n
    d = degrees(design)
    meta = {"route": route, "n": n}
    if route == "exact":
        c = cumulative_volumes_exact_1d(design, density)
    elif route == "mc":
        Q = max(100_000, 100 * n) if cfg.Q is None else int(cfg.Q)
        c = cumulative_volumes_mc(design, density, Q=Q, seed=cfg.seed, threads=cfg.threads)
        meta.update(Q=Q, seed=cfg.seed)
    else:
        raise ValueError(f"unknown volume route {route!r}")
    w = (1.0 + c - d) / n
    meta["weight_sum_residual"] = float(w.sum() - 1.0)
    return DesignWeights(degree=d, volume=c, weight=w, meta=meta)


def integrate(values, w):
    """Control-neighbour estimate ``sum_l w_l values_l`` of ``int values f_T``."""
    values = np.asarray(values, dtype=float)
    wt = w.weight if isinstance(w, DesignWeights) else np.asarray(w, dtype=float)
    if values.shape[0] != wt.shape[0]:
        raise ValueError(f"{values.shape[0]} values for {wt.shape[0]} weights")
    return float(wt @ values) if values.ndim == 1 else wt @ values


def calibrate_rho(D, n=400, reps=50, density=None, seed=0, margin=0.15, Q=None):
    """Monte Carlo estimate of ``E[(1 + c - d)^2]`` at interior design points.

    Used as the variance constant in dimensions where no closed form exists.
    Interior means every coordinate lies in ``[margin, 1 - margin]``.
    """
    density = density if density is not None else UniformDensity(D)
    acc = []
    for r in range(reps):
        rng = generator(seed, r)
        pts = density.sample(rng, n)
        dw = weights(pts, density, WeightConfig(seed=seed + r, Q=Q))
        inner = np.all((pts >= margin) & (pts <= 1 - margin), axis=1)
        acc.append(((1.0 + dw.volume - dw.degree) ** 2)[inner])
    return float(np.concatenate(acc).mean())
