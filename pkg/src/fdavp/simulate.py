"""Synthetic functional data: random designs, Gaussian sample paths, noisy responses."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .density import DesignDensity, make_density
from .design_weights import PooledDesign
from .fourier import basis_matrix, enumerate_indices, midpoint_grid
from .rng import STAGE_DESIGN, STAGE_NOISE, STAGE_PATHS, generator

STAGE_COUNTS = 9
JITTER_LADDER = (1e-10, 1e-8, 1e-6)


class DegenerateCovarianceError(RuntimeError):
    pass


def _pts(t, D):
    t = np.asarray(t, dtype=float)
    if t.ndim <= 1:
        t = t.reshape(-1, D) if D > 1 else t.reshape(-1, 1)
    return t


# ---------------------------------------------------------------- means


class MeanSpec:
    """Mean function ``mu``: ``zero``, ``trig`` (Fourier coefficients) or ``weierstrass``.

    Parameters
    ----------
    kind : str
    D : int
    coefficients : dict, optional
        ``{multi-index tuple: value}``; required for ``kind="trig"``.
    alpha : float
        Exponent in (0, 1] of the Weierstrass-type mean
        ``amplitude * sum_{j=1}^{J_max} 2^{-j alpha} prod_d cos(2 pi 2^j t_d)``,
        to which trig ``coefficients`` are added when given.
    """

    def __init__(self, kind="zero", D=1, coefficients=None, alpha=0.5, J_max=12, amplitude=1.0, offset=0.0):
        if kind not in ("zero", "trig", "weierstrass"):
            raise ValueError(f"unknown mean kind {kind!r}")
        self.kind = kind
        self.D = int(D)
        self.offset = float(offset)
        self.coefficients = {}
        if kind == "trig" and not coefficients:
            raise ValueError("trig mean needs coefficients")
        if kind in ("trig", "weierstrass") and coefficients:
            keys = [tuple(int(v) for v in np.atleast_1d(k)) for k in coefficients]
            if any(len(k) != self.D for k in keys):
                raise ValueError("coefficient multi-indices must have dimension D")
            self.coefficients = dict(zip(keys, (float(v) for v in coefficients.values())))
            self._idx = np.array(keys, dtype=np.int64)
            self._val = np.array(list(self.coefficients.values()))
        if kind == "weierstrass":
            if not 0.0 < alpha <= 1.0:
                raise ValueError("weierstrass alpha must lie in (0, 1]")
            if J_max < 1:
                raise ValueError("J_max must be >= 1")
        self.alpha = float(alpha)
        self.J_max = int(J_max)
        self.amplitude = float(amplitude)

    def __call__(self, t):
        t = _pts(t, self.D)
        if self.kind == "zero":
            out = np.zeros(t.shape[0])
        elif self.kind == "trig":
            out = basis_matrix(self._idx, t) @ self._val
        else:
            out = np.zeros(t.shape[0])
            for j in range(1, self.J_max + 1):
                out += 2.0 ** (-j * self.alpha) * np.prod(np.cos(2.0 * np.pi * 2.0**j * t), axis=1)
            out *= self.amplitude
            if self.coefficients:
                out += basis_matrix(self._idx, t) @ self._val
        return out + self.offset

    def exact_coefficients(self, J):
        """Fourier coefficients over ``enumerate_indices(D, J)`` when known in closed form."""
        iset = enumerate_indices(self.D, J)
        a = np.zeros(len(iset))
        if self.coefficients:
            for k, v in self.coefficients.items():
                if sum(k) <= J:
                    a[iset.position(k)] += v
        if self.kind == "weierstrass":
            # prod_d cos(2 pi 2^j t_d) = prod_d phi_{2^(j+1)}(t_d) / sqrt(2)
            for j in range(1, self.J_max + 1):
                k = (2 ** (j + 1),) * self.D
                if sum(k) <= J:
                    a[iset.position(k)] += self.amplitude * 2.0 ** (-j * self.alpha) * 2.0 ** (-self.D / 2)
        a[0] += self.offset
        return a

    def to_dict(self):
        d = {"kind": self.kind, "D": self.D}
        if self.offset:
            d["offset"] = self.offset
        if self.coefficients:
            d["coefficients"] = [{"k": list(k), "value": v} for k, v in self.coefficients.items()]
        if self.kind == "weierstrass":
            d.update(alpha=self.alpha, J_max=self.J_max, amplitude=self.amplitude)
        return d

    @classmethod
    def from_dict(cls, spec, D=None):
        spec = dict(spec)
        D = int(spec.pop("D", D or 1))
        coeffs = spec.pop("coefficients", None)
        if isinstance(coeffs, list):
            coeffs = {tuple(c["k"]): c["value"] for c in coeffs}
        return cls(D=D, coefficients=coeffs, **spec)


# ---------------------------------------------------------- covariances


class CovarianceSpec:
    """Covariance kernel of the centred process ``X - mu``.

    ``exponential`` and ``matern32`` are stationary with length ``scale``;
    ``fbm`` is the fractional Brownian kernel with Hurst index ``H``.
    ``variance`` multiplies every kernel.
    """

    def __init__(self, kind="zero", D=1, scale=0.2, H=0.5, variance=1.0):
        if kind not in ("zero", "exponential", "matern32", "fbm"):
            raise ValueError(f"unknown covariance kind {kind!r}")
        if kind == "fbm" and not 0.0 < H < 1.0:
            raise ValueError("fbm H must lie in (0, 1)")
        if scale <= 0 or variance < 0:
            raise ValueError("scale must be positive and variance non-negative")
        self.kind = kind
        self.D = int(D)
        self.scale = float(scale)
        self.H = float(H)
        self.variance = float(variance)

    @property
    def H_gamma(self):
        """Hölder exponent of ``t -> gamma(s, t)``."""
        return {"zero": 1.0, "exponential": 1.0, "matern32": 1.0, "fbm": min(1.0, 2 * self.H)}[self.kind]

    def gram(self, s, t=None):
        s = _pts(s, self.D)
        t = s if t is None else _pts(t, self.D)
        if self.kind == "zero":
            return np.zeros((s.shape[0], t.shape[0]))
        r = np.sqrt(((s[:, None, :] - t[None, :, :]) ** 2).sum(axis=2))
        if self.kind == "exponential":
            k = np.exp(-r / self.scale)
        elif self.kind == "matern32":
            a = np.sqrt(3.0) * r / self.scale
            k = (1.0 + a) * np.exp(-a)
        else:
            h2 = 2.0 * self.H
            ns = np.sqrt((s**2).sum(axis=1)) ** h2
            nt = np.sqrt((t**2).sum(axis=1)) ** h2
            k = 0.5 * (ns[:, None] + nt[None, :] - r**h2)
        return self.variance * k

    def diag(self, t):
        t = _pts(t, self.D)
        if self.kind == "zero":
            return np.zeros(t.shape[0])
        if self.kind == "fbm":
            return self.variance * np.sqrt((t**2).sum(axis=1)) ** (2.0 * self.H)
        return np.full(t.shape[0], self.variance)

    def __call__(self, s, t):
        return self.gram(s, t)

    def to_dict(self):
        d = {"kind": self.kind, "D": self.D}
        if self.kind in ("exponential", "matern32"):
            d["scale"] = self.scale
        if self.kind == "fbm":
            d["H"] = self.H
        if self.kind != "zero":
            d["variance"] = self.variance
        return d

    @classmethod
    def from_dict(cls, spec, D=None):
        spec = dict(spec)
        D = int(spec.pop("D", D or 1))
        return cls(D=D, **spec)


# ---------------------------------------------------------------- noise


class NoiseSpec:
    """Measurement error ``sigma(t) * e`` with unit-variance ``e``.

    ``sigma(t) = intercept + slope * t_1``; ``law`` is ``gaussian``,
    ``rademacher`` or ``student-t`` (``df >= 4``, rescaled to unit variance).
    """

    def __init__(self, intercept=0.0, slope=0.0, law="gaussian", df=5.0):
        if law not in ("gaussian", "rademacher", "student-t"):
            raise ValueError(f"unknown noise law {law!r}")
        if law == "student-t" and df < 4:
            raise ValueError("student-t noise needs df >= 4")
        if intercept < 0 or intercept + slope < 0:
            raise ValueError("sigma must be non-negative on [0, 1]")
        self.intercept = float(intercept)
        self.slope = float(slope)
        self.law = law
        self.df = float(df)

    @property
    def sub_gaussian(self):
        return self.law != "student-t"

    def sigma(self, t):
        t = np.asarray(t, dtype=float)
        t1 = t[:, 0] if t.ndim == 2 else t.ravel()
        return self.intercept + self.slope * t1

    def variance(self, t):
        return self.sigma(t) ** 2

    def draw(self, rng, n):
        if self.law == "gaussian":
            return rng.standard_normal(n)
        if self.law == "rademacher":
            return rng.choice(np.array([-1.0, 1.0]), size=n)
        return rng.standard_t(self.df, size=n) * np.sqrt((self.df - 2.0) / self.df)

    def to_dict(self):
        d = {"intercept": self.intercept, "slope": self.slope, "law": self.law}
        if self.law == "student-t":
            d["df"] = self.df
        return d

    @classmethod
    def from_dict(cls, spec):
        spec = dict(spec or {})
        if "sigma" in spec:
            spec["intercept"] = spec.pop("sigma")
        return cls(**spec)


# --------------------------------------------------------------- dataset


@dataclass
class FunctionalDataset:
    """Noisy discrete observations of ``N`` random functions.

    ``t[i]`` has shape ``(M_i, D)`` and ``y[i]`` shape ``(M_i,)``. When the
    truth channel is on, ``x[i]`` holds the latent values and
    ``eps[i] = y[i] - x[i]`` the realised errors.
    """

    D: int
    t: list
    y: list
    x: Optional[list] = None
    eps: Optional[list] = None
    truth_grid: Optional[np.ndarray] = None
    truth_mu: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.t) != len(self.y):
            raise ValueError("t and y must have one entry per curve")
        self.t = [_pts(ti, self.D) for ti in self.t]
        self.y = [np.asarray(yi, dtype=float).ravel() for yi in self.y]
        for ti, yi in zip(self.t, self.y):
            if ti.shape[0] != yi.shape[0]:
                raise ValueError("each curve needs as many responses as design points")
            if not np.all(np.isfinite(yi)):
                raise ValueError("responses must be finite")
        if self.M_bar < 4:
            raise ValueError(f"need at least 4 observations in total, got {self.M_bar}")

    @property
    def N(self):
        return len(self.t)

    @property
    def M(self):
        return np.array([yi.size for yi in self.y], dtype=np.int64)

    @property
    def M_bar(self):
        return int(sum(yi.size for yi in self.y))

    @property
    def pair_count(self):
        """``sum_i M_i (M_i - 1)``."""
        M = self.M
        return int((M * (M - 1)).sum())

    def arrays(self):
        """Pooled ``(T, Y, groups)`` with ``T`` of shape ``(M_bar, D)``."""
        T = np.concatenate(self.t, axis=0)
        Y = np.concatenate(self.y)
        groups = np.repeat(np.arange(self.N), self.M)
        return T, Y, groups

    def pooled_design(self):
        T, _, groups = self.arrays()
        index = np.concatenate([np.arange(m) for m in self.M])
        return PooledDesign(T, curve=groups, index=index)

    @classmethod
    def from_arrays(cls, T, Y, groups, D=None, meta=None):
        T = np.asarray(T, dtype=float)
        D = D or (T.shape[1] if T.ndim == 2 else 1)
        T = _pts(T, D)
        Y = np.asarray(Y, dtype=float).ravel()
        groups = np.asarray(groups)
        labels = np.unique(groups)
        ts = [T[groups == g] for g in labels]
        ys = [Y[groups == g] for g in labels]
        return cls(D=D, t=ts, y=ys, meta=dict(meta or {}))

    # -- serialisation

    def to_json(self, path=None):
        curves = []
        for i in range(self.N):
            c = {"i": i, "t": self.t[i].tolist(), "y": self.y[i].tolist()}
            if self.x is not None:
                c["x"] = self.x[i].tolist()
            curves.append(c)
        doc = {"meta": {"D": self.D, "N": self.N, **self.meta}, "curves": curves}
        if self.truth_grid is not None:
            doc["truth"] = {"grid": self.truth_grid.tolist(), "mu": self.truth_mu.tolist()}
        text = json.dumps(doc, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_json(cls, source):
        if isinstance(source, dict):
            doc = source
        else:
            text = str(source)
            if not text.lstrip().startswith("{"):
                with open(text) as fh:
                    text = fh.read()
            doc = json.loads(text)
        meta = dict(doc["meta"])
        D = int(meta.pop("D"))
        meta.pop("N", None)
        curves = sorted(doc["curves"], key=lambda c: c["i"])
        t = [np.asarray(c["t"], dtype=float).reshape(-1, D) for c in curves]
        y = [np.asarray(c["y"], dtype=float) for c in curves]
        x = eps = None
        if all("x" in c for c in curves) and curves:
            x = [np.asarray(c["x"], dtype=float) for c in curves]
            eps = [yi - xi for yi, xi in zip(y, x)]
        grid = mu = None
        if "truth" in doc:
            grid = np.asarray(doc["truth"]["grid"], dtype=float).reshape(-1, D)
            mu = np.asarray(doc["truth"]["mu"], dtype=float)
        return cls(D=D, t=t, y=y, x=x, eps=eps, truth_grid=grid, truth_mu=mu, meta=meta)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["curve", "m"] + [f"t_{d + 1}" for d in range(self.D)] + ["y"])
            for i in range(self.N):
                for m in range(self.y[i].size):
                    w.writerow([i, m] + [repr(float(v)) for v in self.t[i][m]] + [repr(float(self.y[i][m]))])


# ------------------------------------------------------------ generation


def sample_design(N, M, density, seed=0):
    """Independent design points for ``N`` curves; ``M`` is an int or per-curve counts."""
    if not isinstance(density, DesignDensity):
        raise TypeError("density must be a DesignDensity")
    counts = np.full(int(N), int(M)) if np.ndim(M) == 0 else np.asarray(M, dtype=np.int64)
    if counts.shape[0] != N or np.any(counts < 1):
        raise ValueError("need one positive count per curve")
    return [density.sample(generator(seed, STAGE_DESIGN, i), int(m)) for i, m in enumerate(counts)]


def _factor(gram):
    n = gram.shape[0]
    for jitter in JITTER_LADDER:
        try:
            return np.linalg.cholesky(gram + jitter * np.eye(n))
        except np.linalg.LinAlgError:
            continue
    raise DegenerateCovarianceError(f"Gram matrix of size {n} is not positive definite even with jitter 1e-6")


def sample_paths(mean, cov, designs, seed=0):
    """Latent values ``X_i(T_{i,m})``, jointly Gaussian within each curve."""
    out = []
    for i, ti in enumerate(designs):
        mu = mean(ti)
        if cov.kind == "zero":
            out.append(mu)
            continue
        chol = _factor(cov.gram(ti))
        z = generator(seed, STAGE_PATHS, i).standard_normal(ti.shape[0])
        out.append(mu + chol @ z)
    return out


def observe(designs, latent, noise, seed=0, D=None, meta=None):
    """Add ``sigma(T) e`` to the latent values and package a dataset with its truth channel."""
    D = D or designs[0].shape[1]
    y, x, eps = [], [], []
    for i, (ti, xi) in enumerate(zip(designs, latent)):
        e = noise.draw(generator(seed, STAGE_NOISE, i), xi.size)
        yi = xi + noise.sigma(ti) * e
        y.append(yi)
        x.append(xi)
        # stored so that y - x - eps vanishes exactly
        eps.append(yi - xi)
    return FunctionalDataset(D=D, t=list(designs), y=y, x=x, eps=eps, meta=dict(meta or {}))


def default_truth_resolution(D):
    return 512 if D == 1 else 64


def simulate(N, M, mean, cov, noise, density, seed=0, truth=True):
    """Full pipeline: design, paths, noise, optional dense-grid truth of ``mu``."""
    designs = sample_design(N, M, density, seed)
    latent = sample_paths(mean, cov, designs, seed)
    meta = {
        "seed": int(seed),
        "specs": {
            "mean": mean.to_dict(),
            "cov": cov.to_dict(),
            "noise": noise.to_dict(),
            "density": density.to_dict(),
        },
    }
    if not noise.sub_gaussian:
        meta["flags"] = ["outside D6"]
    data = observe(designs, latent, noise, seed, D=density.D, meta=meta)
    if truth:
        grid = midpoint_grid(default_truth_resolution(density.D), density.D)
        data.truth_grid = grid
        data.truth_mu = mean(grid)
    return data


def simulate_from_config(cfg):
    """Build a dataset from a resolved ``simulate`` configuration block."""
    D = int(cfg["D"])
    N = int(cfg["N"])
    seed = int(cfg.get("seed", 0))
    m = cfg["M"]
    if isinstance(m, dict):
        lo, hi = int(m["low"]), int(m["high"])
        M = np.array([generator(seed, STAGE_COUNTS, i).integers(lo, hi + 1) for i in range(N)])
    else:
        M = int(m)
    mean = MeanSpec.from_dict(cfg.get("mean", {"kind": "zero"}), D)
    cov = CovarianceSpec.from_dict(cfg.get("cov", {"kind": "zero"}), D)
    noise = NoiseSpec.from_dict(cfg.get("noise", {}))
    density = make_density(cfg.get("density", {"kind": "uniform"}), D)
    return simulate(N, M, mean, cov, noise, density, seed, truth=cfg.get("truth", True))


def empirical_l2_error(estimate, truth, resolution=None, D=1):
    """Midpoint-rule approximation of the squared L2 distance between two functions."""
    res = default_truth_resolution(D) if resolution is None else int(resolution)
    grid = midpoint_grid(res, D)
    diff = np.asarray(estimate(grid), dtype=float) - np.asarray(truth(grid), dtype=float)
    return float(np.mean(diff**2))
