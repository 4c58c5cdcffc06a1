"""Known design densities on the unit hypercube."""

from __future__ import annotations

import numpy as np
from scipy import stats


class DesignDensity:
    """Base class: product density on ``[0, 1]^D``.

    Subclasses provide ``pdf``, ``sample`` and, for ``D == 1``, ``cdf``.
    ``bounds`` returns ``(C0, C1)`` estimated on a midpoint validation grid.
    """

    kind = "base"

    def __init__(self, D=1):
        if int(D) < 1:
            raise ValueError("D must be >= 1")
        self.D = int(D)

    def _points(self, t):
        t = np.asarray(t, dtype=float)
        if t.ndim <= 1:
            t = t.reshape(-1, 1) if self.D == 1 else t.reshape(-1, self.D)
        if t.shape[1] != self.D:
            raise ValueError(f"points have dimension {t.shape[1]}, expected {self.D}")
        return t

    def pdf(self, t):
        raise NotImplementedError

    def cdf(self, t):
        raise NotImplementedError

    def sample(self, rng, n):
        raise NotImplementedError

    def ppf(self, u):
        """Map uniform ``(m, D)`` points to draws from this product law, or None."""
        return None

    @property
    def has_cdf(self):
        return self.D == 1

    def bounds(self, n_grid=257):
        per_axis = n_grid if self.D == 1 else max(16, int(round(n_grid ** (1.0 / self.D))))
        axis = (np.arange(per_axis) + 0.5) / per_axis
        mesh = np.meshgrid(*([axis] * self.D), indexing="ij")
        vals = self.pdf(np.stack([m.ravel() for m in mesh], axis=1))
        return float(vals.min()), float(vals.max())

    def to_dict(self):
        return {"kind": self.kind, "D": self.D}


class UniformDensity(DesignDensity):
    kind = "uniform"

    def pdf(self, t):
        return np.ones(self._points(t).shape[0])

    def cdf(self, t):
        if self.D != 1:
            raise ValueError("cdf is only defined for D=1")
        return np.clip(np.asarray(t, dtype=float).ravel(), 0.0, 1.0)

    def sample(self, rng, n):
        return rng.random((int(n), self.D))

    def ppf(self, u):
        return np.asarray(u, dtype=float)

    def bounds(self, n_grid=257):
        return 1.0, 1.0


class ProductBetaDensity(DesignDensity):
    """Independent Beta(a, b) coordinates.

    With ``a = b = 1`` this is the uniform law; ``a, b > 1`` make the
    density vanish at the faces, which the estimators tolerate only because
    such points occur with probability zero.
    """

    kind = "product-beta"

    def __init__(self, a=2.0, b=2.0, D=1):
        super().__init__(D)
        if a <= 0 or b <= 0:
            raise ValueError("beta parameters must be positive")
        self.a = float(a)
        self.b = float(b)
        self._law = stats.beta(self.a, self.b)

    def pdf(self, t):
        return np.prod(self._law.pdf(self._points(t)), axis=1)

    def cdf(self, t):
        if self.D != 1:
            raise ValueError("cdf is only defined for D=1")
        return self._law.cdf(np.asarray(t, dtype=float).ravel())

    def sample(self, rng, n):
        return rng.beta(self.a, self.b, size=(int(n), self.D))

    def ppf(self, u):
        return self._law.ppf(u)

    def to_dict(self):
        return {"kind": self.kind, "D": self.D, "a": self.a, "b": self.b}


def make_density(spec, D=None):
    """Build a density from ``{"kind": "uniform" | "product-beta", ...}``."""
    if isinstance(spec, DesignDensity):
        return spec
    spec = dict(spec or {"kind": "uniform"})
    D = int(spec.get("D", D or 1))
    kind = spec.get("kind", "uniform")
    if kind == "uniform":
        return UniformDensity(D)
    if kind == "product-beta":
        return ProductBetaDensity(spec.get("a", 2.0), spec.get("b", 2.0), D)
    raise ValueError(f"unsupported density kind {kind!r}")
