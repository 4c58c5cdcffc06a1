"""Trigonometric basis on the unit hypercube and de La Vallée Poussin sums.

Multi-indices are stored as integer arrays of shape ``(n_indices, D)`` in
strict lexicographic order of their component tuples. That single ordering is
shared by coefficient vectors, the ``phi_vector`` feature map and every
covariance matrix built in :mod:`fdavp.inference`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np

SQRT2 = np.sqrt(2.0)


def _lex_indices(D, J):
    # depth-first generation yields lexicographic order directly
    out = []
    prefix = [0] * D

    def rec(pos, budget):
        if pos == D - 1:
            for k in range(budget + 1):
                prefix[pos] = k
                out.append(tuple(prefix))
            return
        for k in range(budget + 1):
            prefix[pos] = k
            rec(pos + 1, budget - k)

    rec(0, J)
    return np.array(out, dtype=np.int64).reshape(-1, D)


@dataclass(frozen=True)
class IndexSet:
    """All multi-indices ``k`` in ``N^D`` with ``|k|_1 <= J``, lexicographically ordered."""

    D: int
    J: int
    indices: np.ndarray = field(repr=False)

    @property
    def norms(self):
        return self.indices.sum(axis=1)

    def __len__(self):
        return self.indices.shape[0]

    def position(self, k):
        """Row of multi-index ``k`` in :attr:`indices`."""
        k = tuple(int(v) for v in np.atleast_1d(k))
        if len(k) != self.D:
            raise ValueError(f"index {k} has dimension {len(k)}, expected {self.D}")
        hits = np.flatnonzero((self.indices == np.asarray(k)).all(axis=1))
        if hits.size == 0:
            raise KeyError(k)
        return int(hits[0])


def enumerate_indices(D, J):
    """Return the :class:`IndexSet` of multi-indices with ``|k|_1 <= J``.

    The cardinality is ``binomial(J + D, D)``.
    """
    if D < 1:
        raise ValueError("D must be >= 1")
    if J < 0:
        raise ValueError("J must be >= 0")
    idx = _lex_indices(int(D), int(J))
    assert idx.shape[0] == comb(J + D, D)
    return IndexSet(D=int(D), J=int(J), indices=idx)


def _as_points(t, D=None):
    t = np.asarray(t, dtype=float)
    if t.ndim == 0:
        t = t.reshape(1, 1)
    elif t.ndim == 1:
        # a single D-point when D is given and matches, else a batch of 1-d points
        if D is not None and D > 1 and t.shape[0] == D:
            t = t.reshape(1, D)
        else:
            t = t.reshape(-1, 1)
    if D is not None and t.shape[1] != D:
        raise ValueError(f"points have dimension {t.shape[1]}, expected {D}")
    return t


def basis_1d(kmax, u):
    """Values of phi_0..phi_kmax at the scalar points ``u``; shape ``(len(u), kmax + 1)``."""
    u = np.asarray(u, dtype=float).ravel()
    out = np.empty((u.size, kmax + 1))
    out[:, 0] = 1.0
    if kmax >= 1:
        m = np.arange(1, kmax // 2 + 2)
        arg = 2.0 * np.pi * np.outer(u, m)
        s = SQRT2 * np.sin(arg)
        c = SQRT2 * np.cos(arg)
        odd = np.arange(1, kmax + 1, 2)
        even = np.arange(2, kmax + 1, 2)
        out[:, odd] = s[:, (odd + 1) // 2 - 1]
        out[:, even] = c[:, even // 2 - 1]
    return out


def basis_matrix(indices, t):
    """Evaluate every basis function in ``indices`` at every point of ``t``.

    Parameters
    ----------
    indices : IndexSet or ndarray of shape (p, D)
    t : array-like of shape (n, D)

    Returns
    -------
    ndarray of shape (n, p)
    """
    idx = indices.indices if isinstance(indices, IndexSet) else np.asarray(indices)
    idx = np.atleast_2d(idx)
    D = idx.shape[1]
    t = _as_points(t, D)
    kmax = int(idx.max()) if idx.size else 0
    out = np.ones((t.shape[0], idx.shape[0]))
    for d in range(D):
        table = basis_1d(kmax, t[:, d])
        out *= table[:, idx[:, d]]
    return out


def basis_eval(k, t):
    """phi_k(t) for one multi-index and one point (or a batch of points)."""
    k = np.atleast_1d(np.asarray(k, dtype=np.int64))
    if np.any(k < 0):
        raise ValueError("multi-index components must be non-negative")
    t_arr = np.asarray(t, dtype=float)
    if t_arr.ndim <= 1 and t_arr.size == k.size:
        pts = t_arr.reshape(1, k.size)
    else:
        pts = _as_points(t_arr, k.size)
    if pts.shape[1] != k.size:
        raise ValueError(f"multi-index of dimension {k.size} used with {pts.shape[1]}-d point")
    vals = basis_matrix(k.reshape(1, -1), pts)[:, 0]
    return float(vals[0]) if vals.size == 1 else vals


def vp_weights(norms, L):
    """Shell weights of the de La Vallée Poussin sum for indices of given l1-norm.

    Weight 1 for ``|k| <= 2L``; ``(L - l) / L`` on the shells
    ``|k| in {2L + 2l - 1, 2L + 2l}``; 0 beyond ``4L - 2``.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    norms = np.asarray(norms)
    ell = np.ceil((norms - 2 * L) / 2.0)
    w = np.where(norms <= 2 * L, 1.0, (L - ell) / L)
    return np.clip(w, 0.0, 1.0)


class FourierModel:
    """Coefficients on ``{k : |k|_1 <= 4L - 2}`` defining a de La Vallée Poussin sum.

    Parameters
    ----------
    D : int
    L : int
        Truncation level, ``L >= 1``.
    coefficients : array-like of length ``len(enumerate_indices(D, 4L - 2))``
        In lexicographic order, or a mapping ``tuple -> value``. Missing keys
        of a mapping are an error.
    """

    def __init__(self, D, L, coefficients):
        if L < 1:
            raise ValueError("L must be >= 1")
        self.D = int(D)
        self.L = int(L)
        self.index_set = enumerate_indices(self.D, 4 * self.L - 2)
        if isinstance(coefficients, dict):
            coefficients = _coeffs_from_mapping(coefficients, self.index_set)
        coefficients = np.asarray(coefficients, dtype=float).ravel()
        if coefficients.shape[0] != len(self.index_set):
            raise ValueError(
                f"expected {len(self.index_set)} coefficients for D={D}, L={L}, "
                f"got {coefficients.shape[0]}"
            )
        self.coefficients = coefficients
        self.coefficients.setflags(write=False)

    @classmethod
    def from_function(cls, func, D, L, n_quad=None):
        """Coefficients of ``func`` by tensor midpoint quadrature (exact for trig polynomials)."""
        iset = enumerate_indices(D, 4 * L - 2)
        if n_quad is None:
            n_quad = max(64, 8 * L) if D > 1 else max(1024, 16 * L)
        nodes = midpoint_grid(n_quad, D)
        vals = np.asarray(func(nodes), dtype=float)
        B = basis_matrix(iset, nodes)
        return cls(D, L, B.T @ vals / nodes.shape[0])

    def as_dict(self):
        return {tuple(int(v) for v in k): float(a) for k, a in zip(self.index_set.indices, self.coefficients)}

    def __call__(self, t):
        return vp_eval(self, t)

    def __repr__(self):
        return f"FourierModel(D={self.D}, L={self.L}, n_coefficients={self.coefficients.size})"


def _coeffs_from_mapping(mapping, index_set):
    missing = [tuple(k) for k in index_set.indices if tuple(int(v) for v in k) not in mapping]
    if missing:
        raise ValueError(f"missing coefficients for indices {missing[:5]}{'...' if len(missing) > 5 else ''}")
    return np.array([mapping[tuple(int(v) for v in k)] for k in index_set.indices])


def midpoint_grid(n_per_axis, D):
    """Tensor midpoint nodes ``((i + 1/2) / n)`` on ``[0, 1]^D``, shape ``(n**D, D)``."""
    axis = (np.arange(n_per_axis) + 0.5) / n_per_axis
    mesh = np.meshgrid(*([axis] * D), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def regular_grid(n_per_axis, D):
    """Tensor grid including both endpoints, shape ``(n**D, D)``."""
    axis = np.linspace(0.0, 1.0, n_per_axis)
    mesh = np.meshgrid(*([axis] * D), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def partial_sum_eval(coeffs, L, t, D=None):
    """Triangular partial sum ``sum_{|k| <= 2L} a_k phi_k(t)``.

    ``coeffs`` is a mapping ``tuple -> value`` (absent indices are an error)
    or a vector over ``enumerate_indices(D, J)`` with ``J >= 2L``.
    """
    if isinstance(coeffs, dict):
        D = len(next(iter(coeffs)))
        iset = enumerate_indices(D, 2 * L)
        a = _coeffs_from_mapping(coeffs, iset)
    else:
        if D is None:
            raise ValueError("D is required with a coefficient vector")
        a = np.asarray(coeffs, dtype=float)
        J = _bound_from_length(D, a.size)
        iset = enumerate_indices(D, J)
        if J < 2 * L:
            raise ValueError(f"coefficient vector covers |k| <= {J}, need {2 * L}")
        keep = iset.norms <= 2 * L
        iset = IndexSet(D, 2 * L, iset.indices[keep])
        a = a[keep]
    vals = basis_matrix(iset, _as_points(t, D)) @ a
    return float(vals[0]) if vals.size == 1 else vals


def _bound_from_length(D, n):
    J = 0
    while comb(J + D, D) < n:
        J += 1
    if comb(J + D, D) != n:
        raise ValueError(f"{n} is not the size of a D={D} triangular index set")
    return J


def vp_eval(model, t):
    """de La Vallée Poussin sum ``V_L(t)`` from the closed-form shell weights."""
    pts = _as_points(t, model.D)
    w = vp_weights(model.index_set.norms, model.L)
    vals = basis_matrix(model.index_set, pts) @ (w * model.coefficients)
    return float(vals[0]) if vals.size == 1 else vals


def phi_vector(L, t, D=None):
    """Feature map with ``dot(a, phi_vector(L, t)) == vp_eval(FourierModel(D, L, a), t)``.

    Returns shape ``(p,)`` for a single point and ``(n, p)`` for a batch.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    if D is None:
        D = np.atleast_2d(np.asarray(t, dtype=float)).shape[-1] if np.ndim(t) == 2 else 1
    iset = enumerate_indices(D, 4 * L - 2)
    pts = _as_points(t, D)
    out = basis_matrix(iset, pts) * vp_weights(iset.norms, L)
    return out[0] if out.shape[0] == 1 else out


def theta_average(L, D, t):
    """``(1/L) sum_{j<L} sum_{|k| <= 2(L+j)} phi_k(t)^2`` by explicit summation."""
    if L < 1:
        raise ValueError("L must be >= 1")
    iset = enumerate_indices(D, 4 * L - 2)
    sq = basis_matrix(iset, _as_points(t, D)) ** 2
    norms = iset.norms
    total = np.zeros(sq.shape[0])
    for j in range(L):
        total += sq[:, norms <= 2 * (L + j)].sum(axis=1)
    total /= L
    return float(total[0]) if total.size == 1 else total


def theta_leading_constant(D):
    """Leading constant ``(2^(2D+1) - 2^D) / (D+1)!`` of :func:`theta_average` in ``L^D``."""
    from math import factorial

    return (2 ** (2 * D + 1) - 2**D) / factorial(D + 1)
