"""Pooled control-neighbour Fourier coefficients and the de La Vallée Poussin mean estimator."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from math import ceil, factorial, floor

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .density import DesignDensity, make_density
from .design_weights import PooledDesign, WeightConfig, weights as design_weights
from .fourier import FourierModel, basis_matrix, enumerate_indices, partial_sum_eval, vp_eval
from .simulate import FunctionalDataset

# variance constant of the control-neighbour weights in dimension one
RHO_1D = 2.5


def _unpack(data):
    if isinstance(data, FunctionalDataset):
        T, Y, groups = data.arrays()
        return T, Y, groups
    T, Y, groups = data
    T = np.asarray(T, dtype=float)
    if T.ndim == 1:
        T = T.reshape(-1, 1)
    return T, np.asarray(Y, dtype=float).ravel(), np.asarray(groups)


def _pair_count(groups):
    _, M = np.unique(groups, return_counts=True)
    return int((M * (M - 1)).sum())


def coefficients_from_weights(T, Y, dw, density, L):
    """``a_k = sum_j w_j Y_j phi_k(T_j) / f_T(T_j)`` for ``|k|_1 <= 4L - 2``."""
    D = T.shape[1]
    f = density.pdf(T)
    if np.any(f <= 0):
        raise ValueError("design density vanishes at a design point")
    iset = enumerate_indices(D, 4 * L - 2)
    B = basis_matrix(iset, T)
    return FourierModel(D, L, B.T @ (dw.weight * Y / f))


def fourier_coefficients(data, density, L, weight_config=None, weights=None):
    """Estimate the coefficients of the mean on ``{|k|_1 <= 4L - 2}``.

    Parameters
    ----------
    data : FunctionalDataset or tuple (T, Y, groups)
    density : DesignDensity
        The known design density.
    L : int
    weight_config : WeightConfig or dict, optional
    weights : DesignWeights, optional
        Reused instead of being recomputed.

    Returns
    -------
    model : FourierModel
    weights : DesignWeights
    """
    T, Y, groups = _unpack(data)
    if T.shape[0] < 4:
        raise ValueError("need at least 4 pooled observations")
    if weights is None:
        weights = design_weights(PooledDesign(T, curve=groups), density, weight_config)
    return coefficients_from_weights(T, Y, weights, density, int(L)), weights


def mean_estimator(model):
    """Evaluator ``t -> V_L(t)`` of a fitted model."""
    return lambda t: vp_eval(model, t)


def partial_sum_estimator(model):
    """Naive truncated series ``S_L`` built from the same coefficients."""
    keep = model.index_set.norms <= 2 * model.L
    coeffs = {tuple(int(v) for v in k): float(a) for k, a, m in zip(model.index_set.indices, model.coefficients, keep) if m}
    return lambda t: partial_sum_eval(coeffs, model.L, t)


def optimal_constant(alpha, C_vp, K1, D, rho=None):
    """``C*`` of the optimal truncation level."""
    if min(alpha, C_vp, K1) <= 0:
        raise ValueError("alpha, C_vp and K1 must be positive")
    rho = RHO_1D if rho is None else float(rho)
    num = 2.0 * alpha * C_vp * factorial(D + 1)
    den = D * K1 * rho * (2 ** (2 * D + 1) - 2**D)
    return (num / den) ** (1.0 / (2.0 * alpha + D))


def optimal_L(alpha, C_vp, K1, D, M_bar, rho=None):
    """Risk-minimising truncation ``max(1, floor(C* M_bar^{1/(2 alpha + D)}))``.

    Examples
    --------
    >>> optimal_L(1.0, 1.0, 1.0, 1, 1000)
    6
    """
    if M_bar <= 0:
        raise ValueError("M_bar must be positive")
    c = optimal_constant(alpha, C_vp, K1, D, rho)
    return max(1, int(floor(c * M_bar ** (1.0 / (2.0 * alpha + D)))))


def pilot_level(M_bar, D):
    return max(1, int(ceil(M_bar ** (1.0 / (2.0 + D)))))


def pilot_residuals(data, density, L0=None, weights=None):
    """Residuals of a pilot fit at level ``L0`` (default ``ceil(M_bar^{1/(2+D)})``)."""
    T, Y, groups = _unpack(data)
    L0 = pilot_level(T.shape[0], T.shape[1]) if L0 is None else int(L0)
    model, weights = fourier_coefficients((T, Y, groups), density, L0, weights=weights)
    return Y - vp_eval(model, T), weights


def estimate_K1(data, density, L0=None, weights=None):
    """Plug-in ``int (sigma^2 + gamma(t, t)) / f_T`` from squared pilot residuals."""
    T, Y, groups = _unpack(data)
    r, _ = pilot_residuals((T, Y, groups), density, L0, weights)
    f = density.pdf(T)
    return float(np.mean(r**2 / f**2))


@dataclass(frozen=True)
class RegimeReport:
    sparse_term: float
    dense_term: float
    label: str

    def to_dict(self):
        return asdict(self)


def regime(data, alpha, D=None):
    """Compare ``M_bar^{-2a/(2a+D)}`` with ``sum M_i(M_i-1) / (M_bar(M_bar-1))``."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    T, _, groups = _unpack(data)
    D = T.shape[1] if D is None else D
    n = T.shape[0]
    sparse = n ** (-2.0 * alpha / (2.0 * alpha + D))
    dense = _pair_count(groups) / (n * (n - 1.0))
    ratio = sparse / dense if dense > 0 else np.inf
    if 0.5 <= ratio <= 2.0:
        label = "boundary"
    else:
        label = "sparse" if sparse > dense else "dense"
    return RegimeReport(float(sparse), float(dense), label)


class FourierMeanEstimator(RegressorMixin, BaseEstimator):
    """Mean function of pooled functional data as a de La Vallée Poussin sum.

    Parameters
    ----------
    L : int or "optimal"
        Truncation level. ``"optimal"`` evaluates :func:`optimal_L` with
        ``alpha``, ``C_vp`` and ``K1`` (``K1=None`` means plug-in).
    density : DesignDensity or dict, optional
        Known design density (uniform when omitted).
    alpha, C_vp, K1, rho : float
        Constants of the optimal level.
    weight_route : {"auto", "exact", "mc"}
    Q : int, optional
        Monte Carlo volume budget.
    seed : int
        Seed of the volume draws.

    Attributes
    ----------
    model_ : FourierModel
    coef_ : ndarray
        Coefficients in lexicographic index order.
    L_ : int
    weights_ : DesignWeights
    K1_ : float or None
    """

    def __init__(self, L="optimal", density=None, alpha=1.0, C_vp=1.0, K1=None, rho=None,
                 weight_route="auto", Q=None, seed=0):
        self.L = L
        self.density = density
        self.alpha = alpha
        self.C_vp = C_vp
        self.K1 = K1
        self.rho = rho
        self.weight_route = weight_route
        self.Q = Q
        self.seed = seed

    def _density(self, D):
        dens = self.density if isinstance(self.density, DesignDensity) else make_density(self.density or {"kind": "uniform"}, D)
        if dens.D != D:
            raise ValueError(f"density has dimension {dens.D}, data has {D}")
        return dens

    def fit(self, X, y, groups=None):
        """Fit on pooled locations ``X`` (n, D), responses ``y`` and curve labels ``groups``."""
        X = check_array(X, ensure_min_samples=4)
        y = np.asarray(y, dtype=float).ravel()
        if y.shape[0] != X.shape[0]:
            raise ValueError("X and y have inconsistent lengths")
        groups = np.arange(X.shape[0]) if groups is None else np.asarray(groups)
        D = X.shape[1]
        dens = self._density(D)
        cfg = WeightConfig(route=self.weight_route, Q=self.Q, seed=self.seed)
        dw = design_weights(PooledDesign(X, curve=groups), dens, cfg)
        self.K1_ = None
        if self.L == "optimal":
            K1 = self.K1
            if K1 is None:
                K1 = estimate_K1((X, y, groups), dens, weights=dw)
                self.K1_ = K1
            L = optimal_L(self.alpha, self.C_vp, max(K1, 1e-12), D, X.shape[0], self.rho)
        else:
            L = int(self.L)
            if L < 1:
                raise ValueError("L must be >= 1")
        self.model_ = coefficients_from_weights(X, y, dw, dens, L)
        self.coef_ = np.asarray(self.model_.coefficients)
        self.L_ = L
        self.weights_ = dw
        self.n_features_in_ = D
        self.M_bar_ = X.shape[0]
        self.pair_count_ = _pair_count(groups)
        return self

    def fit_dataset(self, data):
        T, Y, groups = data.arrays()
        return self.fit(T, Y, groups)

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, model was fitted with {self.n_features_in_}")
        return np.atleast_1d(vp_eval(self.model_, X))

    def to_dict(self, config=None):
        check_is_fitted(self, "model_")
        return model_to_dict(self.model_, self.weights_, config or self.get_params_json())

    def get_params_json(self):
        params = self.get_params()
        if isinstance(params.get("density"), DesignDensity):
            params["density"] = params["density"].to_dict()
        return params


def model_to_dict(model, weights=None, config=None):
    doc = {
        "D": model.D,
        "L": model.L,
        "index_order": "lex",
        "indices": model.index_set.indices.tolist(),
        "coefficients": model.coefficients.tolist(),
    }
    if weights is not None:
        doc["weights_meta"] = dict(weights.meta)
    if config is not None:
        doc["config"] = config
    return doc


def save_model(path, model, weights=None, config=None):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model, weights, config), fh, sort_keys=True)


def load_model(source):
    if isinstance(source, dict):
        doc = source
    else:
        with open(source) as fh:
            doc = json.load(fh)
    if doc.get("index_order", "lex") != "lex":
        raise ValueError("only lexicographic index order is supported")
    return FourierModel(int(doc["D"]), int(doc["L"]), doc["coefficients"])
