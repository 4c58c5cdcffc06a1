"""Replication harness for Monte Carlo experiments.

A bench run is a sweep over one parameter with a fixed number of
replications per sweep point. Replication ``r`` at sweep point ``s`` uses
seed ``derive_seed(root, s, r)`` and writes ``rep-<seed>.csv`` into the
output directory; files already present are skipped, so an interrupted run
resumes where it stopped. BLAS is pinned to one thread inside every
replication, which makes the per-replication files independent of the
worker count.
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np
from joblib import Parallel, delayed
from threadpoolctl import threadpool_limits

from . import __version__
from .density import UniformDensity, make_density
from .design_weights import integrate, weights as design_weights
from .estimate import fourier_coefficients, optimal_L
from .fourier import FourierModel, regular_grid, vp_eval
from .inference import pointwise_interval, sigma_matrix, subsampling_bands, uniform_band_gaussian
from .regularity import RegularityEstimator
from .rng import derive_seed, generator
from .simulate import CovarianceSpec, MeanSpec, NoiseSpec, empirical_l2_error, simulate


def _specs(p):
    D = int(p.get("D", 1))
    mean = MeanSpec.from_dict(p.get("mean", {"kind": "zero"}), D)
    cov = CovarianceSpec.from_dict(p.get("cov", {"kind": "zero"}), D)
    noise = NoiseSpec.from_dict(p.get("noise", {}))
    density = make_density(p.get("density", {"kind": "uniform"}), D)
    return D, mean, cov, noise, density


def integrand_reference(t):
    """Lipschitz test integrand ``sin(2 pi t) + |t - 1/3|`` with integral ``5/18``."""
    return np.sin(2 * np.pi * t) + np.abs(t - 1.0 / 3.0)


INTEGRAND_INTEGRAL = 5.0 / 18.0


def exp_integration(p, seed):
    n = int(p["n"])
    x = generator(seed).random(n)
    dw = design_weights(x, UniformDensity(1))
    err = integrate(integrand_reference(x), dw) - INTEGRAND_INTEGRAL
    return {"error": err, "sq_error": err**2}


def _level(p, D, M_bar):
    if p.get("L", "optimal") != "optimal":
        return int(p["L"])
    return optimal_L(float(p.get("alpha", 1.0)), float(p.get("C_vp", 1.0)), float(p["K1"]), D, M_bar, p.get("rho"))


def exp_risk(p, seed):
    D, mean, cov, noise, density = _specs(p)
    N, M = int(p["N"]), int(p["M"])
    data = simulate(N, M, mean, cov, noise, density, seed, truth=False)
    L = _level(p, D, data.M_bar)
    model, _ = fourier_coefficients(data, density, L)
    risk = empirical_l2_error(lambda t: vp_eval(model, t), mean, D=D)
    return {"L": L, "risk": risk}


def exp_unbiased(p, seed):
    D, mean, cov, noise, density = _specs(p)
    data = simulate(int(p["N"]), int(p["M"]), mean, cov, noise, density, seed, truth=False)
    L = int(p.get("L", 2))
    model, _ = fourier_coefficients(data, density, L)
    J = int(p.get("J", 6))
    keep = model.index_set.norms <= J
    return {f"a_{i}": float(v) for i, v in enumerate(model.coefficients[keep])}


def exp_coverage_gaussian(p, seed):
    D, mean, cov, noise, density = _specs(p)
    N, M = int(p["N"]), int(p["M"])
    data = simulate(N, M, mean, cov, noise, density, seed, truth=False)
    L = _level(p, D, data.M_bar)
    model, _ = fourier_coefficients(data, density, L)
    sigma = sigma_matrix(data, density, L, mode=p.get("sigma_mode", "oracle"), noise=noise, cov=cov)
    target = FourierModel(D, L, mean.exact_coefficients(4 * L - 2))
    t0 = np.asarray(p.get("t0", [0.5] * D), dtype=float).reshape(1, D)
    level = float(p.get("level", 0.95))
    lo, up = pointwise_interval(model, sigma, t0, level)
    tv = vp_eval(target, t0)
    grid = regular_grid(int(p.get("grid", 512 if D == 1 else 64)), D)
    band = uniform_band_gaussian(model, sigma, level, grid, int(p.get("n_draws", 2000)), seed)
    return {
        "L": L,
        "pointwise_cover": float(lo[0] <= tv <= up[0]),
        "uniform_cover": float(band.covers(vp_eval(target, grid))),
        "critical_value": band.critical_value,
    }


def exp_coverage_subsampling(p, seed):
    D, mean, cov, noise, density = _specs(p)
    N, M = int(p["N"]), int(p["M"])
    data = simulate(N, M, mean, cov, noise, density, seed, truth=False)
    alpha = float(p.get("alpha", 1.0))
    grid = regular_grid(int(p.get("grid", 512 if D == 1 else 64)), D)
    band = subsampling_bands(
        data, density, alpha, float(p.get("level", 0.95)), p.get("N_s"), p.get("vartheta"), seed, grid,
        float(p.get("C_vp", 1.0)), p.get("K1"), p.get("rho"), p.get("sampling", "flat"),
    )
    L = band.meta["L"]
    target = FourierModel(D, L, mean.exact_coefficients(4 * L - 2))
    return {"L": L, "uniform_cover": float(band.covers(vp_eval(target, grid))), "critical_value": band.critical_value}


def exp_regularity(p, seed):
    D, mean, cov, noise, density = _specs(p)
    data = simulate(int(p["N"]), int(p["M"]), mean, cov, noise, density, seed, truth=False)
    K1, C_vp = float(p.get("K1", 1.0)), float(p.get("C_vp", 1.0))
    kwargs = {k: p[k] for k in ("tau", "tau_prime", "r_prime", "neighbor_mode", "cap") if k in p}
    est = RegularityEstimator(K1=K1, C_vp=C_vp, **kwargs).fit_dataset(data).estimate_
    L_true = optimal_L(mean.alpha, C_vp, K1, D, data.M_bar)
    return {
        "alpha_hat": est.alpha_hat,
        "j0_hat": est.j0_hat,
        "L_hat": est.L_hat,
        "L_ratio": est.L_hat / L_true,
        "C_hat": est.C_hat if est.C_hat is not None else float("nan"),
    }


EXPERIMENTS = {
    "integration": exp_integration,
    "risk": exp_risk,
    "unbiased": exp_unbiased,
    "coverage_gaussian": exp_coverage_gaussian,
    "coverage_subsampling": exp_coverage_subsampling,
    "regularity": exp_regularity,
}


def rep_path(out_dir, seed):
    return os.path.join(out_dir, f"rep-{seed:020d}.csv")


def _write_row(path, row):
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        keys = sorted(row)
        w.writerow(keys)
        w.writerow([repr(float(row[k])) if isinstance(row[k], (float, np.floating)) else row[k] for k in keys])
    os.replace(tmp, path)


def read_row(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        keys = next(r)
        vals = next(r)
    return {k: float(v) for k, v in zip(keys, vals)}


def _run_one(name, params, seed, path):
    with threadpool_limits(limits=1):
        row = EXPERIMENTS[name](params, seed)
    row = {**row, "seed": seed}
    if path is not None:
        _write_row(path, row)
    return row


def plan(config):
    """List of ``(sweep index, sweep value, replication, seed)`` work units."""
    root = int(config.get("seed", 0))
    sweep = config.get("sweep")
    values = sweep["values"] if sweep else [None]
    reps = int(config["replications"])
    return [(s, v, r, derive_seed(root, s, r)) for s, v in enumerate(values) for r in range(reps)]


def run_bench(config, out_dir=None, threads=1):
    """Run or resume a bench experiment; returns ``(rows, aggregate, summary)``.

    ``config`` keys: ``experiment``, ``replications``, ``seed``, ``params``
    and optionally ``sweep = {"variable": name, "values": [...]}`` and
    ``slope_of`` (metric whose mean is regressed on the sweep variable in
    log-log scale).
    """
    name = config["experiment"]
    if name not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {name!r}")
    base = dict(config.get("params", {}))
    sweep = config.get("sweep")
    units = plan(config)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    todo, rows = [], {}
    for s, v, r, seed in units:
        path = rep_path(out_dir, seed) if out_dir is not None else None
        if path is not None and os.path.exists(path):
            rows[(s, r)] = read_row(path)
            continue
        p = dict(base)
        if sweep:
            p[sweep["variable"]] = v
        todo.append(((s, r), p, seed, path))
    if todo:
        results = Parallel(n_jobs=max(1, int(threads)), backend="loky" if threads > 1 else "sequential")(
            delayed(_run_one)(name, p, seed, path) for _, p, seed, path in todo
        )
        for (key, _, _, _), row in zip(todo, results):
            rows[key] = {k: float(v) for k, v in row.items()}
    ordered = [(s, v, r, rows[(s, r)]) for s, v, r, _ in units]
    aggregate = aggregate_rows(ordered, sweep)
    summary = {"tool_version": __version__, "config": config, "seed": int(config.get("seed", 0))}
    metric = config.get("slope_of")
    if sweep and metric:
        x = np.log([a[sweep["variable"]] for a in aggregate])
        if metric == "rmse":
            # root of the mean squared error, not the mean of per-replication roots
            y = 0.5 * np.log([a["sq_error_mean"] for a in aggregate])
        else:
            y = np.log([a[f"{metric}_mean"] for a in aggregate])
        summary["slope_fit"] = {"metric": metric, "slope": float(np.polyfit(x, y, 1)[0])}
    if out_dir is not None:
        write_aggregate(os.path.join(out_dir, "aggregate.csv"), aggregate)
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(summary, fh, sort_keys=True, indent=1)
    return [row for *_, row in ordered], aggregate, summary


def aggregate_rows(ordered, sweep=None):
    out = []
    groups = {}
    for s, v, r, row in ordered:
        groups.setdefault((s, v), []).append(row)
    for (s, v), rows in groups.items():
        keys = sorted(k for k in rows[0] if k != "seed")
        agg = {sweep["variable"]: v} if sweep else {}
        agg["reps"] = len(rows)
        for k in keys:
            vals = np.array([row[k] for row in rows])
            agg[f"{k}_mean"] = float(vals.mean())
            agg[f"{k}_se"] = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else float("nan")
        out.append(agg)
    return out


def write_aggregate(path, aggregate):
    keys = list(aggregate[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for a in aggregate:
            w.writerow([repr(a[k]) if isinstance(a[k], float) else a[k] for k in keys])


def log_slope(x, y):
    """Least-squares slope of ``log y`` on ``log x``."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])
