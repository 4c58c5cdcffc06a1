"""Command-line front end.

``fdavp simulate|estimate|infer|regularity|bench --config FILE --out PATH``

The configuration is a JSON object with one block per command (``simulate``,
``estimate``, ``infer``, ``regularity``, ``bench``) plus optional ``dataset``
and ``model`` paths. Exit codes: 0 success, 2 configuration error,
3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import re
import sys

import jsonschema
import numpy as np

from . import __version__
from .bench import EXPERIMENTS, run_bench
from .density import make_density
from .estimate import FourierMeanEstimator, estimate_K1, load_model, model_to_dict, optimal_L
from .fourier import regular_grid, vp_eval
from .inference import (
    NumericalFailure,
    rates,
    sigma_matrix,
    subsampling_bands,
    undersmoothed_L,
    uniform_band_gaussian,
)
from .regularity import (
    DEFAULT_CAP,
    DEFAULT_R_PRIME,
    DEFAULT_TAU,
    DEFAULT_TAU_PRIME,
    RegularityEstimator,
)
from .simulate import (
    CovarianceSpec,
    DegenerateCovarianceError,
    FunctionalDataset,
    NoiseSpec,
    simulate_from_config,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_posint = {"type": "integer", "minimum": 1}

DENSITY = {
    "type": "object",
    "properties": {"kind": {"enum": ["uniform", "product-beta"]}, "a": _pos, "b": _pos, "D": _posint},
    "required": ["kind"],
    "additionalProperties": False,
}
MEAN = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["zero", "trig", "weierstrass"]},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "J_max": _posint,
        "amplitude": _num,
        "offset": _num,
        "coefficients": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {"k": {"type": "array", "items": {"type": "integer", "minimum": 0}}, "value": _num},
                "required": ["k", "value"],
                "additionalProperties": False,
            },
        },
    },
    "required": ["kind"],
    "additionalProperties": False,
}
COV = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["zero", "exponential", "matern32", "fbm"]},
        "scale": _pos,
        "H": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "variance": {"type": "number", "minimum": 0},
    },
    "required": ["kind"],
    "additionalProperties": False,
}
NOISE = {
    "type": "object",
    "properties": {
        "intercept": {"type": "number", "minimum": 0},
        "slope": _num,
        "law": {"enum": ["gaussian", "rademacher", "student-t"]},
        "df": {"type": "number", "minimum": 4},
    },
    "additionalProperties": False,
}
SIMULATE = {
    "type": "object",
    "properties": {
        "D": {"type": "integer", "minimum": 1, "maximum": 3},
        "N": _posint,
        "M": {
            "oneOf": [
                _posint,
                {
                    "type": "object",
                    "properties": {"low": _posint, "high": _posint},
                    "required": ["low", "high"],
                    "additionalProperties": False,
                },
            ]
        },
        "mean": MEAN,
        "cov": COV,
        "noise": NOISE,
        "density": DENSITY,
        "seed": {"type": "integer", "minimum": 0},
        "truth": {"type": "boolean"},
        "csv": {"type": "boolean"},
    },
    "required": ["D", "N", "M"],
    "additionalProperties": False,
}
ESTIMATE = {
    "type": "object",
    "properties": {
        "L": {"oneOf": [_posint, {"const": "optimal"}]},
        "optimal": {
            "type": "object",
            "properties": {
                "alpha": _pos,
                "C_vp": _pos,
                "K1": {"oneOf": [_pos, {"const": "plug-in"}]},
                "rho": _pos,
            },
            "additionalProperties": False,
        },
        "density": DENSITY,
        "weights": {
            "type": "object",
            "properties": {"route": {"enum": ["auto", "exact", "mc"]}, "Q": _posint, "seed": {"type": "integer", "minimum": 0}},
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}
INFER = {
    "type": "object",
    "properties": {
        "method": {"enum": ["gaussian", "subsampling"]},
        "level": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "grid": _posint,
        "n_draws": _posint,
        "N_s": _posint,
        "vartheta": {"oneOf": [{"type": "number", "minimum": 1}, {"const": "auto"}]},
        "sigma_mode": {"enum": ["oracle", "plug-in"]},
        "alpha": _pos,
        "C_vp": _pos,
        "K1": {"oneOf": [_pos, {"const": "plug-in"}]},
        "centering": {"enum": ["truncation", "mean"]},
        "sampling": {"enum": ["flat", "curves"]},
        "seed": {"type": "integer", "minimum": 0},
        "density": DENSITY,
    },
    "additionalProperties": False,
}
REGULARITY = {
    "type": "object",
    "properties": {
        "tau": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "tau_prime": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "r_prime": _pos,
        "neighbor_mode": {"enum": ["adjacent", "shell"]},
        "cap": _pos,
        "K1": _pos,
        "C_vp": _pos,
        "K": {"type": "integer", "minimum": 2},
        "J": _posint,
    },
    "additionalProperties": False,
}
BENCH = {
    "type": "object",
    "properties": {
        "experiment": {"enum": sorted(EXPERIMENTS)},
        "replications": _posint,
        "seed": {"type": "integer", "minimum": 0},
        "params": {"type": "object"},
        "sweep": {
            "type": "object",
            "properties": {"variable": {"type": "string"}, "values": {"type": "array", "minItems": 1}},
            "required": ["variable", "values"],
            "additionalProperties": False,
        },
        "slope_of": {"type": "string"},
    },
    "required": ["experiment", "replications"],
    "additionalProperties": False,
}
SCHEMA = {
    "type": "object",
    "properties": {
        "simulate": SIMULATE,
        "estimate": ESTIMATE,
        "infer": INFER,
        "regularity": REGULARITY,
        "bench": BENCH,
        "dataset": {"type": "string"},
        "model": {"type": "string"},
    },
    "additionalProperties": False,
}

DEFAULTS = {
    "simulate": {
        "mean": {"kind": "zero"},
        "cov": {"kind": "zero"},
        "noise": {"intercept": 0.0, "slope": 0.0, "law": "gaussian"},
        "density": {"kind": "uniform"},
        "seed": 0,
        "truth": True,
        "csv": False,
    },
    "estimate": {
        "L": "optimal",
        "optimal": {"alpha": 1.0, "C_vp": 1.0, "K1": "plug-in"},
        "weights": {"route": "auto", "seed": 0},
    },
    "infer": {
        "method": "gaussian",
        "level": 0.95,
        "n_draws": 2000,
        "vartheta": "auto",
        "sigma_mode": "plug-in",
        "alpha": 1.0,
        "C_vp": 1.0,
        "K1": "plug-in",
        "centering": "truncation",
        "sampling": "flat",
        "seed": 0,
    },
    "regularity": {
        "tau": DEFAULT_TAU,
        "tau_prime": DEFAULT_TAU_PRIME,
        "r_prime": DEFAULT_R_PRIME,
        "neighbor_mode": "adjacent",
        "cap": DEFAULT_CAP,
        "K1": 1.0,
        "C_vp": 1.0,
    },
    "bench": {"seed": 0, "params": {}},
}


def _merge(defaults, given):
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _line_of(text, path):
    # line of the deepest key of ``path`` found in order in the raw text
    pos, line = 0, None
    for key in path:
        if isinstance(key, int):
            continue
        m = re.compile(r'"%s"\s*:' % re.escape(str(key))).search(text, pos)
        if m is None:
            break
        pos = m.end()
        line = text.count("\n", 0, m.start()) + 1
    return line


def load_config(path):
    """Parse and schema-validate a configuration file; errors carry line numbers."""
    with open(path) as fh:
        text = fh.read()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = []
        for err in errors:
            path_keys = list(err.absolute_path)
            if err.validator == "additionalProperties":
                extra = re.findall(r"'([^']+)' was unexpected", err.message)
                path_keys = path_keys + extra[:1]
            line = _line_of(text, path_keys)
            where = "/".join(str(p) for p in path_keys) or "<root>"
            msgs.append(f"{path}:{line if line else '?'}: {where}: {err.message}")
        raise ConfigError("\n".join(msgs))
    return cfg


def resolve(cfg, command):
    block = cfg.get(command, {})
    return _merge(DEFAULTS[command], block)


def _stamp(resolved, seed):
    return {"tool_version": __version__, "config": resolved, "seed": seed}


def _read_dataset(cfg, args):
    path = args.data or cfg.get("dataset")
    if not path:
        raise ConfigError("no dataset given (use --data or the 'dataset' key)")
    return FunctionalDataset.from_json(path)


def _density_for(data, block):
    spec = block.get("density") or data.meta.get("specs", {}).get("density", {"kind": "uniform"})
    return make_density(spec, data.D)


def _json_dump(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1, default=_default)


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def cmd_simulate(cfg, args):
    block = resolve(cfg, "simulate")
    if args.seed is not None:
        block["seed"] = args.seed
    data = simulate_from_config(block)
    data.meta.update(_stamp(block, block["seed"]))
    data.to_json(args.out)
    if block["csv"]:
        data.to_csv(os.path.splitext(args.out)[0] + ".csv")
    return data


def cmd_estimate(cfg, args):
    block = resolve(cfg, "estimate")
    if args.seed is not None:
        block["weights"]["seed"] = args.seed
    data = _read_dataset(cfg, args)
    density = _density_for(data, block)
    opt = block["optimal"]
    K1 = None if opt.get("K1") == "plug-in" else float(opt["K1"])
    est = FourierMeanEstimator(
        L=block["L"], density=density, alpha=opt.get("alpha", 1.0), C_vp=opt.get("C_vp", 1.0), K1=K1,
        rho=opt.get("rho"), weight_route=block["weights"]["route"], Q=block["weights"].get("Q"),
        seed=block["weights"]["seed"],
    ).fit_dataset(data)
    doc = model_to_dict(est.model_, est.weights_, block)
    doc.update(_stamp(block, block["weights"]["seed"]))
    doc["K1_plug_in"] = est.K1_
    _json_dump(doc, args.out)
    if data.truth_grid is not None:
        err = float(np.mean((np.atleast_1d(vp_eval(est.model_, data.truth_grid)) - data.truth_mu) ** 2))
        _json_dump({"L": est.L_, "l2_error": err, **_stamp(block, block["weights"]["seed"])},
                   os.path.splitext(args.out)[0] + ".risk.json")
    return est


def cmd_infer(cfg, args):
    block = resolve(cfg, "infer")
    if args.seed is not None:
        block["seed"] = args.seed
    data = _read_dataset(cfg, args)
    density = _density_for(data, block)
    D = data.D
    grid = regular_grid(block.get("grid", 512 if D == 1 else 64), D)
    vt = None if block["vartheta"] == "auto" else float(block["vartheta"])
    K1 = None if block["K1"] == "plug-in" else float(block["K1"])
    if block["method"] == "subsampling":
        band = subsampling_bands(data, density, block["alpha"], block["level"], block.get("N_s"), vt, block["seed"],
                                 grid, block["C_vp"], K1, sampling=block["sampling"])
    else:
        model_path = args.model or cfg.get("model")
        if block["centering"] == "mean":
            L = undersmoothed_L(data.M_bar, block["alpha"], D, vt)
            model = FourierMeanEstimator(L=L, density=density).fit_dataset(data).model_
        elif model_path:
            model = load_model(model_path)
        else:
            if K1 is None:
                K1 = estimate_K1(data, density)
            L = optimal_L(block["alpha"], block["C_vp"], K1, D, data.M_bar)
            model = FourierMeanEstimator(L=L, density=density).fit_dataset(data).model_
        noise = cov = None
        if block["sigma_mode"] == "oracle":
            specs = data.meta.get("specs", {})
            if "noise" not in specs or "cov" not in specs:
                raise ConfigError("oracle sigma needs a simulated dataset carrying its noise and covariance specs")
            noise = NoiseSpec.from_dict(specs["noise"])
            cov = CovarianceSpec.from_dict(specs["cov"], D)
        sigma = sigma_matrix(data, density, model.L, block["sigma_mode"], noise=noise, cov=cov)
        r1, r2 = rates(data, model.L)
        band = uniform_band_gaussian(model, sigma, block["level"], grid, block["n_draws"], block["seed"],
                                     rate=min(r1, r2), centering=block["centering"])
        band.meta.update(r1=r1, r2=r2)
    band.meta.update(_stamp(block, block["seed"]))
    base = os.path.splitext(args.out)[0]
    band.write(args.out, base + ".json")
    return band


def cmd_regularity(cfg, args):
    block = resolve(cfg, "regularity")
    data = _read_dataset(cfg, args)
    est = RegularityEstimator(**block).fit_dataset(data)
    doc = est.report()
    doc.update(_stamp(block, None))
    _json_dump(doc, args.out)
    return est


def cmd_bench(cfg, args):
    if "bench" not in cfg:
        raise ConfigError("config has no 'bench' block")
    block = resolve(cfg, "bench")
    if args.seed is not None:
        block["seed"] = args.seed
    if block["experiment"] not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {block['experiment']!r}")
    return run_bench(block, args.out, threads=args.threads)


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "infer": cmd_infer,
    "regularity": cmd_regularity,
    "bench": cmd_bench,
}


def build_parser():
    p = argparse.ArgumentParser(prog="fdavp", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON configuration file")
    p.add_argument("--out", required=True, help="output file (directory for bench)")
    p.add_argument("--data", help="dataset JSON (overrides the 'dataset' key)")
    p.add_argument("--model", help="fitted model JSON (overrides the 'model' key)")
    p.add_argument("--threads", type=int, default=None, help="worker count (falls back to FDAVP_THREADS)")
    p.add_argument("--seed", type=int, default=None, help="root seed override")
    p.add_argument("--version", action="version", version=f"fdavp {__version__}")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads is None:
        args.threads = int(os.environ.get("FDAVP_THREADS", "1") or 1)
    try:
        cfg = load_config(args.config)
        COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, DegenerateCovarianceError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
