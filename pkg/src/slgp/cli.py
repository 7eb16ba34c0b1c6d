"""Command-line interface: ``slgp simulate | cv | fit | predict``.

Flags override values from ``--config`` (a JSON object keyed by flag name
with dashes or underscores), which override built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .conjugate import PriorSpec, point_estimates
from .crossval import CvConfig, grid_search, linear_grid
from .model import fit_model
from .predict import predict_batch
from .simulate import GeneratorSpec, simulate_gp

log = logging.getLogger("slgp")

DEFAULTS = {
    "m": 15,
    "knots": None,
    "alpha": None,
    "phi": None,
    "k_folds": 5,
    "score": "crps",
    "seed": 0,
    "threads": 1,
    "ordering": "first-coordinate",
    "prior_v_scale": 1e4,
    "a_sigma": 2.0,
    "b_sigma": 1.0,
    "sqrt_transform": False,
    "dedupe": False,
    # simulate
    "n": 1000,
    "sigma2": 1.0,
    "tau2": 0.5,
    "beta": None,
    "holdout_frac": 0.2,
    # cv
    "alpha_range": [0.1, 1.9],
    "n_alpha": 5,
    "phi_range": [3.0, 30.0],
    "n_phi": 5,
    # predict
    "back_transform": False,
}


class CliError(Exception):
    pass


def _floats(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _shared(p):
    p.add_argument("--config", help="JSON file of option values")
    p.add_argument("--m", type=int, help="neighbor count (default 15)")
    p.add_argument("--knots", type=int, help="target knot count; omit for the NNGP model")
    p.add_argument("--alpha", type=float, help="noise-to-signal ratio tau2/sigma2")
    p.add_argument("--phi", type=float, help="exponential decay")
    p.add_argument("--k-folds", type=int, dest="k_folds")
    p.add_argument("--score", choices=["crps", "rmspe"])
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--ordering", choices=["first-coordinate", "coordinate-sum"])
    p.add_argument("--prior-v-scale", type=float, dest="prior_v_scale", help="V_beta = scale * I")
    p.add_argument("--a-sigma", type=float, dest="a_sigma")
    p.add_argument("--b-sigma", type=float, dest="b_sigma")
    p.add_argument("--sqrt-transform", action="store_true", default=None, dest="sqrt_transform",
                   help="model the square root of the outcome")
    p.add_argument("--dedupe", action="store_true", default=None,
                   help="average outcomes at duplicate coordinates instead of failing")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slgp", description="Conjugate NNGP / SLGP spatial interpolation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw data from the dense GP-plus-nugget model")
    _shared(p)
    p.add_argument("--n", type=int)
    p.add_argument("--sigma2", type=float)
    p.add_argument("--tau2", type=float)
    p.add_argument("--beta", type=_floats, help="comma list; first entry is the intercept")
    p.add_argument("--holdout-frac", type=float, dest="holdout_frac")
    p.add_argument("--out-train", required=True)
    p.add_argument("--out-holdout", required=True)
    p.add_argument("--manifest", help="run manifest JSON (default: <out-train>.manifest.json)")

    p = sub.add_parser("cv", help="cross-validated grid search over (alpha, phi)")
    _shared(p)
    p.add_argument("--train", required=True)
    p.add_argument("--alpha-range", type=_floats, dest="alpha_range")
    p.add_argument("--n-alpha", type=int, dest="n_alpha")
    p.add_argument("--phi-range", type=_floats, dest="phi_range")
    p.add_argument("--n-phi", type=int, dest="n_phi")
    p.add_argument("--out-scores", required=True)
    p.add_argument("--out-selected", required=True)

    p = sub.add_parser("fit", help="fit at fixed (alpha, phi) and write a model artifact")
    _shared(p)
    p.add_argument("--train", required=True)
    p.add_argument("--selected", help="selected-params JSON written by cv")
    p.add_argument("--out", required=True)

    p = sub.add_parser("predict", help="predict at new locations from a model artifact")
    _shared(p)
    p.add_argument("--model", required=True)
    p.add_argument("--locations", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--back-transform", action="store_true", default=None, dest="back_transform",
                   help="report predictions on the original scale of a square-root model")
    return parser


def effective_config(args) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise CliError(f"config file {path} does not exist")
        with open(path) as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise CliError("config file must hold a JSON object")
        loaded = {k.replace("-", "_"): v for k, v in loaded.items()}
        cfg.update(loaded)
        explicit = set(loaded)
    else:
        explicit = set()
    for k, v in vars(args).items():
        if v is not None and k not in ("config", "command", "verbose"):
            cfg[k] = v
            explicit.add(k)
    cfg["explicit"] = sorted(explicit)
    if cfg["m"] < 1:
        raise CliError("--m must be at least 1")
    if cfg["threads"] < 1:
        raise CliError("--threads must be at least 1")
    if cfg["knots"] is not None and cfg["knots"] < 1:
        raise CliError("--knots must be at least 1")
    return cfg


def _need_file(path, flag):
    if not Path(path).exists():
        raise CliError(f"{flag} {path} does not exist")


def _prior(cfg, p):
    return PriorSpec.default(p, cfg["prior_v_scale"], cfg["a_sigma"], cfg["b_sigma"])


def _manifest_config(cfg):
    return {k: v for k, v in cfg.items() if not callable(v)}


def cmd_simulate(cfg) -> None:
    if not 0 <= cfg["holdout_frac"] < 1:
        raise CliError("--holdout-frac must lie in [0, 1)")
    beta = None if cfg["beta"] is None else tuple(cfg["beta"])
    spec = GeneratorSpec(cfg["n"], cfg["sigma2"], cfg["phi"] if cfg["phi"] is not None else 12.0,
                         cfg["tau2"], beta, cfg["seed"])
    ds = simulate_gp(spec)
    rng = np.random.default_rng([spec.seed, 1])
    n_hold = int(round(cfg["holdout_frac"] * spec.n))
    perm = rng.permutation(spec.n)
    hold, train = np.sort(perm[:n_hold]), np.sort(perm[n_hold:])
    io.write_dataset(cfg["out_train"], ds, train)
    io.write_dataset(cfg["out_holdout"], ds, hold)
    manifest = cfg.get("manifest") or f"{cfg['out_train']}.manifest.json"
    with open(manifest, "w") as fh:
        json.dump({
            "command": "simulate",
            "seed": spec.seed,
            "spec": {"n": spec.n, "sigma2": spec.sigma2, "phi": spec.phi, "tau2": spec.tau2,
                     "beta": None if beta is None else list(beta)},
            "n_train": len(train),
            "n_holdout": len(hold),
            "config": _manifest_config(cfg),
        }, fh, indent=2)
    print(f"n_train={len(train)}")
    print(f"n_holdout={len(hold)}")


def cmd_cv(cfg) -> None:
    _need_file(cfg["train"], "--train")
    ds, folds = io.read_dataset(cfg["train"], cfg["sqrt_transform"], cfg["dedupe"])
    if cfg["alpha"] is not None and cfg["phi"] is not None:
        grid = [(cfg["alpha"], cfg["phi"])]
    else:
        grid = linear_grid(cfg["alpha_range"], cfg["n_alpha"], cfg["phi_range"], cfg["n_phi"])
    K = cfg["k_folds"]
    if folds is not None:
        uniq = np.unique(folds)
        folds = np.searchsorted(uniq, folds)
        K = len(uniq)
    cv_cfg = CvConfig(grid, K=K, scoring=cfg["score"], m=cfg["m"], r_target=cfg["knots"],
                      seed=cfg["seed"], ordering=cfg["ordering"], labels=folds)
    t0 = time.perf_counter()
    sg = grid_search(ds, cv_cfg, _prior(cfg, ds.p), threads=cfg["threads"])
    wall = time.perf_counter() - t0
    header = ["alpha", "phi"]
    header += [f"crps_fold{k + 1}" for k in range(K)] + ["crps_mean"]
    header += [f"rmspe_fold{k + 1}" for k in range(K)] + ["rmspe_mean"]
    cols = [[a for a, _ in sg.grid], [p for _, p in sg.grid]]
    cols += [sg.crps[:, k] for k in range(K)] + [sg.crps.mean(axis=1)]
    cols += [sg.rmspe[:, k] for k in range(K)] + [sg.rmspe.mean(axis=1)]
    io.write_table(cfg["out_scores"], header, cols)
    alpha0, phi0 = sg.selected
    with open(cfg["out_selected"], "w") as fh:
        json.dump({
            "alpha": alpha0,
            "phi": phi0,
            "scoring": cfg["score"],
            "score": float(sg.mean_scores[sg.argmin]),
            "variant": "nngp" if cfg["knots"] is None else "slgp",
            "wall_time_s": wall,
            "config": _manifest_config(cfg),
        }, fh, indent=2)
    print(f"alpha={io.fmt(alpha0)}")
    print(f"phi={io.fmt(phi0)}")
    print(f"{cfg['score']}={io.fmt(sg.mean_scores[sg.argmin])}")


def cmd_fit(cfg) -> None:
    _need_file(cfg["train"], "--train")
    if cfg.get("selected"):
        _need_file(cfg["selected"], "--selected")
        with open(cfg["selected"]) as fh:
            sel = json.load(fh)
        if cfg["alpha"] is None:
            cfg["alpha"] = sel["alpha"]
        if cfg["phi"] is None:
            cfg["phi"] = sel["phi"]
    if cfg["alpha"] is None or cfg["phi"] is None:
        raise CliError("fit needs --alpha and --phi (or --selected)")
    ds, _ = io.read_dataset(cfg["train"], cfg["sqrt_transform"], cfg["dedupe"])
    model = fit_model(ds, cfg["phi"], cfg["alpha"], m=cfg["m"], knots=cfg["knots"],
                      prior=_prior(cfg, ds.p), ordering=cfg["ordering"], threads=cfg["threads"])
    io.save_model(cfg["out"], model, {"sqrt_transform": bool(cfg["sqrt_transform"])})
    beta, sigma2 = point_estimates(model.fit)
    print(f"variant={model.variant}")
    print(f"n={ds.n}")
    print(f"p={ds.p}")
    print(f"r={model.fit.r}")
    print(f"alpha={io.fmt(cfg['alpha'])}")
    print(f"phi={io.fmt(cfg['phi'])}")
    print(f"a_star={io.fmt(model.fit.a_star)}")
    print(f"b_star={io.fmt(model.fit.b_star)}")
    for j in range(ds.p):
        print(f"beta_{j}={io.fmt(beta[j])}")
    print(f"sigma2={io.fmt(sigma2)}")
    print(f"tau2={io.fmt(model.cov.tau2(sigma2))}")


def cmd_predict(cfg) -> None:
    _need_file(cfg["model"], "--model")
    _need_file(cfg["locations"], "--locations")
    model, meta = io.load_model(cfg["model"])
    coords, X = io.read_locations(cfg["locations"])
    if X.shape[1] != model.design.p:
        raise CliError(
            f"locations have {X.shape[1] - 1} covariates, model expects {model.design.p - 1}"
        )
    if "m" in cfg["explicit"]:
        model.m = cfg["m"]
    pred = predict_batch(model, coords, X, threads=cfg["threads"])
    mean, var = pred.mean, pred.variance
    if cfg["back_transform"]:
        if not meta.get("sqrt_transform"):
            raise CliError("--back-transform needs a model fitted with --sqrt-transform")
        mean, var = mean**2 + var, 4 * mean**2 * var + 2 * var**2
    io.write_table(cfg["out"], ["x", "y", "mean", "variance"], [coords[:, 0], coords[:, 1], mean, var])
    print(f"n_predicted={len(coords)}")


COMMANDS = {"simulate": cmd_simulate, "cv": cmd_cv, "fit": cmd_fit, "predict": cmd_predict}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = effective_config(args)
        cfg["command"] = args.command
        COMMANDS[args.command](cfg)
    except (CliError, ValueError, np.linalg.LinAlgError, OSError, RuntimeError, KeyError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
