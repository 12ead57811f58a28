"""Command-line entry point: ``simulate``, ``analyze`` and ``nfactors``."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import warnings

import numpy as np
import yaml

from . import __version__
from .bounds import Estimand
from .confounder import TreatmentContrast
from .errors import ConfigError, DataError, FactorSensError
from .estimation import Dataset
from .factor_analysis import SUPPORTED_COUNT_METHODS, select_num_factors
from .confounder import max_admissible_factors
from .pipeline import normalize_analysis_config, run_analysis, sha256_file
from .simulation import (
    SimConfig,
    default_true_loadings,
    generate_dataset,
    table1_scenarios,
    true_bias,
    true_bound,
    true_pate,
    true_r2_outcome,
    true_r2_treatment,
)

GRID_COLUMNS = ("cos_theta", "feasible", "bridged", "bias_value", "first_residual", "nc_residual", "objective")


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    # result records are JSON; YAML 1.1 would read exponents such as 1e-06 as strings
    try:
        raw = json.loads(text)
    except ValueError:
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    return raw


def read_matrix_csv(path) -> tuple:
    """Read a headed, comma-separated numeric table; returns ``(header, matrix)``."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(rows) < 2:
        raise DataError(f"{path} needs a header row and at least one data row")
    header = [h.strip() for h in rows[0]]
    try:
        X = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric value ({exc}); expected a header row then numbers") from exc
    if X.ndim != 2 or X.shape[1] != len(header):
        raise DataError(f"{path}: rows do not all have {len(header)} columns")
    if not np.all(np.isfinite(X)):
        raise DataError(f"{path} contains missing or non-finite values")
    return header, X


def write_matrix_csv(path, header, X):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in X:
            w.writerow(["%.17g" % v for v in row])


def dump_json(obj, path=None):
    text = json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


# ---------------------------------------------------------------- simulate

def sim_config_from_dict(raw: dict, seed=None) -> SimConfig:
    B_def, G_def = default_true_loadings()
    m = int(raw.get("m", 3))
    try:
        B = np.asarray(raw["B"], float) if "B" in raw else B_def[:, :m]
        G = np.asarray(raw["Gamma"], float) if "Gamma" in raw else G_def[:, :m]
        return SimConfig(
            B_true=B, Gamma_true=G,
            sigma2_t=float(raw.get("sigma2_t", 2.0)), sigma2_y=float(raw.get("sigma2_y", 2.0)),
            g_spec=str(raw.get("g", "builtin_eq15")),
            C=raw.get("C"), n=int(raw.get("n", 1000)),
            seed=int(seed if seed is not None else raw.get("seed", 0)))
    except (ValueError, TypeError, KeyError, FactorSensError) as exc:
        raise ConfigError(f"invalid simulation config: {exc}") from exc


def _truth_entry(sim, est):
    d = est.contrast.delta
    return {"true_bias": true_bias(sim, est), "true_bound": true_bound(sim, est),
            "true_pate": true_pate(sim, est), "r2_outcome": true_r2_outcome(sim, est.a),
            "r2_treatment": true_r2_treatment(sim, d) if np.any(d) else 0.0}


def build_truth(sim: SimConfig, raw: dict) -> dict:
    truth = {"version": __version__, "n": sim.n, "seed": sim.seed, "k": sim.k, "q": sim.q, "m": sim.m,
             "B": sim.B_true.tolist(), "Gamma": sim.Gamma_true.tolist(),
             "sigma2_t": sim.sigma2_t, "sigma2_y": sim.sigma2_y, "g": sim.g_spec}
    if sim.C is not None:
        truth["C"] = sim.C.tolist()
    est_raw = raw.get("estimand")
    if est_raw is not None:
        a = np.asarray(est_raw["a"], float)
        t1 = np.asarray(est_raw["t1"], float)
        t2 = np.asarray(est_raw.get("t2", np.zeros(sim.k)), float)
        est = Estimand(a, TreatmentContrast(t1, t2))
        truth["estimand"] = {"a": a.tolist(), "t1": t1.tolist(), "t2": t2.tolist(), **_truth_entry(sim, est)}
    if (sim.k, sim.q) == (10, 7):
        truth["scenarios"] = {sc.name: _truth_entry(sim, sc.estimand()) for sc in table1_scenarios()}
    return truth


def cmd_simulate(args) -> int:
    raw = load_config(args.config) if args.config else {}
    sim = sim_config_from_dict(raw, args.seed)
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    data = generate_dataset(sim)
    write_matrix_csv(os.path.join(out, "T.csv"), [f"T{i + 1}" for i in range(sim.k)], data.T)
    write_matrix_csv(os.path.join(out, "Y.csv"), [f"Y{i + 1}" for i in range(sim.q)], data.Y)
    dump_json(build_truth(sim, raw), os.path.join(out, "truth.json"))
    print(f"wrote {sim.n} rows to {out}/T.csv, {out}/Y.csv and {out}/truth.json")
    return 0


# ----------------------------------------------------------------- analyze

def _truth_for(cfg, truth_path):
    with open(truth_path) as fh:
        truth = json.load(fh)
    if cfg.get("scenario") and cfg["scenario"] in truth.get("scenarios", {}):
        return truth["scenarios"][cfg["scenario"]]
    est = truth.get("estimand")
    if est and est["a"] == cfg["estimand"]["a"] and est["t1"] == cfg["estimand"]["t1"] \
            and est["t2"] == cfg["estimand"]["t2"]:
        return est
    raise ConfigError(f"truth file {truth_path} has no entry for the configured estimand")


def cmd_analyze(args) -> int:
    raw = load_config(args.config)
    if "config" in raw and "bound" in raw:
        raw = raw["config"]
    data_cfg = raw.get("data", {}) or {}
    t_path = args.treatments or data_cfg.get("treatments")
    y_path = args.outcomes or data_cfg.get("outcomes")
    if not t_path or not y_path:
        raise ConfigError("need treatment and outcome CSV paths (--treatments/--outcomes or data: in config)")
    _, T = read_matrix_csv(t_path)
    _, Y = read_matrix_csv(y_path)
    try:
        data = Dataset(T, Y)
    except FactorSensError as exc:
        raise DataError(str(exc)) from exc
    if args.seed is not None:
        raw = dict(raw, seed=args.seed)
    cfg = normalize_analysis_config(raw, data.k, data.q)
    cfg["data"] = {"treatments": str(t_path), "outcomes": str(y_path)}
    if cfg.get("truth") is not None:
        cfg["truth"] = str(cfg["truth"])
    truth = _truth_for(cfg, cfg["truth"]) if cfg.get("truth") else None
    record, theta = run_analysis(cfg, data, threads=args.threads, truth=truth)
    record["data_sha256"] = {"treatments": sha256_file(t_path), "outcomes": sha256_file(y_path)}
    dump_json(record, args.out)
    if args.emit_grid:
        with open(args.emit_grid, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(GRID_COLUMNS)
            for p in (theta.grid if theta is not None else []):
                w.writerow(["%.17g" % p.cos_theta, int(p.feasible), int(p.bridged), "%.17g" % p.bias_value,
                            "%.17g" % p.first_residual, "%.17g" % p.nc_residual, "%.17g" % p.objective])
    return 0


# ---------------------------------------------------------------- nfactors

def cmd_nfactors(args) -> int:
    path = args.treatments or args.outcomes
    if not path:
        raise ConfigError("need a data file (--treatments or --outcomes)")
    _, X = read_matrix_csv(path)
    methods = [args.method] if args.method else list(SUPPORTED_COUNT_METHODS)
    seed = args.seed if args.seed is not None else 0
    report = {"data": str(path), "n": int(X.shape[0]), "p": int(X.shape[1]),
              "max_admissible_m": max_admissible_factors(X.shape[1]), "seed": seed, "methods": {}}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        for meth in methods:
            res = select_num_factors(X, meth, seed=seed)
            report["methods"][meth] = {"m": res.m, "clamped": res.clamped, "raw": res.details["raw"]}
    report["warnings"] = sorted({str(w.message) for w in caught})
    for w in report["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    dump_json(report, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="factorsens", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic dataset and its truth sidecar")
    s.add_argument("--config", help="YAML simulation config (defaults used if omitted)")
    s.add_argument("--out", help="output directory (default: current directory)")
    s.add_argument("--seed", type=int, help="override the config seed")
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", help="bounds and negative-control regions for one estimand")
    a.add_argument("--config", required=True, help="YAML analysis config or a previous result record")
    a.add_argument("--treatments", help="treatment CSV (n x k, header row)")
    a.add_argument("--outcomes", help="outcome CSV (n x q, header row)")
    a.add_argument("--out", help="write the JSON result record here instead of stdout")
    a.add_argument("--seed", type=int, help="override the config seed")
    a.add_argument("--threads", type=int, default=1, help="worker threads for the numeric sweep")
    a.add_argument("--emit-grid", help="write the numeric sweep grid as CSV")
    a.set_defaults(func=cmd_analyze)

    n = sub.add_parser("nfactors", help="choose the number of latent factors")
    n.add_argument("--treatments", help="data CSV whose columns are factor-analysed")
    n.add_argument("--outcomes", help="alternative data CSV")
    n.add_argument("--method", choices=None, help=f"one of {SUPPORTED_COUNT_METHODS} (default: all)")
    n.add_argument("--seed", type=int, help="seed for parallel analysis")
    n.add_argument("--out", help="write the JSON report here instead of stdout")
    n.add_argument("--config", help="unused; accepted for symmetry")
    n.set_defaults(func=cmd_nfactors)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FactorSensError as exc:
        print(f"error [{exc.module}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"error [numerics]: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
