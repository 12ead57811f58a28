"""Configuration handling and the end-to-end analysis used by the command line."""

from __future__ import annotations

import copy
import hashlib
import warnings

import numpy as np

from . import __version__
from .bounds import (
    Estimand,
    bias_bound,
    naive_effect,
    no_nc_bias_region,
    partial_id_region,
    partial_r2_outcome,
    partial_r2_treatment,
)
from .confounder import TreatmentContrast, conditional_moments
from .errors import ConfigError, DegenerateNC, JTooLarge, SingularKbb
from .estimation import Dataset, FitDiagnostics, fit_g_check, fit_outcome_model, fit_treatment_model
from .factor_analysis import SUPPORTED_COUNT_METHODS, select_num_factors
from .ncnumeric import SweepConfig, sweep_theta
from .negcontrol import (
    NegativeControlSpec,
    build_nc_artifacts,
    compatibility_check,
    detect_point_identification,
    nc_interval_multiple,
    nc_interval_single,
)
from .regression import RegressOptions
from .simulation import scenario_by_name

ANALYSIS_DEFAULTS = {
    "m": 3,
    "seed": 0,
    "regressor": {"method": "hinge", "n_knots": 5, "max_terms": 20},
    "sweep": {"grid_size": 401, "delta": None, "restarts": 5, "chunks": 1},
    "compat_tol": 1e-6,
    "point_id_tol": 1e-2,
    "strict_nc": False,
    "r2_direction": None,
    "truth_slack": 0.05,
}


def _vec(x, name, length=None):
    try:
        v = np.asarray(x, dtype=float).ravel()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} must be a list of numbers") from exc
    if length is not None and v.shape[0] != length:
        raise ConfigError(f"{name} must have length {length}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ConfigError(f"{name} must be finite")
    return [float(z) for z in v]


def _merge(defaults, given):
    out = copy.deepcopy(defaults)
    for key, val in (given or {}).items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def normalize_analysis_config(raw: dict, k: int, q: int) -> dict:
    """
    Validate a raw analysis config against the data dimensions and fill in
    defaults. The result is plain JSON-compatible data and is what gets
    echoed in the result record.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    if "config" in raw and "bound" in raw:
        raw = raw["config"]  # a previous result record
    cfg = _merge(ANALYSIS_DEFAULTS, {k_: v for k_, v in raw.items() if k_ not in ("scenario",)})

    scenario = raw.get("scenario")
    if scenario is not None:
        try:
            sc = scenario_by_name(str(scenario))
        except KeyError as exc:
            raise ConfigError(str(exc)) from exc
        if (sc.k, sc.q) != (k, q):
            raise ConfigError("benchmark scenarios need k=10 treatments and q=7 outcomes")
        cfg.setdefault("estimand", {"a": sc.a.tolist(), "t1": sc.delta_t.tolist(), "t2": [0.0] * k})
        if "negative_controls" not in raw:
            cfg["negative_controls"] = [
                {"outcome": j, "contrasts": [{"t1": sc.nc_delta_t.tolist(), "t2": [0.0] * k}]}
                for j in sc.nc_outcomes]
        cfg["scenario"] = sc.name

    est = cfg.get("estimand")
    if not isinstance(est, dict) or "a" not in est or "t1" not in est:
        raise ConfigError("config needs an estimand with 'a' and 't1' (and optionally 't2')")
    cfg["estimand"] = {"a": _vec(est["a"], "estimand.a", q), "t1": _vec(est["t1"], "estimand.t1", k),
                       "t2": _vec(est.get("t2", [0.0] * k), "estimand.t2", k)}
    if not any(cfg["estimand"]["a"]):
        raise ConfigError("estimand.a must be nonzero")

    ncs = cfg.get("negative_controls")
    if ncs:
        norm = []
        for i, entry in enumerate(ncs):
            try:
                j = int(entry["outcome"])
                contrasts = entry["contrasts"]
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"negative_controls[{i}] needs 'outcome' and 'contrasts'") from exc
            if not 0 <= j < q:
                raise ConfigError(f"negative_controls[{i}].outcome={j} is out of range (q={q})")
            norm.append({"outcome": j, "contrasts": [
                {"t1": _vec(c["t1"], "contrast.t1", k), "t2": _vec(c.get("t2", [0.0] * k), "contrast.t2", k)}
                for c in contrasts]})
        cfg["negative_controls"] = norm
    else:
        cfg["negative_controls"] = []

    m = cfg["m"]
    if isinstance(m, str):
        if not m.startswith("auto:") or m[5:] not in SUPPORTED_COUNT_METHODS:
            raise ConfigError(f"m must be an integer or 'auto:<{'|'.join(SUPPORTED_COUNT_METHODS)}>'")
    elif not isinstance(m, int) or m < 1:
        raise ConfigError("m must be a positive integer")
    if cfg["r2_direction"] is not None:
        cfg["r2_direction"] = _vec(cfg["r2_direction"], "r2_direction", k)
    try:
        cfg["seed"] = int(cfg["seed"])
        for key in ("compat_tol", "point_id_tol", "truth_slack"):
            cfg[key] = float(cfg[key])
        RegressOptions(**cfg["regressor"])
        SweepConfig(**cfg["sweep"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid setting: {exc}") from exc
    return cfg


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _region_entry(region):
    return {"kind": region.kind, "bias": region.to_bias().intervals_list(),
            "pate": region.to_pate().intervals_list()}


def run_analysis(cfg: dict, data: Dataset, threads: int = 1, truth: dict | None = None):
    """
    Run the full analysis for a normalized config.

    Returns
    -------
    record : dict
        JSON-ready result record.
    theta : ThetaRegion or None
        The numeric sweep, when negative controls were given.
    """
    diag = FitDiagnostics()
    record: dict = {"version": __version__, "seed": cfg["seed"], "config": cfg}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        m = cfg["m"]
        if isinstance(m, str):
            count = select_num_factors(data.T, m[5:], seed=cfg["seed"])
            record["m_selection"] = {"method": count.method, "m": count.m, "clamped": count.clamped,
                                     "max_admissible": count.max_admissible}
            m = count.m
            if m < 1:
                raise ConfigError("automatic factor-count selection returned 0 factors")
        record["m"] = m

        tm = fit_treatment_model(data, m, diagnostics=diag)
        g = fit_g_check(data, RegressOptions(**cfg["regressor"]))
        om = fit_outcome_model(data, m, g_check=g, diagnostics=diag)
        cond = conditional_moments(tm)

        e = cfg["estimand"]
        est = Estimand(np.array(e["a"]), TreatmentContrast(np.array(e["t1"]), np.array(e["t2"])))
        naive = naive_effect(om, est)
        bound = bias_bound(om, cond, est)
        d = np.array(cfg["r2_direction"]) if cfg["r2_direction"] is not None else est.delta_t
        record["naive_pate"] = naive
        record["bound"] = bound
        record["r2_outcome"] = partial_r2_outcome(om, est.a)
        record["r2_treatment"] = partial_r2_treatment(tm, d) if np.any(d) else 0.0

        regions = [no_nc_bias_region(bound, naive)]
        record["point_identified"] = {"flag": bool(bound == 0.0),
                                      "reason": "bound is zero" if bound == 0.0 else "no negative controls"}
        theta = None
        nc_diag: dict = {}
        if cfg["negative_controls"]:
            spec = NegativeControlSpec(tuple(
                (nc["outcome"], tuple(TreatmentContrast(c["t1"], c["t2"]) for c in nc["contrasts"]))
                for nc in cfg["negative_controls"]))
            art = build_nc_artifacts(spec, om, cond, est)
            nc_diag["compatible"] = compatibility_check(art, cfg["compat_tol"])
            try:
                if spec.J == 1:
                    analytic = nc_interval_single(art, strict=cfg["strict_nc"], tol=cfg["compat_tol"])
                else:
                    analytic = nc_interval_multiple(art, strict=cfg["strict_nc"], tol=cfg["compat_tol"])
                analytic.center_naive = naive
                regions.append(analytic)
                nc_diag["analytic_raw_interval"] = analytic.meta["raw_interval"]
                nc_diag["analytic_clipped"] = analytic.meta["clipped"]
            except (JTooLarge, SingularKbb, DegenerateNC) as exc:
                nc_diag["analytic_skipped"] = f"{type(exc).__name__}: {exc}"
            sweep_cfg = SweepConfig(**cfg["sweep"], seed=cfg["seed"], threads=threads)
            theta = sweep_theta(art, om, cond, est, sweep_cfg)
            theta.region.center_naive = naive
            regions.append(theta.region)
            nc_diag["sweep"] = {k_: theta.meta[k_] for k_ in
                                ("delta", "grid_size", "restarts", "restart_tol", "optimizer_runs",
                                 "n_feasible", "restart_policy")}
            flag, reason = detect_point_identification(art, tol=cfg["point_id_tol"])
            record["point_identified"] = {"flag": bool(flag or bound == 0.0), "reason": reason}

    record["regions"] = [_region_entry(r) for r in regions]
    record["diagnostics"] = {
        "heywood": diag.heywood,
        "factor_analysis_converged": diag.converged,
        "singular_design": diag.singular_design,
        "negative_controls": nc_diag,
        "warnings": sorted({f"{w.category.__name__}: {w.message}" for w in caught}),
    }
    if truth is not None:
        record["truth_check"] = truth_check(regions, truth, cfg["truth_slack"])
    return record, theta


def truth_check(regions, truth: dict, slack_frac: float) -> dict:
    """Containment of the true bias in each region, exactly and with a slack of ``slack_frac`` of the no-NC width."""
    tb = float(truth["true_bias"])
    width = regions[0].hull_width
    slack = slack_frac * width
    return {"true_bias": tb, "slack": slack,
            "contained": {r.kind: r.to_bias().contains(tb) for r in regions},
            "contained_with_slack": {r.kind: r.to_bias().contains(tb, slack) for r in regions}}
