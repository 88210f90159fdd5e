"""Replicate harness for the Weibull bias design and the RMST-curve/TUTE scenarios."""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..errors import InputError, RmstError
from ..inference import diff_curve, open_grid, simultaneous_band
from ..model import fit_rmst_model
from ..pseudo import RestrictionGrid, select_grid
from ..survival import km_fit, rmst, rmst_diff_plugin
from ..tute import TuteWarning, plugin_tute, tute_ci_band
from .scenarios import get_scenario, simulate, true_coefficients, true_rmst_diff, true_tute, \
    weibull_bias

log = logging.getLogger(__name__)

BIAS = "bias"
CURVE = "curve"
ESTIMATORS = {BIAS: ("pv_scalar", "pv_vector", "plugin"), CURVE: ("pseudo_values", "plugin")}


@dataclass(frozen=True)
class StudyConfig:
    """What to simulate and how to analyse each replicate.

    A study either targets a Weibull bias cell (``delta``, ``beta_b``, ``p``)
    or one of the numbered curve scenarios (``scenario``). ``n`` is the total
    sample size for a bias cell and the size per arm for a curve scenario.
    """

    n: int
    reps: int
    seed: int
    scenario: Optional[int] = None
    delta: Optional[float] = None
    beta_b: Optional[float] = None
    p: Optional[float] = None
    estimators: tuple = ()
    m: int = 16
    df_min: Optional[int] = None
    df_max: int = 12
    band_points: int = 30
    tute_points: int = 200
    n_draws: int = 10_000
    alpha: float = 0.05
    workers: int = 1

    def __post_init__(self):
        if self.reps < 100:
            raise InputError("a study needs at least 100 replicates")
        if self.seed is None:
            raise InputError("a seed is required")
        cell = (self.delta, self.beta_b, self.p)
        if (self.scenario is None) == all(x is None for x in cell):
            raise InputError("give either a scenario or a Weibull cell (delta, beta_b, p)")
        if self.scenario is None and any(x is None for x in cell):
            raise InputError("a Weibull cell needs delta, beta_b and p")
        unknown = set(self.estimators) - set(ESTIMATORS[self.kind])
        if unknown:
            raise InputError(f"unknown estimators {sorted(unknown)} for a {self.kind} study")

    @property
    def kind(self) -> str:
        return CURVE if self.scenario is not None else BIAS

    @property
    def df_range(self):
        lo = self.df_min if self.df_min is not None else (3 if self.kind == BIAS else 4)
        return lo, self.df_max

    def active_estimators(self):
        return tuple(self.estimators) or ESTIMATORS[self.kind]

    def spec(self):
        if self.kind == CURVE:
            return get_scenario(self.scenario)
        return weibull_bias(self.delta, self.beta_b, self.p)


@dataclass
class StudyReport:
    config: StudyConfig
    scenario: dict
    truth: dict
    rows: list
    counters: dict
    replicates: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "config": asdict(self.config),
            "scenario": self.scenario,
            "truth": self.truth,
            "counters": self.counters,
            "summary": self.rows,
        }

    def write_csv(self, path) -> None:
        fields = list(self.rows[0])
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: _fmt(v) for k, v in row.items()})

    def write_replicates(self, path) -> None:
        if not self.replicates:
            return
        fields = sorted({k for rec in self.replicates for k in rec})
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
            writer.writeheader()
            for rec in self.replicates:
                writer.writerow({k: _fmt(rec.get(k)) for k in fields})

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(_jsonable(self.to_json()), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "inf" if math.isinf(v) else ("" if math.isnan(v) else repr(round(v, 10)))
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else ("inf" if x > 0 else None if math.isnan(x) else "-inf")
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# -- one replicate ---------------------------------------------------------

def _bias_replicate(config: StudyConfig, spec, rep: int) -> dict:
    sample = simulate(spec, config.n, config.seed, rep)
    tau = spec.tau
    wanted = config.active_estimators()
    rec = {"rep": rep}
    if "pv_vector" in wanted:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            grid = select_grid(sample, config.m)
        # counted over every replicate, whether or not it is excluded below
        rec["pv_vector_extrapolated"] = bool(grid.taus[-1] < tau)
    if sample.max_event_time() < tau:
        rec["excluded"] = True
        return rec
    rec["excluded"] = False
    if "pv_scalar" in wanted:
        model = fit_rmst_model(sample, grid=RestrictionGrid([tau]), stratify=False)
        beta = model.fit.coefficients
        rec["pv_scalar_baseline"] = float(beta[model.fit.labels.index("intercept")])
        rec["pv_scalar_effect"] = float(beta[model.fit.labels.index("arm")])
    if "pv_vector" in wanted:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            model = fit_rmst_model(sample, grid=grid, df_range=config.df_range, stratify=False)
        rec["pv_vector_baseline"] = float(model.baseline(tau)[0])
        rec["pv_vector_effect"] = float(model.diff(np.array([tau]))[0])
        rec["pv_vector_df"] = model.df
    if "plugin" in wanted:
        r0, r1 = rmst(km_fit(sample, 0), tau), rmst(km_fit(sample, 1), tau)
        rec["plugin_baseline"] = float(r0)
        rec["plugin_effect"] = float(r1 - r0)
    return rec


def _curve_replicate(config: StudyConfig, spec, rep: int, tute_true: float) -> dict:
    sample = simulate(spec, config.n, config.seed, rep)
    rec = {"rep": rep, "excluded": False}
    wanted = config.active_estimators()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = fit_rmst_model(sample, m=config.m, df_range=config.df_range)
    a, b = model.grid.bounds
    grid = open_grid(a, b, config.band_points)
    truth = true_rmst_diff(spec, grid)
    if "pseudo_values" in wanted:
        curve = diff_curve(model.fit, model.basis, grid, 1 - config.alpha)
        curve = simultaneous_band(curve, model.fit, config.alpha, config.n_draws,
                                  seed=[config.seed, rep])
        rec["pv_bias"] = float(np.mean(np.abs(curve.estimate - truth)))
        rec["pv_signed_bias"] = float(np.mean(curve.estimate - truth))
        rec["pv_covered"] = bool(np.all((curve.band_lo <= truth) & (truth <= curve.band_hi)))
        rec["pv_length"] = float(np.mean(curve.band_hi - curve.band_lo))
        rec["pv_u"] = curve.critical_value
        rec["pv_df"] = model.df
        fine = diff_curve(model.fit, model.basis, open_grid(a, b, config.tute_points),
                          1 - config.alpha)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TuteWarning)
            est = tute_ci_band(fine, R=model.diff)
        rec["pv_tute"] = est.point
        rec["pv_tute_lo"] = est.ci_lo
        rec["pv_tute_hi"] = est.ci_hi
        rec["pv_tute_covered"] = bool(est.ci_lo <= tute_true <= est.ci_hi)
    if "plugin" in wanted:
        est = rmst_diff_plugin(sample, grid, allow_extrapolation=True)
        rec["plugin_bias"] = float(np.mean(np.abs(est - truth)))
        rec["plugin_signed_bias"] = float(np.mean(est - truth))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TuteWarning)
            rec["plugin_tute"] = plugin_tute(sample)
    return rec


def _run_one(args):
    config, rep, tute_true = args
    spec = config.spec()
    try:
        if config.kind == BIAS:
            return _bias_replicate(config, spec, rep)
        return _curve_replicate(config, spec, rep, tute_true)
    except (RmstError, np.linalg.LinAlgError) as exc:
        log.warning("replicate %d failed: %s", rep, exc)
        return {"rep": rep, "excluded": False, "failed": True, "error": str(exc)}


# -- aggregation -----------------------------------------------------------

def _mean(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else math.nan


def _summarise_bias(config, truth, records):
    used = [r for r in records if not r["excluded"] and not r.get("failed")]
    rows = []
    for est in config.active_estimators():
        rows.append({
            "cell": config.spec().name,
            "delta": config.delta,
            "beta_b": config.beta_b,
            "p": config.p,
            "n": config.n,
            "estimator": est,
            "baseline_bias": _mean([r[f"{est}_baseline"] for r in used]) - truth["baseline"],
            "effect_bias": _mean([r[f"{est}_effect"] for r in used]) - truth["effect"],
            "used": len(used),
        })
    counters = {
        "reps": len(records),
        "excluded_last_event": sum(r["excluded"] for r in records),
        "failed": sum(bool(r.get("failed")) for r in records),
        "vector_extrapolated": sum(bool(r.get("pv_vector_extrapolated")) for r in records),
    }
    return rows, counters


def _tute_stats(points, tute_true):
    points = np.asarray(points, dtype=float)
    finite = points[np.isfinite(points)]
    if finite.size == 0 or not math.isfinite(tute_true):
        return math.nan, math.nan, int(points.size - finite.size)
    err = finite - tute_true
    return float(err.mean()), float(np.sqrt(np.mean(err ** 2))), int(points.size - finite.size)


def _summarise_curve(config, truth, records):
    used = [r for r in records if not r.get("failed")]
    tute_true = truth["tute"]
    rows = []
    for est in config.active_estimators():
        prefix = "pv" if est == "pseudo_values" else "plugin"
        row = {
            "scenario": config.scenario,
            "n_per_arm": config.n,
            "estimator": est,
            "curve_bias": _mean([r[f"{prefix}_bias"] for r in used]),
            "curve_signed_bias": _mean([r[f"{prefix}_signed_bias"] for r in used]),
            "coverage": math.nan,
            "length": math.nan,
            "tute_bias": math.nan,
            "tute_coverage": math.nan,
            "tute_rmse": math.nan,
            "tute_infinite": 0,
            "right_open": math.nan,
            "used": len(used),
        }
        bias, rmse, n_inf = _tute_stats([r[f"{prefix}_tute"] for r in used], tute_true)
        row.update(tute_bias=bias, tute_rmse=rmse, tute_infinite=n_inf)
        if est == "pseudo_values":
            row["coverage"] = _mean([float(r["pv_covered"]) for r in used])
            row["length"] = _mean([r["pv_length"] for r in used])
            if math.isfinite(tute_true):
                row["tute_coverage"] = _mean([float(r["pv_tute_covered"]) for r in used])
            row["right_open"] = _mean([float(math.isinf(r["pv_tute_hi"])) for r in used])
        rows.append(row)
    counters = {"reps": len(records), "failed": len(records) - len(used)}
    return rows, counters


def replicate_study(config: StudyConfig, keep_replicates: bool = True) -> StudyReport:
    """Simulate ``config.reps`` data sets and summarise every estimator.

    Replicate ``r`` draws from the stream keyed by ``(seed, r)``, so the report
    does not depend on ``workers`` or on execution order. Replicates that fail
    are logged, counted and left out of the summaries.
    """
    spec = config.spec()
    if config.kind == BIAS:
        base, effect = true_coefficients(spec)
        truth = {"tau": spec.tau, "baseline": base, "effect": effect}
        tute_true = math.nan
    else:
        tute_true = true_tute(spec)
        truth = {"tute": tute_true}
    jobs = [(config, rep, tute_true) for rep in range(config.reps)]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            records = list(pool.map(_run_one, jobs, chunksize=max(1, config.reps // (4 * config.workers))))
    else:
        records = [_run_one(job) for job in jobs]
    if config.kind == BIAS:
        rows, counters = _summarise_bias(config, truth, records)
    else:
        rows, counters = _summarise_curve(config, truth, records)
    if counters["failed"] > 0.10 * config.reps:
        log.warning("%d of %d replicates failed", counters["failed"], config.reps)
    return StudyReport(config, spec.describe(), truth, rows, counters,
                       records if keep_replicates else [])
