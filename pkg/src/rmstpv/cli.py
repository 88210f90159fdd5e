"""Command-line front end.

Subcommands::

    rmstpv fit DATA.csv --out DIR            pseudo-value GEE fit and pointwise curve
    rmstpv band DATA.csv --out DIR --seed S  adds the simultaneous band
    rmstpv tute DATA.csv --out DIR --seed S  band-inversion and bootstrap TUTE
    rmstpv pseudo DATA.csv --out DIR         pseudo-value matrix as long CSV
    rmstpv simulate scenario=2 n=200 reps=500 seed=7 --out DIR
    rmstpv truth 2                           true crossing, TUTE and RMST difference

Every run writes a ``manifest.json`` holding the resolved configuration, the
seed and the software versions. A ``--config`` file of ``key = value`` lines
overrides the matching flags. Exit status is 0 on success, 1 for input
errors and 2 for numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import platform
import sys
import warnings
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .basis import INDICATOR, NATURAL_CUBIC
from .errors import InputError, NumericalError, RmstError
from .inference import diff_curve, open_grid, simultaneous_band
from .model import arm_follow_up, fit_rmst_model, stratified_pseudo_values
from .pseudo import RestrictionGrid, pseudo_values, select_grid
from .survival import read_csv
from .tute import TuteWarning, clinical_relevance_warning, tute_ci_band, tute_ci_bootstrap
from .simlab.scenarios import (get_scenario, simulate, true_crossing, true_rmst_diff,
                               true_tute)
from .simlab.study import StudyConfig, replicate_study

log = logging.getLogger("rmstpv")

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2


class UsageError(InputError):
    pass


class _Parser(argparse.ArgumentParser):
    # usage errors share the input-error exit status instead of argparse's 2
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# -- output helpers ----------------------------------------------------------

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return None
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_clean(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def versions() -> dict:
    return {"rmstpv": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _config_dict(args) -> dict:
    skip = {"func", "config", "out", "verbose"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def write_manifest(out: Path, args, files) -> None:
    write_json(out / "manifest.json", {
        "command": args.command,
        "config": _config_dict(args),
        "seed": getattr(args, "seed", None),
        "versions": versions(),
        "outputs": sorted(files),
    })


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_seed(args):
    if args.seed is None:
        raise InputError(f"'{args.command}' is stochastic and needs an explicit --seed")


# -- configuration files -----------------------------------------------------

def read_config(path) -> dict:
    """``key = value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _apply_config(args, parser_defaults: dict):
    if not getattr(args, "config", None):
        return
    for key, raw in read_config(args.config).items():
        if key not in parser_defaults:
            raise InputError(f"{args.config}: unknown setting '{key}'")
        current = parser_defaults[key]
        setattr(args, key, _coerce(raw, current, key))


def _coerce(raw: str, like, key):
    try:
        if isinstance(like, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
        if isinstance(like, (list, tuple)):
            return [int(x) for x in raw.replace(",", " ").split()]
    except ValueError:
        raise InputError(f"setting '{key}': cannot parse {raw!r}") from None
    if key == "seed":
        return _parse_int(raw, key)
    return raw


def _parse_int(raw, key):
    try:
        return int(raw)
    except ValueError:
        raise InputError(f"setting '{key}': expected an integer, got {raw!r}") from None


# -- analysis ----------------------------------------------------------------

def _fit(args):
    sample = read_csv(args.data)
    grid = None
    if args.grid:
        grid = RestrictionGrid(_float_list(args.grid, "grid"))
    df = args.df if args.df and args.df > 0 else None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        model = fit_rmst_model(sample, grid=grid, m=args.m, df=df,
                               df_range=tuple(args.df_range), basis_kind=args.basis,
                               link=args.link, with_covariates=args.covariates,
                               stratify=not args.pooled)
    return sample, model


def _float_list(raw, name):
    try:
        return [float(x) for x in str(raw).replace(",", " ").split()]
    except ValueError:
        raise InputError(f"{name}: expected numbers, got {raw!r}") from None


def _eval_grid(args, model):
    if args.eval_grid:
        return np.asarray(_float_list(args.eval_grid, "eval-grid"))
    a, b = model.grid.bounds
    return open_grid(a, b, args.points)


def _fit_summary(args, sample, model) -> dict:
    return {
        "config": _config_dict(args),
        "version": __version__,
        "n": sample.n,
        "events": int(sample.event.sum()),
        "arm_sizes": [int(np.sum(sample.arm == 0)), int(np.sum(sample.arm == 1))],
        "restriction_grid": model.grid.taus,
        "basis": None if model.basis is None else model.basis.kind,
        "df": model.df,
        "qic_trace": model.qic_trace,
        "stratified_pseudo_values": model.stratified,
        "interior_knots": None if model.basis is None else model.basis.interior_knots,
        "boundary_knots": None if model.basis is None else model.basis.boundary_knots,
        "fit": model.fit.summary(),
    }


def _write_curve(out: Path, args, curve) -> list:
    payload = curve.to_json()
    payload["config"] = _config_dict(args)
    payload["version"] = __version__
    write_json(out / "curve.json", payload)
    with open(out / "curve.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "estimate", "se", "ci_lo", "ci_hi", "band_lo", "band_hi"])
        for row in curve.plot_rows():
            writer.writerow(["" if math.isnan(v) else repr(float(v)) for v in row])
    return ["curve.json", "curve.csv"]


def cmd_fit(args) -> int:
    sample, model = _fit(args)
    curve = diff_curve(model.fit, model.basis, _eval_grid(args, model), 1 - args.alpha)
    out = _out_dir(args)
    write_json(out / "fit.json", _fit_summary(args, sample, model))
    files = ["fit.json", *_write_curve(out, args, curve), "manifest.json"]
    write_manifest(out, args, files)
    return EXIT_OK


def cmd_band(args) -> int:
    _require_seed(args)
    sample, model = _fit(args)
    curve = diff_curve(model.fit, model.basis, _eval_grid(args, model), 1 - args.alpha)
    curve = simultaneous_band(curve, model.fit, args.alpha, args.draws, args.seed)
    out = _out_dir(args)
    write_json(out / "fit.json", _fit_summary(args, sample, model))
    files = ["fit.json", *_write_curve(out, args, curve), "manifest.json"]
    write_manifest(out, args, files)
    return EXIT_OK


def cmd_tute(args) -> int:
    _require_seed(args)
    sample, model = _fit(args)
    a, b = model.grid.bounds
    curve = diff_curve(model.fit, model.basis, open_grid(a, b, args.tute_points),
                       1 - args.alpha)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TuteWarning)
        band = tute_ci_band(curve, R=model.diff)
        boot_kwargs = {}
        if args.bootstrap_estimator == "model":
            boot_kwargs = {"model_kwargs": {"m": args.m, "df_range": tuple(args.df_range),
                                            "link": args.link, "stratify": not args.pooled}}
        boot = tute_ci_bootstrap(sample, B=args.bootstrap, seed=args.seed,
                                 estimator=args.bootstrap_estimator, level=1 - args.alpha,
                                 **boot_kwargs)
    note = clinical_relevance_warning(sample, args.floor)
    files = []
    out = _out_dir(args)
    for name, est in (("tute_band.json", band), ("tute_bootstrap.json", boot)):
        payload = est.to_json()
        if note:
            payload["warnings"].append(note)
        payload["config"] = _config_dict(args)
        payload["version"] = __version__
        write_json(out / name, payload)
        files.append(name)
    if note:
        print(f"warning: {note}", file=sys.stderr)
    write_json(out / "fit.json", _fit_summary(args, sample, model))
    files += ["fit.json", "manifest.json"]
    write_manifest(out, args, files)
    return EXIT_OK


def cmd_pseudo(args) -> int:
    sample = read_csv(args.data)
    if args.grid:
        grid = RestrictionGrid(_float_list(args.grid, "grid"))
    else:
        limit = np.inf if args.pooled else arm_follow_up(sample)
        grid = select_grid(sample, args.m, limit=limit)
    pv = pseudo_values(sample, grid) if args.pooled else stratified_pseudo_values(sample, grid)
    out = _out_dir(args)
    with open(out / "pseudo.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject", "tau", "pseudo_value"])
        for i in range(sample.n):
            for j, tau in enumerate(grid.taus):
                writer.writerow([i, repr(float(tau)), repr(float(pv.values[i, j]))])
    write_manifest(out, args, ["pseudo.csv", "manifest.json"])
    return EXIT_OK


# -- simulation ----------------------------------------------------------------

_STUDY_KEYS = {
    "scenario": int, "cell": str, "delta": float, "beta": float, "beta_b": float,
    "p": float, "n": int, "reps": int, "seed": int, "estimators": str, "m": int,
    "df_min": int, "df_max": int, "band_points": int, "tute_points": int,
    "n_draws": int, "alpha": float, "workers": int,
}


def parse_assignments(tokens) -> dict:
    """``key=value`` tokens into typed study settings."""
    out = {}
    for token in tokens:
        if "=" not in token:
            raise UsageError(f"expected key=value, got {token!r}")
        key, raw = (s.strip() for s in token.split("=", 1))
        key = key.replace("-", "_")
        if key not in _STUDY_KEYS:
            raise UsageError(f"unknown setting {key!r}; known: {', '.join(sorted(_STUDY_KEYS))}")
        try:
            out[key] = _STUDY_KEYS[key](raw)
        except ValueError:
            raise UsageError(f"setting {key!r}: cannot parse {raw!r}") from None
    return out


def study_config(settings: dict) -> StudyConfig:
    settings = dict(settings)
    cell = settings.pop("cell", None)
    if "beta" in settings:
        settings["beta_b"] = settings.pop("beta")
    if cell is not None and cell != "weibull":
        raise UsageError(f"unknown cell {cell!r}; the only cell family is 'weibull'")
    if cell is None and "scenario" not in settings:
        raise UsageError("give scenario=<id> or cell=weibull delta=.. beta=.. p=..")
    if "scenario" in settings:
        get_scenario(settings["scenario"])
    for key in ("n", "seed"):
        if key not in settings:
            raise UsageError(f"missing required setting {key!r}")
    settings.setdefault("reps", 100)
    if "estimators" in settings:
        settings["estimators"] = tuple(s for s in settings["estimators"].split(",") if s)
    try:
        return StudyConfig(**settings)
    except TypeError as exc:
        raise UsageError(str(exc)) from None


def cmd_simulate(args) -> int:
    settings = {}
    if args.config:
        for key, raw in read_config(args.config).items():
            settings.update(parse_assignments([f"{key}={raw}"]))
    settings.update(parse_assignments(args.settings))
    if args.seed is not None:
        settings.setdefault("seed", args.seed)
    if "seed" not in settings:
        raise InputError("'simulate' is stochastic and needs an explicit seed")
    out = _out_dir(args)
    if args.dataset:
        if "scenario" in settings:
            spec = get_scenario(settings["scenario"])
        else:
            spec = study_config({**settings, "reps": 100}).spec()
        if "n" not in settings:
            raise UsageError("missing required setting 'n'")
        from .survival import write_csv

        sample = simulate(spec, settings["n"], settings["seed"])
        write_csv(sample, out / "sample.csv")
        args.resolved = settings
        write_manifest(out, args, ["sample.csv", "manifest.json"])
        return EXIT_OK
    config = study_config(settings)
    report = replicate_study(config)
    report.write_csv(out / "summary.csv")
    report.write_json(out / "report.json")
    report.write_replicates(out / "replicates.csv")
    args.resolved = settings
    write_manifest(out, args, ["summary.csv", "report.json", "replicates.csv", "manifest.json"])
    return EXIT_OK


def cmd_truth(args) -> int:
    spec = get_scenario(args.scenario)
    horizon = args.horizon or spec.follow_up or 400.0
    t = np.linspace(horizon / args.points, horizon, args.points)
    payload = {
        "scenario": spec.describe(),
        "crossing": true_crossing(spec),
        "tute": true_tute(spec),
        "curve": {"t": t, "rmst_diff": true_rmst_diff(spec, t)},
        "version": __version__,
    }
    text = json.dumps(_clean(payload), indent=2, sort_keys=True)
    if args.out:
        out = _out_dir(args)
        (out / "truth.json").write_text(text + "\n")
        write_manifest(out, args, ["truth.json", "manifest.json"])
    else:
        print(text)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

def _analysis_options(p):
    p.add_argument("data", help="CSV with columns time,status,arm[,covariate...]")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="file of key = value lines overriding the flags")
    p.add_argument("--m", type=int, default=16, help="number of restriction times (default 16)")
    p.add_argument("--grid", default="", help="explicit restriction times, comma separated")
    p.add_argument("--link", choices=("identity", "log"), default="identity")
    p.add_argument("--basis", choices=(NATURAL_CUBIC, INDICATOR), default=NATURAL_CUBIC)
    p.add_argument("--df", type=int, default=0, help="spline df; 0 selects by QIC (default)")
    p.add_argument("--df-range", type=int, nargs=2, default=[4, 12], metavar=("LO", "HI"))
    p.add_argument("--points", type=int, default=30, help="evaluation points on (a, b]")
    p.add_argument("--eval-grid", default="", help="explicit evaluation times")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--covariates", action="store_true",
                   help="adjust for every extra CSV column")
    p.add_argument("--pooled", action="store_true",
                   help="pseudo-values from the pooled sample instead of within arm")
    p.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rmstpv", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"rmstpv {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit the RMST difference curve")
    _analysis_options(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("band", help="fit plus simultaneous confidence band")
    _analysis_options(p)
    p.add_argument("--draws", type=int, default=100_000, help="Monte Carlo draws for u")
    p.set_defaults(func=cmd_band)

    p = sub.add_parser("tute", help="time until treatment equipoise with intervals")
    _analysis_options(p)
    p.add_argument("--bootstrap", type=int, default=1000, help="bootstrap replicates B")
    p.add_argument("--bootstrap-estimator", choices=("plugin", "model"), default="plugin")
    p.add_argument("--tute-points", type=int, default=200)
    p.add_argument("--floor", type=float, default=0.30,
                   help="survival level below which a crossing is flagged")
    p.set_defaults(func=cmd_tute)

    p = sub.add_parser("pseudo", help="write the pseudo-value matrix")
    p.add_argument("data")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--m", type=int, default=16)
    p.add_argument("--grid", default="")
    p.add_argument("--pooled", action="store_true")
    p.set_defaults(func=cmd_pseudo)

    p = sub.add_parser("simulate", help="replicate study or a single simulated data set")
    p.add_argument("settings", nargs="*", help="key=value settings, e.g. scenario=2 n=200")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dataset", action="store_true",
                   help="write one simulated sample as CSV instead of running a study")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("truth", help="true crossing, TUTE and RMST difference of a scenario")
    p.add_argument("scenario")
    p.add_argument("--out", default=None)
    p.add_argument("--points", type=int, default=100)
    p.add_argument("--horizon", type=float, default=None)
    p.set_defaults(func=cmd_truth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command != "simulate":
            defaults = {k: v for k, v in vars(args).items() if k not in ("func", "command")}
            _apply_config(args, defaults)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (RmstError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
