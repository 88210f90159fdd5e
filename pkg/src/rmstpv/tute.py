"""Time until treatment equipoise: the positive return-to-zero of the RMST difference."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import optimize

from .errors import InputError, NumericalError, RmstError
from .inference import RmstDiffCurve
from .survival import SurvivalSample, common_follow_up, km_fit, plugin_diff_function, rmst

NO_FINITE = "no evidence for finite TUTE"


class TuteWarning(UserWarning):
    pass


@dataclass
class TuteEstimate:
    point: float
    ci_lo: float
    ci_hi: float
    method: str
    frac_infinite: Optional[float] = None
    n_failed: int = 0
    warnings: list = field(default_factory=list)

    @property
    def finite(self) -> bool:
        return math.isfinite(self.point)

    def to_json(self) -> dict:
        def enc(x):
            return x if math.isfinite(x) else "inf"

        return {
            "point": enc(self.point),
            "ci": [enc(self.ci_lo), enc(self.ci_hi)],
            "method": self.method,
            "frac_infinite": self.frac_infinite,
            "n_failed": self.n_failed,
            "warnings": list(self.warnings),
        }


def _evaluate(R, t):
    try:
        out = np.asarray(R(t), dtype=float)
        if out.shape == t.shape:
            return out
    except (TypeError, ValueError):
        pass
    return np.array([float(R(x)) for x in t])


def tute_point(R: Callable, search_interval, departure_tol: Optional[float] = None,
               n_scan: int = 2001) -> float:
    """Smallest ``t`` after ``R`` departs from zero at which ``R`` changes sign.

    ``R`` is scanned on an even grid over ``search_interval``. Departure is the
    first scan point with ``|R| > departure_tol`` (default ``1e-3 max |R|``);
    the first later sign change is refined by bisection to ``1e-6 * t_hi``.
    Returns ``inf`` when there is no sign change.
    """
    t_lo, t_hi = (float(x) for x in search_interval)
    if not 0 < t_lo < t_hi:
        raise InputError("search interval must satisfy 0 < t_lo < t_hi")
    t = np.linspace(t_lo, t_hi, n_scan)
    r = _evaluate(R, t)
    peak = np.max(np.abs(r))
    tol = 1e-3 * peak if departure_tol is None else departure_tol
    departed = np.flatnonzero(np.abs(r) > tol)
    if departed.size == 0:
        warnings.warn("curves indistinguishable: R never departs from zero", TuteWarning,
                      stacklevel=2)
        return math.inf
    dep = departed[0]
    sign = np.sign(r[dep])
    later = np.flatnonzero(sign * r[dep + 1:] <= 0)
    if later.size == 0:
        return math.inf
    j = dep + 1 + later[0]
    if r[j] == 0:
        return float(t[j])
    return float(optimize.bisect(lambda x: float(R(x)), t[j - 1], t[j], xtol=1e-6 * t_hi))


def _crossing(t0, t1, v0, v1):
    if v0 == v1:
        return t1
    return t0 + (t1 - t0) * v0 / (v0 - v1)


def tute_ci_band(curve: RmstDiffCurve, R: Optional[Callable] = None,
                 departure_tol: Optional[float] = None, noise_floor: float = 0.0) -> TuteEstimate:
    """TUTE with an interval from the zeros of the pointwise confidence limits.

    The curve departs from zero where ``|R|`` first exceeds both
    ``departure_tol`` (default ``1e-3 max |R|``) and ``noise_floor`` standard
    errors, so that sampling noise around a structural zero does not fix the
    direction of the curve. The grid should not include the first restriction
    time, where the estimate is pinned near zero. After orienting the curve so
    that it departs upwards, the upper end of the interval is where the lower limit first reaches zero (``inf`` if never) and
    the lower end is where the significant stretch preceding the point estimate
    ends (``0`` if the curve is never significantly away from zero before it).
    """
    grid, est = curve.eval_grid, curve.estimate
    if grid.size < 2:
        raise InputError("need at least two evaluation points")
    peak = np.max(np.abs(est))
    tol = 1e-3 * peak if departure_tol is None else departure_tol
    departed = np.flatnonzero(np.abs(est) > np.maximum(tol, noise_floor * curve.se))
    if departed.size == 0:
        return TuteEstimate(math.inf, 0.0, math.inf, "model_band_inversion",
                            warnings=["curves indistinguishable", NO_FINITE])
    dep = departed[0]
    sign = np.sign(est[dep])
    near = sign * (curve.ci_lo if sign > 0 else curve.ci_hi)
    far = sign * (curve.ci_hi if sign > 0 else curve.ci_lo)

    if R is None or dep == grid.size - 1:
        point = _grid_root(grid, sign * est, dep)
    else:
        point = tute_point(R, (grid[dep], grid[-1]), tol)

    # upper limit: far curve reaching zero
    hits = np.flatnonzero(far[dep:] <= 0)
    if hits.size == 0:
        hi = math.inf
    else:
        j = dep + hits[0]
        hi = float(grid[j]) if j == 0 or far[j] == 0 else _crossing(grid[j - 1], grid[j],
                                                                    far[j - 1], far[j])

    # lower limit: end of the significant stretch before the point estimate
    stop = grid[-1] if not math.isfinite(point) else point
    sig = np.flatnonzero((near > 0) & (grid <= stop))
    if sig.size == 0:
        lo = 0.0
    else:
        k = sig[-1]
        if k == grid.size - 1:
            lo = float(grid[-1])
        else:
            lo = _crossing(grid[k], grid[k + 1], near[k], near[k + 1])
    notes = []
    if math.isfinite(point):
        lo, hi = min(lo, point), max(hi, point)
    else:
        notes.append(NO_FINITE)
    return TuteEstimate(point, lo, hi, "model_band_inversion", warnings=notes)


def _grid_root(grid, values, dep):
    later = np.flatnonzero(values[dep + 1:] <= 0)
    if later.size == 0:
        return math.inf
    j = dep + 1 + later[0]
    return float(_crossing(grid[j - 1], grid[j], values[j - 1], values[j]))


def _quantile_with_inf(x: np.ndarray, q: float) -> float:
    # type-7 quantile that tolerates +inf entries in the upper tail
    x = np.sort(x)
    h = (x.size - 1) * q
    frac = h - math.floor(h)
    lo, hi = x[int(math.floor(h))], x[int(math.ceil(h))]
    if frac == 0 or lo == hi:
        return float(lo)
    if not math.isfinite(hi):
        return math.inf
    return float(lo + frac * (hi - lo))


def plugin_interval(sample: SurvivalSample):
    """Default search interval: up to the common follow-up of both arms."""
    t_hi = common_follow_up(sample)
    if not math.isfinite(t_hi):
        t_hi = float(sample.time.max())
    return 1e-6 * t_hi, t_hi


def plugin_tute(sample: SurvivalSample, search_interval=None) -> float:
    if search_interval is None:
        search_interval = plugin_interval(sample)
    return tute_point(plugin_diff_function(sample), search_interval)


def model_tute(sample: SurvivalSample, **model_kwargs) -> float:
    from .model import fit_rmst_model

    model = fit_rmst_model(sample, **model_kwargs)
    a, b = model.grid.bounds
    return tute_point(model.diff, (a, b))


def stratified_resample(sample: SurvivalSample, rng: np.random.Generator) -> np.ndarray:
    idx = []
    for arm in (0, 1):
        members = sample.arm_indices(arm)
        idx.append(rng.choice(members, size=members.size, replace=True))
    return np.sort(np.concatenate(idx))


def tute_ci_bootstrap(sample: SurvivalSample, B: int = 1000, seed: int = 0,
                      estimator: str = "plugin", level: float = 0.95, resample: bool = True,
                      search_interval=None, model_kwargs: Optional[dict] = None) -> TuteEstimate:
    """Percentile bootstrap interval for TUTE, resampling subjects within arm.

    Replicates without a crossing count as ``inf`` and stay in the upper tail.
    When more than 5% of replicates have no crossing the upper limit is ``inf``.
    """
    if B < 200:
        raise InputError("bootstrap needs B >= 200")
    if seed is None:
        raise InputError("a seed is required for the bootstrap")
    model_kwargs = dict(model_kwargs or {})
    if estimator == "plugin":
        if search_interval is None:
            search_interval = plugin_interval(sample)

        def estimate(s):
            return plugin_tute(s, search_interval)
    elif estimator == "model":
        def estimate(s):
            return model_tute(s, **model_kwargs)
    else:
        raise InputError(f"unknown estimator {estimator!r}")

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TuteWarning)
        point = estimate(sample)
        values, failed = [], 0
        for b in range(B):
            rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, b])))
            boot = sample.subset(stratified_resample(sample, rng)) if resample else sample
            try:
                values.append(estimate(boot))
            except (RmstError, np.linalg.LinAlgError, ValueError):
                failed += 1
    if failed > 0.10 * B:
        raise NumericalError(f"{failed} of {B} bootstrap replicates failed")
    values = np.asarray(values)
    frac_inf = float(np.mean(~np.isfinite(values)))
    alpha = 1 - level
    lo = _quantile_with_inf(values, alpha / 2)
    notes = []
    if frac_inf > 0.05:
        hi = math.inf
        notes.append(NO_FINITE)
    else:
        hi = _quantile_with_inf(values, 1 - alpha / 2)
    if failed:
        notes.append(f"{failed} bootstrap replicates failed")
    return TuteEstimate(point, lo, hi, f"{estimator}_bootstrap", frac_inf, failed, notes)


def survival_crossing(sample: SurvivalSample):
    """Crossing of the arm-wise Kaplan-Meier curves that drives the TUTE.

    The RMST difference has slope ``S1 - S0``, so the crossing that the area
    later has to make up for sits at the extremum of the plug-in difference
    before its return to zero. Locating it there ignores the sign flips of the
    two curves among the first few events. Returns ``(t, s0, s1)`` or ``None``
    when the difference is still growing at the end of follow-up.
    """
    km0, km1 = km_fit(sample, 0), km_fit(sample, 1)
    end = min(km0.last_time, km1.last_time)
    times = np.union1d(km0.jump_times, km1.jump_times)
    times = times[(times > 0) & (times <= end)]
    if times.size < 2:
        return None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TuteWarning)
        root = plugin_tute(sample, (times[0], end))
    window = times[times <= root] if math.isfinite(root) else times
    diff = np.abs(rmst(km1, window) - rmst(km0, window))
    k = int(np.argmax(diff))
    if diff[k] == 0 or (not math.isfinite(root) and k == window.size - 1):
        return None
    t = float(window[k])
    return t, float(km0(t)), float(km1(t))


def clinical_relevance_warning(sample: SurvivalSample, floor: float = 0.30) -> Optional[str]:
    """Message when the survival curves cross with both below ``floor``."""
    crossing = survival_crossing(sample)
    if crossing is None:
        return None
    t, s0, s1 = crossing
    if max(s0, s1) < floor:
        return (f"survival curves cross at t={t:.4g} with survival below {floor:g} in both "
                "arms; TUTE is not interesting from a clinical viewpoint")
    return None
