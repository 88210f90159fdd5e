"""Subject-level survival data, Kaplan-Meier estimation and exact RMST integration."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ExtrapolationError, InputError


@dataclass(frozen=True)
class SurvivalSample:
    """Right-censored two-arm survival data.

    Parameters
    ----------
    time : array_like
        Observed follow-up times, ``min(T, C)``.
    event : array_like of bool
        True when the event was observed, False when right-censored.
    arm : array_like of {0, 1}
        Treatment indicator.
    covariates : array_like, optional
        ``(n, k)`` matrix of additional covariates.
    covariate_names : sequence of str, optional
    """

    time: np.ndarray
    event: np.ndarray
    arm: np.ndarray
    covariates: np.ndarray = None
    covariate_names: tuple = ()

    def __post_init__(self):
        time = np.asarray(self.time, dtype=float).ravel()
        event = np.asarray(self.event).ravel().astype(bool)
        arm = np.asarray(self.arm).ravel()
        n = time.size
        if n < 2:
            raise InputError("a survival sample needs at least 2 subjects")
        if event.size != n or arm.size != n:
            raise InputError("time, event and arm must have the same length")
        if not np.all(np.isfinite(time)) or np.any(time < 0):
            raise InputError("times must be finite and nonnegative")
        if not np.all(np.isin(arm, (0, 1))):
            raise InputError("arm must be coded 0/1")
        cov = self.covariates
        if cov is None:
            cov = np.empty((n, 0))
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 1:
            cov = cov[:, None]
        if cov.shape[0] != n:
            raise InputError("covariates must have one row per subject")
        names = tuple(self.covariate_names)
        if not names:
            names = tuple(f"x{k + 1}" for k in range(cov.shape[1]))
        if len(names) != cov.shape[1]:
            raise InputError("covariate_names does not match covariate columns")
        for name, value in (("time", time), ("event", event), ("arm", arm.astype(int)),
                            ("covariates", cov)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        return self.time.size

    def subset(self, index) -> "SurvivalSample":
        return SurvivalSample(self.time[index], self.event[index], self.arm[index],
                              self.covariates[index], self.covariate_names)

    def arm_indices(self, arm: int) -> np.ndarray:
        return np.flatnonzero(self.arm == arm)

    def max_event_time(self) -> float:
        if not self.event.any():
            raise InputError("sample has no observed events")
        return float(self.time[self.event].max())


@dataclass(frozen=True)
class StepSurvivalCurve:
    """Kaplan-Meier product-limit estimate.

    ``survival[k]`` is the value on ``[jump_times[k], jump_times[k + 1])``;
    before the first jump the curve equals one. ``last_time`` is the largest
    observed time (event or censoring) in the data the curve was fitted on.
    """

    jump_times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray
    last_time: float
    _area: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        knots = np.concatenate(([0.0], self.jump_times))
        values = np.concatenate(([1.0], self.survival))
        area = np.concatenate(([0.0], np.cumsum(values[:-1] * np.diff(knots))))
        object.__setattr__(self, "_area", area)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.jump_times, t, side="right")
        return np.concatenate(([1.0], self.survival))[idx]

    @property
    def final_survival(self) -> float:
        return float(self.survival[-1]) if self.survival.size else 1.0

    def extrapolates(self, tau) -> np.ndarray:
        """True where integrating to ``tau`` relies on extending the curve past the data."""
        return (np.asarray(tau, dtype=float) > self.last_time) & (self.final_survival > 0)


def km_fit(sample: SurvivalSample, arm_filter: Optional[int] = None) -> StepSurvivalCurve:
    """Kaplan-Meier estimate, events preceding censorings at tied times."""
    if arm_filter is None:
        time, event = sample.time, sample.event
    else:
        keep = sample.arm == arm_filter
        time, event = sample.time[keep], sample.event[keep]
    if time.size == 0:
        raise InputError("no observations in arm")
    return _km(time, event)


def _km(time: np.ndarray, event: np.ndarray) -> StepSurvivalCurve:
    uniq, inverse, counts = np.unique(time, return_inverse=True, return_counts=True)
    deaths = np.bincount(inverse, weights=event, minlength=uniq.size)
    at_risk = time.size - np.concatenate(([0], np.cumsum(counts)[:-1]))
    has_event = deaths > 0
    d = deaths[has_event]
    y = at_risk[has_event]
    surv = np.cumprod(1.0 - d / y)
    return StepSurvivalCurve(uniq[has_event], surv, y.astype(int), d.astype(int),
                             float(time.max()))


def rmst_flagged(curve: StepSurvivalCurve, tau):
    """Area under ``curve`` on ``[0, tau]`` and whether it was extrapolated.

    Beyond the last observed time the curve is extended at its final value;
    the returned flag marks those restriction times.
    """
    tau_arr = np.asarray(tau, dtype=float)
    if np.any(tau_arr <= 0):
        raise InputError("restriction time tau must be positive")
    knots = np.concatenate(([0.0], curve.jump_times))
    values = np.concatenate(([1.0], curve.survival))
    k = np.searchsorted(knots, tau_arr, side="right") - 1
    area = curve._area[k] + values[k] * (tau_arr - knots[k])
    flag = curve.extrapolates(tau_arr)
    if area.ndim == 0:
        return float(area), bool(flag)
    return area, flag


def rmst(curve: StepSurvivalCurve, tau):
    """Restricted mean survival time, i.e. the integral of ``curve`` over ``[0, tau]``."""
    return rmst_flagged(curve, tau)[0]


def rmst_diff_plugin(sample: SurvivalSample, grid: Sequence[float],
                     allow_extrapolation: bool = False) -> np.ndarray:
    """Nonparametric RMST difference, arm 1 minus arm 0, at each restriction time."""
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    out = np.zeros(grid.shape)
    for arm, sign in ((1, 1.0), (0, -1.0)):
        area, flag = rmst_flagged(km_fit(sample, arm), grid)
        if np.any(flag) and not allow_extrapolation:
            raise ExtrapolationError(
                f"restriction time {grid[np.argmax(flag)]:g} beyond follow-up of arm {arm}")
        out += sign * area
    return out


def plugin_diff_function(sample: SurvivalSample):
    """Callable ``t -> R(t)`` built from the two arm-wise Kaplan-Meier curves."""
    km1, km0 = km_fit(sample, 1), km_fit(sample, 0)
    return lambda t: rmst(km1, t) - rmst(km0, t)


def common_follow_up(sample: SurvivalSample) -> float:
    """Largest time up to which both arm-wise KM curves are observed."""
    ends = []
    for arm in (0, 1):
        curve = km_fit(sample, arm)
        ends.append(np.inf if curve.final_survival == 0 else curve.last_time)
    return float(min(ends))


def read_csv(path) -> SurvivalSample:
    """Read ``time,status,arm[,covariate...]`` with a header row."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        for required in ("time", "status", "arm"):
            if required not in header:
                raise InputError(f"{path}: missing required column '{required}'")
        pos = {name: header.index(name) for name in header}
        cov_names = [h for h in header if h not in ("time", "status", "arm")]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                values = [float(c) for c in row]
            except ValueError:
                raise InputError(f"{path}:{lineno}: non-numeric field") from None
            status, arm = values[pos["status"]], values[pos["arm"]]
            if status not in (0.0, 1.0):
                raise InputError(f"{path}:{lineno}: status must be 0 or 1")
            if arm not in (0.0, 1.0):
                raise InputError(f"{path}:{lineno}: arm must be 0 or 1")
            if values[pos["time"]] < 0 or not np.isfinite(values[pos["time"]]):
                raise InputError(f"{path}:{lineno}: time must be finite and nonnegative")
            rows.append(values)
    if len(rows) < 2:
        raise InputError(f"{path}: need at least 2 data rows")
    data = np.array(rows)
    cov = data[:, [pos[c] for c in cov_names]] if cov_names else None
    return SurvivalSample(data[:, pos["time"]], data[:, pos["status"]] == 1,
                          data[:, pos["arm"]].astype(int), cov, tuple(cov_names))


def write_csv(sample: SurvivalSample, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "status", "arm", *sample.covariate_names])
        for i in range(sample.n):
            writer.writerow([repr(float(sample.time[i])), int(sample.event[i]),
                             int(sample.arm[i]), *(repr(float(v)) for v in sample.covariates[i])])
