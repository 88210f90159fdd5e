"""Jackknife pseudo-observations of the restricted mean at a grid of restriction times."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ExtrapolationError, InputError
from .survival import SurvivalSample, _km, km_fit, rmst, rmst_flagged

MAX_GRID = 30
GRID_CAP = 20


@dataclass(frozen=True)
class RestrictionGrid:
    taus: np.ndarray

    def __post_init__(self):
        taus = np.atleast_1d(np.asarray(self.taus, dtype=float))
        if taus.ndim != 1 or not 1 <= taus.size <= MAX_GRID:
            raise InputError(f"restriction grid must hold between 1 and {MAX_GRID} times")
        if np.any(taus <= 0) or np.any(np.diff(taus) <= 0):
            raise InputError("restriction times must be positive and strictly increasing")
        taus.setflags(write=False)
        object.__setattr__(self, "taus", taus)

    def __len__(self):
        return self.taus.size

    @property
    def bounds(self):
        return float(self.taus[0]), float(self.taus[-1])


@dataclass(frozen=True)
class PseudoValueMatrix:
    """``values[i, j]`` is the pseudo-observation of subject ``i`` at ``grid.taus[j]``."""

    values: np.ndarray
    grid: RestrictionGrid

    def long(self) -> np.ndarray:
        """Responses flattened subject-major, matching the design row order."""
        return self.values.ravel()


def select_grid(sample: SurvivalSample, m: int = 16, upper_quantile: float = 0.99,
                spacing: str = "quantile", limit: float = np.inf) -> RestrictionGrid:
    """Restriction times spread over the observed event-time distribution.

    With ``spacing="quantile"`` the grid holds ``m`` empirical quantiles of the
    event times, from the smallest event time up to ``upper_quantile``;
    ``spacing="equal"`` spaces them evenly over the same range instead.
    Times beyond ``limit`` are pulled back to it.
    """
    if m < 1:
        raise InputError("grid size m must be positive")
    if m > GRID_CAP:
        warnings.warn(f"grid size {m} capped at {GRID_CAP}", stacklevel=2)
        m = GRID_CAP
    events = np.sort(sample.time[sample.event])
    distinct = np.unique(events)
    if distinct.size == 0:
        raise InputError("sample has no observed events")
    if distinct.size < m:
        warnings.warn(f"only {distinct.size} distinct event times; using them as the grid",
                      stacklevel=2)
        return RestrictionGrid(distinct[distinct > 0])
    if m == 1:
        return RestrictionGrid([np.quantile(events, upper_quantile)])
    if spacing == "quantile":
        taus = np.quantile(events, np.linspace(0.0, upper_quantile, m))
    elif spacing == "equal":
        taus = np.linspace(events[0], np.quantile(events, upper_quantile), m)
    else:
        raise InputError(f"unknown grid spacing {spacing!r}")
    taus = np.unique(np.minimum(taus, limit))
    return RestrictionGrid(taus[taus > 0])


def _check_grid(sample: SurvivalSample, grid: RestrictionGrid):
    _, flag = rmst_flagged(km_fit(sample), grid.taus[-1])
    if flag:
        raise ExtrapolationError(
            f"restriction time {grid.taus[-1]:g} beyond last event (follow-up ends at "
            f"{sample.time.max():g})")


def pseudo_values(sample: SurvivalSample, grid: RestrictionGrid,
                  method: str = "fast") -> PseudoValueMatrix:
    """Leave-one-out pseudo-observations ``n*RMST - (n-1)*RMST^{-i}`` at each grid time.

    ``method="naive"`` refits the Kaplan-Meier curve for every left-out subject
    and is kept as a reference for the default ``"fast"`` path.
    """
    _check_grid(sample, grid)
    if method == "fast":
        values = _pseudo_fast(sample.time, sample.event, grid.taus)
    elif method == "naive":
        values = _pseudo_naive(sample, grid.taus)
    else:
        raise InputError(f"unknown method {method!r}")
    return PseudoValueMatrix(values, grid)


def _pseudo_naive(sample: SurvivalSample, taus: np.ndarray) -> np.ndarray:
    n = sample.n
    full = rmst(km_fit(sample), taus)
    out = np.empty((n, taus.size))
    keep = np.ones(n, dtype=bool)
    for i in range(n):
        keep[i] = False
        loo = rmst(_km(sample.time[keep], sample.event[keep]), taus)
        keep[i] = True
        out[i] = n * full - (n - 1) * loo
    return out


def _step_widths(knots: np.ndarray, taus: np.ndarray) -> np.ndarray:
    # (len(knots)+1, M): length of [knots[k], knots[k+1]) inside [0, tau], knots[-1] -> inf
    lo = np.concatenate(([0.0], knots))
    hi = np.concatenate((knots, [np.inf]))
    return (np.minimum(hi[:, None], taus[None, :]) - np.minimum(lo[:, None], taus[None, :]))


def _pseudo_fast(time: np.ndarray, event: np.ndarray, taus: np.ndarray) -> np.ndarray:
    n = time.size
    uniq, inverse, counts = np.unique(time, return_inverse=True, return_counts=True)
    deaths = np.bincount(inverse, weights=event, minlength=uniq.size)
    at_risk = n - np.concatenate(([0], np.cumsum(counts)[:-1]))
    has_event = deaths > 0
    u, d, y = uniq[has_event], deaths[has_event], at_risk[has_event].astype(float)

    widths = _step_widths(u, taus)
    full = np.concatenate(([1.0], np.cumprod(1.0 - d / y))) @ widths

    # subjects sharing (time, status) share their leave-one-out curve
    pairs = np.column_stack((time, event.astype(float)))
    groups, g_inv = np.unique(pairs, axis=0, return_inverse=True)
    g_inv = g_inv.ravel()
    g_time, g_event = groups[:, 0], groups[:, 1]

    at_or_before = u[None, :] <= g_time[:, None]
    own = (u[None, :] == g_time[:, None]) * g_event[:, None]
    num = np.where(at_or_before, d[None, :] - own, d[None, :])
    den = np.where(at_or_before, y[None, :] - 1.0, y[None, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(den > 0, 1.0 - num / den, 1.0)
    loo_surv = np.cumprod(factor, axis=1)
    loo = np.hstack((np.ones((groups.shape[0], 1)), loo_surv)) @ widths
    return n * full[None, :] - (n - 1) * loo[g_inv]
