"""RMST difference curve with pointwise intervals and a simultaneous band."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import stats

from .basis import SplineBasis
from .errors import ExtrapolationError, InputError
from .gee import GeeFit
from .model import treatment_contrast

DRAW_CHUNK = 10_000


@dataclass(frozen=True)
class RmstDiffCurve:
    eval_grid: np.ndarray
    estimate: np.ndarray
    se: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    contrast_matrix: np.ndarray
    level: float = 0.95
    band_lo: Optional[np.ndarray] = None
    band_hi: Optional[np.ndarray] = None
    critical_value: Optional[float] = None
    seed: Optional[int] = None
    n_draws: Optional[int] = None
    scale: str = "difference"

    @property
    def has_band(self) -> bool:
        return self.band_lo is not None

    def to_json(self) -> dict:
        out = {
            "grid": self.eval_grid.tolist(),
            "estimate": self.estimate.tolist(),
            "se": self.se.tolist(),
            "ci": np.column_stack((self.ci_lo, self.ci_hi)).tolist(),
            "band": (np.column_stack((self.band_lo, self.band_hi)).tolist()
                     if self.has_band else None),
            "u95": self.critical_value,
            "seed": self.seed,
            "level": self.level,
            "n_draws": self.n_draws,
            "scale": self.scale,
        }
        return out

    def plot_rows(self):
        """Rows ``(t, estimate, se, ci_lo, ci_hi, band_lo, band_hi)`` for plotting."""
        band_lo = self.band_lo if self.has_band else np.full_like(self.estimate, np.nan)
        band_hi = self.band_hi if self.has_band else np.full_like(self.estimate, np.nan)
        return np.column_stack((self.eval_grid, self.estimate, self.se, self.ci_lo,
                                self.ci_hi, band_lo, band_hi))


def equal_grid(a: float, b: float, points: int = 30) -> np.ndarray:
    return np.linspace(a, b, points)


def open_grid(a: float, b: float, points: int = 30) -> np.ndarray:
    """``points`` equally spaced times on ``(a, b]``.

    The left boundary is the first restriction time, the smallest event time,
    where both arms have RMST equal to ``a`` in every sample. The estimate is
    pinned there with a standard error close to zero, so the point carries no
    information and is left out of bands and TUTE searches.
    """
    if points < 1:
        raise InputError("need at least one grid point")
    return np.linspace(a, b, points + 1)[1:]


def diff_curve(fit: GeeFit, basis: Optional[SplineBasis], eval_grid, level: float = 0.95,
               allow_extrapolation: bool = False) -> RmstDiffCurve:
    """Arm effect ``c(t)' beta`` with robust variance ``c(t)' Sigma c(t)`` at each grid time."""
    grid = np.atleast_1d(np.asarray(eval_grid, dtype=float))
    if grid.size == 0 or np.any(np.diff(grid) < 0):
        raise InputError("evaluation grid must be non-empty and increasing")
    if basis is not None and not allow_extrapolation:
        a, b = basis.boundary_knots
        tol = 1e-9 * max(abs(a), abs(b))
        if grid[0] < a - tol or grid[-1] > b + tol:
            raise ExtrapolationError(
                f"evaluation grid [{grid[0]:g}, {grid[-1]:g}] leaves the boundary knots "
                f"[{a:g}, {b:g}]")
    c = treatment_contrast(fit.labels, basis, grid)
    estimate = c @ fit.coefficients
    var = np.einsum("ij,jk,ik->i", c, fit.robust_cov, c)
    se = np.sqrt(np.clip(var, 0.0, None))
    z = stats.norm.ppf(0.5 + level / 2)
    return RmstDiffCurve(grid, estimate, se, estimate - z * se, estimate + z * se, c, level,
                         scale="difference" if fit.link.name == "identity" else "log_ratio")


def max_abs_quantile(corr: np.ndarray, alpha: float, n_draws: int, seed) -> float:
    """``1 - alpha`` quantile of ``max_t |Z_t|`` for ``Z ~ N(0, corr)``.

    Draws are generated in fixed-size chunks, each from its own stream spawned
    from ``seed``, so the result does not depend on how chunks are scheduled.
    """
    evals, evecs = np.linalg.eigh(0.5 * (corr + corr.T))
    if evals.min() < -1e-8 * max(1.0, evals.max()):
        warnings.warn("correlation matrix not PSD; projecting to nearest PSD", stacklevel=2)
    evals = np.maximum(evals, 1e-12)
    keep = evals > 1e-10 * evals.max()
    root = evecs[:, keep] * np.sqrt(evals[keep])
    # renormalise to unit diagonal after flooring
    root /= np.sqrt(np.sum(root ** 2, axis=1))[:, None]
    n_chunks = -(-n_draws // DRAW_CHUNK)
    streams = np.random.SeedSequence(seed).spawn(n_chunks)
    maxima = np.empty(n_draws)
    for k, ss in enumerate(streams):
        size = min(DRAW_CHUNK, n_draws - k * DRAW_CHUNK)
        rng = np.random.Generator(np.random.Philox(ss))
        z = rng.standard_normal((size, root.shape[1])) @ root.T
        maxima[k * DRAW_CHUNK:k * DRAW_CHUNK + size] = np.abs(z).max(axis=1)
    return float(np.quantile(maxima, 1 - alpha))


def simultaneous_band(curve: RmstDiffCurve, fit: GeeFit, alpha: float = 0.05,
                      n_draws: int = 100_000, seed: int = 0) -> RmstDiffCurve:
    """Add a simultaneous ``1 - alpha`` band ``estimate +/- u * se`` to ``curve``.

    The critical value ``u`` is the Monte Carlo quantile of the maximum absolute
    standardized deviation over the evaluation grid. It is never taken below
    the pointwise normal quantile.
    """
    if not 0 < alpha < 1:
        raise InputError("alpha must lie in (0, 1)")
    if n_draws < 10_000:
        raise InputError("n_draws must be at least 10^4")
    if seed is None:
        raise InputError("a seed is required for the simultaneous band")
    c = curve.contrast_matrix
    cov = c @ fit.robust_cov @ c.T
    active = curve.se > 0
    if not active.any():
        raise InputError("all standard errors are zero")
    sd = curve.se[active]
    corr = cov[np.ix_(active, active)] / np.outer(sd, sd)
    u = max_abs_quantile(corr, alpha, n_draws, seed)
    u = max(u, float(stats.norm.ppf(1 - alpha / 2)))
    return replace(curve, band_lo=curve.estimate - u * curve.se,
                   band_hi=curve.estimate + u * curve.se, critical_value=u, seed=seed,
                   n_draws=n_draws)


def band_coverage_check(curve: RmstDiffCurve, truth) -> bool:
    """True when ``truth`` lies inside the band at every grid point."""
    truth = np.asarray(truth, dtype=float)
    if truth.shape != curve.estimate.shape:
        raise InputError("truth must align with the evaluation grid")
    if not curve.has_band:
        raise InputError("curve has no simultaneous band")
    return bool(np.all((curve.band_lo <= truth) & (truth <= curve.band_hi)))
