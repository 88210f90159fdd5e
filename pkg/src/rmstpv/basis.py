"""Time bases over restriction time and long-format design assembly."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import interpolate, linalg

from .errors import InputError, RankDeficientError
from .pseudo import RestrictionGrid
from .survival import SurvivalSample

NATURAL_CUBIC = "natural_cubic"
INDICATOR = "indicator"


@dataclass(frozen=True)
class SplineBasis:
    """A natural cubic spline or step-indicator basis, without intercept.

    Natural splines are built from cubic B-splines on the boundary knots
    ``(a, b)`` and the interior knots. Every column is zero at ``t = a`` and
    the basis is linear outside ``[a, b]``. The indicator basis holds one step
    function per grid time after the first, equal to one from that time up to
    the next grid time.
    """

    kind: str
    interior_knots: np.ndarray
    boundary_knots: tuple
    df: int

    def __post_init__(self):
        knots = np.asarray(self.interior_knots, dtype=float)
        a, b = (float(x) for x in self.boundary_knots)
        if not a < b:
            raise InputError("boundary knots must satisfy a < b")
        if self.kind == NATURAL_CUBIC:
            if knots.size != self.df - 1:
                raise InputError("natural spline with df columns needs df - 1 interior knots")
            if knots.size and (np.any(np.diff(knots) <= 0) or knots[0] <= a or knots[-1] >= b):
                raise InputError("interior knots must be increasing and inside the boundary")
        elif self.kind == INDICATOR:
            if knots.size != self.df + 1:
                raise InputError("indicator basis needs df + 1 grid times")
        else:
            raise InputError(f"unknown basis kind {self.kind!r}")
        object.__setattr__(self, "interior_knots", knots)
        object.__setattr__(self, "boundary_knots", (a, b))

    def evaluate(self, t) -> np.ndarray:
        """Basis matrix of shape ``(len(t), df)``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.kind == NATURAL_CUBIC:
            return _natural_columns(t, self.interior_knots, self.boundary_knots)
        grid = self.interior_knots
        idx = np.searchsorted(grid, t, side="right") - 1
        out = np.zeros((t.size, self.df))
        on = idx >= 1
        out[np.flatnonzero(on), idx[on] - 1] = 1.0
        return out

    def column_names(self):
        return [f"h{k + 1}" for k in range(self.df)]


def _natural_columns(t, interior, boundary):
    """Natural cubic spline columns from a B-spline basis.

    Cubic B-splines on the clamped knot sequence are restricted to the
    functions with zero second derivative at both boundary knots, after
    dropping the first B-spline so that every column vanishes at ``a``. The
    constraint is removed by projecting onto the null space of the two
    boundary rows, which keeps the columns local and well conditioned.
    Outside ``[a, b]`` each column continues along its boundary tangent.
    """
    a, b = boundary
    knots = np.concatenate(([a] * 4, interior, [b] * 4))
    n_basis = knots.size - 4
    spline = interpolate.BSpline(knots, np.eye(n_basis), 3, extrapolate=True)
    second = spline.derivative(2)(np.array([a, b]))[:, 1:]
    q, _ = linalg.qr(second.T)
    project = q[:, 2:]

    inside = np.clip(t, a, b)
    values = spline(inside)[:, 1:]
    below, above = t < a, t > b
    if below.any() or above.any():
        slope = spline.derivative(1)(np.array([a, b]))[:, 1:]
        values[below] += (t[below] - a)[:, None] * slope[0]
        values[above] += (t[above] - b)[:, None] * slope[1]
    return values @ project


def truncated_power_columns(t, interior, boundary):
    """Natural cubic spline columns from truncated cubic powers.

    An independent construction of the same function space as the default
    basis, on ``u = (t - a) / (b - a)``. Useful as a reference only: it is
    badly conditioned when knots crowd together.
    """
    a, b = boundary
    t = np.atleast_1d(np.asarray(t, dtype=float))
    u = (t - a) / (b - a)
    xi = np.concatenate(([0.0], (np.asarray(interior) - a) / (b - a), [1.0]))
    last = xi[-1]

    def d(k):
        return (np.maximum(u - xi[k], 0.0) ** 3 - np.maximum(u - last, 0.0) ** 3) / (last - xi[k])

    cols = [u]
    d_last = d(xi.size - 2)
    cols.extend(d(k) - d_last for k in range(xi.size - 2))
    return np.column_stack(cols)


def natural_spline_basis(taus, df: int, boundary: Optional[tuple] = None) -> SplineBasis:
    """Natural cubic spline with ``df - 1`` interior knots at quantiles of ``taus``."""
    taus = np.asarray(getattr(taus, "taus", taus), dtype=float)
    if df < 1:
        raise InputError("df must be at least 1")
    if boundary is None:
        boundary = (float(taus.min()), float(taus.max()))
    interior = np.quantile(taus, np.arange(1, df) / df) if df > 1 else np.empty(0)
    return SplineBasis(NATURAL_CUBIC, interior, boundary, df)


def indicator_basis(grid: RestrictionGrid) -> SplineBasis:
    taus = grid.taus
    if taus.size < 2:
        raise InputError("indicator basis needs at least 2 grid times")
    return SplineBasis(INDICATOR, taus.copy(), (taus[0], taus[-1]), taus.size - 1)


def natural_spline_eval(basis: SplineBasis, t) -> np.ndarray:
    """Natural spline basis values at ``t``; a scalar ``t`` gives a ``(df,)`` vector."""
    if basis.kind != NATURAL_CUBIC:
        raise InputError("natural_spline_eval requires a natural cubic basis")
    out = basis.evaluate(t)
    return out[0] if np.ndim(t) == 0 else out


@dataclass(frozen=True)
class DesignMatrix:
    rows: np.ndarray
    cluster_ids: np.ndarray
    labels: tuple
    tau: np.ndarray
    basis: Optional[SplineBasis]
    covariate_names: tuple = ()

    @property
    def shape(self):
        return self.rows.shape

    def index(self, label: str) -> int:
        return self.labels.index(label)


def build_design(grid: RestrictionGrid, basis: Optional[SplineBasis], sample: SurvivalSample,
                 with_covariates: bool = False, interaction: bool = True) -> DesignMatrix:
    """Stacked design with one row per (subject, restriction time).

    Columns: intercept, time basis, arm, arm x time basis and, when requested,
    each covariate with its own full time interaction. With a single
    restriction time there are no time terms.
    """
    taus = grid.taus
    n, m = sample.n, taus.size
    if m == 1:
        h = np.empty((1, 0))
        basis_names = []
    else:
        if basis is None:
            raise InputError("a time basis is required with more than one restriction time")
        if basis.kind == INDICATOR and not np.array_equal(basis.interior_knots, taus):
            raise InputError("indicator basis knots must equal the restriction grid")
        h = basis.evaluate(taus)
        basis_names = basis.column_names()

    ones = np.ones((n, 1))
    pieces = [np.kron(ones, np.column_stack((np.ones(m), h)))]
    labels = ["intercept", *basis_names]
    arm = np.repeat(sample.arm.astype(float), m)[:, None]
    h_long = np.kron(ones, h)
    pieces.append(arm)
    labels.append("arm")
    if interaction and h.shape[1]:
        pieces.append(arm * h_long)
        labels.extend(f"arm:{c}" for c in basis_names)
    cov_names = ()
    if with_covariates and sample.covariates.shape[1]:
        cov_names = sample.covariate_names
        for k, name in enumerate(cov_names):
            z = np.repeat(sample.covariates[:, k], m)[:, None]
            pieces.append(z)
            labels.append(name)
            if h.shape[1]:
                pieces.append(z * h_long)
                labels.extend(f"{name}:{c}" for c in basis_names)
    rows = np.hstack(pieces)
    _check_rank(rows, labels)
    return DesignMatrix(rows, np.repeat(np.arange(n), m), tuple(labels), np.tile(taus, n),
                        basis if m > 1 else None, tuple(cov_names))


def _check_rank(rows, labels):
    _, r, piv = linalg.qr(rows, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(rows.shape) * np.finfo(float).eps if diag.size else 0.0
    rank = int(np.sum(diag > tol))
    if rank < rows.shape[1]:
        bad = [labels[j] for j in piv[rank:]]
        raise RankDeficientError(f"design is rank deficient; collinear columns: {', '.join(bad)}",
                                 bad)
