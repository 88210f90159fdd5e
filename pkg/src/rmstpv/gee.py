"""GEE fitting of pseudo-value regressions with an independence working covariance."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from .errors import ConvergenceError, InputError, NumericalError
from .basis import DesignMatrix, build_design, natural_spline_basis
from .pseudo import PseudoValueMatrix, RestrictionGrid, pseudo_values
from .survival import SurvivalSample


@dataclass(frozen=True)
class LinkFunction:
    name: str
    forward: Callable
    inverse: Callable
    inverse_derivative: Callable


IDENTITY = LinkFunction("identity", lambda mu: mu, lambda eta: eta, np.ones_like)
LOG = LinkFunction("log", np.log, np.exp, np.exp)
LINKS = {"identity": IDENTITY, "log": LOG}


def get_link(link) -> LinkFunction:
    if isinstance(link, LinkFunction):
        return link
    try:
        return LINKS[link]
    except KeyError:
        raise InputError(f"unknown link {link!r}; expected one of {sorted(LINKS)}") from None


@dataclass(frozen=True)
class GeeFit:
    coefficients: np.ndarray
    robust_cov: np.ndarray
    naive_cov: np.ndarray
    qic: float
    converged: bool
    n_clusters: int
    n_rows: int
    labels: tuple
    link: LinkFunction
    fitted: np.ndarray
    ssr: float
    dispersion: float
    iterations: int = 0
    penalty: float = float("nan")

    @property
    def robust_se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.robust_cov), 0.0, None))

    def summary(self) -> dict:
        return {
            "labels": list(self.labels),
            "coefficients": self.coefficients.tolist(),
            "robust_se": self.robust_se.tolist(),
            "link": self.link.name,
            "qic": self.qic,
            "ssr": self.ssr,
            "qic_penalty": self.penalty,
            "converged": self.converged,
            "n_clusters": self.n_clusters,
            "n_rows": self.n_rows,
        }


def _responses(responses) -> np.ndarray:
    if isinstance(responses, PseudoValueMatrix):
        return responses.long()
    return np.asarray(responses, dtype=float).ravel()


def _cluster_sums(values: np.ndarray, cluster_ids: np.ndarray) -> np.ndarray:
    order = np.argsort(cluster_ids, kind="stable")
    ids = cluster_ids[order]
    starts = np.flatnonzero(np.concatenate(([True], ids[1:] != ids[:-1])))
    return np.add.reduceat(values[order], starts, axis=0)


def gee_fit(design: DesignMatrix, responses, link="identity", penalty: str = "trace",
            tol: float = 1e-10, max_iter: int = 100) -> GeeFit:
    """Solve the GEE with identity working covariance and a cluster-robust sandwich.

    The identity link is solved directly by least squares (QR); the log link by
    Fisher scoring with step halving. Clusters are the subjects of the design.
    """
    link = get_link(link)
    x = design.rows
    y = _responses(responses)
    if y.size != x.shape[0]:
        raise InputError("responses are not aligned with design rows")
    n_rows, p = x.shape
    if n_rows <= p:
        raise InputError("more coefficients than observations")

    iterations = 0
    if link.name == "identity":
        q, r = linalg.qr(x, mode="economic")
        if np.min(np.abs(np.diag(r))) <= np.abs(np.diag(r)).max() * 1e-13:
            raise NumericalError("information matrix is singular")
        beta = linalg.solve_triangular(r, q.T @ y)
        d = x
        fitted = x @ beta
    else:
        beta, iterations = _fisher_scoring(x, y, link, tol, max_iter)
        eta = x @ beta
        fitted = link.inverse(eta)
        d = link.inverse_derivative(eta)[:, None] * x
        _, r = linalg.qr(d, mode="economic")

    resid = y - fitted
    r_inv = linalg.solve_triangular(r, np.eye(p))
    bread = r_inv @ r_inv.T
    scores = _cluster_sums(d * resid[:, None], design.cluster_ids)
    meat = scores.T @ scores
    robust = bread @ meat @ bread
    robust = 0.5 * (robust + robust.T)
    ssr = float(resid @ resid)
    dispersion = ssr / (n_rows - p)
    naive = dispersion * bread
    fit = GeeFit(beta, robust, naive, float("nan"), True, scores.shape[0], n_rows,
                 design.labels, link, fitted, ssr, dispersion, iterations)
    value, pen = _qic_parts(fit, penalty)
    return replace(fit, qic=value, penalty=pen)


def _fisher_scoring(x, y, link, tol, max_iter):
    mean_y = y.mean()
    if mean_y <= 0:
        raise NumericalError("log link needs a positive mean response")
    beta = np.zeros(x.shape[1])
    beta[0] = np.log(mean_y)

    def ssr(b):
        res = y - link.inverse(x @ b)
        return float(res @ res)

    current = ssr(beta)
    for it in range(1, max_iter + 1):
        eta = x @ beta
        mu = link.inverse(eta)
        d = link.inverse_derivative(eta)[:, None] * x
        step, *_ = linalg.lstsq(d, y - mu)
        scale = 1.0
        for _ in range(40):
            trial = beta + scale * step
            value = ssr(trial)
            if np.isfinite(value) and value <= current * (1 + 1e-12):
                break
            scale *= 0.5
        else:
            raise ConvergenceError("step halving failed in Fisher scoring", beta)
        taken = scale * step
        beta, current = trial, value
        if np.max(np.abs(taken)) < tol:
            return beta, it
    raise ConvergenceError(f"Fisher scoring did not converge in {max_iter} iterations", beta)


def _qic_parts(fit: GeeFit, penalty: str):
    p = fit.coefficients.size
    if penalty == "2p":
        pen = 2.0 * p
    elif penalty == "trace":
        try:
            pen = 2.0 * float(np.trace(linalg.solve(fit.naive_cov, fit.robust_cov,
                                                    assume_a="pos")))
        except (linalg.LinAlgError, ValueError):
            warnings.warn("naive covariance is singular; QIC penalty falls back to 2p",
                          stacklevel=3)
            pen = 2.0 * p
    else:
        raise InputError(f"unknown QIC penalty {penalty!r}")
    return fit.ssr + pen, pen


def qic(fit: GeeFit, design: DesignMatrix = None, responses=None, penalty: str = "trace") -> float:
    """Quasi-likelihood information criterion; smaller is better.

    The Gaussian quasi-likelihood contributes the residual sum of squares and
    the penalty is ``2 tr(naive^-1 robust)`` (or ``2p`` with ``penalty="2p"``).
    """
    if not fit.converged:
        raise NumericalError("QIC requires a converged fit")
    if design is not None and responses is not None:
        y = _responses(responses)
        fitted = fit.link.inverse(design.rows @ fit.coefficients)
        fit = replace(fit, ssr=float(np.sum((y - fitted) ** 2)))
    return _qic_parts(fit, penalty)[0]


def select_df(sample: SurvivalSample, grid: RestrictionGrid, link="identity",
              df_range=(3, 12), pseudo: Optional[PseudoValueMatrix] = None,
              with_covariates: bool = False, penalty: str = "trace"):
    """Natural-spline degrees of freedom minimising QIC over ``df_range`` (inclusive).

    Returns ``(best_df, trace)`` where ``trace`` maps each successfully fitted
    df to its QIC. Ties go to the smaller df.
    """
    lo, hi = (df_range, df_range) if np.isscalar(df_range) else df_range
    lo, hi = int(lo), int(hi)
    m = len(grid)
    if lo > hi:
        raise InputError("empty df range")
    if lo < 3 or hi > min(12, m - 2):
        if not (lo == hi and 1 <= lo <= m - 1):
            raise InputError(f"df range must lie within [3, {min(12, m - 2)}] for a grid of {m}")
    if pseudo is None:
        pseudo = pseudo_values(sample, grid)
    trace = {}
    for df in range(lo, hi + 1):
        try:
            basis = natural_spline_basis(grid, df)
            design = build_design(grid, basis, sample, with_covariates)
            fit = gee_fit(design, pseudo, link, penalty)
        except (NumericalError, InputError) as exc:
            warnings.warn(f"df={df} skipped: {exc}", stacklevel=2)
            continue
        trace[df] = fit.qic
    if not trace:
        raise NumericalError("no df in range could be fitted")
    best = min(trace, key=lambda k: (trace[k], k))
    return best, trace
