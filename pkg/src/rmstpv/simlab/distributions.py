"""Parametric event-time distributions with exact RMST and inverse-transform sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InputError
from .gamma import lower_incomplete_gamma

WEIBULL_SHAPE_SCALE = "weibull_shape_scale"
WEIBULL_RATE_SHAPE = "weibull_rate_shape"
EXPONENTIAL = "exponential"
PIECEWISE_EXPONENTIAL = "piecewise_exponential"


@dataclass(frozen=True)
class DistributionSpec:
    """An event-time law given by its cumulative hazard.

    ``weibull_shape_scale(a, b)``:  S(t) = exp(-(t / b)^a)
    ``weibull_rate_shape(lam, d)``: S(t) = exp(-lam t^d)
    ``exponential(lam)``:           S(t) = exp(-lam t)
    ``piecewise_exponential``:      constant hazard ``rates[k]`` between
                                    consecutive ``breakpoints`` (0 and inf implied)
    """

    kind: str
    params: tuple = ()
    breakpoints: tuple = ()
    rates: tuple = ()

    def __post_init__(self):
        if self.kind in (WEIBULL_SHAPE_SCALE, WEIBULL_RATE_SHAPE):
            if len(self.params) != 2 or min(self.params) <= 0:
                raise InputError(f"{self.kind} needs two positive parameters")
        elif self.kind == EXPONENTIAL:
            if len(self.params) != 1 or self.params[0] <= 0:
                raise InputError("exponential needs one positive rate")
        elif self.kind == PIECEWISE_EXPONENTIAL:
            if len(self.rates) != len(self.breakpoints) + 1 or min(self.rates) <= 0:
                raise InputError("piecewise exponential needs len(breakpoints)+1 positive rates")
            if np.any(np.diff(self.breakpoints) <= 0) or (self.breakpoints and
                                                          self.breakpoints[0] <= 0):
                raise InputError("breakpoints must be positive and increasing")
        else:
            raise InputError(f"unknown distribution kind {self.kind!r}")

    # -- constructors ---------------------------------------------------
    @classmethod
    def weibull(cls, shape, scale):
        return cls(WEIBULL_SHAPE_SCALE, (float(shape), float(scale)))

    @classmethod
    def weibull_rate(cls, rate, shape):
        return cls(WEIBULL_RATE_SHAPE, (float(rate), float(shape)))

    @classmethod
    def exponential(cls, rate):
        return cls(EXPONENTIAL, (float(rate),))

    @classmethod
    def piecewise(cls, breakpoints, rates):
        return cls(PIECEWISE_EXPONENTIAL, (), tuple(float(b) for b in breakpoints),
                   tuple(float(r) for r in rates))

    # -- functions --------------------------------------------------------
    def _rate_shape(self):
        if self.kind == WEIBULL_RATE_SHAPE:
            return self.params
        if self.kind == WEIBULL_SHAPE_SCALE:
            shape, scale = self.params
            return scale ** -shape, shape
        if self.kind == EXPONENTIAL:
            return self.params[0], 1.0
        return None

    def _pieces(self):
        lo = np.concatenate(([0.0], self.breakpoints))
        hi = np.concatenate((self.breakpoints, [np.inf]))
        rates = np.asarray(self.rates)
        width = np.where(np.isfinite(hi), hi - lo, 0.0)
        start_haz = np.concatenate(([0.0], np.cumsum(rates[:-1] * width[:-1])))
        return lo, hi, rates, start_haz

    def cumhaz(self, t):
        t = np.asarray(t, dtype=float)
        rs = self._rate_shape()
        if rs is not None:
            lam, d = rs
            return lam * t ** d
        lo, hi, rates, _ = self._pieces()
        seg = np.clip(t[..., None] - lo, 0.0, None)
        seg = np.minimum(seg, hi - lo)
        return np.sum(seg * rates, axis=-1)

    def survival(self, t):
        return np.exp(-self.cumhaz(t))

    def hazard(self, t):
        t = np.asarray(t, dtype=float)
        rs = self._rate_shape()
        if rs is not None:
            lam, d = rs
            return lam * d * t ** (d - 1)
        lo, _, rates, _ = self._pieces()
        return rates[np.searchsorted(lo, t, side="right") - 1]

    def inverse_cumhaz(self, h):
        h = np.asarray(h, dtype=float)
        rs = self._rate_shape()
        if rs is not None:
            lam, d = rs
            return (h / lam) ** (1.0 / d)
        lo, _, rates, start = self._pieces()
        k = np.searchsorted(start, h, side="right") - 1
        return lo[k] + (h - start[k]) / rates[k]

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return self.inverse_cumhaz(rng.standard_exponential(size))

    def rmst(self, tau):
        """Exact restricted mean, the integral of the survival function over [0, tau]."""
        tau_arr = np.asarray(tau, dtype=float)
        rs = self._rate_shape()
        if self.kind == EXPONENTIAL:
            lam = self.params[0]
            out = -np.expm1(-lam * tau_arr) / lam
        elif rs is not None:
            lam, d = rs
            a = 1.0 / d
            flat = np.ravel(tau_arr)
            out = np.array([a * lam ** (-a) * lower_incomplete_gamma(a, lam * x ** d)
                            for x in flat]).reshape(tau_arr.shape)
        else:
            lo, hi, rates, start = self._pieces()
            seg = np.minimum(np.clip(tau_arr[..., None] - lo, 0.0, None), hi - lo)
            out = np.sum(np.exp(-start) * -np.expm1(-rates * seg) / rates, axis=-1)
        return float(out) if out.ndim == 0 else out

    def describe(self) -> str:
        if self.kind == PIECEWISE_EXPONENTIAL:
            return f"piecewise_exponential(breaks={list(self.breakpoints)}, rates={list(self.rates)})"
        return f"{self.kind}{tuple(self.params)}"
