"""Simulation scenarios, their analytic ground truths, and censored-data generation."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy import integrate, optimize

from ..errors import InputError, NumericalError
from ..survival import SurvivalSample
from ..tute import TuteWarning, tute_point
from .distributions import DistributionSpec

UNIFORM = "uniform"
EXPONENTIAL = "exponential"
FIXED = "fixed"
BERNOULLI = "bernoulli"

#: horizon for the truth searches; every built-in scenario rebalances well before it
TRUTH_HORIZON = 400.0
TRUTH_SCAN = 4001


@dataclass(frozen=True)
class ScenarioSpec:
    """Two arms, a random censoring mechanism and an administrative end of follow-up.

    Random censoring is ``Uniform(0, c)`` or ``Exponential(rate)``, with the
    parameter chosen so that ``P(C < T) = censoring_pct`` for ``T`` drawn from
    the two arms in equal proportion. ``follow_up`` (``None`` for unlimited)
    censors every subject still at risk at that time.

    ``allocation="fixed"`` puts ``n`` subjects in each arm; ``"bernoulli"``
    draws ``n`` subjects in total with arm membership ``Bernoulli(1/2)``.
    """

    name: str
    arm0: DistributionSpec
    arm1: DistributionSpec
    censoring: Optional[str] = UNIFORM
    censoring_pct: float = 0.0
    follow_up: Optional[float] = None
    allocation: str = FIXED
    tau: Optional[float] = None
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.censoring not in (None, UNIFORM, EXPONENTIAL):
            raise InputError(f"unknown censoring kind {self.censoring!r}")
        if not 0 <= self.censoring_pct < 1:
            raise InputError("censoring percentage must lie in [0, 1)")
        if self.follow_up is not None and self.follow_up <= 0:
            raise InputError("follow-up must be positive")
        if self.allocation not in (FIXED, BERNOULLI):
            raise InputError(f"unknown allocation {self.allocation!r}")

    def pooled_survival(self, t):
        return 0.5 * (self.arm0.survival(t) + self.arm1.survival(t))

    def censored_fraction(self, parameter: float) -> float:
        """``P(C < T)`` under the random censoring law with the given parameter."""
        breaks = sorted(set(self.arm0.breakpoints) | set(self.arm1.breakpoints))
        if self.censoring == UNIFORM:
            # (1/c) int_0^c S(t) dt, written as int_0^1 S(c v) dv
            c = parameter
            pts = [b / c for b in breaks if b < c] or None
            return integrate.quad(lambda v: float(self.pooled_survival(c * v)), 0.0, 1.0,
                                  points=pts, limit=500, epsabs=1e-13, epsrel=1e-12)[0]
        # int_0^inf rate e^{-rate t} S(t) dt, written as int_0^inf e^{-u} S(u / rate) du
        rate = parameter
        edges = [0.0, *(b * rate for b in breaks), math.inf]
        return sum(integrate.quad(lambda u: math.exp(-u) * float(self.pooled_survival(u / rate)),
                                  lo, hi, limit=500, epsabs=1e-13)[0]
                   for lo, hi in zip(edges[:-1], edges[1:]))

    @cached_property
    def censoring_parameter(self) -> Optional[float]:
        """Uniform upper limit or exponential rate giving the target censored fraction."""
        if self.censoring is None or self.censoring_pct == 0:
            return None
        target = self.censoring_pct
        # the censored fraction is at most E[T] / c for uniform and rate E[T] for exponential
        mean = max(self.arm0.rmst(1e9), self.arm1.rmst(1e9))
        if self.censoring == UNIFORM:
            lo, hi = 1e-8 * mean, 2.0 * mean / target
        else:
            lo, hi = 0.5 * target / mean, 1e8 / mean

        def gap(x):
            return self.censored_fraction(x) - target

        try:
            root = optimize.brentq(gap, lo, hi, xtol=1e-14 * hi, rtol=1e-12, maxiter=500)
        except ValueError as exc:
            raise NumericalError(
                f"censoring calibration failed for {self.name}: target {target:g}, "
                f"fraction {gap(lo) + target:.4g} at {lo:g} and {gap(hi) + target:.4g} "
                f"at {hi:g}") from exc
        if abs(gap(root)) > 1e-4:
            raise NumericalError(f"censoring calibration for {self.name} missed the target "
                                 f"by {gap(root):.3g}")
        return root

    def describe(self) -> dict:
        return {
            "name": self.name,
            "arm0": self.arm0.describe(),
            "arm1": self.arm1.describe(),
            "censoring": self.censoring,
            "censoring_pct": self.censoring_pct,
            "censoring_parameter": self.censoring_parameter,
            "follow_up": self.follow_up,
            "allocation": self.allocation,
            "tau": self.tau,
            **{k: v for k, v in self.params.items()},
        }


def _weibull(shape, scale):
    return DistributionSpec.weibull(shape, scale)


def _piecewise(breaks, rates):
    return DistributionSpec.piecewise(breaks, rates)


SCENARIOS = {
    1: ScenarioSpec("1", _weibull(1.5, 1 / 0.18), _weibull(0.75, 1 / 0.20), UNIFORM, 0.20, 7.0),
    2: ScenarioSpec("2", _weibull(2.5, 30.0), _piecewise([1.0], [0.125, 0.01]),
                    UNIFORM, 0.20, 60.0),
    3: ScenarioSpec("3", DistributionSpec.exponential(1 / 12), _piecewise([2.0], [0.25, 1 / 35]),
                    UNIFORM, 0.20, 55.0),
    4: ScenarioSpec("4", _weibull(1.5, 5.0), _piecewise([1.5], [0.5, 0.1]), UNIFORM, 0.20, 14.0),
    5: ScenarioSpec("5", _weibull(1.6, 110.0), _piecewise([12.0, 30.0], [0.0025, 0.01, 0.003]),
                    UNIFORM, 0.20, 125.0),
}


def get_scenario(key) -> ScenarioSpec:
    try:
        return SCENARIOS[int(key)]
    except (KeyError, ValueError, TypeError):
        raise InputError(f"unknown scenario {key!r}; expected one of {sorted(SCENARIOS)}") from None


def weibull_bias(delta: float, beta_b: float, p: float, censoring_pct: float = 0.25) -> ScenarioSpec:
    """Cell of the Weibull bias design.

    Arm ``Z`` has survival ``exp(-exp(beta_b Z) t^delta)``, ``Z ~ Bernoulli(1/2)``,
    with exponential censoring and the restriction time ``tau`` at which the
    reference arm has cumulative incidence ``p``.
    """
    if delta <= 0 or not 0 < p < 1:
        raise InputError("need delta > 0 and 0 < p < 1")
    tau = (-math.log1p(-p)) ** (1 / delta)
    return ScenarioSpec(f"weibull(delta={delta:g}, beta={beta_b:g}, p={p:g})",
                        DistributionSpec.weibull_rate(1.0, delta),
                        DistributionSpec.weibull_rate(math.exp(beta_b), delta),
                        EXPONENTIAL, censoring_pct, None, BERNOULLI, tau,
                        {"delta": delta, "beta_b": beta_b, "p": p})


def true_rmst(dist: DistributionSpec, tau):
    return dist.rmst(tau)


def true_rmst_diff(scenario: ScenarioSpec, t):
    """RMST of arm 1 minus arm 0 restricted at ``t``."""
    out = np.asarray(scenario.arm1.rmst(t)) - np.asarray(scenario.arm0.rmst(t))
    return float(out) if out.ndim == 0 else out


def true_coefficients(scenario: ScenarioSpec):
    """``(baseline RMST, arm effect)`` at the scenario's ``tau``."""
    if scenario.tau is None:
        raise InputError("scenario has no restriction time")
    base = true_rmst(scenario.arm0, scenario.tau)
    return base, true_rmst(scenario.arm1, scenario.tau) - base


def _first_root(f, horizon, n_scan):
    t = np.linspace(horizon / n_scan, horizon, n_scan)
    v = f(t)
    departed = np.flatnonzero(np.abs(v) > 1e-9 * np.max(np.abs(v)))
    if departed.size == 0:
        return math.inf
    dep = departed[0]
    later = np.flatnonzero(np.sign(v[dep]) * v[dep + 1:] <= 0)
    if later.size == 0:
        return math.inf
    j = dep + 1 + later[0]
    return float(optimize.brentq(lambda x: float(f(x)), t[j - 1], t[j], xtol=1e-12))


def true_crossing(scenario: ScenarioSpec, horizon: float = TRUTH_HORIZON) -> float:
    """First time after 0 at which the two survival curves cross; ``inf`` if none."""
    def gap(t):
        return scenario.arm1.survival(t) - scenario.arm0.survival(t)

    return _first_root(gap, horizon, TRUTH_SCAN)


def true_tute(scenario: ScenarioSpec, horizon: float = TRUTH_HORIZON) -> float:
    """First positive return to zero of the true RMST difference; ``inf`` if none."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TuteWarning)
        return tute_point(lambda t: true_rmst_diff(scenario, t), (horizon / TRUTH_SCAN, horizon),
                          n_scan=TRUTH_SCAN)


def replicate_rng(seed: int, replicate: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(replicate)])))


def simulate(scenario: ScenarioSpec, n: int, seed: int, replicate: int = 0) -> SurvivalSample:
    """One censored two-arm sample, reproducible from ``(seed, replicate)``.

    ``n`` is the size of each arm under fixed allocation and the total size
    under Bernoulli allocation.
    """
    if n < 10:
        raise InputError("n must be at least 10")
    if seed is None:
        raise InputError("a seed is required")
    rng = replicate_rng(seed, replicate)
    if scenario.allocation == FIXED:
        arm = np.repeat([0, 1], n)
    else:
        arm = (rng.random(n) < 0.5).astype(int)
    size = arm.size
    # arm-specific draws from a common exponential stream keep arms aligned across scenarios
    e = rng.standard_exponential(size)
    event_time = np.where(arm == 1, scenario.arm1.inverse_cumhaz(e),
                          scenario.arm0.inverse_cumhaz(e))
    cens = np.full(size, np.inf)
    param = scenario.censoring_parameter
    if param is not None:
        if scenario.censoring == UNIFORM:
            cens = rng.uniform(0.0, param, size)
        else:
            cens = rng.standard_exponential(size) / param
    if scenario.follow_up is not None:
        cens = np.minimum(cens, scenario.follow_up)
    time = np.minimum(event_time, cens)
    event = (event_time <= cens).astype(int)
    return SurvivalSample(time, event, arm)
