import dataclasses
import math
import time

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import integrate, special

from rmstpv.errors import InputError, NumericalError
from rmstpv.simlab.distributions import DistributionSpec
from rmstpv.simlab.gamma import lower_incomplete_gamma, upper_incomplete_gamma
from rmstpv.simlab.scenarios import (SCENARIOS, ScenarioSpec, get_scenario, simulate,
                                     true_coefficients, true_crossing, true_rmst,
                                     true_rmst_diff, true_tute, weibull_bias)
from rmstpv.simlab.study import StudyConfig, replicate_study
from rmstpv.survival import km_fit, rmst_diff_plugin


def quad_rmst(dist, tau):
    pts = [b for b in dist.breakpoints if b < tau] or None
    return integrate.quad(lambda t: float(dist.survival(t)), 0, tau, points=pts,
                          epsabs=1e-13, epsrel=1e-12, limit=500)[0]


class TestIncompleteGamma:
    def test_exponential_identity(self):
        assert_allclose(upper_incomplete_gamma(1.0, 2.0), 0.1353352832366127, rtol=1e-12)

    def test_complete_gamma(self):
        assert_allclose(upper_incomplete_gamma(0.5, 0.0), math.sqrt(math.pi), rtol=1e-12)

    def test_quadrature(self):
        value = integrate.quad(lambda t: t * math.exp(-t), 1.5, np.inf, epsabs=1e-14)[0]
        assert_allclose(upper_incomplete_gamma(2.0, 1.5), value, rtol=1e-10)

    @pytest.mark.parametrize("a", [0.3, 0.5, 1.0, 2.0, 3.7, 10.0])
    @pytest.mark.parametrize("x", [0.01, 0.5, 1.0, 3.0, 12.0, 40.0])
    def test_sweep_against_quadrature(self, a, x):
        upper = integrate.quad(lambda t: t ** (a - 1) * math.exp(-t), x, np.inf,
                               epsabs=0, epsrel=1e-13, limit=200)[0]
        assert_allclose(upper_incomplete_gamma(a, x), upper, rtol=1e-10)
        lower = integrate.quad(lambda t: t ** (a - 1) * math.exp(-t), 0, x,
                               epsabs=0, epsrel=1e-13, limit=200)[0]
        assert_allclose(lower_incomplete_gamma(a, x), lower, rtol=1e-10)

    def test_scipy_reference(self):
        for a, x in [(0.7, 0.2), (4.0, 9.0), (1.3, 1.3)]:
            assert_allclose(upper_incomplete_gamma(a, x),
                            special.gammaincc(a, x) * special.gamma(a), rtol=1e-12)

    def test_domain(self):
        with pytest.raises(InputError):
            upper_incomplete_gamma(0.0, 1.0)
        with pytest.raises(InputError):
            upper_incomplete_gamma(1.0, -1.0)


class TestDistributions:
    def test_exponential_rmst(self):
        tau = -math.log(0.25)
        assert_allclose(true_rmst(DistributionSpec.exponential(1.0), tau), 0.75, rtol=1e-14)

    def test_weibull_rate_closed_form(self):
        tau = -math.log(0.25)
        dist = DistributionSpec.weibull_rate(math.e, 1.0)
        assert_allclose(true_rmst(dist, tau), (1 - math.exp(-math.e * tau)) / math.e, rtol=1e-12)
        assert_allclose(true_rmst(dist, tau), 0.35938, atol=5e-6)

    @pytest.mark.parametrize("delta", [0.5, 1.0, 2.0])
    @pytest.mark.parametrize("lam", [1.0, math.e])
    def test_weibull_against_quadrature(self, delta, lam):
        dist = DistributionSpec.weibull_rate(lam, delta)
        for tau in (0.1, 0.8, 2.5, 6.0):
            assert_allclose(dist.rmst(tau), quad_rmst(dist, tau), rtol=1e-8)

    def test_shape_scale_matches_rate_shape(self):
        a = DistributionSpec.weibull(2.5, 30.0)
        b = DistributionSpec.weibull_rate(30.0 ** -2.5, 2.5)
        assert_allclose(a.rmst([5.0, 20.0, 50.0]), b.rmst([5.0, 20.0, 50.0]), rtol=1e-12)

    def test_piecewise(self):
        dist = DistributionSpec.piecewise([12.0, 30.0], [0.0025, 0.01, 0.003])
        for tau in (5.0, 12.0, 25.0, 80.0):
            assert_allclose(dist.rmst(tau), quad_rmst(dist, tau), rtol=1e-10)
        h = np.array([0.01, 0.03, 0.2, 1.5])
        assert_allclose(dist.cumhaz(dist.inverse_cumhaz(h)), h, rtol=1e-12)
        assert_allclose(dist.hazard([1.0, 12.0, 31.0]), [0.0025, 0.01, 0.003])

    def test_validation(self):
        with pytest.raises(InputError):
            DistributionSpec.weibull(-1.0, 2.0)
        with pytest.raises(InputError):
            DistributionSpec.piecewise([2.0, 1.0], [1.0, 1.0, 1.0])


class TestTruths:
    @pytest.mark.parametrize("key, crossing, tute", [
        (2, 18.55, 30.93), (3, 8.09, 17.75), (4, 5.48, 14.57)])
    def test_published_values(self, key, crossing, tute):
        spec = SCENARIOS[key]
        assert true_crossing(spec) == pytest.approx(crossing, abs=0.01)
        assert true_tute(spec) == pytest.approx(tute, abs=0.05)

    def test_scenario3_crossing_closed_form(self):
        # 0.25*2 + (t-2)/35 = t/12
        expected = (0.5 - 2 / 35) / (1 / 12 - 1 / 35)
        assert_allclose(true_crossing(SCENARIOS[3]), expected, rtol=1e-9)

    def test_scenario5(self):
        assert true_tute(SCENARIOS[5]) == pytest.approx(73, abs=0.5)

    @pytest.mark.parametrize("key", [1, 2, 3, 4, 5])
    def test_difference_vanishes_at_origin(self, key):
        assert abs(true_rmst_diff(SCENARIOS[key], 1e-8)) < 1e-8

    @pytest.mark.parametrize("key", [2, 3, 4, 5])
    def test_crossing_precedes_tute(self, key):
        assert true_crossing(SCENARIOS[key]) < true_tute(SCENARIOS[key])

    def test_bias_cell_coefficients(self):
        base, effect = true_coefficients(weibull_bias(1.0, 1.0, 0.75))
        tau = math.log(4.0)
        assert_allclose(base, 0.75)
        assert_allclose(effect, (1 - math.exp(-math.e * tau)) / math.e - 0.75, rtol=1e-12)

    def test_unknown_scenario(self):
        with pytest.raises(InputError):
            get_scenario(9)


class TestSimulation:
    def test_deterministic(self):
        a = simulate(SCENARIOS[3], 50, seed=1, replicate=4)
        b = simulate(SCENARIOS[3], 50, seed=1, replicate=4)
        assert np.array_equal(a.time, b.time) and np.array_equal(a.event, b.event)
        c = simulate(SCENARIOS[3], 50, seed=1, replicate=5)
        assert not np.array_equal(a.time, c.time)

    def test_no_censoring(self):
        spec = ScenarioSpec("none", DistributionSpec.exponential(1.0),
                            DistributionSpec.exponential(2.0), censoring=None)
        assert simulate(spec, 100, seed=1).event.all()

    def test_fixed_allocation(self):
        s = simulate(SCENARIOS[2], 30, seed=2)
        assert s.n == 60 and s.arm.sum() == 30

    def test_calibrated_uniform_censoring(self):
        spec = dataclasses.replace(SCENARIOS[2], follow_up=None)
        assert abs(spec.censored_fraction(spec.censoring_parameter) - 0.20) < 1e-4
        s = simulate(spec, 50_000, seed=3)
        assert abs(1 - s.event.mean() - 0.20) < 0.005

    def test_calibrated_exponential_censoring(self):
        spec = weibull_bias(1.0, 1.0, 0.75)
        assert abs(spec.censored_fraction(spec.censoring_parameter) - 0.25) < 1e-4
        s = simulate(spec, 100_000, seed=4)
        assert abs(1 - s.event.mean() - 0.25) < 0.005

    def test_bias_design_survival_at_tau(self):
        spec = weibull_bias(2.0, 0.0, 0.75)
        s = simulate(spec, 40_000, seed=5)
        observed = float(km_fit(s)(spec.tau))
        expected = math.exp(-spec.tau ** 2)
        se = math.sqrt(expected * (1 - expected) / s.n)
        assert abs(observed - expected) < 4 * se

    def test_plugin_converges_to_truth(self):
        spec = SCENARIOS[3]
        t = np.array([4.0, 10.0, 17.75, 30.0])
        errors = []
        for n in (1000, 10_000):
            s = simulate(spec, n, seed=6)
            errors.append(np.abs(rmst_diff_plugin(s, t) - true_rmst_diff(spec, t)).max())
        assert errors[1] < errors[0]
        assert errors[1] < 5 * 3.0 / math.sqrt(10_000) * 10

    def test_minimum_size(self):
        with pytest.raises(InputError):
            simulate(SCENARIOS[1], 5, seed=1)

    def test_calibration_failure_is_reported(self, monkeypatch):
        spec = ScenarioSpec("bad", DistributionSpec.exponential(1.0),
                            DistributionSpec.exponential(1.0), censoring_pct=0.3)
        monkeypatch.setattr(ScenarioSpec, "censored_fraction", lambda self, x: 0.1)
        with pytest.raises(NumericalError, match="censoring calibration failed for bad"):
            spec.censoring_parameter


class TestStudy:
    def test_config_validation(self):
        with pytest.raises(InputError):
            StudyConfig(n=100, reps=50, seed=1, scenario=1)
        with pytest.raises(InputError):
            StudyConfig(n=100, reps=100, seed=1)
        with pytest.raises(InputError):
            StudyConfig(n=100, reps=100, seed=1, scenario=1, delta=1.0)
        with pytest.raises(InputError):
            StudyConfig(n=100, reps=100, seed=1, scenario=1, estimators=("pv_scalar",))

    def test_bias_study_is_reproducible(self, tmp_path):
        config = StudyConfig(n=100, reps=100, seed=3, delta=1.0, beta_b=0.0, p=0.75,
                             estimators=("pv_scalar", "plugin"))
        a, b = replicate_study(config), replicate_study(config)
        a.write_csv(tmp_path / "a.csv")
        b.write_csv(tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        for row in a.rows:
            assert abs(row["effect_bias"]) < 0.05
        header = (tmp_path / "a.csv").read_text().splitlines()[0]
        assert header.startswith("cell,delta,beta_b,p,n,estimator,baseline_bias,effect_bias")

    def test_curve_study_layout(self, tmp_path):
        config = StudyConfig(n=100, reps=100, seed=4, scenario=3, n_draws=10_000)
        report = replicate_study(config)
        assert report.counters["reps"] == 100
        estimators = [row["estimator"] for row in report.rows]
        assert estimators == ["pseudo_values", "plugin"]
        pv = report.rows[0]
        assert 0.7 < pv["coverage"] <= 1.0
        assert pv["tute_bias"] == pytest.approx(0.0, abs=3.0)
        report.write_json(tmp_path / "r.json")
        report.write_replicates(tmp_path / "reps.csv")
        assert len((tmp_path / "reps.csv").read_text().splitlines()) == 101
