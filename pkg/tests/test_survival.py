import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import integrate

from rmstpv.errors import ExtrapolationError, InputError
from rmstpv.survival import (SurvivalSample, common_follow_up, km_fit, read_csv, rmst,
                             rmst_diff_plugin, rmst_flagged, write_csv)

from conftest import random_sample


def brute_force_km(time, event, t):
    """Product over distinct event times up to t, recounting the risk set each time."""
    s = 1.0
    for u in np.unique(time[event]):
        if u > t:
            break
        d = np.sum((time == u) & event)
        y = np.sum(time >= u)
        s *= 1 - d / y
    return s


class TestKaplanMeier:
    def test_no_censoring_is_empirical(self):
        curve = km_fit(SurvivalSample([1, 2, 3], [1, 1, 1], [0, 0, 0]))
        assert_allclose(curve([1, 2, 3]), [2 / 3, 1 / 3, 0.0], atol=1e-15)
        assert_allclose(curve(0.5), 1.0)

    def test_hand_product_limit(self):
        curve = km_fit(SurvivalSample([1, 2, 3], [0, 1, 1], [0, 0, 0]))
        assert_allclose(curve([1, 2, 3]), [1.0, 0.5, 0.0])

    def test_events_precede_censorings_at_ties(self):
        # at t=2 one event and one censoring: risk set of 3 at t=2
        curve = km_fit(SurvivalSample([1, 2, 2, 3], [1, 1, 0, 1], [0, 0, 0, 0]))
        assert_allclose(curve(2), 0.75 * (1 - 1 / 3))
        assert_allclose(curve.at_risk, [4, 3, 1])

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_matches_brute_force(self, seed):
        s = random_sample(seed, n=200, ties=True)
        curve = km_fit(s)
        for u in curve.jump_times:
            assert_allclose(curve(u), brute_force_km(s.time, s.event, u), atol=1e-12)

    def test_empty_arm(self):
        s = SurvivalSample([1, 2], [1, 1], [0, 0])
        with pytest.raises(InputError, match="no observations in arm"):
            km_fit(s, 1)

    def test_monotone(self, sample):
        surv = km_fit(sample).survival
        assert np.all(np.diff(surv) <= 0)
        assert np.all((surv >= 0) & (surv <= 1))


class TestRmst:
    def test_step_integral(self):
        curve = km_fit(SurvivalSample([1, 2, 3], [1, 1, 1], [0, 0, 0]))
        assert_allclose(rmst(curve, 3.0), 2.0)
        assert_allclose(rmst(curve, 1.5), 1 + 0.5 * 2 / 3)

    def test_vanishes_at_origin(self, sample):
        assert rmst(km_fit(sample), 1e-12) == pytest.approx(1e-12)

    def test_quadrature_oracle(self):
        s = random_sample(11, n=400)
        curve = km_fit(s)
        tau = float(np.median(s.time))
        breaks = curve.jump_times[curve.jump_times < tau]
        value = sum(integrate.quad(lambda t: float(curve(t)), lo, hi)[0]
                    for lo, hi in zip(np.concatenate(([0.0], breaks)),
                                      np.concatenate((breaks, [tau]))))
        assert_allclose(rmst(curve, tau), value, rtol=1e-10)

    def test_lipschitz_and_bounded(self, sample):
        curve = km_fit(sample)
        taus = np.linspace(0.01, sample.time.max(), 200)
        r = rmst(curve, taus)
        slopes = np.diff(r) / np.diff(taus)
        assert np.all(slopes >= -1e-12) and np.all(slopes <= 1 + 1e-12)
        assert np.all(r <= taus + 1e-12)

    def test_extrapolation_flag(self):
        curve = km_fit(SurvivalSample([1, 2, 3], [1, 1, 0], [0, 0, 0]))
        area, flag = rmst_flagged(curve, 5.0)
        assert flag
        assert_allclose(area, 1 + 2 / 3 + 3 * 1 / 3)
        assert not rmst_flagged(curve, 2.5)[1]

    def test_nonpositive_tau(self, sample):
        with pytest.raises(InputError):
            rmst(km_fit(sample), 0.0)


class TestPluginDifference:
    def test_identical_arms(self):
        s = SurvivalSample([1, 2, 1, 2], [1, 1, 1, 1], [0, 0, 1, 1])
        assert_allclose(rmst_diff_plugin(s, [0.5, 1.0, 1.5, 2.0]), 0.0)

    def test_symmetric_samples(self, sample):
        mirrored = SurvivalSample(np.concatenate((sample.time, sample.time)),
                                  np.concatenate((sample.event, sample.event)),
                                  np.repeat([0, 1], sample.n))
        assert_allclose(rmst_diff_plugin(mirrored, [0.2, 0.8, 1.4]), 0.0, atol=1e-14)

    def test_difference_of_arm_rmst(self, sample):
        grid = [0.3, 0.9]
        expected = rmst(km_fit(sample, 1), grid) - rmst(km_fit(sample, 0), grid)
        assert_allclose(rmst_diff_plugin(sample, grid), expected)

    def test_refuses_extrapolation(self):
        s = SurvivalSample([1, 2, 1, 5], [1, 0, 1, 0], [0, 0, 1, 1])
        with pytest.raises(ExtrapolationError):
            rmst_diff_plugin(s, [4.0])
        assert np.isfinite(rmst_diff_plugin(s, [4.0], allow_extrapolation=True)).all()

    def test_common_follow_up(self):
        s = SurvivalSample([1, 2, 1, 5], [1, 0, 1, 1], [0, 0, 1, 1])
        assert common_follow_up(s) == 2.0


class TestSample:
    def test_validation(self):
        with pytest.raises(InputError):
            SurvivalSample([1.0], [1], [0])
        with pytest.raises(InputError):
            SurvivalSample([1, -1], [1, 1], [0, 1])
        with pytest.raises(InputError):
            SurvivalSample([1, 2], [1, 1], [0, 2])

    def test_csv_round_trip(self, tmp_path):
        s = random_sample(5, n=30, covariates=2)
        path = tmp_path / "d.csv"
        write_csv(s, path)
        back = read_csv(path)
        assert_allclose(back.time, s.time)
        assert np.array_equal(back.event, s.event)
        assert back.covariate_names == s.covariate_names

    def test_csv_errors_name_line_and_column(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("time,arm\n1,0\n2,1\n")
        with pytest.raises(InputError, match="status"):
            read_csv(path)
        path.write_text("time,status,arm\n1,1,0\n2,x,1\n")
        with pytest.raises(InputError, match=":3:"):
            read_csv(path)
