import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import linalg

from rmstpv.basis import build_design, indicator_basis, natural_spline_basis
from rmstpv.errors import InputError, NumericalError
from rmstpv.gee import IDENTITY, LOG, gee_fit, get_link, qic, select_df
from rmstpv.model import arm_follow_up, fit_rmst_model
from rmstpv.pseudo import RestrictionGrid, pseudo_values, select_grid
from rmstpv.survival import SurvivalSample, rmst_diff_plugin

from conftest import random_sample


def direct_sandwich(x, resid, clusters):
    bread = np.linalg.inv(x.T @ x)
    meat = np.zeros((x.shape[1],) * 2)
    for c in np.unique(clusters):
        u = x[clusters == c].T @ resid[clusters == c]
        meat += np.outer(u, u)
    return bread @ meat @ bread


@pytest.fixture(scope="module")
def spline_problem():
    s = random_sample(21, n=150)
    grid = select_grid(s, 10)
    design = build_design(grid, natural_spline_basis(grid, 4), s)
    return s, grid, design, pseudo_values(s, grid)


class TestLinks:
    def test_round_trip(self):
        x = np.linspace(0.1, 5, 20)
        for link in (IDENTITY, LOG):
            assert_allclose(link.forward(link.inverse(x)), x, rtol=1e-12)

    def test_unknown(self):
        with pytest.raises(InputError):
            get_link("probit")


class TestIdentityFit:
    def test_scalar_model_returns_group_means(self, sample):
        grid = RestrictionGrid([1.0])
        pv = pseudo_values(sample, grid)
        fit = gee_fit(build_design(grid, None, sample), pv)
        y = pv.values[:, 0]
        m0, m1 = y[sample.arm == 0].mean(), y[sample.arm == 1].mean()
        assert_allclose(fit.coefficients, [m0, m1 - m0], rtol=1e-10)

    def test_least_squares_oracle(self, spline_problem):
        _, _, design, pv = spline_problem
        fit = gee_fit(design, pv)
        oracle, *_ = linalg.lstsq(design.rows, pv.long(), lapack_driver="gelsy")
        assert_allclose(fit.coefficients, oracle, atol=1e-8)
        score = design.rows.T @ (pv.long() - design.rows @ fit.coefficients)
        assert np.max(np.abs(score)) < 1e-8

    def test_sandwich_direct_sum(self, spline_problem):
        _, _, design, pv = spline_problem
        fit = gee_fit(design, pv)
        resid = pv.long() - design.rows @ fit.coefficients
        expected = direct_sandwich(design.rows, resid, design.cluster_ids)
        assert_allclose(fit.robust_cov, expected, atol=1e-10 * np.abs(expected).max(), rtol=0)

    def test_singleton_clusters_give_hc0(self):
        rng = np.random.default_rng(2)
        s = SurvivalSample(rng.exponential(size=80), np.ones(80), rng.integers(0, 2, 80))
        grid = RestrictionGrid([0.8])
        design = build_design(grid, None, s)
        y = rng.normal(size=80)
        fit = gee_fit(design, y)
        x = design.rows
        e = y - x @ fit.coefficients
        bread = np.linalg.inv(x.T @ x)
        hc0 = bread @ (x.T * e**2) @ x @ bread
        assert_allclose(fit.robust_cov, hc0, rtol=1e-10)

    def test_robust_covariance_is_psd(self, spline_problem):
        fit = gee_fit(spline_problem[2], spline_problem[3])
        assert_allclose(fit.robust_cov, fit.robust_cov.T, atol=1e-10)
        assert np.linalg.eigvalsh(fit.robust_cov).min() > -1e-10

    def test_duplicating_clusters_halves_covariance(self, sample):
        grid = select_grid(sample, 5)
        pv = pseudo_values(sample, grid)
        basis = natural_spline_basis(grid, 3)
        fit = gee_fit(build_design(grid, basis, sample), pv)
        doubled = SurvivalSample(np.tile(sample.time, 2), np.tile(sample.event, 2),
                                 np.tile(sample.arm, 2))
        fit2 = gee_fit(build_design(grid, basis, doubled), np.tile(pv.values, (2, 1)))
        assert_allclose(fit2.coefficients, fit.coefficients, atol=1e-10)
        assert_allclose(fit2.robust_cov, fit.robust_cov / 2, atol=1e-10)

    def test_fitted_values_do_not_depend_on_basis(self, spline_problem):
        s, grid, design, pv = spline_problem
        fit = gee_fit(design, pv)
        basis = natural_spline_basis(grid, 4)
        scale = np.array([[2.0, 1, 0, 0], [0, 1, 0, 0], [0, 0, 3, 1], [1, 0, 0, 1]])

        class Mixed:
            kind, df = basis.kind, basis.df
            boundary_knots = basis.boundary_knots

            def evaluate(self, t):
                return basis.evaluate(t) @ scale

            def column_names(self):
                return basis.column_names()

        other = gee_fit(build_design(grid, Mixed(), s), pv)
        assert_allclose(other.fitted, fit.fitted, atol=1e-8)

    def test_saturated_model_reproduces_plugin(self, sample):
        grid = select_grid(sample, 8)
        grid = select_grid(sample, 8, limit=arm_follow_up(sample))
        model = fit_rmst_model(sample, grid, basis_kind="indicator")
        assert_allclose(model.diff(grid.taus), rmst_diff_plugin(sample, grid.taus), atol=1e-10)

    def test_misaligned_responses(self, spline_problem):
        with pytest.raises(InputError):
            gee_fit(spline_problem[2], np.zeros(5))


class TestLogLink:
    def test_converges_and_matches_group_ratio(self, sample):
        grid = RestrictionGrid([1.0])
        pv = pseudo_values(sample, grid)
        fit = gee_fit(build_design(grid, None, sample), pv, link="log")
        y = pv.values[:, 0]
        ratio = y[sample.arm == 1].mean() / y[sample.arm == 0].mean()
        assert fit.converged
        assert_allclose(fit.coefficients[1], np.log(ratio), rtol=1e-8)

    def test_negative_mean_fails(self, sample):
        design = build_design(RestrictionGrid([1.0]), None, sample)
        with pytest.raises(NumericalError):
            gee_fit(design, -np.ones(sample.n), link="log")


class TestQic:
    def test_penalty_near_2p_under_correct_model(self):
        rng = np.random.default_rng(8)
        s = SurvivalSample(rng.exponential(size=4000), np.ones(4000), rng.integers(0, 2, 4000))
        design = build_design(RestrictionGrid([1.0]), None, s)
        y = 1.0 + 0.5 * s.arm + rng.normal(size=4000)
        fit = gee_fit(design, y)
        assert fit.penalty == pytest.approx(4.0, rel=0.05)
        assert gee_fit(design, y, penalty="2p").penalty == 4.0

    def test_qic_is_ssr_plus_penalty(self, spline_problem):
        fit = gee_fit(spline_problem[2], spline_problem[3])
        assert_allclose(qic(fit), fit.ssr + fit.penalty)
        assert_allclose(qic(fit, spline_problem[2], spline_problem[3]), fit.qic)

    def test_prefers_true_interaction(self):
        rng = np.random.default_rng(12)
        n, taus = 600, np.linspace(1, 10, 8)
        s = SurvivalSample(rng.exponential(size=n), np.ones(n), rng.integers(0, 2, n))
        grid = RestrictionGrid(taus)
        y = (taus[None, :] * (1 + 0.4 * s.arm[:, None]) + rng.normal(size=(n, 8))).ravel()
        basis = natural_spline_basis(grid, 3)
        with_int = gee_fit(build_design(grid, basis, s), y)
        without = gee_fit(build_design(grid, basis, s, interaction=False), y)
        assert with_int.qic < without.qic

    def test_select_df_singleton(self, spline_problem):
        s, grid, _, pv = spline_problem
        best, trace = select_df(s, grid, df_range=(5, 5), pseudo=pv)
        assert best == 5 and list(trace) == [5]

    def test_select_df_minimises(self, spline_problem):
        s, grid, _, pv = spline_problem
        best, trace = select_df(s, grid, df_range=(3, 8), pseudo=pv)
        assert trace[best] == min(trace.values())
        assert sorted(trace) == list(range(3, 9))

    def test_select_df_range_checked(self, spline_problem):
        s, grid, _, pv = spline_problem
        with pytest.raises(InputError):
            select_df(s, grid, df_range=(3, 12), pseudo=pv)

    def test_linear_truth_selects_small_df(self):
        rng = np.random.default_rng(5)
        picks = []
        for _ in range(10):
            n, taus = 300, np.linspace(1, 10, 16)
            s = SurvivalSample(rng.exponential(size=n), np.ones(n), rng.integers(0, 2, n))
            y = (taus[None, :] * (1 + 0.2 * s.arm[:, None]) + rng.normal(size=(n, 16))).ravel()
            picks.append(select_df(s, RestrictionGrid(taus), df_range=(3, 8), pseudo=y)[0])
        assert np.mean(np.array(picks) <= 4) >= 0.7
