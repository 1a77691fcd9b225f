import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy.optimize import minimize

from ctrlcal.controlled import (
    Case,
    _KnownDeltaSystem,
    alternative_root_discriminant,
    fit_known_delta,
    fit_unknown_delta,
    known_delta_residuals,
    loglik_controlled,
)
from ctrlcal.data import CalibrationData, summarize
from ctrlcal.errors import NegativeVarianceEstimate, NoConvergence, NonPositiveVariance, ZeroSlope
from ctrlcal.numerics import SolverConfig
from ctrlcal.simulation import SimConfig, generate_dataset
from ctrlcal.usual import fit_usual


def sim_data(n=20, k=10, sd=0.01, seed=0, rep=0, x0=0.8):
    return generate_dataset(SimConfig(n=n, k=k, x0_true=x0, sigma_delta_sq=sd, seed=seed), rep)


def numeric_grad(f, theta, rel=1e-6):
    theta = np.asarray(theta, dtype=float)
    g = np.empty_like(theta)
    for i in range(theta.size):
        h = rel * max(abs(theta[i]), 1e-4)
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (f(up) - f(dn)) / (2 * h)
    return g


class TestUnknownDelta:
    def test_noiseless(self):
        x = np.array([0.0, 0.5, 1.0, 1.5])
        fit = fit_unknown_delta(summarize(CalibrationData(x, 1 + 2 * x, [3.0, 3.0])))
        assert_allclose(
            (fit.alpha_hat, fit.beta_hat, fit.x0_hat, fit.sigma_eps_sq_hat, fit.sigma_delta_sq_hat),
            (1.0, 2.0, 1.0, 0.0, 0.0),
            atol=1e-14,
        )

    def test_closed_forms(self):
        s = summarize(sim_data())
        fit = fit_unknown_delta(s, warn=False)
        assert fit.beta_hat == s.s_xy / s.s_xx
        assert fit.sigma_eps_sq_hat == s.s_y0y0
        rss = s.s_yy - 2 * fit.beta_hat * s.s_xy + fit.beta_hat**2 * s.s_xx
        assert_allclose(fit.sigma_delta_sq_hat, (rss - s.s_y0y0) / fit.beta_hat**2, rtol=1e-10)
        assert_allclose(fit.gamma_hat, rss, rtol=1e-10)
        assert fit.case is Case.UNKNOWN_DELTA

    @pytest.mark.parametrize("seed", range(5))
    def test_same_line_as_usual(self, seed):
        s = summarize(sim_data(seed=seed))
        u = fit_usual(s)
        c = fit_unknown_delta(s, warn=False)
        assert (c.alpha_hat, c.beta_hat, c.x0_hat) == (u.alpha_hat, u.beta_hat, u.x0_hat)

    @pytest.mark.parametrize("seed", range(5))
    def test_stationary_point_of_likelihood(self, seed):
        d = sim_data(n=30, k=15, sd=0.05, seed=seed)
        fit = fit_unknown_delta(summarize(d), warn=False)
        if fit.negative_delta:
            pytest.skip("boundary case: no interior maximum")
        grad = numeric_grad(lambda t: loglik_controlled(t, d.x, d.y, d.y0), fit.theta)
        scaled = grad * np.maximum(np.abs(fit.theta), 1e-4)
        assert np.max(np.abs(scaled)) < 1e-4

    def test_maximum_against_optimizer(self):
        d = sim_data(n=30, k=15, sd=0.05, seed=3)
        fit = fit_unknown_delta(summarize(d))
        assert not fit.negative_delta

        def neg(p):
            a, b, x0, lsd, lse = p
            return -loglik_controlled((a, b, x0, math.exp(lsd), math.exp(lse)), d.x, d.y, d.y0)

        start = np.array([0.0, 1.5, 0.5, math.log(0.02), math.log(0.02)])
        res = minimize(neg, start, method="Nelder-Mead", options=dict(xatol=1e-10, fatol=1e-12, maxiter=20000, maxfev=40000))
        opt = (*res.x[:3], math.exp(res.x[3]), math.exp(res.x[4]))
        assert_allclose(fit.theta, opt, rtol=1e-4)

    def test_negative_delta_warns(self):
        # second stage far noisier than the first-stage residuals
        x = np.linspace(0, 2, 6)
        y = 0.1 + 2 * x + np.array([0.01, -0.01, 0.0, 0.01, -0.01, 0.0])
        d = CalibrationData(x, y, [1.0, 2.0, 3.0])
        with pytest.warns(NegativeVarianceEstimate):
            fit = fit_unknown_delta(summarize(d))
        assert fit.negative_delta
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            fit_unknown_delta(summarize(d), warn=False)

    def test_zero_slope(self):
        d = CalibrationData([0.0, 1.0, 2.0], [5.0, 5.0, 5.0], [1.0, 2.0])
        with pytest.raises(ZeroSlope):
            fit_unknown_delta(summarize(d))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 10**6))
    def test_alternative_branch_never_real(self, seed):
        s = summarize(sim_data(n=6, k=2, seed=seed % 1000, rep=seed))
        assert alternative_root_discriminant(s) < 0

    def test_alternative_branch_exact_line(self):
        x = np.array([0.0, 1.0, 2.0])
        s = summarize(CalibrationData(x, 3 * x, [1.0, 2.0]))
        assert alternative_root_discriminant(s) == pytest.approx(0.0, abs=1e-12)


class TestKnownDelta:
    @pytest.mark.parametrize("sd", [0.001, 0.01, 0.1])
    @pytest.mark.parametrize("seed", range(4))
    def test_residuals_below_tolerance(self, sd, seed):
        s = summarize(sim_data(sd=sd, seed=seed))
        fit = fit_known_delta(s, sd)
        r = known_delta_residuals(s, sd, fit.beta_hat, fit.sigma_eps_sq_hat)
        assert np.max(np.abs(r)) < 1e-10
        assert fit.max_residual < 1e-10
        assert fit.sigma_eps_sq_hat > 0
        assert fit.case is Case.KNOWN_DELTA and fit.sigma_delta_sq_hat == sd
        assert_allclose(fit.alpha_hat, s.y_bar - fit.beta_hat * s.x_bar, rtol=1e-14)
        assert_allclose(fit.alpha_hat + fit.beta_hat * fit.x0_hat, s.y0_bar, rtol=1e-12)

    @pytest.mark.parametrize("seed", range(4))
    def test_scores_are_likelihood_gradient(self, seed):
        # independent route: differentiate the full log-likelihood numerically
        sd = 0.02
        d = sim_data(sd=sd, seed=seed)
        s = summarize(d)
        beta, se = 1.9, 0.05
        alpha = s.y_bar - beta * s.x_bar
        x0 = (s.y0_bar - alpha) / beta
        f = lambda t: loglik_controlled((t[0], t[1], t[2], t[3]), d.x, d.y, d.y0, sd)  # noqa: E731
        grad = numeric_grad(f, (alpha, beta, x0, se), rel=1e-7)
        assert abs(grad[0]) < 1e-4 * s.n and abs(grad[2]) < 1e-4 * s.n
        r1, r2 = known_delta_residuals(s, sd, beta, se)
        assert_allclose(r1, abs(s.slope) * grad[1] / s.n, rtol=1e-5)
        assert_allclose(r2, 2 * se * grad[3] / (s.n + s.k), rtol=1e-5)

    def test_jacobian_matches_finite_differences(self):
        s = summarize(sim_data(sd=0.05, seed=8))
        sys_ = _KnownDeltaSystem(s, 0.05)
        for beta, se in [(1.9, 0.03), (2.2, 0.08), (1.5, 0.2)]:
            jac = np.array(sys_.jacobian_s(beta, se))
            hb, hs = 1e-6 * beta, 1e-6 * se
            col_b = (np.array(sys_.residual_s(beta + hb, se)) - np.array(sys_.residual_s(beta - hb, se))) / (2 * hb)
            col_s = (np.array(sys_.residual_s(beta, se + hs)) - np.array(sys_.residual_s(beta, se - hs))) / (2 * hs)
            assert_allclose(jac, np.column_stack([col_b, col_s]), rtol=1e-6, atol=1e-9)

    def test_zero_delta_is_usual_fit(self):
        s = summarize(sim_data(sd=0.0, seed=5))
        fit = fit_known_delta(s, 0.0)
        u = fit_usual(s)
        assert_allclose(
            (fit.alpha_hat, fit.beta_hat, fit.x0_hat, fit.sigma_eps_sq_hat),
            u.theta,
            rtol=1e-12,
        )
        assert fit.iterations <= 2

    @pytest.mark.parametrize("tiny", [1e-8, 1e-10])
    def test_continuity_at_zero(self, tiny):
        s = summarize(sim_data(sd=0.01, seed=6))
        b0 = fit_known_delta(s, 0.0).beta_hat
        assert abs(fit_known_delta(s, tiny).beta_hat / b0 - 1) < 1e-5

    @pytest.mark.parametrize("n,k,sd", [(5, 2, 0.1), (20, 2, 0.1), (100, 2, 0.1), (5, 100, 0.01), (20, 20, 0.01)])
    @pytest.mark.parametrize("rep", range(3))
    def test_global_maximum(self, n, k, sd, rep):
        # Nelder-Mead on the profile likelihood from several starts is the oracle
        s = summarize(sim_data(n=n, k=k, sd=sd, seed=17, rep=rep, x0=0.01))
        fit = fit_known_delta(s, sd)
        sys_ = _KnownDeltaSystem(s, sd)
        best = -np.inf
        for s0 in (s.s_y0y0, s.residual_ms + 1e-12, 0.04, 1.0):
            res = minimize(
                lambda p: -sys_.profile_loglik(p[0], math.exp(p[1])),
                [s.slope, math.log(s0)],
                method="Nelder-Mead",
                options=dict(xatol=1e-10, fatol=1e-12, maxiter=4000),
            )
            best = max(best, -res.fun)
        assert sys_.profile_loglik(fit.beta_hat, fit.sigma_eps_sq_hat) >= best - 1e-7

    def test_runaway_slope_recovered(self):
        # a Berkson variance far above what the data support: from the
        # least-squares start Newton drifts towards beta -> infinity, and the
        # profile-scan restart has to find the interior maximum
        x = [0.05, 0.10, 0.29, 0.69, 1.01]
        y = [4.89733, 9.706, 27.6, 65.88, 96.79]
        s = summarize(CalibrationData(x, y, [0.687, 0.680, 0.682]))
        sys_ = _KnownDeltaSystem(s, 0.17)
        fit = fit_known_delta(s, 0.17)
        res = minimize(
            lambda p: -sys_.profile_loglik(p[0], math.exp(p[1])),
            [0.5 * s.slope, math.log(s.s_y0y0)],
            method="Nelder-Mead",
            options=dict(xatol=1e-10, fatol=1e-12, maxiter=4000),
        )
        assert abs(fit.beta_hat) < 2 * abs(s.slope)
        assert sys_.profile_loglik(fit.beta_hat, fit.sigma_eps_sq_hat) >= -res.fun - 1e-7
        assert_allclose(known_delta_residuals(s, 0.17, fit.beta_hat, fit.sigma_eps_sq_hat), 0, atol=1e-9)

    def test_best_variance_solves_score(self):
        s = summarize(sim_data(n=20, k=5, sd=0.05, seed=3))
        sys_ = _KnownDeltaSystem(s, 0.05)
        for beta in (0.5 * s.slope, s.slope, 1.5 * s.slope):
            v = sys_.best_variance(beta)
            assert abs(sys_.residual_s(beta, v)[1]) < 1e-10
            grid = v * np.geomspace(0.5, 2.0, 41)
            assert np.all(sys_.profile_loglik(beta, grid) <= sys_.profile_loglik(beta, v) + 1e-12)

    def test_consistency_over_replications(self):
        cfg = SimConfig(n=100, k=100, x0_true=0.8, sigma_delta_sq=0.01, seed=4)
        betas, ses = [], []
        for rep in range(1000):
            fit = fit_known_delta(summarize(generate_dataset(cfg, rep)), 0.01)
            betas.append(fit.beta_hat)
            ses.append(fit.sigma_eps_sq_hat)
        for vals, truth in ((betas, cfg.beta_true), (ses, cfg.sigma_eps_sq)):
            vals = np.asarray(vals)
            se = vals.std(ddof=1) / math.sqrt(vals.size)
            # the ML variance estimate carries an O(1/(n+k)) bias on top of MC noise
            assert abs(vals.mean() - truth) < 3 * se + truth / (cfg.n + cfg.k)

    def test_identical_readings(self):
        x = np.linspace(0, 2, 5)
        d = CalibrationData(x, 1 + 2 * x + np.array([0.01, -0.02, 0.0, 0.02, -0.01]), [3.0, 3.0])
        with pytest.raises(NonPositiveVariance):
            fit_known_delta(summarize(d), 0.01)

    def test_negative_delta_rejected(self):
        with pytest.raises(ValueError):
            fit_known_delta(summarize(sim_data()), -0.1)

    def test_failure_is_surfaced(self):
        s = summarize(sim_data(n=100, k=2, sd=0.1, seed=2))
        with pytest.raises(NoConvergence) as info:
            fit_known_delta(s, 0.1, SolverConfig(max_iter=1))
        assert info.value.iterations >= 1


class TestLoglik:
    def test_direct_sum(self):
        d = sim_data(n=6, k=3)
        a, b, x0, sd, se = 0.12, 1.95, 0.7, 0.02, 0.05
        g = se + b * b * sd
        r1 = d.y - a - b * d.x
        r0 = d.y0 - a - b * x0
        direct = (
            -0.5 * 6 * math.log(2 * math.pi * g)
            - 0.5 * 3 * math.log(2 * math.pi * se)
            - 0.5 * np.sum(r1**2) / g
            - 0.5 * np.sum(r0**2) / se
        )
        assert_allclose(loglik_controlled((a, b, x0, sd, se), d.x, d.y, d.y0), direct, rtol=1e-13)
        assert_allclose(loglik_controlled((a, b, x0, se), d.x, d.y, d.y0, sd), direct, rtol=1e-13)
