"""Linear calibration with controlled (Berkson) errors in the standards.

First stage: the experimenter fixes nominal values X_i but the realised
values are X_i - delta_i, so Y_i = alpha + beta X_i + (eps_i - beta delta_i)
with delta_i ~ N(0, sigma_delta^2) independent of eps_i ~ N(0, sigma_eps^2).
Second stage: Y0_i = alpha + beta X0 + eps_i.

The first-stage composite error variance is gamma = beta^2 sigma_delta^2 + sigma_eps^2.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import SufficientStats
from .errors import NegativeVarianceEstimate, NoConvergence, NonPositiveVariance
from .numerics import SolverConfig, solve_newton_2d
from .usual import check_slope

PARAMS_UNKNOWN = ("alpha", "beta", "x0", "sigma_delta_sq", "sigma_eps_sq")
PARAMS_KNOWN = ("alpha", "beta", "x0", "sigma_eps_sq")


class Case(str, enum.Enum):
    UNKNOWN_DELTA = "unknown"
    KNOWN_DELTA = "known"


@dataclass(frozen=True)
class ControlledFit:
    """ML estimates for the controlled model.

    ``sigma_delta_sq_hat`` is estimated when ``case`` is UNKNOWN_DELTA and
    echoes the supplied value when KNOWN_DELTA. A negative unknown-delta estimate
    is kept as-is and flagged through ``negative_delta``.
    """

    alpha_hat: float
    beta_hat: float
    x0_hat: float
    sigma_eps_sq_hat: float
    sigma_delta_sq_hat: float
    case: Case
    iterations: int = 0
    max_residual: float = 0.0

    @property
    def gamma_hat(self) -> float:
        return self.beta_hat**2 * self.sigma_delta_sq_hat + self.sigma_eps_sq_hat

    @property
    def negative_delta(self) -> bool:
        return self.sigma_delta_sq_hat < 0

    @property
    def theta(self) -> tuple:
        if self.case is Case.UNKNOWN_DELTA:
            return (
                self.alpha_hat,
                self.beta_hat,
                self.x0_hat,
                self.sigma_delta_sq_hat,
                self.sigma_eps_sq_hat,
            )
        return (self.alpha_hat, self.beta_hat, self.x0_hat, self.sigma_eps_sq_hat)


def alternative_root_discriminant(stats: SufficientStats) -> float:
    """Discriminant of S_YY - 2 b S_XY + b^2 S_XX = 0, viewed as a quadratic in b.

    Equals 4 (S_XY^2 - S_XX S_YY), which is never positive by Cauchy-Schwarz
    and is zero only for an exact line. That root branch of the unknown-delta
    score equations is therefore never used.
    """
    return 4.0 * (stats.s_xy**2 - stats.s_xx * stats.s_yy)


def _intercept_and_x0(stats: SufficientStats, beta: float):
    alpha = stats.y_bar - beta * stats.x_bar
    check_slope(beta, alpha, stats.y0_bar)
    return alpha, (stats.y0_bar - alpha) / beta


def fit_unknown_delta(stats: SufficientStats, warn: bool = True) -> ControlledFit:
    """Closed-form ML fit when sigma_delta^2 is unknown.

    The slope is the least-squares slope, sigma_eps^2 is the second-stage
    scatter S_Y0Y0, and sigma_delta^2 absorbs the rest of the first-stage
    residual variance.
    """
    beta = stats.slope
    alpha, x0 = _intercept_and_x0(stats, beta)
    sigma_eps = stats.s_y0y0
    sigma_delta = (stats.residual_ms - sigma_eps) / beta**2
    if warn and sigma_delta < 0:
        warnings.warn(
            f"sigma_delta^2 estimate is negative ({sigma_delta:.3g}); the second-stage "
            "scatter exceeds the first-stage residual variance",
            NegativeVarianceEstimate,
            stacklevel=2,
        )
    return ControlledFit(alpha, beta, x0, sigma_eps, sigma_delta, Case.UNKNOWN_DELTA)


class _KnownDeltaSystem:
    """Scaled score equations in (beta, sigma_eps^2) for a fixed sigma_delta^2.

    r1 is the beta-equation residual times |b_ls| / gamma^2 and r2 is the
    sigma_eps^2-equation residual times sigma_eps^2 / (n + k); both are
    dimensionless. Newton runs on (beta, u = 1 / sigma_eps^2), which keeps
    sigma_eps^2 positive and makes r2 linear in u when sigma_delta^2 = 0.
    """

    def __init__(self, stats: SufficientStats, sigma_delta_sq: float):
        self.st = stats
        self.d = float(sigma_delta_sq)
        self.scale = abs(stats.slope)

    def _parts(self, beta, s):
        st, d = self.st, self.d
        g = s + beta * beta * d
        lack = st.s_xx * (st.slope - beta)  # S_XY - beta S_XX
        r = st.residual_ms + lack * lack / st.s_xx
        a = lack * g - beta * d * (g - r)
        return g, r, lack, a

    # Plain float arithmetic throughout: these run inside the Newton loop,
    # and x * x overflows to inf where x ** 2 would raise.
    def residual_s(self, beta, s):
        st = self.st
        g, r, _, a = self._parts(beta, s)
        n, k = st.n, st.k
        g2 = g * g
        r1 = self.scale * a / g2
        r2 = (k * st.s_y0y0 / s - k - n * s / g + n * s * r / g2) / (n + k)
        return r1, r2

    def jacobian_s(self, beta, s):
        st, d = self.st, self.d
        g, r, lack, a = self._parts(beta, s)
        n, k = st.n, st.k
        g2, g3 = g * g, g * g * g
        g_b = 2.0 * beta * d
        r_b = -2.0 * lack
        a_b = -st.s_xx * g + lack * g_b - d * (g - r) - beta * d * (g_b - r_b)
        a_s = lack - beta * d
        c = self.scale
        r1_b = c * (a_b / g2 - 2.0 * a * g_b / g3)
        r1_s = c * (a_s / g2 - 2.0 * a / g3)
        r2_b = (n * s * g_b / g2 + n * s * r_b / g2 - 2.0 * n * s * r * g_b / g3) / (n + k)
        r2_s = (
            -k * st.s_y0y0 / (s * s) - n / g + n * s / g2 + n * r / g2 - 2.0 * n * s * r / g3
        ) / (n + k)
        return (r1_b, r1_s), (r2_b, r2_s)

    def profile_loglik(self, beta, s):
        st = self.st
        g = s + beta * beta * self.d
        r = st.residual_ms_at(beta)
        return -0.5 * (
            st.n * np.log(g) + st.k * np.log(s) + st.n * r / g + st.k * st.s_y0y0 / s
        )

    def is_local_max(self, beta, s) -> bool:
        """Negative-definite profile Hessian at a root of the score equations.

        At a root the Hessian is the residual Jacobian with its rows rescaled
        by n / |b_ls| and (n + k) / (2 sigma_eps^2).
        """
        st = self.st
        jac = np.array(self.jacobian_s(beta, s))
        hess = np.diag([st.n / self.scale, (st.n + st.k) / (2.0 * s)]) @ jac
        hess = 0.5 * (hess + hess.T)
        return bool(np.all(np.linalg.eigvalsh(hess) < 0))

    def best_variance(self, beta) -> float:
        """sigma_eps^2 maximising the profile likelihood at fixed beta, or nan.

        Multiplying the sigma_eps^2 score by s gamma^2 leaves a cubic in s
        (gamma = s + c, c = beta^2 sigma_delta^2); its positive real roots are
        the candidates.
        """
        st = self.st
        n, k, s00 = st.n, st.k, st.s_y0y0
        c = beta * beta * self.d
        r = st.residual_ms_at(beta)
        coeffs = (-(n + k), k * s00 - 2 * k * c - n * c + n * r, 2 * k * s00 * c - k * c * c, k * s00 * c * c)
        roots = np.roots(coeffs)
        cands = [z.real for z in roots if abs(z.imag) <= 1e-9 * abs(z) and z.real > 0]
        if not cands:
            return math.nan
        return max(cands, key=lambda v: self.profile_loglik(beta, v))

    def scan_start(self, points: int = 301):
        """Best (beta, sigma_eps^2) over a geometric grid of slopes.

        |beta| runs from 1% to 10 times |b_ls|, with the sign of b_ls.
        """
        best, best_ll = None, -math.inf
        for beta in self.st.slope * np.geomspace(0.01, 10.0, points):
            v = self.best_variance(beta)
            if v > 0:
                ll = self.profile_loglik(beta, v)
                if ll > best_ll:
                    best, best_ll = (float(beta), float(v)), ll
        return best

    def residual_u(self, beta, u):
        return self.residual_s(beta, 1.0 / u)

    def jacobian_u(self, beta, u):
        s = 1.0 / u
        (a, b), (c, d) = self.jacobian_s(beta, s)
        return (a, -b * s * s), (c, -d * s * s)


def known_delta_residuals(stats: SufficientStats, sigma_delta_sq: float, beta: float, sigma_eps_sq: float):
    """Scaled residuals of the known-delta score equations at ``(beta, sigma_eps_sq)``."""
    return np.array(_KnownDeltaSystem(stats, sigma_delta_sq).residual_s(beta, sigma_eps_sq))


def _starting_variances(stats: SufficientStats, sigma_delta_sq: float):
    """Distinct initial sigma_eps^2 guesses for the Newton solve.

    First the unknown-delta value S_Y0Y0. Then a pool of the second-stage scatter
    and the first-stage residual variance net of the Berkson term, weighted
    by k and n (this is the exact root when sigma_delta^2 = 0). Last the
    plain pooled usual-model variance.
    """
    n, k = stats.n, stats.k
    net = max(stats.residual_ms - stats.slope**2 * sigma_delta_sq, 0.0)
    pooled = (k * stats.s_y0y0 + n * stats.residual_ms) / (n + k)
    seen = []
    for s0 in (stats.s_y0y0, (k * stats.s_y0y0 + n * net) / (n + k), pooled):
        if s0 > 0 and s0 not in seen:
            seen.append(s0)
    return seen


def _positive_finite(beta, u) -> bool:
    return 0.0 < u < math.inf


def fit_known_delta(
    stats: SufficientStats,
    sigma_delta_sq: float,
    solver_cfg: Optional[SolverConfig] = None,
) -> ControlledFit:
    """ML fit when sigma_delta^2 is known, by damped Newton on the score equations.

    Newton is started from the unknown-delta closed form (least-squares slope,
    S_Y0Y0) and from pooled variance guesses, and if none of those reaches
    a maximum, from the best point of a profile-likelihood scan over beta.
    Of the converged roots that are local maxima, the one with the highest
    profile likelihood is returned. With ``sigma_delta_sq == 0`` the root is the usual-model fit.

    Raises
    ------
    NoConvergence
        The iteration cap or line search gave out.
    NonPositiveVariance
        The second-stage readings are all identical, so the likelihood is
        unbounded as sigma_eps^2 -> 0.
    ZeroSlope
    """
    if not sigma_delta_sq >= 0:
        raise ValueError(f"sigma_delta_sq must be >= 0, got {sigma_delta_sq!r}")
    cfg = solver_cfg or SolverConfig()
    check_slope(stats.slope, stats.y_bar - stats.slope * stats.x_bar, stats.y0_bar)
    if not stats.s_y0y0 > 0:
        raise NonPositiveVariance("second-stage readings have zero scatter; sigma_eps^2 MLE is 0")
    system = _KnownDeltaSystem(stats, sigma_delta_sq)
    best, best_ll, errors = None, -np.inf, []

    def attempt(beta0, s0):
        nonlocal best, best_ll
        try:
            root = solve_newton_2d(
                system.residual_u,
                system.jacobian_u,
                (beta0, 1.0 / s0),
                cfg,
                domain=_positive_finite,
            )
        except NoConvergence as exc:
            errors.append(exc)
            return
        b, u = root.point
        if not system.is_local_max(b, 1.0 / u):
            errors.append(NoConvergence("root is not a likelihood maximum", iterations=root.iterations))
            return
        ll = system.profile_loglik(b, 1.0 / u)
        if ll > best_ll:
            best, best_ll = root, ll

    for s0 in _starting_variances(stats, sigma_delta_sq):
        attempt(stats.slope, s0)
    if best is None:
        # Newton can drift to beta -> infinity, where the scaled beta
        # residual decays like 1/beta; restart from a profile scan
        start = system.scan_start()
        if start is not None:
            attempt(*start)
    if best is None:
        raise errors[0]
    root = best
    beta, u = (float(v) for v in root.point)
    sigma_eps = 1.0 / u
    if not (sigma_eps > 0 and np.isfinite(sigma_eps)):
        raise NonPositiveVariance(f"solver produced sigma_eps^2 = {sigma_eps!r}")
    alpha, x0 = _intercept_and_x0(stats, beta)
    return ControlledFit(
        alpha,
        beta,
        x0,
        sigma_eps,
        float(sigma_delta_sq),
        Case.KNOWN_DELTA,
        iterations=root.iterations,
        max_residual=root.max_residual,
    )


def loglik_controlled(theta, x, y, y0, sigma_delta_sq=None):
    """Gaussian log-likelihood of the controlled model.

    ``theta`` is (alpha, beta, X0, sigma_delta^2, sigma_eps^2), or
    (alpha, beta, X0, sigma_eps^2) when ``sigma_delta_sq`` is given.
    Batches over a leading axis of ``y`` / ``y0`` like
    :func:`ctrlcal.usual.loglik_usual`.
    """
    if sigma_delta_sq is None:
        alpha, beta, x0, sd, se = (np.asarray(t, dtype=float) for t in theta)
    else:
        alpha, beta, x0, se = (np.asarray(t, dtype=float) for t in theta)
        sd = np.asarray(sigma_delta_sq, dtype=float)
    y = np.asarray(y, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    n, k = y.shape[-1], y0.shape[-1]
    g = se + beta * beta * sd
    r1 = y - np.expand_dims(alpha, -1) - np.expand_dims(beta, -1) * x
    r0 = y0 - np.expand_dims(alpha + beta * x0, -1)
    return (
        -0.5 * n * np.log(2 * np.pi * g)
        - 0.5 * k * np.log(2 * np.pi * se)
        - 0.5 * np.sum(r1 * r1, axis=-1) / g
        - 0.5 * np.sum(r0 * r0, axis=-1) / se
    )
