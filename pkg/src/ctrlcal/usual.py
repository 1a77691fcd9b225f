"""Usual linear calibration model: Y = alpha + beta x + eps, x known exactly.

Maximum-likelihood fit, Fisher information, and the first-order bias and
variance approximations for the inverse estimate of X0. The variance and
bias helpers only use arithmetic, so they broadcast over numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SufficientStats
from .errors import NonPositiveVariance, ZeroSlope

PARAMS = ("alpha", "beta", "x0", "sigma_eps_sq")

SLOPE_RTOL = 1e-12


@dataclass(frozen=True)
class UsualFit:
    alpha_hat: float
    beta_hat: float
    x0_hat: float
    sigma_eps_sq_hat: float

    @property
    def theta(self) -> tuple:
        return (self.alpha_hat, self.beta_hat, self.x0_hat, self.sigma_eps_sq_hat)


def check_slope(beta, alpha, y0_bar):
    if not abs(beta) >= SLOPE_RTOL * max(1.0, abs(y0_bar - alpha)):
        raise ZeroSlope(f"slope estimate {beta!r} is numerically zero")


def fit_usual(stats: SufficientStats) -> UsualFit:
    """Closed-form ML estimates for the usual model.

    The error variance pools the first-stage residuals and the
    second-stage scatter with divisor n + k.
    """
    beta = stats.slope
    alpha = stats.y_bar - beta * stats.x_bar
    check_slope(beta, alpha, stats.y0_bar)
    x0 = (stats.y0_bar - alpha) / beta
    n, k = stats.n, stats.k
    sigma = (n * stats.residual_ms + k * stats.s_y0y0) / (n + k)
    return UsualFit(alpha, beta, x0, sigma)


def fisher_usual(theta: UsualFit, stats: SufficientStats) -> np.ndarray:
    """Expected information for (alpha, beta, X0, sigma_eps^2)."""
    _, beta, x0, s2 = theta.theta
    if not s2 > 0:
        raise NonPositiveVariance(f"sigma_eps^2 must be positive, got {s2!r}")
    n, k = stats.n, stats.k
    nx = n * stats.x_bar
    info = np.array(
        [
            [n + k, k * x0 + nx, k * beta, 0.0],
            [k * x0 + nx, k * x0 * x0 + stats.sum_x_sq, k * beta * x0, 0.0],
            [k * beta, k * beta * x0, k * beta * beta, 0.0],
            [0.0, 0.0, 0.0, (n + k) / (2.0 * s2)],
        ]
    )
    return info / s2


def variance_v1_usual(theta: UsualFit, stats: SufficientStats):
    """Order 1/n variance of X0_hat (inverse-information entry for X0)."""
    _, beta, x0, s2 = theta.theta
    n, k = stats.n, stats.k
    return s2 / beta**2 * (1.0 / k + 1.0 / n + (stats.x_bar - x0) ** 2 / (n * stats.s_xx))


def bias_usual(theta: UsualFit, stats: SufficientStats):
    _, beta, x0, s2 = theta.theta
    return s2 * (x0 - stats.x_bar) / (stats.n * beta**2 * stats.s_xx)


def variance_v2_usual(theta: UsualFit, stats: SufficientStats):
    """Fixed-k variance: V1 plus 3 sigma^4 / (n k beta^4 S_xx)."""
    _, beta, _, s2 = theta.theta
    return variance_v1_usual(theta, stats) + 3.0 * s2**2 / (
        stats.n * stats.k * beta**4 * stats.s_xx
    )


def loglik_usual(theta, x, y, y0):
    """Gaussian log-likelihood of the usual model.

    ``theta`` entries may be scalars or arrays; ``y`` and ``y0`` may carry
    a leading batch axis, in which case one value per batch row is returned.
    """
    alpha, beta, x0, s2 = (np.asarray(t, dtype=float) for t in theta)
    y = np.asarray(y, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    n, k = y.shape[-1], y0.shape[-1]
    a, b, s2_ = (np.expand_dims(v, -1) for v in (alpha, beta, s2))
    r1 = y - a - b * x
    r0 = y0 - np.expand_dims(alpha + beta * x0, -1)
    ss = np.sum(r1 * r1, axis=-1) + np.sum(r0 * r0, axis=-1)
    return -0.5 * (n + k) * np.log(2 * np.pi * s2) - 0.5 * ss / np.squeeze(s2_, -1)
