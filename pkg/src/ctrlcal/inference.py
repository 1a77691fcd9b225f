"""Uncertainty layer for X0_hat: Fisher information, variance approximations, Wald intervals.

Every variance and bias helper is evaluated at whatever parameter values
it is handed. Callers pass fitted values for plug-in estimates, or the true
values for theoretical ones.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import usual
from .controlled import Case, ControlledFit
from .data import SufficientStats
from .errors import NonPositiveVariance, SingularInformation
from .numerics import two_sided_z


class VarianceFormula(str, enum.Enum):
    V1_USUAL = "v1_usual"
    V2_USUAL = "v2_usual"
    V1_CONTROLLED = "v1_controlled"
    V2_CONTROLLED = "v2_controlled"
    V_KNOWN_DELTA = "v_known_delta"


def _controlled_theta(fit: ControlledFit):
    beta, x0 = fit.beta_hat, fit.x0_hat
    sd, se = fit.sigma_delta_sq_hat, fit.sigma_eps_sq_hat
    return beta, x0, sd, se, beta * beta * sd + se


def _first_stage_block(stats, beta, x0, sd, se, g):
    n, k = stats.n, stats.k
    return np.array(
        [
            [n / g + k / se, n * stats.x_bar / g + k * x0 / se, k * beta / se],
            [
                n * stats.x_bar / g + k * x0 / se,
                stats.sum_x_sq / g + 2 * n * beta**2 * sd**2 / g**2 + k * x0**2 / se,
                k * beta * x0 / se,
            ],
            [k * beta / se, k * beta * x0 / se, k * beta**2 / se],
        ]
    )


def _check_positive(se, g):
    if not (se > 0 and g > 0):
        raise NonPositiveVariance(f"need sigma_eps^2 > 0 and gamma > 0, got {se!r}, {g!r}")


def fisher_controlled_unknown(fit: ControlledFit, stats: SufficientStats) -> np.ndarray:
    """Information matrix for (alpha, beta, X0, sigma_delta^2, sigma_eps^2)."""
    beta, x0, sd, se, g = _controlled_theta(fit)
    _check_positive(se, g)
    n, k = stats.n, stats.k
    info = np.zeros((5, 5))
    info[:3, :3] = _first_stage_block(stats, beta, x0, sd, se, g)
    info[1, 3] = info[3, 1] = n * beta**3 * sd / g**2
    info[1, 4] = info[4, 1] = n * beta * sd / g**2
    info[3, 3] = n * beta**4 / (2 * g**2)
    info[3, 4] = info[4, 3] = n * beta**2 / (2 * g**2)
    info[4, 4] = n / (2 * g**2) + k / (2 * se**2)
    return info


def fisher_controlled_known(fit: ControlledFit, stats: SufficientStats) -> np.ndarray:
    """Information matrix for (alpha, beta, X0, sigma_eps^2), sigma_delta^2 fixed."""
    beta, x0, sd, se, g = _controlled_theta(fit)
    _check_positive(se, g)
    n, k = stats.n, stats.k
    info = np.zeros((4, 4))
    info[:3, :3] = _first_stage_block(stats, beta, x0, sd, se, g)
    info[1, 3] = info[3, 1] = n * beta * sd / g**2
    info[3, 3] = n / (2 * g**2) + k / (2 * se**2)
    return info


def variance_v1_controlled(fit: ControlledFit, stats: SufficientStats):
    """Order 1/n variance of X0_hat for n and k both large."""
    beta, x0, _, se, g = _controlled_theta(fit)
    n, k = stats.n, stats.k
    return (se / k + g / n + g * (stats.x_bar - x0) ** 2 / (n * stats.s_xx)) / beta**2


def bias_controlled(fit: ControlledFit, stats: SufficientStats):
    """Leading-order bias of X0_hat, gamma (X0 - X_bar) / (n beta^2 S_XX).

    E[1 / beta_hat] exceeds 1 / beta, so X0_hat is pushed away from X_bar:
    the bias is negative below the design centre and positive above it,
    like the usual-model bias it reduces to.
    """
    beta, x0, _, _, g = _controlled_theta(fit)
    return g * (x0 - stats.x_bar) / (stats.n * beta**2 * stats.s_xx)


def variance_v2_controlled(fit: ControlledFit, stats: SufficientStats):
    """Fixed-k variance: V1 plus 3 gamma sigma_eps^2 / (n k beta^4 S_XX)."""
    beta, _, _, se, g = _controlled_theta(fit)
    return variance_v1_controlled(fit, stats) + 3 * g * se / (
        stats.n * stats.k * beta**4 * stats.s_xx
    )


def known_delta_e_term(fit: ControlledFit, stats: SufficientStats, sigma_delta_sq=None):
    """The E factor of the known-sigma_delta^2 variance.

    sum X_i^2 - n X_bar^2 is replaced by n S_XX in the denominator, which is
    algebraically the same but avoids cancellation for designs far from 0.
    """
    beta, x0, sd, se, g = _controlled_theta(fit)
    if sigma_delta_sq is not None:
        sd = sigma_delta_sq
        g = beta * beta * sd + se
    n, k = stats.n, stats.k
    w = n * se**2 + k * g**2
    denom = w * n * stats.s_xx + 2 * n * k * beta**2 * g * sd**2
    if np.any(np.asarray(denom) <= 0):
        raise SingularInformation(f"known-delta variance denominator is {denom!r}")
    return w * (x0 - stats.x_bar) ** 2 / denom


def variance_known_delta(fit: ControlledFit, stats: SufficientStats, sigma_delta_sq=None):
    """Large-sample variance of X0_hat when sigma_delta^2 is known.

    This is the X0 diagonal entry of the inverse of
    :func:`fisher_controlled_known`. ``sigma_delta_sq`` defaults to the value
    stored on ``fit``.
    """
    beta, _, sd, se, g = _controlled_theta(fit)
    if sigma_delta_sq is not None:
        sd = sigma_delta_sq
        g = beta * beta * sd + se
    e = known_delta_e_term(fit, stats, sd)
    n, k = stats.n, stats.k
    return (se / k + g / n + g * e) / beta**2


def _as_controlled(theta) -> ControlledFit:
    if isinstance(theta, ControlledFit):
        return theta
    return ControlledFit(theta.alpha_hat, theta.beta_hat, theta.x0_hat, theta.sigma_eps_sq_hat, 0.0, Case.KNOWN_DELTA)


def variance(formula: VarianceFormula, theta, stats: SufficientStats):
    formula = VarianceFormula(formula)
    if formula is VarianceFormula.V1_USUAL:
        return usual.variance_v1_usual(theta, stats)
    if formula is VarianceFormula.V2_USUAL:
        return usual.variance_v2_usual(theta, stats)
    if formula is VarianceFormula.V1_CONTROLLED:
        return variance_v1_controlled(theta, stats)
    if formula is VarianceFormula.V2_CONTROLLED:
        return variance_v2_controlled(theta, stats)
    return variance_known_delta(_as_controlled(theta), stats)


def bias(formula: VarianceFormula, theta, stats: SufficientStats):
    formula = VarianceFormula(formula)
    if formula in (VarianceFormula.V1_USUAL, VarianceFormula.V2_USUAL):
        return usual.bias_usual(theta, stats)
    if formula is VarianceFormula.V_KNOWN_DELTA:
        return 0.0
    return bias_controlled(theta, stats)


def confidence_interval(x0_hat: float, var: float, level: float = 0.95):
    """Wald interval x0_hat +/- z sqrt(var), z the 1 - (1 - level)/2 normal quantile.

    >>> lo, hi = confidence_interval(0.0, 1.0, 0.95)
    >>> round(lo, 2), round(hi, 2)
    (-1.96, 1.96)
    """
    z = two_sided_z(level)
    if not var > 0:
        raise NonPositiveVariance(f"variance must be positive, got {var!r}")
    half = z * math.sqrt(var)
    return x0_hat - half, x0_hat + half


@dataclass(frozen=True)
class UncertaintyReport:
    variance_formula: VarianceFormula
    variance: float
    bias: float
    ci_lower: float
    ci_upper: float
    confidence_level: float

    @property
    def amplitude(self) -> float:
        """Full interval width, 2 z sqrt(variance)."""
        return self.ci_upper - self.ci_lower

    @property
    def expanded_uncertainty(self) -> float:
        """Half width z sqrt(variance), the metrology 'U' of a result."""
        return 0.5 * (self.ci_upper - self.ci_lower)


def report(fit, stats: SufficientStats, formula, level: float = 0.95) -> UncertaintyReport:
    """Variance, bias and interval for ``fit.x0_hat`` using one formula."""
    formula = VarianceFormula(formula)
    var = float(variance(formula, fit, stats))
    lo, hi = confidence_interval(fit.x0_hat, var, level)
    return UncertaintyReport(formula, var, float(bias(formula, fit, stats)), lo, hi, level)


def formulas_for(fit) -> tuple:
    """Variance formulas that apply to a fitted model."""
    if isinstance(fit, usual.UsualFit):
        return (VarianceFormula.V1_USUAL, VarianceFormula.V2_USUAL)
    if fit.case is Case.UNKNOWN_DELTA:
        return (VarianceFormula.V1_CONTROLLED, VarianceFormula.V2_CONTROLLED)
    return (VarianceFormula.V_KNOWN_DELTA,)
