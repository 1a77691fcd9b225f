"""Self-validation checks behind ``ctrlcal validate``.

Each check compares two independent routes to the same quantity: a
closed-form variance against a numerically inverted information matrix,
an information matrix against the Monte Carlo mean of a finite-difference
Hessian, or a first-order bias/variance approximation against simulation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, List

import numpy as np

from . import inference, usual
from .controlled import Case, ControlledFit, loglik_controlled
from .data import SufficientStats
from .numerics import invert, make_stream
from .simulation import Estimator, SimConfig, design_stats, generate_dataset, run_cell

VALIDATE_SEED = 20240611


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def random_points(count: int, seed: int = VALIDATE_SEED):
    """Random valid (stats, alpha, beta, x0, sigma_eps^2, sigma_delta^2) tuples.

    Designs are random rather than equally spaced so the identities are
    exercised away from the symmetric simulation grid. The ranges keep the
    information matrices conditioned well enough (below about 1e6 after
    scaling) that a double-precision inverse is itself good to 1e-10.
    """
    rng = make_stream(seed, 1)
    for _ in range(count):
        n = int(rng.integers(3, 60))
        k = int(rng.integers(2, 60))
        x = np.sort(rng.uniform(0.0, 3.0, n))
        x_bar = float(np.mean(x))
        stats = SufficientStats(
            n=n,
            k=k,
            x_bar=x_bar,
            y_bar=math.nan,
            s_xx=float(np.mean((x - x_bar) ** 2)),
            s_xy=math.nan,
            s_yy=math.nan,
            sum_x_sq=float(np.sum(x * x)),
            y0_bar=math.nan,
            s_y0y0=math.nan,
        )
        beta = float(rng.choice([-1.0, 1.0]) * 10 ** rng.uniform(-1, 1.5))
        yield (
            stats,
            float(rng.normal(0.0, 5.0)),
            beta,
            float(rng.uniform(-0.5, 3.5)),
            float(10 ** rng.uniform(-3, 0)),
            float(10 ** rng.uniform(-4, -1)),
        )


def _max_rel(pairs) -> float:
    return max(abs(a - b) / max(abs(a), abs(b), 1e-300) for a, b in pairs)


def _result(name, worst, tol) -> CheckResult:
    return CheckResult(name, bool(worst <= tol), f"max relative difference {worst:.2e} (tol {tol:.0e})")


def check_reductions(count: int = 100, tol: float = 1e-12) -> List[CheckResult]:
    """At sigma_delta^2 = 0 every controlled formula equals its usual-model counterpart."""
    v1, v2, vk, bias = [], [], [], []
    for stats, alpha, beta, x0, se, _ in random_points(count):
        u = usual.UsualFit(alpha, beta, x0, se)
        c1 = ControlledFit(alpha, beta, x0, se, 0.0, Case.UNKNOWN_DELTA)
        c2 = replace(c1, case=Case.KNOWN_DELTA)
        v1.append((inference.variance_v1_controlled(c1, stats), usual.variance_v1_usual(u, stats)))
        v2.append((inference.variance_v2_controlled(c1, stats), usual.variance_v2_usual(u, stats)))
        vk.append((inference.variance_known_delta(c2, stats), usual.variance_v1_usual(u, stats)))
        bias.append((inference.bias_controlled(c1, stats), usual.bias_usual(u, stats)))
    return [
        _result("controlled V1 reduces to usual V1 at sigma_delta^2=0", _max_rel(v1), tol),
        _result("controlled V2 reduces to usual V2 at sigma_delta^2=0", _max_rel(v2), tol),
        _result("known-delta variance reduces to usual V1 at sigma_delta^2=0", _max_rel(vk), tol),
        _result("controlled bias reduces to usual bias at sigma_delta^2=0", _max_rel(bias), tol),
    ]


def check_fisher_inverse(count: int = 100, tol: float = 1e-10) -> List[CheckResult]:
    """Closed-form variances equal the X0 entry of the inverted information matrix."""
    usual_pairs, known_pairs, unknown_pairs = [], [], []
    for stats, alpha, beta, x0, se, sd in random_points(count):
        u = usual.UsualFit(alpha, beta, x0, se)
        usual_pairs.append((invert(usual.fisher_usual(u, stats))[2, 2], usual.variance_v1_usual(u, stats)))
        c2 = ControlledFit(alpha, beta, x0, se, sd, Case.KNOWN_DELTA)
        known_pairs.append(
            (invert(inference.fisher_controlled_known(c2, stats))[2, 2], inference.variance_known_delta(c2, stats))
        )
        c1 = replace(c2, case=Case.UNKNOWN_DELTA)
        unknown_pairs.append(
            (invert(inference.fisher_controlled_unknown(c1, stats))[2, 2], inference.variance_v1_controlled(c1, stats))
        )
    return [
        _result("inverse usual information gives usual V1", _max_rel(usual_pairs), tol),
        _result("inverse known-delta information gives known-delta variance", _max_rel(known_pairs), tol),
        _result("inverse unknown-delta information gives controlled V1", _max_rel(unknown_pairs), tol),
    ]


def numeric_hessian(loglik: Callable, theta, rel_step: float = 1e-4) -> np.ndarray:
    """Central-difference Hessian of a batched log-likelihood.

    ``loglik(theta)`` returns one value per dataset; the result has shape
    ``(batch, p, p)``.
    """
    theta = np.asarray(theta, dtype=float)
    p = theta.size
    h = rel_step * np.maximum(np.abs(theta), 1e-2)

    def at(*shifts):
        t = theta.copy()
        for i, s in shifts:
            t[i] += s * h[i]
        return np.asarray(loglik(t), dtype=float)

    base = at()
    hess = np.empty(base.shape + (p, p))
    for i in range(p):
        hess[..., i, i] = (at((i, 1)) - 2.0 * base + at((i, -1))) / h[i] ** 2
        for j in range(i):
            val = (at((i, 1), (j, 1)) - at((i, 1), (j, -1)) - at((i, -1), (j, 1)) + at((i, -1), (j, -1))) / (
                4.0 * h[i] * h[j]
            )
            hess[..., i, j] = hess[..., j, i] = val
    return hess


@dataclass(frozen=True)
class HessianComparison:
    model: str
    fisher: np.ndarray
    mean_neg_hessian: np.ndarray
    std_error: np.ndarray

    def z_scores(self, fd_floor: float = 1e-6) -> np.ndarray:
        """|difference| in MC standard errors.

        Entries whose Hessian does not depend on the data have zero MC
        spread, so a relative floor ``fd_floor * |I_ij|`` stands in for
        finite-difference rounding.
        """
        scale = np.maximum(self.std_error, fd_floor * np.abs(self.fisher))
        scale = np.where(scale > 0, scale, 1e-12)
        return np.abs(self.mean_neg_hessian - self.fisher) / scale


def hessian_comparison(model: str, datasets: int = 10_000, seed: int = VALIDATE_SEED, *, n=20, k=20,
                       alpha=0.1, beta=2.0, x0=0.8, sigma_eps_sq=0.04, sigma_delta_sq=0.01) -> HessianComparison:
    """Monte Carlo mean of -Hessian at the true parameters versus the closed-form information.

    ``model`` is ``"usual"`` (data drawn with sigma_delta^2 = 0, the model
    being correctly specified), ``"unknown"`` or ``"known"``.
    """
    sd = 0.0 if model == "usual" else sigma_delta_sq
    cfg = SimConfig(n=n, k=k, x0_true=x0, sigma_delta_sq=sd, alpha_true=alpha, beta_true=beta,
                    sigma_eps_sq=sigma_eps_sq, replications=datasets, seed=seed)
    ys, y0s = [], []
    for rep in range(datasets):
        d = generate_dataset(cfg, rep)
        ys.append(d.y)
        y0s.append(d.y0)
    y, y0, x = np.array(ys), np.array(y0s), cfg.design
    stats = design_stats(cfg)
    if model == "usual":
        truth = cfg.truth_usual()
        fisher = usual.fisher_usual(truth, stats)
        hess = numeric_hessian(lambda t: usual.loglik_usual(t, x, y, y0), truth.theta)
    elif model == "unknown":
        truth = cfg.truth_controlled(Case.UNKNOWN_DELTA)
        fisher = inference.fisher_controlled_unknown(truth, stats)
        hess = numeric_hessian(lambda t: loglik_controlled(t, x, y, y0), truth.theta)
    elif model == "known":
        truth = cfg.truth_controlled(Case.KNOWN_DELTA)
        fisher = inference.fisher_controlled_known(truth, stats)
        hess = numeric_hessian(lambda t: loglik_controlled(t, x, y, y0, sd), truth.theta)
    else:
        raise ValueError(f"unknown model {model!r}")
    neg = -hess
    return HessianComparison(
        model,
        fisher,
        neg.mean(axis=0),
        neg.std(axis=0, ddof=1) / math.sqrt(datasets),
    )


def check_hessians(datasets: int = 10_000, z_max: float = 3.0) -> List[CheckResult]:
    out = []
    for model in ("usual", "unknown", "known"):
        cmp = hessian_comparison(model, datasets)
        worst = float(np.max(cmp.z_scores()))
        out.append(
            CheckResult(
                f"{model} information matches mean negative Hessian",
                worst <= z_max,
                f"worst entry {worst:.2f} MC standard errors over {datasets} datasets (limit {z_max})",
            )
        )
    return out


def bias_variance_study(replications: int = 5000, seed: int = VALIDATE_SEED):
    """Unknown-delta fit at n=100, k=2, sigma_delta^2=0.1, X0=0.01, where the fixed-k terms matter."""
    cfg = SimConfig(n=100, k=2, x0_true=0.01, sigma_delta_sq=0.1, replications=replications,
                    seed=seed, estimators=(Estimator.UNKNOWN,))
    return run_cell(cfg)[Estimator.UNKNOWN]


def check_bias_variance(replications: int = 5000) -> List[CheckResult]:
    """Bias within 3 MC s.e.; variance within 10% at 5000 replications.

    The variance tolerance widens by sqrt(5000 / replications) for smaller
    runs, in step with the Monte Carlo error of a sample variance.
    """
    est = bias_variance_study(replications)
    tol = 0.10 * math.sqrt(max(5000 / replications, 1.0))
    se = math.sqrt(est.empirical_variance / est.n_ok)
    z = abs(est.empirical_bias - est.theoretical_bias) / se
    v2 = est.formula(inference.VarianceFormula.V2_CONTROLLED).theoretical_variance
    rel = abs(est.empirical_variance - v2) / v2
    return [
        CheckResult(
            "empirical bias matches first-order bias (n=100, k=2)",
            z <= 3.0,
            f"empirical {est.empirical_bias:.5f} vs {est.theoretical_bias:.5f}, {z:.2f} MC s.e.",
        ),
        CheckResult(
            "empirical variance matches fixed-k V2 (n=100, k=2)",
            rel <= tol,
            f"empirical {est.empirical_variance:.5f} vs {v2:.5f}, {100 * rel:.1f}% apart (limit {100 * tol:.0f}%)",
        ),
    ]


def run_all(fast: bool = False) -> List[CheckResult]:
    """Every check; ``fast`` cuts the Monte Carlo sizes (and their power) by 10."""
    results = check_reductions() + check_fisher_inverse()
    results += check_hessians(1_000 if fast else 10_000)
    results += check_bias_variance(500 if fast else 5000)
    return results
