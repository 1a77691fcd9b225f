"""Small numerical kernel: matrix inversion, 2-D Newton, normal quantiles, RNG streams."""
from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidLevel, NoConvergence, SingularInformation

_STD_NORMAL = NormalDist()

DEFAULT_COND_GUARD = 1e12


@dataclass(frozen=True)
class SolverConfig:
    """Settings for :func:`solve_newton_2d`.

    ``tol`` bounds the max absolute *scaled* residual, so it is unit free.
    ``damping`` is the initial step fraction; steps are further halved
    whenever the residual norm fails to decrease.
    """

    tol: float = 1e-10
    max_iter: int = 100
    damping: float = 1.0
    max_backtrack: int = 50

    def __post_init__(self):
        if not (self.tol > 0):
            raise ValueError(f"tol must be > 0, got {self.tol!r}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter!r}")
        if not (0 < self.damping <= 1):
            raise ValueError(f"damping must lie in (0, 1], got {self.damping!r}")


@dataclass(frozen=True)
class Root:
    point: tuple
    iterations: int
    max_residual: float

    def __iter__(self):
        return iter(self.point)


def invert(matrix, guard: float = DEFAULT_COND_GUARD) -> np.ndarray:
    """Invert a small symmetric matrix, refusing ill-conditioned input.

    Parameters
    ----------
    matrix : array_like, shape (m, m)
        Symmetric to 1e-9 relative.
    guard : float
        Largest acceptable 2-norm condition number.

    Raises
    ------
    SingularInformation
        If the condition number exceeds ``guard`` or is not finite.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise SingularInformation("matrix has non-finite entries")
    scale = max(np.max(np.abs(a)), np.finfo(float).tiny)
    if np.max(np.abs(a - a.T)) > 1e-9 * scale:
        raise ValueError("matrix is not symmetric")
    # Equilibrate first: Fisher matrices mix entries of wildly different units.
    d = np.sqrt(np.abs(np.diag(a)))
    if np.any(d == 0):
        raise SingularInformation("zero on the diagonal")
    scaled = a / np.outer(d, d)
    cond = np.linalg.cond(scaled)
    if not np.isfinite(cond) or cond > guard:
        raise SingularInformation(f"condition number {cond:.3g} exceeds guard {guard:.3g}")
    inv = np.linalg.inv(scaled) / np.outer(d, d)
    return 0.5 * (inv + inv.T)


def solve_newton_2d(
    residual: Callable[[float, float], Sequence[float]],
    jacobian: Callable[[float, float], Sequence[Sequence[float]]],
    init: tuple,
    cfg: SolverConfig = SolverConfig(),
    domain: Optional[Callable[[float, float], bool]] = None,
) -> Root:
    """Damped Newton iteration for two equations in two unknowns.

    A step is accepted when it stays inside ``domain`` and lowers the
    Euclidean norm of the residual; otherwise it is halved, up to
    ``cfg.max_backtrack`` times. Converged when every component of the
    residual is below ``cfg.tol`` in absolute value.
    """
    try:
        x1, x2 = (float(v) for v in init)
    except (TypeError, ValueError):
        raise ValueError(f"init must be two finite numbers, got {init!r}") from None
    if not (math.isfinite(x1) and math.isfinite(x2)):
        raise ValueError(f"init must be two finite numbers, got {init!r}")
    r1, r2 = residual(x1, x2)
    if not (math.isfinite(r1) and math.isfinite(r2)):
        raise NoConvergence("residual is not finite at the initial point", iterations=0)
    worst = max(abs(r1), abs(r2))
    if worst < cfg.tol:
        return Root((x1, x2), 0, worst)

    for it in range(1, cfg.max_iter + 1):
        (a, b), (c, d) = jacobian(x1, x2)
        det = a * d - b * c
        # Cramer's rule; a 2x2 solve through LAPACK costs more than the model
        if det == 0.0 or not math.isfinite(det):
            raise NoConvergence("singular Jacobian", iterations=it, residual=worst)
        s1 = (-r1 * d + r2 * b) / det
        s2 = (-r2 * a + r1 * c) / det
        if not (math.isfinite(s1) and math.isfinite(s2)):
            raise NoConvergence("non-finite Newton step", iterations=it, residual=worst)

        norm = math.hypot(r1, r2)
        t = cfg.damping
        for _ in range(cfg.max_backtrack):
            y1, y2 = x1 + t * s1, x2 + t * s2
            if domain is None or domain(y1, y2):
                q1, q2 = residual(y1, y2)
                if math.isfinite(q1) and math.isfinite(q2) and (
                    math.hypot(q1, q2) < norm or max(abs(q1), abs(q2)) < cfg.tol
                ):
                    break
            t *= 0.5
        else:
            raise NoConvergence(
                f"line search failed after {cfg.max_backtrack} halvings",
                iterations=it,
                residual=worst,
            )
        x1, x2, r1, r2 = y1, y2, q1, q2
        worst = max(abs(r1), abs(r2))
        if worst < cfg.tol:
            return Root((x1, x2), it, worst)

    raise NoConvergence(
        f"no convergence after {cfg.max_iter} iterations (max |residual| = {worst:.3g})",
        iterations=cfg.max_iter,
        residual=worst,
    )


def std_normal_cdf(x: float) -> float:
    # erfc keeps full relative accuracy in the lower tail, where 1 + erf cancels
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def std_normal_quantile(p: float) -> float:
    """Inverse of the standard normal CDF.

    Raises :class:`InvalidLevel` unless ``0 < p < 1``.
    """
    if not (0.0 < p < 1.0) or math.isnan(p):
        raise InvalidLevel(f"probability must lie in (0, 1), got {p!r}")
    return _STD_NORMAL.inv_cdf(p)


def two_sided_z(level: float) -> float:
    """Normal quantile of order 1 - (1 - level)/2."""
    if not (0.0 < level < 1.0):
        raise InvalidLevel(f"confidence level must lie in (0, 1), got {level!r}")
    return std_normal_quantile(1.0 - (1.0 - level) / 2.0)


def make_stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``.

    Streams with different keys are statistically independent, and the
    same key always reproduces the same stream.
    """
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def draw_normal(stream: np.random.Generator, mu=0.0, sigma=1.0, size=None):
    if np.any(np.asarray(sigma) < 0):
        raise ValueError("sigma must be non-negative")
    return stream.normal(mu, sigma, size)
