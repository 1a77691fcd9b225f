"""Monte Carlo study of X0_hat under the controlled calibration model.

Datasets come from the controlled model at the fixed design x_i = 2 (i-1)/(n-1).
Each replication is fitted with the requested estimators (including the
misspecified usual model), and the results are aggregated into bias, MSE,
mean estimated variance, coverage and interval amplitude.

Every replication draws from its own random stream keyed by
``(seed, cell key, replicate index)``. The cell key is a hash of the cell
parameters, so results do not depend on grid position, worker count or
execution order.
"""
from __future__ import annotations

import enum
import hashlib
import itertools
import math
import warnings
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .controlled import Case, ControlledFit, fit_known_delta, fit_unknown_delta
from .data import CalibrationData, SufficientStats, summarize
from .errors import AllReplicationsFailed, CalibrationError, ParseError
from .inference import VarianceFormula, bias_controlled, variance
from .numerics import SolverConfig, draw_normal, make_stream, two_sided_z
from .usual import UsualFit, bias_usual, fit_usual


class Estimator(str, enum.Enum):
    USUAL = "usual"
    UNKNOWN = "unknown"
    KNOWN = "known"


FORMULAS = {
    Estimator.USUAL: (VarianceFormula.V1_USUAL, VarianceFormula.V2_USUAL),
    Estimator.UNKNOWN: (
        VarianceFormula.V1_CONTROLLED,
        VarianceFormula.V2_CONTROLLED,
        VarianceFormula.V_KNOWN_DELTA,
    ),
    Estimator.KNOWN: (VarianceFormula.V_KNOWN_DELTA,),
}

ALL_ESTIMATORS = tuple(Estimator)


@dataclass(frozen=True)
class SimConfig:
    n: int
    k: int
    x0_true: float
    sigma_delta_sq: float
    alpha_true: float = 0.1
    beta_true: float = 2.0
    sigma_eps_sq: float = 0.04
    replications: int = 2000
    confidence_level: float = 0.95
    seed: int = 0
    estimators: Tuple[Estimator, ...] = ALL_ESTIMATORS
    solver: SolverConfig = SolverConfig()

    def __post_init__(self):
        object.__setattr__(self, "estimators", tuple(Estimator(e) for e in self.estimators))
        if self.n < 3 or self.k < 2:
            raise ValueError(f"need n >= 3 and k >= 2, got n={self.n}, k={self.k}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.sigma_eps_sq < 0 or self.sigma_delta_sq < 0:
            raise ValueError("variances must be >= 0")
        two_sided_z(self.confidence_level)

    @property
    def design(self) -> np.ndarray:
        return design_points(self.n)

    @property
    def cell_key(self) -> Tuple[int, ...]:
        """Stable 128-bit key derived from the data-generating parameters only."""
        text = repr(
            (
                self.n,
                self.k,
                float(self.x0_true),
                float(self.alpha_true),
                float(self.beta_true),
                float(self.sigma_eps_sq),
                float(self.sigma_delta_sq),
            )
        )
        digest = hashlib.sha256(text.encode()).digest()
        return tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))

    def truth_usual(self) -> UsualFit:
        return UsualFit(self.alpha_true, self.beta_true, self.x0_true, self.sigma_eps_sq)

    def truth_controlled(self, case: Case) -> ControlledFit:
        return ControlledFit(
            self.alpha_true,
            self.beta_true,
            self.x0_true,
            self.sigma_eps_sq,
            self.sigma_delta_sq,
            case,
        )


def design_points(n: int) -> np.ndarray:
    """Equally spaced standards on [0, 2]: x_1 = 0, x_i = x_{i-1} + 2/(n-1)."""
    return 2.0 * np.arange(n) / (n - 1)


def design_stats(cfg: SimConfig) -> SufficientStats:
    """Design-only statistics (n, k, X_bar, S_XX, sum X^2) for theoretical formulas."""
    x = cfg.design
    x_bar = float(np.mean(x))
    return SufficientStats(
        n=cfg.n,
        k=cfg.k,
        x_bar=x_bar,
        y_bar=math.nan,
        s_xx=float(np.mean((x - x_bar) ** 2)),
        s_xy=math.nan,
        s_yy=math.nan,
        sum_x_sq=float(np.sum(x * x)),
        y0_bar=math.nan,
        s_y0y0=math.nan,
    )


def generate_dataset(cfg: SimConfig, replicate_index: int) -> CalibrationData:
    rng = make_stream(cfg.seed, *cfg.cell_key, replicate_index)
    x = cfg.design
    eps = draw_normal(rng, 0.0, math.sqrt(cfg.sigma_eps_sq), cfg.n)
    delta = draw_normal(rng, 0.0, math.sqrt(cfg.sigma_delta_sq), cfg.n)
    eps0 = draw_normal(rng, 0.0, math.sqrt(cfg.sigma_eps_sq), cfg.k)
    y = cfg.alpha_true + cfg.beta_true * x + eps - cfg.beta_true * delta
    y0 = cfg.alpha_true + cfg.beta_true * cfg.x0_true + eps0
    return CalibrationData(x, y, y0)


@dataclass(frozen=True)
class FormulaSummary:
    formula: VarianceFormula
    theoretical_variance: float
    mean_estimated_variance: float
    coverage_pct: float
    mean_amplitude: float
    n_intervals: int  # replications with a usable (positive, finite) variance


@dataclass(frozen=True)
class EstimatorSummary:
    estimator: Estimator
    n_ok: int
    n_failed: int
    failures: Dict[str, int]
    empirical_bias: float
    empirical_mse: float
    empirical_variance: float
    theoretical_bias: float
    formulas: Tuple[FormulaSummary, ...]

    def formula(self, f) -> FormulaSummary:
        f = VarianceFormula(f)
        for fs in self.formulas:
            if fs.formula is f:
                return fs
        raise KeyError(f)


@dataclass(frozen=True)
class SimSummary:
    config: SimConfig
    estimators: Dict[Estimator, EstimatorSummary] = field(default_factory=dict)

    def __getitem__(self, est) -> EstimatorSummary:
        return self.estimators[Estimator(est)]

    @property
    def n_failed(self) -> int:
        return sum(e.n_failed for e in self.estimators.values())


def _fit(est: Estimator, stats, cfg: SimConfig):
    if est is Estimator.USUAL:
        return fit_usual(stats)
    if est is Estimator.UNKNOWN:
        return fit_unknown_delta(stats, warn=False)
    return fit_known_delta(stats, cfg.sigma_delta_sq, cfg.solver)


def _theory(est: Estimator, cfg: SimConfig):
    if est is Estimator.USUAL:
        truth = cfg.truth_usual()
        return truth, bias_usual
    case = Case.UNKNOWN_DELTA if est is Estimator.UNKNOWN else Case.KNOWN_DELTA
    return cfg.truth_controlled(case), bias_controlled


def _mean(values) -> float:
    arr = np.asarray(values, dtype=float)
    return float(np.mean(arr)) if arr.size else math.nan


def _summarize_estimator(est, cfg, x0_hats, variances, failures, stats0) -> EstimatorSummary:
    z = two_sided_z(cfg.confidence_level)
    truth, bias_fn = _theory(est, cfg)
    err = np.asarray(x0_hats, dtype=float) - cfg.x0_true
    formulas = []
    for j, f in enumerate(FORMULAS[est]):
        v = np.array([row[j] for row in variances], dtype=float)
        usable = np.isfinite(v) & (v > 0)
        half = z * np.sqrt(v[usable])
        covered = np.abs(err[usable]) <= half
        try:
            theo = float(variance(f, truth, stats0))
        except CalibrationError:
            theo = math.nan
        formulas.append(
            FormulaSummary(
                formula=f,
                theoretical_variance=theo,
                mean_estimated_variance=_mean(v[np.isfinite(v)]),
                coverage_pct=100.0 * _mean(covered) if usable.any() else math.nan,
                mean_amplitude=_mean(2.0 * half),
                n_intervals=int(usable.sum()),
            )
        )
    n_ok = int(err.size)
    return EstimatorSummary(
        estimator=est,
        n_ok=n_ok,
        n_failed=sum(failures.values()),
        failures=dict(sorted(failures.items())),
        empirical_bias=_mean(err),
        empirical_mse=_mean(err * err),
        empirical_variance=float(np.var(err)) if n_ok else math.nan,
        theoretical_bias=float(bias_fn(truth, stats0)),
        formulas=tuple(formulas),
    )


def run_cell(cfg: SimConfig) -> SimSummary:
    """Simulate one grid cell and aggregate the results per estimator.

    Replications whose fit raises a :class:`CalibrationError` are counted
    (by error type) in ``n_failed`` and excluded from every average.
    Theoretical variances are evaluated at the true parameters.

    Raises
    ------
    AllReplicationsFailed
        No estimator produced a single usable fit.
    """
    x0_hats = {e: [] for e in cfg.estimators}
    variances = {e: [] for e in cfg.estimators}
    failures = {e: Counter() for e in cfg.estimators}
    for rep in range(cfg.replications):
        stats = summarize(generate_dataset(cfg, rep))
        for est in cfg.estimators:
            try:
                fit = _fit(est, stats, cfg)
            except CalibrationError as exc:
                failures[est][type(exc).__name__] += 1
                continue
            row = []
            for f in FORMULAS[est]:
                try:
                    row.append(float(variance(f, fit, stats)))
                except (CalibrationError, ZeroDivisionError):
                    row.append(math.nan)
            x0_hats[est].append(fit.x0_hat)
            variances[est].append(row)

    if not any(x0_hats.values()):
        raise AllReplicationsFailed(
            f"every replication failed for cell n={cfg.n}, k={cfg.k}, x0={cfg.x0_true}"
        )
    stats0 = design_stats(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        summaries = {
            est: _summarize_estimator(est, cfg, x0_hats[est], variances[est], failures[est], stats0)
            for est in cfg.estimators
        }
    return SimSummary(cfg, summaries)


def _run_cell_safe(cfg: SimConfig):
    try:
        return run_cell(cfg)
    except AllReplicationsFailed as exc:
        return exc


def run_grid(cells: Iterable[SimConfig], workers: int = 1) -> List:
    """Run cells independently, in input order.

    Each entry of the result is a :class:`SimSummary`, or the
    :class:`AllReplicationsFailed` instance for a cell where nothing could
    be fitted.
    """
    cells = list(cells)
    if workers <= 1 or len(cells) <= 1:
        return [_run_cell_safe(c) for c in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_cell_safe, cells))


# --- grid configuration files -------------------------------------------------

_AXES = ("x0", "n", "k", "sigma_delta_sq")
_SCALARS = {
    "alpha": ("alpha_true", float),
    "beta": ("beta_true", float),
    "sigma_eps_sq": ("sigma_eps_sq", float),
    "replications": ("replications", int),
    "seed": ("seed", int),
    "level": ("confidence_level", float),
}
_SOLVER_KEYS = {"tol": float, "max_iter": int, "damping": float}


def parse_grid(text: str, source: Optional[str] = None) -> List[SimConfig]:
    """Parse a flat ``key = value`` grid file into cells.

    The axis keys ``x0``, ``n``, ``k`` and ``sigma_delta_sq`` accept
    comma-separated lists and are expanded as a Cartesian product with x0
    varying slowest. ``#`` starts a comment. Numbers use point decimals.
    """
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", path=source, row=lineno)
        key, _, val = (part.strip() for part in line.partition("="))
        known = set(_AXES) | set(_SCALARS) | set(_SOLVER_KEYS) | {"estimators"}
        if key not in known:
            raise ParseError(f"unknown key {key!r}", path=source, row=lineno)
        if key in values:
            raise ParseError(f"duplicate key {key!r}", path=source, row=lineno)
        values[key] = (val, lineno)

    def convert(key, conv, text_, lineno):
        try:
            return conv(text_)
        except ValueError:
            raise ParseError(f"bad value {text_!r} for {key}", path=source, row=lineno) from None

    axes = {}
    for key in _AXES:
        if key not in values:
            raise ParseError(f"missing required key {key!r}", path=source)
        val, lineno = values[key]
        conv = int if key in ("n", "k") else float
        axes[key] = [convert(key, conv, v.strip(), lineno) for v in val.split(",")]

    kwargs = {}
    for key, (attr, conv) in _SCALARS.items():
        if key in values:
            kwargs[attr] = convert(key, conv, *values[key])
    solver = {}
    for key, conv in _SOLVER_KEYS.items():
        if key in values:
            solver[key] = convert(key, conv, *values[key])
    if solver:
        kwargs["solver"] = SolverConfig(**solver)
    if "estimators" in values:
        val, lineno = values["estimators"]
        try:
            kwargs["estimators"] = tuple(Estimator(e.strip()) for e in val.split(","))
        except ValueError as exc:
            raise ParseError(str(exc), path=source, row=lineno) from None

    cells = []
    for x0, n, k, sd in itertools.product(*(axes[a] for a in _AXES)):
        try:
            cells.append(SimConfig(n=n, k=k, x0_true=x0, sigma_delta_sq=sd, **kwargs))
        except ValueError as exc:
            raise ParseError(str(exc), path=source) from None
    return cells


def with_overrides(cells: Iterable[SimConfig], **changes) -> List[SimConfig]:
    changes = {k: v for k, v in changes.items() if v is not None}
    return [replace(c, **changes) for c in cells]


# --- tabular output --------------------------------------------------------

CSV_COLUMNS = (
    "x0",
    "n",
    "k",
    "sigma_delta_sq",
    "sigma_eps_sq",
    "alpha",
    "beta",
    "seed",
    "replications",
    "estimator",
    "n_ok",
    "n_failed",
    "empirical_bias",
    "empirical_mse",
    "empirical_variance",
    "theoretical_bias",
    "formula",
    "theoretical_variance",
    "mean_estimated_variance",
    "coverage_pct",
    "mean_amplitude",
    "n_intervals",
)


def _cell_fields(c: SimConfig) -> dict:
    return {
        "x0": c.x0_true,
        "n": c.n,
        "k": c.k,
        "sigma_delta_sq": c.sigma_delta_sq,
        "sigma_eps_sq": c.sigma_eps_sq,
        "alpha": c.alpha_true,
        "beta": c.beta_true,
        "seed": c.seed,
        "replications": c.replications,
    }


def summary_rows(results, cells: Optional[Sequence[SimConfig]] = None) -> List[dict]:
    """Flatten grid results into one dict per (cell, estimator, formula).

    A cell that failed outright becomes a single row with ``n_ok = 0`` and
    empty statistics when ``cells`` (the configs, in result order) is given.
    """
    rows = []
    for i, res in enumerate(results):
        if isinstance(res, Exception):
            if cells is not None:
                c = cells[i]
                rows.append(
                    dict(
                        _cell_fields(c),
                        estimator=",".join(e.value for e in c.estimators),
                        n_ok=0,
                        n_failed=c.replications,
                    )
                )
            continue
        c = res.config
        base = _cell_fields(c)
        for est in c.estimators:
            es = res.estimators[est]
            head = dict(
                base,
                estimator=est.value,
                n_ok=es.n_ok,
                n_failed=es.n_failed,
                empirical_bias=es.empirical_bias,
                empirical_mse=es.empirical_mse,
                empirical_variance=es.empirical_variance,
                theoretical_bias=es.theoretical_bias,
            )
            for fs in es.formulas:
                rows.append(
                    dict(
                        head,
                        formula=fs.formula.value,
                        theoretical_variance=fs.theoretical_variance,
                        mean_estimated_variance=fs.mean_estimated_variance,
                        coverage_pct=fs.coverage_pct,
                        mean_amplitude=fs.mean_amplitude,
                        n_intervals=fs.n_intervals,
                    )
                )
    return rows
