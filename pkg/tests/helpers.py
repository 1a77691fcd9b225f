"""Shared test helpers (importable because tests/ is on the pytest pythonpath)."""
import dataclasses
import json
import math
from importlib.resources import files
from pathlib import Path

import numpy as np
from ctrlcal.data import SufficientStats

FIXTURES = Path(str(files("ctrlcal") / "fixtures"))

# one "ACn PASS|FAIL ..." line per acceptance criterion, printed by conftest
ACCEPTANCE_LINES = []


def fixture_path(name: str) -> Path:
    return FIXTURES / name


def load_published() -> dict:
    return json.loads((FIXTURES / "published.json").read_text())


def stats_from_design(x, k, **extra) -> SufficientStats:
    """Design-only statistics; response fields are NaN unless given."""
    x = np.asarray(x, dtype=float)
    x_bar = float(np.mean(x))
    fields = dict(
        n=x.size,
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
    fields.update(extra)
    return SufficientStats(**fields)


def agrees(value, published, digits=2) -> bool:
    """``value`` matches a printed number to ``digits`` significant figures.

    Within one unit of the last kept digit of ``published``, so 5.57e-7
    agrees with a printed 5.48e-7 but 5.70e-7 does not.
    """
    if published == 0:
        return value == 0
    unit = 10.0 ** (math.floor(math.log10(abs(published))) - digits + 1)
    return abs(value - published) <= unit * (1 + 1e-9)


def implied_stats(stats: SufficientStats, alpha: float, beta: float, rss: float) -> SufficientStats:
    """Replace the first-stage response statistics by those implied by a published fit.

    Keeps the design and the second-stage readings, and sets Y_bar, S_XY and
    S_YY so that the least-squares line is (alpha, beta) with mean squared
    residual ``rss``.
    """
    return dataclasses.replace(
        stats,
        y_bar=alpha + beta * stats.x_bar,
        s_xy=beta * stats.s_xx,
        s_yy=rss + beta * beta * stats.s_xx,
    )
