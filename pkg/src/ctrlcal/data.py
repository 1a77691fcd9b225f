"""Two-stage calibration data and the sufficient statistics every estimator uses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDesign, NonFinite, TooFewPoints

MIN_FIRST_STAGE = 3
MIN_SECOND_STAGE = 2


@dataclass(frozen=True)
class CalibrationData:
    """First-stage standards ``(x, y)`` and second-stage readings ``y0``.

    Arrays are stored as read-only float64 copies. Construct through
    :meth:`from_pairs` or directly, then pass through :func:`validate`.
    """

    x: np.ndarray
    y: np.ndarray
    y0: np.ndarray

    def __post_init__(self):
        for name in ("x", "y", "y0"):
            arr = np.array(getattr(self, name), dtype=float).ravel()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.x.shape != self.y.shape:
            raise ValueError(f"x and y differ in length ({self.x.size} vs {self.y.size})")

    @classmethod
    def from_pairs(cls, first_stage, second_stage) -> "CalibrationData":
        pairs = np.asarray(list(first_stage), dtype=float).reshape(-1, 2)
        return cls(pairs[:, 0], pairs[:, 1], np.asarray(list(second_stage), dtype=float))

    @property
    def first_stage(self):
        return list(zip(self.x.tolist(), self.y.tolist()))

    @property
    def second_stage(self):
        return self.y0.tolist()

    @property
    def n(self) -> int:
        return int(self.x.size)

    @property
    def k(self) -> int:
        return int(self.y0.size)


def validate(raw: CalibrationData) -> CalibrationData:
    """Return ``raw`` unchanged if it is usable for calibration.

    Raises
    ------
    NonFinite
        NaN or infinity anywhere in the data.
    TooFewPoints
        Fewer than 3 standards or fewer than 2 second-stage readings.
    DegenerateDesign
        All standards share one x value.
    """
    for name in ("x", "y", "y0"):
        arr = getattr(raw, name)
        bad = np.flatnonzero(~np.isfinite(arr))
        if bad.size:
            raise NonFinite(f"{name}[{bad[0]}] is {arr[bad[0]]!r}")
    if raw.n < MIN_FIRST_STAGE:
        raise TooFewPoints(f"need at least {MIN_FIRST_STAGE} first-stage pairs, got {raw.n}")
    if raw.k < MIN_SECOND_STAGE:
        raise TooFewPoints(f"need at least {MIN_SECOND_STAGE} second-stage readings, got {raw.k}")
    if np.all(raw.x == raw.x[0]):
        raise DegenerateDesign(f"all first-stage x values equal {raw.x[0]!r}")
    return raw


@dataclass(frozen=True)
class SufficientStats:
    """Means and centred second moments, divisor n (first stage) and k (second)."""

    n: int
    k: int
    x_bar: float
    y_bar: float
    s_xx: float
    s_xy: float
    s_yy: float
    sum_x_sq: float
    y0_bar: float
    s_y0y0: float

    @property
    def slope(self) -> float:
        """Least-squares slope s_xy / s_xx."""
        return self.s_xy / self.s_xx

    @property
    def residual_ms(self) -> float:
        """Mean squared residual about the least-squares line."""
        return max(self.s_yy - self.s_xy * self.s_xy / self.s_xx, 0.0)

    def residual_ms_at(self, beta: float) -> float:
        """S_YY - 2 beta S_XY + beta^2 S_XX, written to avoid cancellation."""
        return self.residual_ms + self.s_xx * (beta - self.slope) ** 2


def summarize(data: CalibrationData) -> SufficientStats:
    """Two-pass moments of validated data.

    >>> d = CalibrationData.from_pairs([(0, 0), (1, 1), (2, 2)], [1.0, 1.0])
    >>> s = summarize(d)
    >>> round(s.s_xx, 12), round(s.s_xy, 12)
    (0.666666666667, 0.666666666667)
    """
    x, y, y0 = data.x, data.y, data.y0
    x_bar = float(np.mean(x))
    y_bar = float(np.mean(y))
    dx = x - x_bar
    dy = y - y_bar
    y0_bar = float(np.mean(y0))
    d0 = y0 - y0_bar
    s_xx = float(np.mean(dx * dx))
    s_yy = float(np.mean(dy * dy))
    return SufficientStats(
        n=data.n,
        k=data.k,
        x_bar=x_bar,
        y_bar=y_bar,
        s_xx=s_xx,
        s_xy=float(np.mean(dx * dy)),
        s_yy=s_yy,
        sum_x_sq=float(np.sum(x * x)),
        y0_bar=y0_bar,
        s_y0y0=float(np.mean(d0 * d0)),
    )
