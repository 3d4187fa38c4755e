from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
from scipy.stats import norm

ArrayLike = Union[float, np.ndarray]

DEFAULT_CONFIDENCE = 0.99


def wilson_interval(
    successes: ArrayLike,
    n: ArrayLike,
    confidence: float = DEFAULT_CONFIDENCE,
) -> Tuple[np.ndarray, np.ndarray]:
    """Two-sided Wilson score interval for a binomial proportion."""

    k = np.asarray(successes, dtype=float)
    total = np.asarray(n, dtype=float)
    z = float(norm.ppf(0.5 + confidence / 2.0))
    with np.errstate(invalid="ignore", divide="ignore"):
        phat = np.where(total > 0, k / total, 0.0)
        denom = 1.0 + z * z / total
        center = (phat + z * z / (2.0 * total)) / denom
        half = z * np.sqrt(phat * (1.0 - phat) / total + z * z / (4.0 * total * total)) / denom
    lo = np.clip(center - half, 0.0, 1.0)
    hi = np.clip(center + half, 0.0, 1.0)
    lo = np.where(k <= 0, 0.0, lo)
    hi = np.where(k >= total, 1.0, hi)
    return lo, hi


@dataclass(frozen=True)
class LogLinearFit:
    slope: float
    intercept: float
    r_squared: float
    n_points: int

    @property
    def rate(self) -> float:
        return -self.slope


def loglinear_fit(x: np.ndarray, y: np.ndarray) -> LogLinearFit:
    """Least-squares fit of log y = intercept + slope * x on positive y."""

    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = y > 0
    if keep.sum() < 2 or np.ptp(x[keep]) == 0.0:
        return LogLinearFit(float("nan"), float("nan"), float("nan"), int(keep.sum()))
    xs, ys = x[keep], np.log(y[keep])
    slope, intercept = np.polyfit(xs, ys, 1)
    resid = ys - (intercept + slope * xs)
    ss_tot = float(((ys - ys.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float((resid ** 2).sum()) / ss_tot
    return LogLinearFit(float(slope), float(intercept), r2, int(keep.sum()))
