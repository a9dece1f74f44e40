"""Univariate penalised isotonic fit: the PAVA fit Winsorized at two levels.

For one covariate the minimiser of

    0.5 * sum_i w_i (y_i - f(x_i))**2 + lam * TV(f),   f non-decreasing,

is the PAVA fit clipped to ``[a, b]``, where ``b`` and ``a`` solve
``sum_i w_i (fit_i - b)_+ = lam`` and ``sum_i w_i (a - fit_i)_+ = lam``, or
``a = b = mean(y)`` once ``2 * lam`` reaches ``sum_i w_i |fit_i - mean(y)|``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .pava import Regressogram, SortedSeries, fitted_values, pava_fit
from .stepfn import StepFunction


@dataclass(frozen=True)
class ThresholdPair:
    a: float
    b: float
    at_mean: bool


def _check_lam(lam):
    if not lam >= 0:
        raise ValueError(f"penalty level must be non-negative, got {lam!r}")


def thresholds_for(r: Regressogram, s: SortedSeries, lam: float) -> ThresholdPair:
    """Clipping levels for penalty ``lam`` given the PAVA fit ``r`` of ``s``."""
    _check_lam(lam)
    a, b, at_mean = _kernels.thresholds(r.level, r.weight, r.level.size, float(lam))
    if at_mean:
        a = b = s.mean
    return ThresholdPair(float(a), float(b), bool(at_mean))


def winsorize(r: Regressogram, s: SortedSeries, t: ThresholdPair) -> np.ndarray:
    if t.at_mean:
        return np.full(len(s), t.a)
    return np.clip(fitted_values(r, s), t.a, t.b)


def univariate_liso(s: SortedSeries, lam: float, penalty_weight: float = 1.0) -> StepFunction:
    """Penalised non-decreasing fit of ``s`` at level ``lam * penalty_weight``.

    The result is not centred: its weighted mean equals the weighted mean of
    ``s.y``.
    """
    _check_lam(lam)
    if not penalty_weight > 0:
        raise ValueError("penalty_weight must be positive")
    out = np.empty(len(s))
    a, b, at_mean, mean = _kernels.liso_1d(s.y, s.w, float(lam) * penalty_weight, out)
    if at_mean:
        out[:] = s.mean
    return StepFunction(s.x, out)


def zero_threshold(s: SortedSeries) -> float:
    """``max_m |sum_{i<=m} w_i (y_i - mean)|``: beyond this penalty level the
    univariate fit is constant in either monotone direction."""
    c = np.cumsum(s.w * (s.y - s.mean))
    return float(np.max(np.abs(c)))


def increasing_zero_threshold(s: SortedSeries) -> float:
    """Exact level at which the non-decreasing fit becomes constant.

    Equals ``sum_i w_i (fit_i - mean)_+`` for the PAVA fit, i.e. minus the
    smallest cumulative centred sum; never larger than :func:`zero_threshold`.
    """
    c = np.cumsum(s.w * (s.y - s.mean))
    return float(max(0.0, -np.min(c)))
