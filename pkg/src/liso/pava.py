"""Weighted isotonic least squares on the line (pool adjacent violators)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import pava_blocks

# relative tolerance under which neighbouring block levels are pooled
LEVEL_RTOL = 1e-14


@dataclass(frozen=True, eq=False)
class SortedSeries:
    """Points sorted by covariate with distinct ``x`` and positive weights.

    ``count`` records how many raw observations were pooled into each point.
    """

    x: np.ndarray
    y: np.ndarray
    w: np.ndarray
    count: np.ndarray

    def __len__(self):
        return self.x.size

    @property
    def mean(self) -> float:
        return float(np.dot(self.w, self.y) / np.sum(self.w))


@dataclass(frozen=True, eq=False)
class Regressogram:
    """Block-constant isotonic fit.

    Block ``j`` covers series points ``starts[j]:ends[j]`` (the x-interval
    ``[x_lo[j], x_hi[j]]``), has fitted ``level[j]``, total weight
    ``weight[j]`` and ``count[j]`` raw observations.
    """

    starts: np.ndarray
    ends: np.ndarray
    level: np.ndarray
    weight: np.ndarray
    count: np.ndarray
    x_lo: np.ndarray
    x_hi: np.ndarray

    def __len__(self):
        return self.level.size


def merge_ties(x, y, w=None) -> SortedSeries:
    """Sort by ``x`` and pool duplicate covariate values.

    Each distinct ``x`` keeps the summed weight and the weighted mean response,
    which changes the weighted squared loss of any isotonic fit only by a
    constant.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    w = np.ones_like(x) if w is None else np.asarray(w, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise ValueError("empty input")
    if not (x.shape == y.shape == w.shape):
        raise ValueError("x, y and w must have the same length")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    ux, inv, cnt = np.unique(x, return_inverse=True, return_counts=True)
    ww = np.bincount(inv, weights=w, minlength=ux.size)
    wy = np.bincount(inv, weights=w * y, minlength=ux.size)
    return SortedSeries(ux, wy / ww, ww, cnt)


def pava_fit(s: SortedSeries) -> Regressogram:
    """Fit the weighted least-squares non-decreasing function to ``s``."""
    n = len(s)
    sums = np.empty(n)
    weights = np.empty(n)
    ends = np.empty(n, dtype=np.int64)
    m = pava_blocks(s.y, s.w, sums, weights, ends)
    sums, weights, ends = sums[:m], weights[:m], ends[:m]

    # pool blocks whose levels coincide so that levels strictly increase
    keep_s, keep_w, keep_e = [sums[0]], [weights[0]], [ends[0]]
    for j in range(1, m):
        prev = keep_s[-1] / keep_w[-1]
        cur = sums[j] / weights[j]
        if cur - prev <= LEVEL_RTOL * max(abs(prev), abs(cur), 1.0):
            keep_s[-1] += sums[j]
            keep_w[-1] += weights[j]
            keep_e[-1] = ends[j]
        else:
            keep_s.append(sums[j])
            keep_w.append(weights[j])
            keep_e.append(ends[j])
    ends = np.array(keep_e, dtype=np.int64)
    starts = np.concatenate(([0], ends[:-1]))
    weight = np.array(keep_w)
    level = np.array(keep_s) / weight
    ccount = np.concatenate(([0], np.cumsum(s.count)))
    return Regressogram(
        starts=starts,
        ends=ends,
        level=level,
        weight=weight,
        count=ccount[ends] - ccount[starts],
        x_lo=s.x[starts],
        x_hi=s.x[ends - 1],
    )


def fitted_values(r: Regressogram, s: SortedSeries) -> np.ndarray:
    """Fitted value at every point of ``s``."""
    if r.ends.size == 0 or r.ends[-1] != len(s):
        raise ValueError("regressogram does not match the series")
    return np.repeat(r.level, r.ends - r.starts)


def isotonic(x, y, w=None) -> np.ndarray:
    """Convenience wrapper: isotonic fit at each raw observation of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    s = merge_ties(x, y, w)
    fit = fitted_values(pava_fit(s), s)
    return fit[np.searchsorted(s.x, x)]
