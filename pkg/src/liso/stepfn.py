"""Right-continuous step functions with knots at observed covariate values.

A :class:`StepFunction` takes ``values[j]`` on ``[knots[j], knots[j+1])``,
``values[-1]`` to the right of the last knot and ``values[0]`` to the left
of the first one, so evaluation is flat outside the observed range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# increments smaller than this (relative to the function's scale) count as zero
TIE_RTOL = 1e-12


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64).reshape(-1)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Piecewise-constant right-continuous function of one variable."""

    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        knots = _frozen(self.knots)
        values = _frozen(self.values)
        if knots.shape != values.shape:
            raise ValueError(
                f"knots and values differ in length ({knots.size} vs {values.size})"
            )
        if knots.size > 1 and not np.all(np.diff(knots) > 0):
            raise ValueError("knots must be strictly increasing")
        if not (np.all(np.isfinite(knots)) and np.all(np.isfinite(values))):
            raise ValueError("knots and values must be finite")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    @classmethod
    def empty(cls) -> "StepFunction":
        return cls(np.empty(0), np.empty(0))

    @classmethod
    def zero(cls, knots) -> "StepFunction":
        knots = np.asarray(knots, dtype=np.float64)
        return cls(knots, np.zeros_like(knots))

    def __len__(self) -> int:
        return self.knots.size

    def __call__(self, x, mode: str = "step"):
        return evaluate(self, x, mode=mode)

    @property
    def is_empty(self) -> bool:
        return self.knots.size == 0

    @property
    def is_zero(self) -> bool:
        return self.is_empty or not np.any(self.values)

    def total_variation(self) -> float:
        return total_variation(self)

    def increments(self) -> np.ndarray:
        return np.diff(self.values)

    def n_steps(self) -> int:
        """Number of non-negligible jumps between consecutive knots."""
        return int(np.count_nonzero(_snap(np.diff(self.values), self.values)))

    def is_nondecreasing(self) -> bool:
        return bool(np.all(_snap(np.diff(self.values), self.values) >= 0))

    def is_nonincreasing(self) -> bool:
        return bool(np.all(_snap(np.diff(self.values), self.values) <= 0))

    def shift(self, c: float) -> "StepFunction":
        return StepFunction(self.knots, self.values + c)

    def __neg__(self) -> "StepFunction":
        return StepFunction(self.knots, -self.values)

    def __add__(self, other: "StepFunction") -> "StepFunction":
        """Pointwise sum; the result has knots at the union of both knot sets."""
        if not isinstance(other, StepFunction):
            return NotImplemented
        if self.is_empty:
            return other
        if other.is_empty:
            return self
        if self.knots.size == other.knots.size and np.array_equal(self.knots, other.knots):
            return StepFunction(self.knots, self.values + other.values)
        knots = np.union1d(self.knots, other.knots)
        return StepFunction(knots, evaluate(self, knots) + evaluate(other, knots))

    def to_dict(self) -> dict:
        return {"knots": self.knots.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "StepFunction":
        return cls(d["knots"], d["values"])

    def __repr__(self) -> str:
        return f"StepFunction(n_knots={self.knots.size}, tv={total_variation(self):.6g})"


@dataclass(frozen=True, eq=False)
class SignedParts:
    """Monotone split of a step function into a non-decreasing and a
    non-increasing part whose jumps never share a knot interval."""

    plus: StepFunction
    minus: StepFunction


def _snap(increments: np.ndarray, values: np.ndarray) -> np.ndarray:
    if increments.size == 0:
        return increments
    scale = max(float(np.max(np.abs(values))), 1.0)
    return np.where(np.abs(increments) <= TIE_RTOL * scale, 0.0, increments)


def evaluate(f: StepFunction, x, mode: str = "step"):
    """Evaluate ``f`` at ``x`` (scalar or array).

    ``mode="linear"`` interpolates linearly between knots instead; it is meant
    for reporting predictions only and is never used while fitting.
    """
    if f.is_empty:
        raise ValueError("cannot evaluate an empty step function")
    xa = np.asarray(x, dtype=np.float64)
    if mode == "step":
        idx = np.searchsorted(f.knots, xa, side="right") - 1
        out = f.values[np.clip(idx, 0, f.knots.size - 1)]
    elif mode == "linear":
        out = np.interp(xa, f.knots, f.values)
    else:
        raise ValueError(f"unknown evaluation mode {mode!r}")
    if np.ndim(x) == 0:
        return float(out)
    return out


def total_variation(f: StepFunction) -> float:
    if f.values.size < 2:
        return 0.0
    return float(np.sum(np.abs(np.diff(f.values))))


def _knot_weights(f: StepFunction, knot_weights) -> np.ndarray:
    if knot_weights is None:
        return np.ones(f.knots.size)
    w = np.asarray(knot_weights, dtype=np.float64)
    if w.shape != f.values.shape:
        raise ValueError("knot_weights must have one entry per knot")
    if np.any(w < 0) or not np.sum(w) > 0:
        raise ValueError("knot_weights must be non-negative with a positive sum")
    return w


def center(f: StepFunction, knot_weights=None) -> StepFunction:
    """Shift ``f`` so its weighted mean over the knots is zero."""
    if f.is_empty:
        return f
    w = _knot_weights(f, knot_weights)
    mean = float(np.dot(w, f.values) / np.sum(w))
    return StepFunction(f.knots, f.values - mean)


def decompose(f: StepFunction, knot_weights=None) -> SignedParts:
    """Split ``f`` into a non-decreasing part accumulating the upward jumps and
    a non-increasing part accumulating the downward jumps.

    Both parts are recentred to weighted mean zero, so they add up to ``f``
    minus its weighted mean.  Jumps within the tie tolerance are ignored.
    """
    if f.is_empty:
        return SignedParts(f, f)
    w = _knot_weights(f, knot_weights)
    inc = _snap(np.diff(f.values), f.values)
    up = np.concatenate(([0.0], np.cumsum(np.where(inc > 0, inc, 0.0))))
    down = np.concatenate(([0.0], np.cumsum(np.where(inc < 0, inc, 0.0))))
    plus = center(StepFunction(f.knots, up), w)
    minus = center(StepFunction(f.knots, down), w)
    return SignedParts(plus, minus)
