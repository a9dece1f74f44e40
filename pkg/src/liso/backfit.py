"""Multivariate fits by cyclic thresholded-PAVA backfitting.

Every covariate contributes one or two internal *columns*: an increasing
column, a decreasing column (fitted by flipping the sign of the partial
residual), or both for a covariate whose direction is left free.  Each column
holds a centred monotone fit and is penalised by its range times
``lam * penalty_weight``; the coordinate update is the univariate Winsorized
PAVA fit of the column's partial residual.  The two columns of a free
covariate are updated together: an exact total-variation denoise of their
shared partial residual, split into its cumulative upward and downward parts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .pava import SortedSeries
from .shrink import zero_threshold
from .stepfn import StepFunction, decompose, total_variation

INCREASING = "increasing"
DECREASING = "decreasing"
UNCONSTRAINED = "unconstrained"

_DIRECTION_ALIASES = {
    "inc": INCREASING, "increasing": INCREASING, "+": INCREASING, "up": INCREASING,
    "dec": DECREASING, "decreasing": DECREASING, "-": DECREASING, "down": DECREASING,
    "auto": UNCONSTRAINED, "unconstrained": UNCONSTRAINED, "free": UNCONSTRAINED,
}

# full residual recomputation period (caps drift of the incremental updates)
RESYNC_EVERY = 50
# components whose total variation is below this count as zero
ACTIVE_TOL = 1e-12


def normalize_direction(d: str) -> str:
    try:
        return _DIRECTION_ALIASES[d.strip().lower()]
    except (KeyError, AttributeError):
        raise ValueError(f"unknown monotonicity direction {d!r}") from None


class Dataset:
    """Response, covariates and weights with per-covariate sort metadata.

    The stored response ``y`` is centred to weighted mean zero; the removed
    mean is kept in ``y_mean`` and becomes the fitted intercept.
    """

    def __init__(self, x, y, w=None, names: Optional[Sequence[str]] = None):
        x = np.array(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        y = np.array(y, dtype=np.float64).reshape(-1)
        if x.ndim != 2 or x.shape[0] != y.size:
            raise ValueError(f"x has shape {x.shape} but y has {y.size} entries")
        n, p = x.shape
        if n < 2:
            raise ValueError("need at least two observations")
        if p < 1:
            raise ValueError("need at least one covariate")
        w = np.ones(n) if w is None else np.array(w, dtype=np.float64).reshape(-1)
        if w.size != n:
            raise ValueError("w must have one entry per observation")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y)) and np.all(np.isfinite(w))):
            raise ValueError("data must be finite")
        if np.any(w <= 0):
            raise ValueError("observation weights must be positive")

        self.y_mean = float(np.dot(w, y) / np.sum(w))
        self.x = x
        self.y = y - self.y_mean
        self.w = w
        self.names = list(names) if names is not None else [f"x{k}" for k in range(p)]
        if len(self.names) != p:
            raise ValueError("one name per covariate required")

        self.sort_index = np.argsort(x, axis=0, kind="stable").T.copy()
        self.group = np.empty((p, n), dtype=np.int64)
        self.n_groups = np.empty(p, dtype=np.int64)
        self.knots = []
        self.group_rep = []
        gweight = np.zeros((p, n))
        for k in range(p):
            ux, first, inv = np.unique(x[:, k], return_index=True, return_inverse=True)
            self.knots.append(ux)
            self.group_rep.append(first)
            self.group[k] = inv
            self.n_groups[k] = ux.size
            gweight[k, : ux.size] = np.bincount(inv, weights=w, minlength=ux.size)
        self.group_weight = gweight
        for a in (self.x, self.y, self.w, self.sort_index, self.group, self.group_weight):
            a.flags.writeable = False

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def response(self) -> np.ndarray:
        """Uncentred response."""
        return self.y + self.y_mean

    def knot_weights(self, k: int) -> np.ndarray:
        return self.group_weight[k, : self.n_groups[k]]

    def series(self, k: int, z=None) -> SortedSeries:
        """Tie-merged series of ``z`` (default: centred ``y``) against covariate ``k``."""
        z = self.y if z is None else np.asarray(z, dtype=np.float64)
        ng = self.n_groups[k]
        wz = np.bincount(self.group[k], weights=self.w * z, minlength=ng)
        gw = self.knot_weights(k)
        cnt = np.bincount(self.group[k], minlength=ng)
        return SortedSeries(self.knots[k], wz / gw, gw.copy(), cnt)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.x[idx], self.response[idx], self.w[idx], names=self.names)


@dataclass(frozen=True)
class LisoConfig:
    """Fitting options.

    ``penalty_weights_minus`` applies to the decreasing half of covariates with
    an ``unconstrained`` direction (defaults to ``penalty_weights``).  A weight
    of ``inf`` removes that column from the problem; ``exclude`` removes whole
    covariates.
    """

    lam: float = 0.0
    penalty_weights: Optional[tuple] = None
    penalty_weights_minus: Optional[tuple] = None
    directions: Optional[tuple] = None
    exclude: tuple = ()
    tol_loss: float = 1e-9
    tol_change: float = 1e-8
    max_cycles: int = 10_000
    cycle_order: str = "fixed"
    seed: Optional[int] = None
    # window (in cycles) over which fitted-value changes must shrink once the
    # loss has settled; otherwise the drift is taken as a non-unique optimum
    patience: int = 100

    def __post_init__(self):
        for name in ("penalty_weights", "penalty_weights_minus", "directions"):
            v = getattr(self, name)
            if v is not None and not isinstance(v, tuple):
                object.__setattr__(self, name, tuple(np.asarray(v).tolist()))
        if self.directions is not None:
            object.__setattr__(
                self, "directions", tuple(normalize_direction(d) for d in self.directions)
            )
        object.__setattr__(self, "exclude", tuple(sorted(int(k) for k in self.exclude)))
        if np.ndim(self.lam) == 0 and not self.lam >= 0:
            raise ValueError("lambda must be non-negative")
        if not (self.tol_loss > 0 and self.tol_change > 0):
            raise ValueError("tolerances must be positive")
        if self.max_cycles < 1:
            raise ValueError("max_cycles must be at least 1")
        if self.cycle_order not in ("fixed", "random"):
            raise ValueError("cycle_order must be 'fixed' or 'random'")
        for name in ("penalty_weights", "penalty_weights_minus"):
            v = getattr(self, name)
            if v is not None and any(not (x >= 0) for x in v):
                raise ValueError(f"{name} must be non-negative")

    def with_lam(self, lam: float) -> "LisoConfig":
        return replace(self, lam=float(lam))

    def resolve(self, p: int):
        """Per-covariate ``(directions, plus_weights, minus_weights, excluded)``."""
        dirs = self.directions or (INCREASING,) * p
        pw = np.ones(p) if self.penalty_weights is None else np.asarray(self.penalty_weights, float)
        if self.penalty_weights_minus is None:
            pwm = pw.copy()
        else:
            pwm = np.asarray(self.penalty_weights_minus, float)
        if len(dirs) != p or pw.size != p or pwm.size != p:
            raise ValueError(f"config does not match {p} covariates")
        excluded = np.zeros(p, dtype=bool)
        for k in self.exclude:
            if not 0 <= k < p:
                raise ValueError(f"excluded covariate {k} out of range")
            excluded[k] = True
        return tuple(dirs), pw, pwm, excluded


def columns_for(p: int, c: LisoConfig):
    """Internal column layout: arrays of (covariate, sign, penalty weight)."""
    dirs, pw, pwm, excluded = c.resolve(p)
    cov, sign, weight = [], [], []
    for k in range(p):
        if excluded[k]:
            continue
        if dirs[k] in (INCREASING, UNCONSTRAINED) and math.isfinite(pw[k]):
            cov.append(k)
            sign.append(1.0)
            weight.append(pw[k])
        if dirs[k] == DECREASING and math.isfinite(pw[k]):
            cov.append(k)
            sign.append(-1.0)
            weight.append(pw[k])
        if dirs[k] == UNCONSTRAINED and math.isfinite(pwm[k]):
            cov.append(k)
            sign.append(-1.0)
            weight.append(pwm[k])
    return (
        np.array(cov, dtype=np.int64),
        np.array(sign, dtype=np.float64),
        np.array(weight, dtype=np.float64),
    )


@dataclass(eq=False)
class AdditiveModel:
    """Fitted additive model: ``intercept + sum_k components[k](x_k)``.

    Zero components are stored as empty step functions.
    """

    intercept: float
    components: list
    directions: tuple
    lam: float
    penalty_weights: tuple = ()
    names: Optional[list] = None
    diagnostics: dict = field(default_factory=dict)
    loss_history: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def p(self) -> int:
        return len(self.components)

    def predict(self, x_new, mode: str = "step") -> np.ndarray:
        return predict(self, x_new, mode=mode)

    def total_variations(self) -> np.ndarray:
        return np.array([total_variation(f) for f in self.components])

    def n_steps(self) -> np.ndarray:
        return np.array([0 if f.is_empty else f.n_steps() for f in self.components])

    def active_set(self, tol: float = ACTIVE_TOL) -> list:
        return [k for k, f in enumerate(self.components) if total_variation(f) > tol]

    @property
    def is_zero(self) -> bool:
        return not self.active_set()

    def to_dict(self) -> dict:
        comps = []
        for k, f in enumerate(self.components):
            d = {"covariate": k, "direction": self.directions[k]}
            if self.names is not None:
                d["name"] = self.names[k]
            d.update(f.to_dict())
            comps.append(d)
        return {
            "intercept": self.intercept,
            "lambda": self.lam,
            "penalty_weights": [_json_float(v) for v in self.penalty_weights],
            "components": comps,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AdditiveModel":
        comps = sorted(d["components"], key=lambda c: c["covariate"])
        names = [c["name"] for c in comps] if comps and all("name" in c for c in comps) else None
        return cls(
            intercept=float(d["intercept"]),
            components=[StepFunction(c["knots"], c["values"]) for c in comps],
            directions=tuple(c["direction"] for c in comps),
            lam=float(d["lambda"]),
            penalty_weights=tuple(math.inf if v is None else float(v)
                                  for v in d.get("penalty_weights", ())),
            names=names,
            diagnostics=dict(d.get("diagnostics", {})),
        )

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, s: str) -> "AdditiveModel":
        return cls.from_dict(json.loads(s))


def _json_float(v: float):
    # JSON has no infinity; removed columns are written as null
    return None if not math.isfinite(v) else float(v)


def zero_model(d: Dataset, c: LisoConfig, **diagnostics) -> AdditiveModel:
    dirs, pw, _, _ = c.resolve(d.p)
    return AdditiveModel(
        intercept=d.y_mean,
        components=[StepFunction.empty() for _ in range(d.p)],
        directions=dirs,
        lam=float(c.lam),
        penalty_weights=tuple(float(v) for v in pw),
        names=list(d.names),
        diagnostics=dict(diagnostics),
    )


def _partners(col_cov: np.ndarray) -> np.ndarray:
    """Index of the other column of a two-column (free) covariate, else -1."""
    out = np.full(col_cov.size, -1, dtype=np.int64)
    for c in range(col_cov.size - 1):
        if col_cov[c] == col_cov[c + 1]:
            out[c], out[c + 1] = c + 1, c
    return out


def _group_values(d: Dataset, k: int, f: StepFunction) -> np.ndarray:
    """Values of ``f`` at covariate ``k``'s knots, centred over the data."""
    if f.is_empty:
        return np.zeros(d.n_groups[k])
    v = np.asarray(f(d.knots[k]), dtype=np.float64)
    gw = d.knot_weights(k)
    return v - np.dot(gw, v) / np.sum(gw)


def _initial_columns(d: Dataset, col_cov, col_sign, warm: Optional[AdditiveModel]) -> np.ndarray:
    fobs = np.zeros((col_cov.size, d.n))
    if warm is None:
        return fobs
    if warm.p != d.p:
        raise ValueError("warm start does not match the dataset")
    for k in np.unique(col_cov):
        cols = np.flatnonzero(col_cov == k)
        gv = _group_values(d, k, warm.components[k])
        if not np.any(gv):
            continue
        if cols.size == 1:
            fobs[cols[0]] = gv[d.group[k]]
        else:
            parts = decompose(StepFunction(d.knots[k], gv), d.knot_weights(k))
            for c in cols:
                part = parts.plus if col_sign[c] > 0 else parts.minus
                fobs[c] = part.values[d.group[k]]
    return fobs


def _assemble(d, c, fobs, col_cov, diagnostics, history) -> AdditiveModel:
    dirs, pw, _, _ = c.resolve(d.p)
    comps = []
    for k in range(d.p):
        cols = np.flatnonzero(col_cov == k)
        if cols.size == 0:
            comps.append(StepFunction.empty())
            continue
        vals = fobs[cols][:, d.group_rep[k]].sum(axis=0)
        if not np.any(vals):
            comps.append(StepFunction.empty())
        else:
            comps.append(StepFunction(d.knots[k], vals))
    return AdditiveModel(
        intercept=d.y_mean,
        components=comps,
        directions=dirs,
        lam=float(c.lam),
        penalty_weights=tuple(float(v) for v in pw),
        names=list(d.names),
        diagnostics=diagnostics,
        loss_history=history,
    )


def liso_fit(d: Dataset, c: LisoConfig, warm_start: Optional[AdditiveModel] = None) -> AdditiveModel:
    """Fit at the single penalty level ``c.lam``.

    Stops once the relative loss decrease over a full cycle is below
    ``c.tol_loss`` and no fitted value moved by more than ``c.tol_change``.
    Once the loss has settled, fitted values must keep shrinking their changes
    by a fifth every ``c.patience`` cycles; if they stop doing so the fit is
    reported converged with ``values_converged=False`` (non-unique optimum).
    """
    lam = np.asarray(c.lam, dtype=np.float64)
    if lam.ndim != 0:
        raise ValueError("liso_fit needs a single lambda; use liso_path for grids")
    lam = float(lam)
    if not lam >= 0:
        raise ValueError("lambda must be non-negative")
    col_cov, col_sign, col_w = columns_for(d.p, c)
    if col_cov.size == 0:
        return zero_model(d, c, cycles=0, converged=True, values_converged=True,
                          final_loss=0.5 * float(np.dot(d.w, d.y**2)), max_change=0.0)
    col_lam = lam * col_w
    fobs = _initial_columns(d, col_cov, col_sign, warm_start)
    resid = d.y - fobs.sum(axis=0)
    w = np.ascontiguousarray(d.w)
    group = d.group
    gweight = d.group_weight
    rng = np.random.default_rng(c.seed) if c.cycle_order == "random" else None
    fixed = np.arange(col_cov.size, dtype=np.int64)
    partner = _partners(col_cov)

    loss = _kernels.column_loss(resid, fobs, col_lam, w)
    history = [loss]
    converged = values_converged = False
    streak = 0
    checkpoint = math.inf
    change = math.inf
    rel = math.inf
    cycles = 0
    for cycles in range(1, c.max_cycles + 1):
        order = fixed if rng is None else rng.permutation(col_cov.size).astype(np.int64)
        change = _kernels.backfit_cycle(resid, fobs, order, col_cov, col_sign, col_lam,
                                        partner, w, group, d.n_groups, gweight)
        if cycles % RESYNC_EVERY == 0:
            resid = d.y - fobs.sum(axis=0)
        new_loss = _kernels.column_loss(resid, fobs, col_lam, w)
        history.append(new_loss)
        rel = (loss - new_loss) / max(abs(loss), 1e-300)
        loss = new_loss
        if rel < c.tol_loss:
            if change < c.tol_change:
                converged = values_converged = True
                break
            streak += 1
            if streak % c.patience == 0:
                if change > 0.8 * checkpoint:
                    converged = True
                    break
                checkpoint = change
        else:
            streak = 0
            checkpoint = math.inf

    diagnostics = {
        "cycles": cycles,
        "converged": converged,
        "values_converged": values_converged,
        "final_loss": float(loss),
        "max_change": float(change),
        "rel_loss_decrease": float(rel),
    }
    return _assemble(d, c, fobs, col_cov, diagnostics, np.array(history))


def lambda_max(d: Dataset, c: Optional[LisoConfig] = None) -> float:
    """Smallest penalty level guaranteed to give the zero fit from a zero start."""
    c = c or LisoConfig()
    col_cov, _, col_w = columns_for(d.p, c)
    best = 0.0
    cache = {}
    for k, wk in zip(col_cov, col_w):
        if k not in cache:
            cache[k] = zero_threshold(d.series(k))
        t = cache[k]
        if t == 0.0:
            continue
        best = max(best, math.inf if wk == 0 else t / wk)
    return best


def default_grid(d: Dataset, c: Optional[LisoConfig] = None, count: int = 50,
                 ratio: float = 1e-3) -> np.ndarray:
    """Log-spaced descending grid from ``lambda_max`` down to ``ratio`` times it."""
    top = lambda_max(d, c)
    if top == 0.0 or not math.isfinite(top):
        raise ValueError("cannot build a default grid: lambda_max is zero or infinite")
    return np.geomspace(top, top * ratio, count)


def _check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64).reshape(-1)
    if grid.size == 0:
        raise ValueError("empty lambda grid")
    if np.any(grid < 0) or np.any(np.diff(grid) >= 0):
        raise ValueError("lambda grid must be non-negative and strictly decreasing")
    return grid


def liso_path(d: Dataset, grid=None, c: Optional[LisoConfig] = None,
              warm_start: Optional[AdditiveModel] = None) -> list:
    """Fits along a decreasing grid, each warm-started from the previous one."""
    c = c or LisoConfig()
    grid = default_grid(d, c) if grid is None else _check_grid(grid)
    models = []
    warm = warm_start
    for lam in grid:
        warm = liso_fit(d, c.with_lam(lam), warm_start=warm)
        models.append(warm)
    return models


def component_values(d: Dataset, m: AdditiveModel) -> np.ndarray:
    """(p, n) matrix of component contributions at the training covariates."""
    out = np.zeros((d.p, d.n))
    for k, f in enumerate(m.components):
        if not f.is_empty:
            out[k] = f(d.x[:, k])
    return out


def penalty(m: AdditiveModel, c: LisoConfig) -> float:
    """``sum_k weight_k * TV(f_k)`` with split weights for free directions."""
    dirs, pw, pwm, excluded = c.resolve(m.p)
    total = 0.0
    for k, f in enumerate(m.components):
        if f.is_empty or excluded[k]:
            continue
        if dirs[k] == UNCONSTRAINED and pw[k] != pwm[k]:
            parts = decompose(f)
            tp, tm = total_variation(parts.plus), total_variation(parts.minus)
            total += (pw[k] * tp if tp > 0 else 0.0) + (pwm[k] * tm if tm > 0 else 0.0)
        else:
            tv = total_variation(f)
            if tv > 0:
                total += pw[k] * tv
    return total


def objective(d: Dataset, m: AdditiveModel, c: Optional[LisoConfig] = None) -> float:
    """Half weighted RSS of the centred response plus the weighted TV penalty."""
    if c is None:
        c = LisoConfig(lam=m.lam, penalty_weights=m.penalty_weights or None,
                       directions=m.directions)
    r = d.y - component_values(d, m).sum(axis=0)
    return 0.5 * float(np.dot(d.w, r * r)) + float(c.lam) * penalty(m, c)


def predict(m: AdditiveModel, x_new, mode: str = "step") -> np.ndarray:
    x_new = np.asarray(x_new, dtype=np.float64)
    if x_new.ndim == 1:
        x_new = x_new[None, :] if m.p > 1 else x_new[:, None]
    if x_new.shape[1] != m.p:
        raise ValueError(f"expected {m.p} covariate columns, got {x_new.shape[1]}")
    out = np.full(x_new.shape[0], m.intercept)
    for k, f in enumerate(m.components):
        if not f.is_empty:
            out += f(x_new[:, k], mode=mode)
    return out


def fitted(d: Dataset, m: AdditiveModel) -> np.ndarray:
    return m.intercept + component_values(d, m).sum(axis=0)


def refit_changes(d: Dataset, m: AdditiveModel, c: LisoConfig) -> np.ndarray:
    """Change in fitted values caused by one extra refit of each column in
    isolation, starting from ``m``.  Small values certify a fixed point."""
    col_cov, col_sign, col_w = columns_for(d.p, c)
    fobs0 = _initial_columns(d, col_cov, col_sign, m)
    resid0 = d.y - fobs0.sum(axis=0)
    col_lam = float(c.lam) * col_w
    zs = np.empty(d.n)
    vals = np.empty(d.n)
    out = np.zeros(col_cov.size)
    for j in range(col_cov.size):
        resid = resid0.copy()
        fobs = fobs0.copy()
        out[j] = _kernels.refit_column(resid, fobs, j, col_cov[j], col_sign[j], col_lam[j],
                                       d.w, d.group, d.n_groups, d.group_weight, zs, vals)
    return out


def kkt_certificate(d: Dataset, m: AdditiveModel, c: LisoConfig) -> float:
    ch = refit_changes(d, m, c)
    return float(ch.max()) if ch.size else 0.0
