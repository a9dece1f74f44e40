"""Choosing the penalty level: k-fold cross-validation and validation-set tuning."""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .backfit import (
    UNCONSTRAINED,
    AdditiveModel,
    Dataset,
    LisoConfig,
    default_grid,
    lambda_max,
    liso_fit,
    liso_path,
)
from .variants import (
    DROP_TOL,
    ReweightSpec,
    SignedModel,
    adaptive_liso,
    adaptive_sign_discovery,
    inverse_tv_weights,
    signed_liso,
)


class PathFitter:
    """Fits a warm-started path on a training split."""

    def __init__(self, config: Optional[LisoConfig] = None):
        self.config = config or LisoConfig()

    def __call__(self, train: Dataset, grid) -> list:
        return liso_path(train, grid, self.config)


def weighted_mse(model, x, y, w=None) -> float:
    r = np.asarray(y, float) - model.predict(x)
    if w is None:
        return float(np.mean(r * r))
    w = np.asarray(w, float)
    return float(np.dot(w, r * r) / np.sum(w))


def fold_assignment(n: int, folds: int, seed) -> np.ndarray:
    perm = np.random.default_rng(seed).permutation(n)
    ids = np.empty(n, dtype=np.int64)
    ids[perm] = np.arange(n) % folds
    return ids


@dataclass(eq=False)
class CvReport:
    grid: np.ndarray
    fold_mse: np.ndarray  # folds x grid
    mean_mse: np.ndarray
    sd_mse: np.ndarray
    lam_min: float
    lam_1se: float
    seed: Optional[int]
    fold_ids: np.ndarray

    @property
    def index_min(self) -> int:
        return int(np.flatnonzero(self.grid == self.lam_min)[0])

    @property
    def index_1se(self) -> int:
        return int(np.flatnonzero(self.grid == self.lam_1se)[0])

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.tolist(),
            "fold_mse": self.fold_mse.tolist(),
            "mean_mse": self.mean_mse.tolist(),
            "sd_mse": self.sd_mse.tolist(),
            "lambda_min": self.lam_min,
            "lambda_1se": self.lam_1se,
            "seed": self.seed,
            "folds": int(self.fold_mse.shape[0]),
            "fold_ids": self.fold_ids.tolist(),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("lambda,mean_mse,sd_mse\n")
        for lam, m, s in zip(self.grid, self.mean_mse, self.sd_mse):
            buf.write(f"{float(lam)!r},{float(m)!r},{float(s)!r}\n")
        return buf.getvalue()


def select_from_curve(grid, mean_mse, sd_mse):
    """``(lam_min, lam_1se)`` for a descending grid; ties go to larger lambda."""
    i = int(np.argmin(mean_mse))
    bound = mean_mse[i] + sd_mse[i]
    j = int(np.flatnonzero(mean_mse <= bound)[0])
    return float(grid[i]), float(grid[j])


def cross_validate(d: Dataset, grid=None, folds: int = 10, fitter: Optional[Callable] = None,
                   seed=0, config: Optional[LisoConfig] = None) -> CvReport:
    """k-fold CV over a descending grid shared by all folds.

    ``fitter(train, grid)`` must return one model per grid value; the default
    fits a warm-started path with ``config``.  Held-out error is the weighted
    mean squared error of the uncentred response.
    """
    if not 2 <= folds <= d.n:
        raise ValueError(f"folds must lie in [2, {d.n}]")
    fitter = fitter or PathFitter(config)
    if grid is None:
        grid = default_grid(d, config)
    grid = np.asarray(grid, dtype=np.float64).reshape(-1)
    if grid.size == 0:
        raise ValueError("empty lambda grid")
    if np.any(np.diff(grid) >= 0):
        raise ValueError("grid must be strictly decreasing")
    ids = fold_assignment(d.n, folds, seed)
    resp = d.response
    fold_mse = np.empty((folds, grid.size))
    for f in range(folds):
        test = ids == f
        train_idx = np.flatnonzero(~test)
        if train_idx.size < 2:
            raise ValueError(f"fold {f} leaves fewer than two training observations")
        models = fitter(d.subset(train_idx), grid)
        for j, m in enumerate(models):
            fold_mse[f, j] = weighted_mse(m, d.x[test], resp[test], d.w[test])
    mean = fold_mse.mean(axis=0)
    sd = fold_mse.std(axis=0, ddof=1)
    lam_min, lam_1se = select_from_curve(grid, mean, sd)
    return CvReport(grid, fold_mse, mean, sd, lam_min, lam_1se, seed, ids)


@dataclass(eq=False)
class TuneResult:
    lam: object  # float, or (lam0, lam1) for two-stage fits
    mse: float
    model: object
    table: list  # (lambda or pair, validation mse) in evaluation order


def _tune_plain(train, valid, grid, config):
    models = liso_path(train, grid, config)
    errs = [weighted_mse(m, valid.x, valid.response, valid.w) for m in models]
    i = int(np.argmin(errs))
    table = [(float(l), e) for l, e in zip(grid, errs)]
    return TuneResult(float(grid[i]), errs[i], models[i], table)


def _stage_two_config(train, f0, spec, config):
    tv = f0.total_variations()
    dropped = set(config.exclude)
    if spec.drops:
        dropped |= {k for k in range(train.p) if tv[k] < DROP_TOL}
    return dropped


def _tune_two_stage(train, valid, grid0, config, spec, ratios, refine):
    results = {}
    top_plain = lambda_max(train, config)

    def evaluate(lam0, f0, rs):
        out = []
        if spec.scheme == "adaptive":
            dropped = _stage_two_config(train, f0, spec, config)
            if len(dropped) == train.p:
                m = adaptive_liso(train, lam0, 0.0, spec, config, initial=f0)
                e = weighted_mse(m, valid.x, valid.response, valid.w)
                return [((lam0, 0.0), e, m) for _ in rs]
            w = inverse_tv_weights(f0.total_variations())
            w[~np.isfinite(w)] = 1.0
            c2 = replace(config, penalty_weights=tuple(w.tolist()), exclude=tuple(sorted(dropped)))
            top = lambda_max(train, c2)
            lams = np.array([r * top for r in rs])
            models = liso_path(train, lams, c2)
            for lam1, m in zip(lams, models):
                m.diagnostics["stage"] = 1
                out.append(((lam0, float(lam1)), weighted_mse(m, valid.x, valid.response, valid.w), m))
        else:
            for r in rs:
                lam1 = float(r * top_plain)
                m = adaptive_liso(train, lam0, lam1, spec, config, initial=f0)
                out.append(((lam0, lam1), weighted_mse(m, valid.x, valid.response, valid.w), m))
        return out

    def run(lam0s, rs):
        rows = []
        stage1 = liso_path(train, lam0s, config)
        for lam0, f0 in zip(lam0s, stage1):
            rows.extend(evaluate(float(lam0), f0, rs))
        return rows

    rows = run(grid0, ratios)
    best = min(range(len(rows)), key=lambda i: (rows[i][1], i))
    if refine:
        i0, j0 = divmod(best, len(ratios))
        lo0 = grid0[max(i0 - 1, 0)]
        hi0 = grid0[min(i0 + 1, len(grid0) - 1)]
        lo_r = ratios[max(j0 - 1, 0)]
        hi_r = ratios[min(j0 + 1, len(ratios) - 1)]
        fine0 = np.unique(np.geomspace(lo0, hi0, 5))[::-1]
        fine_r = np.unique(np.geomspace(lo_r, hi_r, 5))[::-1]
        more = run(fine0, fine_r)
        rows = rows + more
        best = min(range(len(rows)), key=lambda i: (rows[i][1], i))
    pair, err, model = rows[best]
    table = [(r[0], r[1]) for r in rows]
    return TuneResult(pair, err, model, table)


def validation_tune(train: Dataset, valid: Dataset, grid=None, fitter="plain",
                    config: Optional[LisoConfig] = None, spec: Optional[ReweightSpec] = None,
                    coarse: int = 10, refine: bool = True) -> TuneResult:
    """Pick the penalty minimising squared error on a separate validation set.

    ``fitter`` is ``"plain"``, ``"adaptive"`` or ``"scad"``.  Two-stage fitters
    search a ``coarse x coarse`` product grid (stage-one lambda by stage-two
    lambda as a fraction of its own zero-fit level) and then refine locally
    around the best pair.  Ties go to the larger penalty.
    """
    config = config or LisoConfig()
    if fitter == "plain":
        grid = default_grid(train, config) if grid is None else np.asarray(grid, float)
        if grid.size == 0:
            raise ValueError("empty lambda grid")
        return _tune_plain(train, valid, grid, config)
    if fitter not in ("adaptive", "scad"):
        raise ValueError(f"unknown fitter {fitter!r}")
    spec = spec or ReweightSpec(scheme=fitter)
    if grid is None:
        grid = default_grid(train, config, count=coarse)
    grid = np.asarray(grid, float)
    if grid.size == 0:
        raise ValueError("empty lambda grid")
    ratios = np.geomspace(1.0, 1e-3, coarse)
    return _tune_two_stage(train, valid, grid, config, spec, ratios, refine)


def cv_adaptive(d: Dataset, folds: int = 10, seed=0, config: Optional[LisoConfig] = None,
                spec: Optional[ReweightSpec] = None, count: int = 50):
    """Tune both stages of a reweighted fit by two successive CV runs.

    The first run picks the stage-one level; the stage-two weights come from
    the full-data stage-one fit and a second run picks the stage-two level.
    Returns ``(model, lam0, lam1, first_report, second_report)``.
    """
    config = config or LisoConfig()
    spec = spec or ReweightSpec()
    first = cross_validate(d, default_grid(d, config, count), folds, seed=seed, config=config)
    lam0 = first.lam_min
    f0 = liso_fit(d, config.with_lam(lam0))
    if spec.scheme == "scad":
        second = cross_validate(
            d, default_grid(d, config, count), folds, seed=seed,
            fitter=lambda tr, g: [adaptive_liso(tr, lam0, l, spec, config) for l in g])
        lam1 = second.lam_min
        return adaptive_liso(d, lam0, lam1, spec, config, initial=f0), lam0, lam1, first, second
    dropped = _stage_two_config(d, f0, spec, config)
    if len(dropped) == d.p:
        return adaptive_liso(d, lam0, 0.0, spec, config, initial=f0), lam0, 0.0, first, None
    w = inverse_tv_weights(f0.total_variations())
    w[~np.isfinite(w)] = 1.0
    c2 = replace(config, penalty_weights=tuple(w.tolist()), exclude=tuple(sorted(dropped)))
    second = cross_validate(d, default_grid(d, c2, count), folds, seed=seed, config=c2)
    lam1 = second.lam_min
    model = liso_fit(d, c2.with_lam(lam1), warm_start=f0)
    model.diagnostics["stage"] = 1
    return model, lam0, lam1, first, second


def cv_sign_discovery(d: Dataset, folds: int = 10, seed=0, config: Optional[LisoConfig] = None,
                      count: int = 50):
    """Two CV runs for the free-direction two-stage fit.

    Returns ``(signed_model, lam0, lam1, first_report, second_report)``.
    """
    base = config or LisoConfig()
    c1 = replace(base, directions=(UNCONSTRAINED,) * d.p)
    first = cross_validate(d, default_grid(d, c1, count), folds, seed=seed, config=c1)
    lam0 = first.lam_min
    stage1 = signed_liso(d, lam0, config=base)
    wp = inverse_tv_weights(stage1.plus_tv())
    wm = inverse_tv_weights(stage1.minus_tv())
    if not (np.any(np.isfinite(wp)) or np.any(np.isfinite(wm))):
        return adaptive_sign_discovery(d, lam0, 0.0, base, initial=stage1), lam0, 0.0, first, None
    both = ~np.isfinite(wp) & ~np.isfinite(wm)
    c2 = replace(
        base,
        directions=(UNCONSTRAINED,) * d.p,
        penalty_weights=tuple(np.where(both, 1.0, wp).tolist()),
        penalty_weights_minus=tuple(np.where(both, 1.0, wm).tolist()),
        exclude=tuple(sorted(set(base.exclude) | set(np.flatnonzero(both).tolist()))),
    )
    second = cross_validate(d, default_grid(d, c2, count), folds, seed=seed, config=c2)
    lam1 = second.lam_min
    out = adaptive_sign_discovery(d, lam0, lam1, base, initial=stage1)
    return out, lam0, lam1, first, second
