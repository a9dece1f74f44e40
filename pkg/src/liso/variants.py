"""Reweighted fits and fits with unknown monotonicity direction.

* :func:`adaptive_liso` refits with penalty weights ``1 / TV(f0_k)`` taken
  from an initial fit, dropping covariates the initial fit set to zero.
* :func:`scad_weights` gives the SCAD-derivative weights used by the
  SCAD-reweighted variant.
* :func:`signed_liso` fits every covariate with an increasing and a
  decreasing part, which is equivalent to a total-variation penalty without
  a monotonicity constraint.
* :func:`adaptive_sign_discovery` reweights the two parts separately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .backfit import (
    DECREASING,
    INCREASING,
    UNCONSTRAINED,
    AdditiveModel,
    Dataset,
    LisoConfig,
    component_values,
    liso_fit,
    zero_model,
)
from .stepfn import SignedParts, StepFunction, decompose, total_variation

# initial fits with total variation below this are treated as zero
DROP_TOL = 1e-10
WEIGHT_CAP = 1e8


@dataclass(frozen=True)
class ReweightSpec:
    """How stage-two penalty weights are derived from a stage-one fit.

    ``drop_zero=None`` means: drop zero covariates for ``adaptive``, keep them
    (with weight one) for ``scad``.
    """

    scheme: str = "adaptive"
    iterations: int = 1
    scad_a: float = 3.7
    drop_zero: Optional[bool] = None

    def __post_init__(self):
        if self.scheme not in ("adaptive", "scad"):
            raise ValueError("scheme must be 'adaptive' or 'scad'")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if not self.scad_a > 2:
            raise ValueError("SCAD parameter a must exceed 2")

    @property
    def drops(self) -> bool:
        return self.scheme == "adaptive" if self.drop_zero is None else self.drop_zero


def inverse_tv_weights(tv) -> np.ndarray:
    """``1 / tv`` capped at ``WEIGHT_CAP``; ``inf`` marks parts to drop."""
    tv = np.asarray(tv, dtype=np.float64)
    out = np.full(tv.shape, math.inf)
    live = tv >= DROP_TOL
    out[live] = np.minimum(1.0 / tv[live], WEIGHT_CAP)
    return out


def scad_weights(f0: AdditiveModel, lam: float, a: float = 3.7) -> np.ndarray:
    """SCAD derivative at each initial total variation, divided by ``lam``.

    One up to ``lam``, decaying linearly to zero at ``a * lam``.
    """
    if not a > 2:
        raise ValueError("SCAD parameter a must exceed 2")
    if not lam > 0:
        raise ValueError("lam must be positive")
    tv = f0.total_variations()
    return np.where(tv <= lam, 1.0, np.maximum(a * lam - tv, 0.0) / ((a - 1.0) * lam))


def adaptive_liso(d: Dataset, lam0: float, lam1: float, spec: ReweightSpec = ReweightSpec(),
                  config: Optional[LisoConfig] = None, initial: Optional[AdditiveModel] = None
                  ) -> AdditiveModel:
    """Two-stage reweighted fit.

    Stage one fits at ``lam0`` (or uses ``initial``); each following stage
    fits at ``lam1`` with weights from the previous stage.  Covariates dropped
    once stay dropped.
    """
    if not (lam0 >= 0 and lam1 >= 0):
        raise ValueError("penalty levels must be non-negative")
    base = config or LisoConfig()
    model = initial if initial is not None else liso_fit(d, base.with_lam(lam0))
    dropped = set(base.exclude)
    for it in range(spec.iterations):
        tv = model.total_variations()
        if spec.scheme == "adaptive":
            weights = inverse_tv_weights(tv)
            weights[~np.isfinite(weights)] = WEIGHT_CAP
        else:
            weights = scad_weights(model, lam1 if lam1 > 0 else lam0, spec.scad_a)
        if spec.drops:
            dropped |= {k for k in range(d.p) if tv[k] < DROP_TOL}
        if len(dropped) == d.p:
            return zero_model(d, base.with_lam(lam1), cycles=0, converged=True,
                              values_converged=True, stage=it + 1,
                              note="initial fit is zero; nothing to reweight")
        c = replace(base, lam=float(lam1), penalty_weights=tuple(weights.tolist()),
                    exclude=tuple(sorted(dropped)))
        model = liso_fit(d, c, warm_start=model)
        model.diagnostics["stage"] = it + 1
    return model


@dataclass(eq=False)
class SignedModel:
    """Fit whose components are split into increasing and decreasing parts."""

    model: AdditiveModel
    plus: list
    minus: list

    @property
    def combined(self) -> list:
        return self.model.components

    @property
    def g(self) -> list:
        return self.plus

    @property
    def h(self) -> list:
        return self.minus

    def predict(self, x_new, mode: str = "step"):
        return self.model.predict(x_new, mode=mode)

    def plus_tv(self) -> np.ndarray:
        return np.array([total_variation(f) for f in self.plus])

    def minus_tv(self) -> np.ndarray:
        return np.array([total_variation(f) for f in self.minus])

    def directions_found(self, tol: float = DROP_TOL) -> list:
        """Per covariate: increasing, decreasing, unconstrained or zero."""
        out = []
        for tp, tm in zip(self.plus_tv(), self.minus_tv()):
            if tp < tol and tm < tol:
                out.append("zero")
            elif tm < tol:
                out.append(INCREASING)
            elif tp < tol:
                out.append(DECREASING)
            else:
                out.append(UNCONSTRAINED)
        return out

    def to_dict(self) -> dict:
        d = self.model.to_dict()
        for comp, g, h in zip(d["components"], self.plus, self.minus):
            comp["plus"] = g.to_dict()
            comp["minus"] = h.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SignedModel":
        model = AdditiveModel.from_dict(d)
        comps = sorted(d["components"], key=lambda c: c["covariate"])
        plus = [StepFunction.from_dict(c["plus"]) for c in comps]
        minus = [StepFunction.from_dict(c["minus"]) for c in comps]
        return cls(model, plus, minus)


def split_model(d: Dataset, m: AdditiveModel) -> SignedModel:
    plus, minus = [], []
    for k, f in enumerate(m.components):
        if f.is_empty:
            plus.append(StepFunction.empty())
            minus.append(StepFunction.empty())
            continue
        parts: SignedParts = decompose(f, d.knot_weights(k))
        plus.append(parts.plus)
        minus.append(parts.minus)
    return SignedModel(m, plus, minus)


def signed_objective(d: Dataset, s: SignedModel, lam: float, w_plus=None, w_minus=None) -> float:
    """Loss of the pair ``(g, h)``: RSS of ``g + h`` plus separately
    weighted total variations of ``g`` and ``h``."""
    p = d.p
    wp = np.ones(p) if w_plus is None else np.asarray(w_plus, float)
    wm = np.ones(p) if w_minus is None else np.asarray(w_minus, float)
    fit = np.zeros(d.n)
    pen = 0.0
    for k in range(p):
        for f, wk in ((s.plus[k], wp[k]), (s.minus[k], wm[k])):
            if f.is_empty:
                continue
            fit += f(d.x[:, k])
            tv = total_variation(f)
            if tv > 0:
                pen += wk * tv
    r = d.y - fit
    return 0.5 * float(np.dot(d.w, r * r)) + lam * pen


def signed_liso(d: Dataset, lam: float, w_plus=None, w_minus=None,
                config: Optional[LisoConfig] = None,
                warm_start: Optional[AdditiveModel] = None) -> SignedModel:
    """Fit with a free direction for every covariate.

    Each covariate gets an increasing column weighted by ``w_plus[k]`` and a
    decreasing twin weighted by ``w_minus[k]``; an infinite weight drops that
    part.  The fitted pair is returned as the decomposition of its sum, which
    lies in the class where the two parts never jump on the same interval.
    """
    p = d.p
    base = config or LisoConfig()
    wp = np.ones(p) if w_plus is None else np.asarray(w_plus, dtype=np.float64)
    wm = np.ones(p) if w_minus is None else np.asarray(w_minus, dtype=np.float64)
    if wp.size != p or wm.size != p:
        raise ValueError("one weight per covariate required")
    both_gone = (~np.isfinite(wp)) & (~np.isfinite(wm))
    exclude = set(base.exclude) | set(np.flatnonzero(both_gone).tolist())
    c = replace(
        base,
        lam=float(lam),
        directions=(UNCONSTRAINED,) * p,
        penalty_weights=tuple(np.where(both_gone, 1.0, wp).tolist()),
        penalty_weights_minus=tuple(np.where(both_gone, 1.0, wm).tolist()),
        exclude=tuple(sorted(exclude)),
    )
    model = liso_fit(d, c, warm_start=warm_start)
    return split_model(d, model)


def adaptive_sign_discovery(d: Dataset, lam0: float, lam1: float,
                            config: Optional[LisoConfig] = None,
                            initial: Optional[SignedModel] = None) -> SignedModel:
    """Free-direction fit at ``lam0`` followed by a refit at ``lam1`` with
    weights ``1 / TV(plus_k)`` and ``1 / TV(minus_k)``; parts fitted as zero in
    the first stage are removed from the second."""
    first = initial if initial is not None else signed_liso(d, lam0, config=config)
    wp = inverse_tv_weights(first.plus_tv())
    wm = inverse_tv_weights(first.minus_tv())
    if not (np.any(np.isfinite(wp)) or np.any(np.isfinite(wm))):
        base = config or LisoConfig()
        m = zero_model(d, replace(base, lam=float(lam1), directions=(UNCONSTRAINED,) * d.p),
                       cycles=0, converged=True, values_converged=True,
                       note="initial fit is zero; nothing to reweight")
        return split_model(d, m)
    out = signed_liso(d, lam1, wp, wm, config=config, warm_start=first.model)
    out.model.diagnostics["stage"] = 2
    return out


def pair_values(d: Dataset, s: SignedModel) -> tuple:
    """(plus, minus, combined) contributions at the training covariates."""
    g = component_values(d, AdditiveModel(0.0, s.plus, s.model.directions, s.model.lam))
    h = component_values(d, AdditiveModel(0.0, s.minus, s.model.directions, s.model.lam))
    return g, h, component_values(d, s.model)
