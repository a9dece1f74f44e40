"""Sparse additive isotonic regression with total-variation penalties."""

from .backfit import (
    AdditiveModel,
    Dataset,
    LisoConfig,
    default_grid,
    lambda_max,
    liso_fit,
    liso_path,
    objective,
    predict,
)
from .stepfn import SignedParts, StepFunction, center, decompose, evaluate, total_variation

__all__ = [
    "AdditiveModel",
    "Dataset",
    "LisoConfig",
    "SignedParts",
    "StepFunction",
    "center",
    "decompose",
    "default_grid",
    "evaluate",
    "lambda_max",
    "liso_fit",
    "liso_path",
    "objective",
    "predict",
    "total_variation",
]
