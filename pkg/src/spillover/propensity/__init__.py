"""Multiclass exposure (propensity) models."""

from .cv import CvReport, StratificationError, cross_validate, stratified_folds
from .linear import fit_multinomial_linear, loss_and_grad, polynomial_basis
from .model import (
    EmptyCategoryError,
    PropensityFit,
    load_fit,
    log_loss,
    predict_propensities,
    save_fit,
    softmax,
    stabilize_weights,
)
from .trees import DEFAULTS as BOOSTED_DEFAULTS
from .trees import fit_boosted_trees


def fit_propensity(kind: str, features, categories, *, classes=None, **options) -> PropensityFit:
    if kind == "linear":
        return fit_multinomial_linear(features, categories, classes=classes, **options)
    if kind == "boosted":
        return fit_boosted_trees(features, categories, classes=classes, **options)
    from ..domain import ConfigError

    raise ConfigError(f"unknown propensity model kind {kind!r}; expected 'linear' or 'boosted'")


__all__ = [
    "BOOSTED_DEFAULTS",
    "CvReport",
    "EmptyCategoryError",
    "PropensityFit",
    "StratificationError",
    "cross_validate",
    "fit_boosted_trees",
    "fit_multinomial_linear",
    "fit_propensity",
    "load_fit",
    "log_loss",
    "loss_and_grad",
    "polynomial_basis",
    "predict_propensities",
    "save_fit",
    "softmax",
    "stabilize_weights",
    "stratified_folds",
]
