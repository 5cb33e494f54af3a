from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from ..domain import ConfigError, DataError
from .linear import fit_multinomial_linear
from .model import as_features, encode_categories, log_loss, predict_propensities
from .trees import fit_boosted_trees

FITTERS = {"linear": fit_multinomial_linear, "boosted": fit_boosted_trees}


class StratificationError(DataError):
    """A cross-validation training fold lost every row of some category."""


@dataclass(frozen=True)
class CvReport:
    folds: int
    kind: str
    grid: list[dict[str, Any]]
    fold_accuracy: list[list[float]]
    fold_log_loss: list[list[float]]
    mean_log_loss: list[float]
    best_index: int
    best_params: dict[str, Any] = field(default_factory=dict)

    @property
    def best_fold_accuracy(self) -> list[float]:
        return self.fold_accuracy[self.best_index]

    def to_dict(self) -> dict:
        return {
            "folds": self.folds,
            "kind": self.kind,
            "grid": self.grid,
            "fold_accuracy": self.fold_accuracy,
            "fold_log_loss": self.fold_log_loss,
            "mean_log_loss": self.mean_log_loss,
            "best_index": self.best_index,
            "best_params": self.best_params,
        }


def stratified_folds(codes: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Fold id per row; each category is spread round-robin over the folds."""
    folds = np.empty(len(codes), dtype=np.int64)
    offset = 0
    for c in np.unique(codes):
        idx = np.flatnonzero(codes == c)
        idx = idx[rng.permutation(len(idx))]
        folds[idx] = (offset + np.arange(len(idx))) % k
        offset = (offset + len(idx)) % k
    return folds


def cross_validate(
    features,
    categories,
    grid: Sequence[dict[str, Any]],
    k_folds: int = 5,
    *,
    kind: str = "boosted",
    seed: int = 0,
    fold_ids=None,
) -> CvReport:
    """K-fold search over ``grid``; the winner minimises mean held-out log-loss.

    Folds are stratified by category and seeded; ``fold_ids`` overrides the
    split.  Every training part must contain every category.
    """
    if k_folds < 2:
        raise ConfigError("k_folds must be >= 2")
    if not grid:
        raise ConfigError("hyper-parameter grid is empty")
    if kind not in FITTERS:
        raise ConfigError(f"unknown model kind {kind!r}")
    x = as_features(features)
    cats, codes = encode_categories(categories)
    if fold_ids is None:
        folds = stratified_folds(codes, k_folds, np.random.default_rng(seed))
    else:
        folds = np.asarray(fold_ids, dtype=np.int64)
        if folds.shape != codes.shape or set(np.unique(folds)) != set(range(k_folds)):
            raise ConfigError("fold_ids must label every row with a fold in 0..k_folds-1")
    for f in range(k_folds):
        missing = sorted(set(range(len(cats))) - set(np.unique(codes[folds != f]).tolist()))
        if missing:
            raise StratificationError(
                f"training part of fold {f} has no rows for categories {[cats[i] for i in missing]}; "
                "merge sparse categories (e.g. lower the truncation threshold) or use fewer folds"
            )

    fitter = FITTERS[kind]
    acc, loss = [], []
    for params in grid:
        acc_row, loss_row = [], []
        for f in range(k_folds):
            train, test = folds != f, folds == f
            fit = fitter(x[train], np.asarray(cats)[codes[train]], classes=cats, **params)
            probs = predict_propensities(fit, x[test])
            acc_row.append(float(np.mean(probs.argmax(axis=1) == codes[test])))
            loss_row.append(log_loss(probs, codes[test]))
        acc.append(acc_row)
        loss.append(loss_row)
    mean_loss = [float(np.mean(r)) for r in loss]
    best = int(np.argmin(mean_loss))
    return CvReport(
        folds=k_folds,
        kind=kind,
        grid=[dict(g) for g in grid],
        fold_accuracy=acc,
        fold_log_loss=loss,
        mean_log_loss=mean_loss,
        best_index=best,
        best_params=dict(grid[best]),
    )
