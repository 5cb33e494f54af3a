from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from ..domain import ConfigError, DataError

FORMAT = "spillover.propensity"
FORMAT_VERSION = 1


class EmptyCategoryError(DataError):
    """A requested exposure category has no training rows."""


def softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_loss(probs: np.ndarray, codes: np.ndarray) -> float:
    p = probs[np.arange(len(codes)), codes]
    return float(-np.mean(np.log(np.clip(p, 1e-15, 1.0))))


def as_features(features) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[1] < 1:
        raise DataError(f"features must be a 2-D array with at least one column, got shape {x.shape}")
    if not np.isfinite(x).all():
        bad = np.unique(np.argwhere(~np.isfinite(x))[:, 0])[:10]
        raise DataError(f"non-finite feature values in rows {bad.tolist()}")
    return x


def encode_categories(categories, classes: Sequence[int] | None = None) -> tuple[tuple[int, ...], np.ndarray]:
    """Map category labels to column codes; ``classes`` fixes the column set."""
    y = np.asarray(categories).astype(np.int64).ravel()
    present = np.unique(y)
    if classes is None:
        cats = tuple(int(c) for c in present)
    else:
        cats = tuple(sorted(int(c) for c in classes))
        empty = sorted(set(cats) - set(present.tolist()))
        if empty:
            raise EmptyCategoryError(f"categories with no training rows: {empty}")
        stray = sorted(set(present.tolist()) - set(cats))
        if stray:
            raise DataError(f"labels {stray} are not among the requested categories {list(cats)}")
    if len(cats) < 2:
        raise DataError(f"need at least two distinct categories, got {list(cats)}")
    codes = np.searchsorted(np.asarray(cats), y)
    return cats, codes


@dataclass(frozen=True)
class PropensityFit:
    """A fitted multiclass exposure model.

    ``params`` is model-specific and only interpreted by the module that
    produced it; it round-trips through :meth:`to_dict`.
    """

    kind: str
    categories: tuple[int, ...]
    n_features: int
    params: dict[str, Any] = field(repr=False)
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def predict(self, features) -> np.ndarray:
        return predict_propensities(self, features)

    def column(self, category: int) -> int:
        try:
            return self.categories.index(int(category))
        except ValueError:
            raise KeyError(f"category {category} not in fitted set {list(self.categories)}") from None

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "kind": self.kind,
            "categories": list(self.categories),
            "n_features": self.n_features,
            "params": _jsonable(self.params),
            "diagnostics": _jsonable(self.diagnostics),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PropensityFit":
        if d.get("format") != FORMAT:
            raise DataError(f"not a propensity artifact (format={d.get('format')!r})")
        if d.get("version") != FORMAT_VERSION:
            raise DataError(f"unsupported propensity artifact version {d.get('version')}")
        return cls(
            kind=d["kind"],
            categories=tuple(d["categories"]),
            n_features=int(d["n_features"]),
            params=d["params"],
            diagnostics=d.get("diagnostics", {}),
        )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def save_fit(fit: PropensityFit, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(fit.to_dict(), sort_keys=True, indent=1) + "\n")
    return path


def load_fit(path) -> PropensityFit:
    return PropensityFit.from_dict(json.loads(Path(path).read_text()))


def predict_propensities(fit: PropensityFit, features) -> np.ndarray:
    """Probability matrix with one row per unit and one column per category."""
    x = as_features(features)
    if x.shape[1] != fit.n_features:
        raise DataError(f"model was fit on {fit.n_features} features, got {x.shape[1]}")
    if fit.kind == "linear":
        from .linear import linear_scores

        scores = linear_scores(fit.params, x)
    elif fit.kind == "boosted":
        from .trees import boosted_scores

        scores = boosted_scores(fit.params, x)
    else:
        raise ConfigError(f"unknown propensity model kind {fit.kind!r}")
    return softmax(scores)


def diagnostics(probs: np.ndarray, codes: np.ndarray, n_classes: int) -> dict[str, Any]:
    return {
        "log_loss": log_loss(probs, codes),
        "accuracy": float(np.mean(probs.argmax(axis=1) == codes)),
        "support": np.bincount(codes, minlength=n_classes).tolist(),
    }


def stabilize_weights(probs, floor: float = 0.01) -> np.ndarray:
    """Floor every probability at ``floor`` and rescale the rest so rows sum to one.

    Entries pushed below the floor by the rescaling are floored in turn.  A
    row with ``n_classes * floor >= 1`` becomes uniform.
    """
    if not 0 <= floor < 0.5:
        raise ConfigError(f"weight floor must lie in [0, 0.5), got {floor}")
    p = np.array(probs, dtype=float, copy=True)
    squeeze = p.ndim == 1
    if floor == 0:
        return p
    p = np.atleast_2d(p)
    p = p / p.sum(axis=1, keepdims=True)
    k = p.shape[1]
    if k * floor >= 1:
        out = np.full_like(p, 1.0 / k)
        return out[0] if squeeze else out
    clipped = p < floor
    for _ in range(k):
        free = ~clipped
        free_mass = np.where(free, p, 0).sum(axis=1, keepdims=True)
        budget = 1 - floor * clipped.sum(axis=1, keepdims=True)
        scaled = np.where(free, p * budget / free_mass, floor)
        newly = free & (scaled < floor)
        if not newly.any():
            break
        clipped |= newly
    return scaled[0] if squeeze else scaled
