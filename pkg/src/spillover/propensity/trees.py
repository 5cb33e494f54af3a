"""Multiclass gradient-boosted regression trees on the softmax loss.

Each round fits one tree per class to the per-class gradient and hessian of
the multinomial log-loss (second-order leaf values, L2-regularised, as in
XGBoost).  Splits are searched over quantile bins of each feature.
"""

from __future__ import annotations

import numpy as np

from ..domain import ConfigError
from .model import PropensityFit, as_features, diagnostics, encode_categories, log_loss, softmax

DEFAULTS = {
    "learning_rate": 0.3,
    "max_depth": 6,
    "n_rounds": 20,
    "reg_lambda": 1.0,
    "min_child_weight": 1.0,
    "max_bins": 64,
}


def _bin_edges(x: np.ndarray, max_bins: int) -> list[np.ndarray]:
    edges = []
    qs = np.linspace(0, 1, max_bins + 1)[1:-1]
    for col in x.T:
        uniq = np.unique(col)
        if len(uniq) <= max_bins:
            cuts = (uniq[:-1] + uniq[1:]) / 2
        else:
            cuts = np.unique(np.quantile(col, qs))
        edges.append(cuts)
    return edges


def _grow_tree(binned, edges, g, h, max_depth, reg_lambda, min_child_weight):
    """Grow one tree; returns flat node arrays (feature, threshold, left, right, value)."""
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(np.nan)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(len(g)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        gs, hs = g[idx], h[idx]
        G, H = gs.sum(), hs.sum()
        value[node] = -G / (H + reg_lambda)
        if depth >= max_depth or len(idx) < 2:
            continue
        parent = G * G / (H + reg_lambda)
        best = (0.0, -1, -1)
        for f, cuts in enumerate(edges):
            if len(cuts) == 0:
                continue
            b = binned[idx, f]
            nb = len(cuts) + 1
            gl = np.cumsum(np.bincount(b, weights=gs, minlength=nb))[:-1]
            hl = np.cumsum(np.bincount(b, weights=hs, minlength=nb))[:-1]
            gr, hr = G - gl, H - hl
            ok = (hl >= min_child_weight) & (hr >= min_child_weight)
            if not ok.any():
                continue
            gain = np.where(ok, gl * gl / (hl + reg_lambda) + gr * gr / (hr + reg_lambda) - parent, -np.inf)
            j = int(np.argmax(gain))
            if gain[j] > best[0] + 1e-12:
                best = (float(gain[j]), f, j)
        _, f, j = best
        if f < 0:
            continue
        go_left = binned[idx, f] <= j
        lnode, rnode = new_node(), new_node()
        feature[node], threshold[node] = f, float(edges[f][j])
        left[node], right[node] = lnode, rnode
        stack.append((rnode, idx[~go_left], depth + 1))
        stack.append((lnode, idx[go_left], depth + 1))
    return {
        "feature": feature,
        "threshold": threshold,
        "left": left,
        "right": right,
        "value": value,
    }


def _tree_predict(tree: dict, x: np.ndarray) -> np.ndarray:
    feature = np.asarray(tree["feature"])
    thr = np.asarray(tree["threshold"], dtype=float)
    left = np.asarray(tree["left"])
    right = np.asarray(tree["right"])
    value = np.asarray(tree["value"], dtype=float)
    node = np.zeros(len(x), dtype=np.int64)
    rows = np.arange(len(x))
    while True:
        internal = left[node] >= 0
        if not internal.any():
            break
        f = np.where(internal, feature[node], 0)
        go_left = x[rows, f] < thr[node]
        node = np.where(internal, np.where(go_left, left[node], right[node]), node)
    return value[node]


def boosted_scores(params: dict, x: np.ndarray) -> np.ndarray:
    base = np.asarray(params["base_score"], dtype=float)
    scores = np.tile(base, (len(x), 1))
    lr = params["learning_rate"]
    for round_trees in params["trees"]:
        for k, tree in enumerate(round_trees):
            scores[:, k] += lr * _tree_predict(tree, x)
    return scores


def fit_boosted_trees(features, categories, *, classes=None, **options) -> PropensityFit:
    """Fit a boosted-tree exposure model.

    Options (defaults in :data:`DEFAULTS`): ``learning_rate`` in (0, 1],
    ``max_depth`` >= 1, ``n_rounds`` >= 0, ``reg_lambda``,
    ``min_child_weight``, ``max_bins``.  With zero rounds the model predicts
    the empirical class frequencies.
    """
    unknown = set(options) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown boosted-tree options {sorted(unknown)}")
    opts = {**DEFAULTS, **options}
    if not 0 < opts["learning_rate"] <= 1:
        raise ConfigError(f"learning_rate must lie in (0, 1], got {opts['learning_rate']}")
    if opts["max_depth"] < 1:
        raise ConfigError(f"max_depth must be >= 1, got {opts['max_depth']}")
    if opts["n_rounds"] < 0:
        raise ConfigError("n_rounds must be >= 0")

    x = as_features(features)
    cats, codes = encode_categories(categories, classes)
    k = len(cats)
    onehot = np.zeros((len(codes), k))
    onehot[np.arange(len(codes)), codes] = 1.0
    freq = onehot.mean(axis=0)
    base = np.log(freq)

    edges = _bin_edges(x, int(opts["max_bins"]))
    # bin index = number of cuts <= x, so "bin <= j" is exactly "x < cuts[j]"
    binned = np.column_stack([np.searchsorted(e, col, side="right") for e, col in zip(edges, x.T)])

    scores = np.tile(base, (len(x), 1))
    trees = []
    history = [log_loss(softmax(scores), codes)]
    lr = float(opts["learning_rate"])
    for _ in range(int(opts["n_rounds"])):
        probs = softmax(scores)
        grad = probs - onehot
        hess = np.maximum(2.0 * probs * (1.0 - probs), 1e-16)
        round_trees = []
        for c in range(k):
            tree = _grow_tree(
                binned, edges, grad[:, c], hess[:, c],
                int(opts["max_depth"]), float(opts["reg_lambda"]), float(opts["min_child_weight"]),
            )
            round_trees.append(tree)
            scores[:, c] += lr * _tree_predict(tree, x)
        trees.append(round_trees)
        history.append(log_loss(softmax(scores), codes))

    params = {**opts, "base_score": base, "trees": trees}
    diag = diagnostics(softmax(scores), codes, k)
    diag["loss_history"] = history
    return PropensityFit(kind="boosted", categories=cats, n_features=x.shape[1], params=params, diagnostics=diag)
