"""Softmax-linear exposure model fit by full-batch gradient descent."""

from __future__ import annotations

import numpy as np

from ..domain import ConfigError
from .model import PropensityFit, as_features, diagnostics, encode_categories, softmax


def polynomial_basis(x: np.ndarray, degree: int) -> np.ndarray:
    """Per-feature powers ``x, x**2, ..., x**degree`` (no interactions)."""
    return np.hstack([x**d for d in range(1, degree + 1)])


def _design(params: dict, x: np.ndarray) -> np.ndarray:
    basis = polynomial_basis(x, params["degree"])
    basis = (basis - np.asarray(params["center"])) / np.asarray(params["scale"])
    return np.hstack([np.ones((len(x), 1)), basis])


def linear_scores(params: dict, x: np.ndarray) -> np.ndarray:
    return _design(params, x) @ np.asarray(params["coef"])


def loss_and_grad(coef: np.ndarray, design: np.ndarray, onehot: np.ndarray, l2: float = 0.0):
    """Mean multinomial log-loss and its gradient in ``coef``.

    ``coef`` has shape ``(n_columns, n_classes)``; the intercept row is not
    penalised.
    """
    scores = design @ coef
    shifted = scores - scores.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(logz - (shifted * onehot).sum(axis=1)))
    probs = np.exp(shifted - logz[:, None])
    grad = design.T @ (probs - onehot) / len(design)
    if l2:
        loss += 0.5 * l2 * float(np.sum(coef[1:] ** 2))
        grad[1:] += l2 * coef[1:]
    return loss, grad


def fit_multinomial_linear(
    features,
    categories,
    *,
    classes=None,
    degree: int | None = None,
    l2: float = 0.0,
    max_iter: int = 2000,
    tol: float = 1e-6,
    step: float = 1.0,
) -> PropensityFit:
    """Fit P(category | features) with a softmax over a polynomial basis.

    ``degree`` defaults to 3 for a single feature and 1 otherwise.  Steps use
    Armijo backtracking, so the loss never increases between iterations; the
    step is doubled after every accepted move.  The run stops when the
    gradient's Frobenius norm drops below ``tol`` or after ``max_iter``
    iterations, and records which happened.
    """
    x = as_features(features)
    cats, codes = encode_categories(categories, classes)
    if degree is None:
        degree = 3 if x.shape[1] == 1 else 1
    if degree < 1:
        raise ConfigError("degree must be >= 1")

    basis = polynomial_basis(x, degree)
    center = basis.mean(axis=0)
    scale = basis.std(axis=0)
    scale[scale == 0] = 1.0
    params = {"degree": degree, "center": center, "scale": scale}
    design = _design(params, x)

    k = len(cats)
    onehot = np.zeros((len(codes), k))
    onehot[np.arange(len(codes)), codes] = 1.0
    freq = onehot.mean(axis=0)
    coef = np.zeros((design.shape[1], k))
    coef[0] = np.log(freq) - np.log(freq).mean()

    loss, grad = loss_and_grad(coef, design, onehot, l2)
    history = [loss]
    converged = False
    for it in range(max_iter):
        gnorm2 = float(np.sum(grad**2))
        if np.sqrt(gnorm2) < tol:
            converged = True
            break
        t = step
        while True:
            trial = coef - t * grad
            trial_loss, trial_grad = loss_and_grad(trial, design, onehot, l2)
            if trial_loss <= loss - 0.5 * t * gnorm2 or t < 1e-12:
                break
            t *= 0.5
        if trial_loss > loss:
            break
        coef, loss, grad = trial, trial_loss, trial_grad
        history.append(loss)
        step = 2 * t
    else:
        converged = np.sqrt(float(np.sum(grad**2))) < tol

    params["coef"] = coef
    probs = softmax(design @ coef)
    diag = diagnostics(probs, codes, k)
    diag.update(
        iterations=len(history) - 1,
        converged=bool(converged),
        stop_reason="gradient tolerance" if converged else "iteration limit",
        grad_norm=float(np.sqrt(np.sum(grad**2))),
        loss_history=history,
    )
    return PropensityFit(kind="linear", categories=cats, n_features=x.shape[1], params=params, diagnostics=diag)
