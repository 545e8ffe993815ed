"""Loss functions returning ``(loss, d loss / d input)``."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError


def cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean negative log-softmax of the true class over a batch.

    ``logits`` may be a single vector with a scalar label or a (batch, classes)
    array with one label per row.
    """
    logits = np.asarray(logits)
    single = logits.ndim == 1
    z = logits[None, :] if single else logits
    labels = np.atleast_1d(np.asarray(labels))
    n, k = z.shape
    if labels.shape != (n,):
        raise ShapeError(f"logits {z.shape} need {n} labels, got shape {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"labels must lie in [0, {k}), got {labels.tolist()}")
    z64 = z.astype(np.float64)
    z64 = z64 - z64.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z64).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_norm - z64[rows, labels]))
    probs = np.exp(z64 - log_norm[:, None])
    probs[rows, labels] -= 1.0
    grad = (probs / n).astype(logits.dtype)
    return loss, grad[0] if single else grad


def smooth_l1(prediction: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Huber loss with unit threshold, mean-reduced."""
    prediction = np.asarray(prediction)
    target = np.asarray(target)
    if prediction.shape != target.shape:
        raise ShapeError(f"prediction shape {prediction.shape} does not match target shape {target.shape}")
    d = prediction.astype(np.float64) - target.astype(np.float64)
    ad = np.abs(d)
    small = ad < 1.0
    per = np.where(small, 0.5 * d * d, ad - 0.5)
    n = max(d.size, 1)
    grad = np.where(small, d, np.sign(d)) / n
    out_dtype = prediction.dtype if np.issubdtype(prediction.dtype, np.floating) else np.float64
    return (float(per.mean()) if d.size else 0.0), grad.astype(out_dtype)
