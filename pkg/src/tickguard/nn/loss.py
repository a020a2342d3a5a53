"""Binary cross-entropy on logits."""

from __future__ import annotations

import numpy as np


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_with_logits(logits, labels) -> tuple[float, np.ndarray]:
    """Mean loss and its gradient with respect to ``logits``.

    Uses ``max(z, 0) - z*y + log1p(exp(-|z|))``, which never overflows.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if z.shape != y.shape:
        raise ValueError(f"logits {z.shape} and labels {y.shape} differ in shape")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be 0 or 1")
    n = z.size
    losses = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    grad = (sigmoid(z) - y) / n
    return float(losses.mean()), grad
