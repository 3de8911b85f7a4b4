"""Binary cross-entropy and focal loss.

Each loss comes with its gradient w.r.t. the probabilities it takes, and a
fused gradient w.r.t. the pre-activation logits that the training loop uses.
"""

from __future__ import annotations

import numpy as np

EPS = 1e-7


def _clamp(p):
    return np.clip(np.asarray(p, dtype=np.float64), EPS, 1.0 - EPS)


def bce_loss(p, y) -> float:
    p, y = _clamp(p), np.asarray(y, dtype=np.float64)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def bce_grad(p, y) -> np.ndarray:
    """d bce / d p (zero where the clamp is active)."""
    raw = np.asarray(p, dtype=np.float64)
    pc, y = _clamp(raw), np.asarray(y, dtype=np.float64)
    g = (-(y / pc) + (1.0 - y) / (1.0 - pc)) / raw.size
    return np.where(raw == pc, g, 0.0)


def bce_logit_grad(p, y) -> np.ndarray:
    """d bce / d z for ``p = sigmoid(z)``."""
    p, y = np.asarray(p, dtype=np.float64), np.asarray(y, dtype=np.float64)
    return (p - y) / p.size


def focal_loss(q, y, gamma: float = 2.0) -> float:
    """Mean of ``-(1 - q_y)**gamma * log(q_y)`` over the batch (alpha = 1)."""
    q = np.asarray(q, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    qy = _clamp(q[np.arange(len(y)), y])
    return float(np.mean(-((1.0 - qy) ** gamma) * np.log(qy)))


def _focal_dq(qy, gamma):
    # d/dq of -(1-q)^g log q
    lead = gamma * (1.0 - qy) ** (gamma - 1.0) * np.log(qy) if gamma else 0.0
    return lead - (1.0 - qy) ** gamma / qy


def focal_grad(q, y, gamma: float = 2.0) -> np.ndarray:
    """d focal / d q; only the true-class column is nonzero."""
    q = np.asarray(q, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    rows = np.arange(len(y))
    raw = q[rows, y]
    qy = _clamp(raw)
    g = np.zeros_like(q)
    g[rows, y] = np.where(raw == qy, _focal_dq(qy, gamma), 0.0) / len(y)
    return g


def focal_logit_grad(q, y, gamma: float = 2.0) -> np.ndarray:
    """d focal / d z for ``q = softmax(z)``."""
    q = np.asarray(q, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    rows = np.arange(len(y))
    qy = _clamp(q[rows, y])
    scale = _focal_dq(qy, gamma) * qy  # bounded even when q_y is tiny
    onehot = np.zeros_like(q)
    onehot[rows, y] = 1.0
    return scale[:, None] * (onehot - q) / len(y)
