"""Plaintext counterpart of the encrypted network (same polynomial activation).

Used for inference after decryption and as the reference the encrypted
path is checked against.
"""

from __future__ import annotations

import numpy as np

from .encrypted import round_order
from .model import PlainModel


def plain_forward(m: PlainModel, x: np.ndarray) -> tuple[list, list]:
    """Return ``(z, h)`` lists; ``x`` may be one sample or a batch of rows."""
    h = [np.asarray(x, dtype=np.float64)]
    z = [None]
    for W, b in zip(m.weights, m.biases):
        pre = h[-1] @ W.T + b
        z.append(pre)
        h.append(m.act(pre))
    return z, h


def plain_output(m: PlainModel, X) -> np.ndarray:
    return plain_forward(m, X)[1][-1]


def plain_loss(m: PlainModel, X, Y) -> float:
    A = plain_output(m, np.atleast_2d(X))
    return float(np.sum((A - np.atleast_2d(Y)) ** 2) / A.shape[0])


def plain_grads(m: PlainModel, X, Y) -> list[tuple[np.ndarray, np.ndarray]]:
    X, Y = np.atleast_2d(X), np.atleast_2d(Y)
    z, h = plain_forward(m, X)
    n = X.shape[0]
    delta = (2.0 / n) * (h[-1] - Y) * m.act.grad(z[-1])
    grads = [None] * len(m.weights)
    for k in range(len(m.weights), 0, -1):
        grads[k - 1] = (delta.T @ h[k - 1], delta.sum(axis=0))
        if k > 1:
            delta = (delta @ m.weights[k - 1]) * m.act.grad(z[k - 1])
    return grads


def plain_sgd_step(m: PlainModel, X, Y, lr: float) -> PlainModel:
    grads = plain_grads(m, X, Y)
    out = m.copy()
    for k, (gW, gb) in enumerate(grads):
        out.weights[k] = m.weights[k] - lr * gW
        out.biases[k] = m.biases[k] - lr * gb
    return out


def plain_train(m: PlainModel, X, Y, cfg, probe=None) -> tuple[PlainModel, list[float]]:
    """Same batch schedule as the encrypted loop; returns per-round mean batch loss."""
    X, Y = np.asarray(X, dtype=np.float64), np.asarray(Y, dtype=np.float64)
    n = X.shape[0]
    losses = []
    for t in range(1, cfg.rounds + 1):
        order = round_order(np.arange(n), n, cfg.shuffle_seed, t)
        batch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch_losses.append(plain_loss(m, X[idx], Y[idx]))
            m = plain_sgd_step(m, X[idx], Y[idx], cfg.lr)
        losses.append(float(np.mean(batch_losses)))
        if probe is not None:
            probe(m, t)
    return m, losses


def predict_plain(m: PlainModel, x) -> np.ndarray | int:
    """Argmax class; ties go to the lowest index."""
    out = plain_output(m, x)
    if out.ndim == 1:
        return int(np.argmax(out))
    return np.argmax(out, axis=1)
