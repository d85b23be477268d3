"""Encrypted forward pass, MSE loss, backpropagation, SGD and the training loop."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..activation import ActivationPoly, poly_eval_ct
from ..cipher import Ciphertext
from ..errors import DataError, IncompatibleError, LayoutError
from ..packing import he_bias_add, he_matvec, sum_cols, sum_rows, unpack1d
from .model import EncryptedLayer, EncryptedModel


@dataclass
class Activations:
    """Everything ``backward`` needs from one ``forward`` call.

    ``h[0]`` is the input; ``z[k]`` / ``h[k]`` are the pre-activation and
    activation of layer ``k`` (``z[0]`` is unused).
    """

    z: list
    h: list

    @property
    def output(self) -> Ciphertext:
        return self.h[-1]


def forward(m: EncryptedModel, x_ct: Ciphertext, x_axis: int = 0) -> Activations:
    if x_axis != 0:
        raise LayoutError("network input must be packed on axis 0")
    S = m.ctx.params.slot_size
    z, h = [None], [x_ct]
    axis = x_axis
    for k, layer in enumerate(m.layers, start=1):
        pre = he_matvec(layer.W, h[-1], layer.axis, S, x_axis=axis)
        axis = 1 - layer.axis
        pre = he_bias_add(pre, layer.b, axis, layer.bias_axis)
        z.append(pre)
        h.append(poly_eval_ct(pre, m.act, m.out_layout(k)))
    return Activations(z, h)


def mse_loss(preds: Sequence[Ciphertext], labels: Sequence[Ciphertext], batch_size: int | None = None) -> Ciphertext:
    """``(1/B) * sum_i (y_i - a_i)**2`` slot-wise, as one ciphertext."""
    if len(preds) != len(labels) or not preds:
        raise DataError(f"batch mismatch: {len(preds)} predictions, {len(labels)} labels")
    batch_size = len(preds) if batch_size is None else batch_size
    if batch_size != len(preds):
        raise DataError(f"batch size {batch_size} != {len(preds)} pairs")
    ctx = preds[0].ctx
    total = ctx.add_many([ctx.square(ctx.sub(y, a)) for a, y in zip(preds, labels)])
    return ctx.mult_plain(total, 1.0 / batch_size)


def loss_grad(pred: Ciphertext, label: Ciphertext, batch_size: int) -> Ciphertext:
    """``(2/B) * (a - y)``, the descent direction of :func:`mse_loss`."""
    ctx = pred.ctx
    return ctx.mult_plain(ctx.sub(pred, label), 2.0 / batch_size)


def backward(m: EncryptedModel, acts: Activations, lgrad: Ciphertext) -> list[tuple[Ciphertext, Ciphertext]]:
    """Per-layer ``(grad_W, grad_b)`` for one sample, each in its parameter's layout."""
    ctx = m.ctx
    S = ctx.params.slot_size
    dact = m.act.derivative()
    K = len(m.layers)
    grads = [None] * K
    delta = ctx.mult(lgrad, poly_eval_ct(acts.z[K], dact, m.out_layout(K)))
    for k in range(K, 0, -1):
        layer = m.layers[k - 1]
        grads[k - 1] = (ctx.mult(acts.h[k - 1], delta), delta)
        if k > 1:
            back = ctx.mult(delta, layer.W)
            back = sum_rows(back, S) if layer.axis == 0 else sum_cols(back, S)
            delta = ctx.mult(back, poly_eval_ct(acts.z[k - 1], dact, m.out_layout(k - 1)))
    return grads


def accumulate(per_sample: Sequence[list]) -> list[tuple[Ciphertext, Ciphertext]]:
    """Sum per-sample gradients over a batch, layer by layer."""
    ctx = per_sample[0][0][0].ctx
    out = []
    for k in range(len(per_sample[0])):
        out.append((ctx.add_many([g[k][0] for g in per_sample]), ctx.add_many([g[k][1] for g in per_sample])))
    return out


def sgd_update(m: EncryptedModel, grads, lr: float) -> EncryptedModel:
    """``theta <- Bootstrap(theta - lr * grad)`` for every weight and bias."""
    if len(grads) != len(m.layers):
        raise IncompatibleError(f"{len(grads)} gradients for {len(m.layers)} layers")
    ctx = m.ctx
    layers = []
    for layer, (gW, gb) in zip(m.layers, grads):
        W = ctx.bootstrap(ctx.sub(layer.W, ctx.mult_plain(gW, lr)))
        b = ctx.bootstrap(ctx.sub(layer.b, ctx.mult_plain(gb, lr)))
        layers.append(EncryptedLayer(W, b, layer.axis, layer.in_dim, layer.out_dim))
    return m.replace_layers(layers)


def train_step(m: EncryptedModel, xs: Sequence[Ciphertext], ys: Sequence[Ciphertext], lr: float):
    """One mini-batch step. Returns the updated model and the batch loss ciphertext."""
    n = len(xs)
    acts = [forward(m, x) for x in xs]
    loss = mse_loss([a.output for a in acts], ys, n)
    per_sample = [backward(m, a, loss_grad(a.output, y, n)) for a, y in zip(acts, ys)]
    return sgd_update(m, accumulate(per_sample), lr), loss


def round_order(ids: np.ndarray, total: int, seed: int, round_index: int) -> np.ndarray:
    """Positions of ``ids`` in this round's visiting order.

    Every sample gets a per-round random key drawn over the full dataset,
    so any subset (a worker partition) visits its samples in the order the
    full dataset would.
    """
    keys = np.random.default_rng([int(seed), int(round_index)]).random(total)
    return np.argsort(keys[np.asarray(ids)], kind="stable")


@dataclass
class RoundRecord:
    round: int
    iterations: int
    batch_losses: list = field(default_factory=list)
    batch_sizes: list = field(default_factory=list)
    probe: dict = field(default_factory=dict)


def train_round(m: EncryptedModel, data, batch_size: int, lr: float, seed: int, round_index: int,
                iterations: int = 0) -> tuple[EncryptedModel, RoundRecord]:
    """One pass over ``data`` in seeded mini-batches."""
    order = round_order(data.ids, data.total, seed, round_index)
    rec = RoundRecord(round_index, iterations)
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        m, loss = train_step(m, [data.xs[i] for i in idx], [data.ys[i] for i in idx], lr)
        rec.batch_losses.append(loss)
        rec.batch_sizes.append(len(idx))
        rec.iterations += 1
    return m, rec


def train(m: EncryptedModel, data, cfg, probe: Callable | None = None) -> tuple[EncryptedModel, list[RoundRecord]]:
    """Run ``cfg.rounds`` rounds of mini-batch SGD.

    ``probe(model, record)`` is called after every round; it may fill
    ``record.probe`` (e.g. with decrypted loss/accuracy for experiments).
    """
    if len(data) == 0:
        raise DataError("cannot train on an empty dataset")
    trace = []
    iterations = 0
    for t in range(1, cfg.rounds + 1):
        m, rec = train_round(m, data, cfg.batch_size, cfg.lr, cfg.shuffle_seed, t, iterations)
        iterations = rec.iterations
        if probe is not None:
            probe(m, rec)
        trace.append(rec)
    return m, trace


def decrypt_round_loss(sk, m: EncryptedModel, rec: RoundRecord) -> float:
    """Sample-weighted mean of the batch losses in ``rec``, decrypted."""
    if not rec.batch_losses:
        return float("nan")
    layout = m.out_layout(len(m.layers))
    total = sum(n * unpack1d(m.ctx.decrypt(sk, c), layout).sum() for c, n in zip(rec.batch_losses, rec.batch_sizes))
    return float(total / sum(rec.batch_sizes))
