"""Dataset partitioning and encrypted FedAvg."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import PartitionError
from ..henn.model import EncryptedLayer, EncryptedModel, check_compatible


@dataclass(frozen=True)
class Partition:
    index: int  # 1-based worker index
    positions: np.ndarray  # rows of the source dataset
    local_batch: int


def partition(n_samples: int, M: int, seed: int, batch_size: int = 128) -> list[Partition]:
    """Seeded shuffle, then round-robin assignment to ``M`` workers."""
    if M < 1:
        raise PartitionError(f"need at least one worker, got {M}")
    if n_samples < M:
        raise PartitionError(f"cannot split {n_samples} samples across {M} workers")
    perm = np.random.default_rng(seed).permutation(n_samples)
    local = max(1, batch_size // M)
    return [Partition(m + 1, perm[m::M], local) for m in range(M)]


def fedavg(models: Sequence[EncryptedModel], bootstrap: bool = True) -> EncryptedModel:
    """``(1/M) * sum(models)`` parameter-wise, then bootstrap each parameter."""
    if not models:
        raise PartitionError("fedavg needs at least one model")
    first = models[0]
    for m in models[1:]:
        check_compatible(first, m)
    ctx = first.ctx
    inv = 1.0 / len(models)
    layers = []
    for k, layer in enumerate(first.layers):
        W = ctx.mult_plain(ctx.add_many([m.layers[k].W for m in models]), inv)
        b = ctx.mult_plain(ctx.add_many([m.layers[k].b for m in models]), inv)
        if bootstrap:
            W, b = ctx.bootstrap(W), ctx.bootstrap(b)
        layers.append(EncryptedLayer(W, b, layer.axis, layer.in_dim, layer.out_dim))
    return first.replace_layers(layers)
