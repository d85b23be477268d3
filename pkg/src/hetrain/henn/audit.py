"""Depth audit: how much level budget one train step needs.

The audit runs a train step on zero data under a context with a very large
budget and records, for every level-consuming operation, the budget that
would have been needed to satisfy its level requirement. Running the real
code path keeps the audit in sync with the implementation.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from ..activation import ActivationPoly
from ..cipher import HEContext, HEParams
from ..errors import DepthBudgetError
from ..packing import pack1d
from .model import NetworkSpec, PlainModel, encrypt_model

_BIG = 1 << 20


class _AuditContext(HEContext):
    def __init__(self, params: HEParams):
        super().__init__(params)
        self.peak = 0

    def _require(self, op, level, need):
        self.peak = max(self.peak, self.params.level_budget - level + need)


@lru_cache(maxsize=64)
def required_level_budget(spec: NetworkSpec, ring_dim: int, act_degree: int) -> int:
    """Smallest level budget for which one forward + loss + backward + update fits."""
    from .encrypted import train_step

    params = HEParams.from_ring_dim(ring_dim, level_budget=_BIG)
    ctx = _AuditContext(params)
    sk, pk = ctx.keygen(np.random.default_rng(0))
    act = ActivationPoly(tuple([0.0] * act_degree + [1.0]))
    zeros = PlainModel(spec, [np.zeros((l.out_dim, l.in_dim)) for l in spec.layers],
                       [np.zeros(l.out_dim) for l in spec.layers], act)
    em = encrypt_model(zeros, pk, ctx, audit=False)
    S, B = params.slot_size, params.ct_size
    x = ctx.encrypt(pk, pack1d(np.zeros(spec.dims[0]), 0, S, B))
    y = ctx.encrypt(pk, pack1d(np.zeros(spec.dims[-1]), spec.output_axis(), S, B))
    train_step(em, [x], [y], 1.0)
    return ctx.peak


def check_depth_budget(spec: NetworkSpec, params: HEParams, act: ActivationPoly) -> int:
    need = required_level_budget(spec, params.ring_dim, act.degree)
    if need > params.level_budget:
        raise DepthBudgetError(need, params.level_budget)
    return need
