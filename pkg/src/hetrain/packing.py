"""Row/column SIMD packing and the packed matrix-vector kernels.

A ciphertext of ``B`` slots is viewed as ``B // S`` segments of ``S`` slots.

* axis 0: a vector is zero-padded to ``S`` and replicated into every segment.
* axis 1: element ``i`` fills the whole segment ``i``.

A matrix packed on axis 0 stores row ``i`` in segment ``i``; on axis 1 it is
transposed first, so segment ``j`` holds column ``j``. Multiplying a weight
ciphertext by an input packed on the same axis and summing within segments
(axis 0) or across segments (axis 1) yields ``W @ x`` on the other axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cipher import Ciphertext
from .errors import CapacityError, LayoutError

__all__ = [
    "PackedLayout",
    "pack1d",
    "pack2d",
    "unpack1d",
    "unpack2d",
    "sum_cols",
    "sum_rows",
    "he_matvec",
    "he_bias_add",
    "logical_mask",
]


@dataclass(frozen=True)
class PackedLayout:
    """Where a logical vector ``(n,)`` or matrix ``(m, n)`` lives in a ciphertext."""

    axis: int
    shape: tuple
    S: int
    B: int

    def __post_init__(self):
        if self.axis not in (0, 1):
            raise LayoutError(f"axis must be 0 or 1, got {self.axis}")
        if self.S < 1 or self.B % self.S:
            raise LayoutError(f"segment size {self.S} must divide ciphertext size {self.B}")
        if len(self.shape) == 1:
            _check_vec(self.shape[0], self.axis, self.S, self.B, LayoutError)
        elif len(self.shape) == 2:
            _check_mat(self.shape, self.S, self.B, LayoutError)
        else:
            raise LayoutError(f"layout shape must be 1-D or 2-D, got {self.shape}")

    @classmethod
    def vector(cls, n: int, axis: int, S: int, B: int) -> PackedLayout:
        return cls(axis, (int(n),), S, B)

    @classmethod
    def matrix(cls, m: int, n: int, axis: int, S: int, B: int) -> PackedLayout:
        return cls(axis, (int(m), int(n)), S, B)

    def flipped(self) -> PackedLayout:
        return PackedLayout(1 - self.axis, self.shape, self.S, self.B)


def _check_vec(n, axis, S, B, exc=CapacityError):
    if B % S:
        raise exc(f"segment size {S} must divide ciphertext size {B}")
    cap = S if axis == 0 else B // S
    if n > cap:
        raise exc(f"vector of length {n} exceeds axis-{axis} capacity {cap}")


def _check_mat(shape, S, B, exc=CapacityError):
    m, n = shape
    if S * S > B:
        raise exc(f"S^2 = {S * S} exceeds ciphertext size {B}")
    if max(m, n) > S:
        raise exc(f"matrix {m}x{n} exceeds segment size {S}")


def pack1d(x, axis: int, S: int, B: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    if axis not in (0, 1):
        raise LayoutError(f"axis must be 0 or 1, got {axis}")
    n = x.shape[0]
    _check_vec(n, axis, S, B)
    if axis == 0:
        seg = np.zeros(S)
        seg[:n] = x
        return np.tile(seg, B // S)
    out = np.zeros(B)
    out[: n * S] = np.repeat(x, S)
    return out


def pack2d(X, axis: int, S: int, B: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise LayoutError(f"pack2d expects a matrix, got shape {X.shape}")
    if axis not in (0, 1):
        raise LayoutError(f"axis must be 0 or 1, got {axis}")
    _check_mat(X.shape, S, B)
    if axis == 1:
        X = X.T
    sq = np.zeros((S, S))
    sq[: X.shape[0], : X.shape[1]] = X
    out = np.zeros(B)
    out[: S * S] = sq.ravel()
    return out


def unpack1d(v, layout: PackedLayout) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).ravel()
    if len(layout.shape) != 1 or v.shape[0] != layout.B:
        raise LayoutError(f"vector of length {v.shape[0]} does not match layout {layout}")
    (n,) = layout.shape
    if layout.axis == 0:
        return v[:n].copy()
    return v[: n * layout.S : layout.S].copy()


def unpack2d(v, layout: PackedLayout) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).ravel()
    if len(layout.shape) != 2 or v.shape[0] != layout.B:
        raise LayoutError(f"vector of length {v.shape[0]} does not match layout {layout}")
    m, n = layout.shape
    S = layout.S
    sq = v[: S * S].reshape(S, S)
    if layout.axis == 0:
        return sq[:m, :n].copy()
    return sq[:n, :m].T.copy()


def logical_mask(layout: PackedLayout) -> np.ndarray:
    """1 on the slots that carry the logical vector, 0 on padding."""
    return pack1d(np.ones(layout.shape[0]), layout.axis, layout.S, layout.B)


def _segment_heads(S: int, B: int) -> np.ndarray:
    mask = np.zeros(B)
    mask[::S] = 1.0
    return mask


def sum_cols(c: Ciphertext, S: int) -> Ciphertext:
    """Sum the slots of each segment and broadcast the sum over that segment.

    Left rotate-and-add leaves each segment total in its head slot; a
    head mask clears the rest, and a right rotate-and-add broadcasts.
    Costs one level (the mask).
    """
    ctx = c.ctx
    B = c.slots.shape[0]
    if B % S:
        raise LayoutError(f"segment size {S} must divide ciphertext size {B}")
    ctx._require("sum_cols", c.level, 2)
    heads = ctx.mult_plain(ctx.rotate_sum(c, 1, S), _segment_heads(S, B))
    return ctx.rotate_sum(heads, -1, S)


def sum_rows(c: Ciphertext, S: int) -> Ciphertext:
    """Element-wise sum across segments, replicated into every segment. Level-free."""
    ctx = c.ctx
    B = c.slots.shape[0]
    if B % S:
        raise LayoutError(f"segment size {S} must divide ciphertext size {B}")
    ctx._require("sum_rows", c.level, 1)
    return ctx.rotate_sum(c, S, B // S)


def he_matvec(W_ct: Ciphertext, x_ct: Ciphertext, w_axis: int, S: int, x_axis: int | None = None) -> Ciphertext:
    """Encrypted ``W @ x``; the result is packed on axis ``1 - w_axis``."""
    if w_axis not in (0, 1):
        raise LayoutError(f"axis must be 0 or 1, got {w_axis}")
    if x_axis is not None and x_axis != w_axis:
        raise LayoutError(f"input packed on axis {x_axis} but weights on axis {w_axis}")
    prod = W_ct.ctx.mult(W_ct, x_ct)
    return sum_cols(prod, S) if w_axis == 0 else sum_rows(prod, S)


def he_bias_add(y_ct: Ciphertext, b_ct: Ciphertext, y_axis: int | None = None, b_axis: int | None = None) -> Ciphertext:
    if y_axis is not None and b_axis is not None and y_axis != b_axis:
        raise LayoutError(f"bias packed on axis {b_axis} but activations on axis {y_axis}")
    return y_ct.ctx.add(y_ct, b_ct)
