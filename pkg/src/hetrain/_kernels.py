"""Slot-level kernels of the reference backend.

Two implementations exist for every kernel: a pure-numpy one and a
numba ``@njit`` one. Both perform the same floating-point operations in the
same order, so their outputs are bit-identical. The numba path is used when
numba imports and ``HETRAIN_NUMBA`` is not set to ``0``.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "USE_NUMBA",
    "power_plan",
    "rotsum",
    "rotsum_numpy",
    "poly_eval",
    "poly_eval_numpy",
]


def power_plan(degree: int) -> np.ndarray:
    """Split table for the balanced power tree.

    ``plan[i] = a`` means ``x**i = x**a * x**(i - a)`` where ``a`` is the
    largest power of two strictly below ``i``. This keeps the multiplicative
    depth of ``x**i`` at ``ceil(log2(i))``.
    """
    plan = np.zeros(max(degree, 1) + 1, dtype=np.int64)
    for i in range(2, degree + 1):
        plan[i] = 1 << ((i - 1).bit_length() - 1)
    return plan


def rotsum_numpy(x: np.ndarray, step: int, count: int) -> np.ndarray:
    """``sum(roll(x, -j * step) for j in range(count))`` by window doubling."""
    acc = None
    p = x
    width = 1
    shift = 0
    while count:
        if count & 1:
            term = np.roll(p, -shift * step)
            acc = term if acc is None else acc + term
            shift += width
        count >>= 1
        if count:
            p = p + np.roll(p, -width * step)
            width *= 2
    if acc is None:
        return np.zeros_like(x)
    return acc


def poly_eval_numpy(x: np.ndarray, coeffs: np.ndarray, const_mask: np.ndarray) -> np.ndarray:
    degree = coeffs.shape[0] - 1
    plan = power_plan(degree)
    powers = [None, x]
    for i in range(2, degree + 1):
        a = plan[i]
        powers.append(powers[a] * powers[i - a])
    c1 = coeffs[1] if degree >= 1 else 0.0
    acc = x * c1
    for i in range(2, degree + 1):
        acc = acc + powers[i] * coeffs[i]
    return acc + const_mask * coeffs[0]


_disabled = os.environ.get("HETRAIN_NUMBA", "1").strip().lower() in ("0", "false", "no", "off")

try:
    if _disabled:
        raise ImportError("numba disabled by HETRAIN_NUMBA")
    from numba import njit
except ImportError:
    njit = None

USE_NUMBA = njit is not None

if USE_NUMBA:

    @njit(cache=True, nogil=True)
    def rotsum_numba(x, step, count):
        n = x.shape[0]
        acc = np.zeros(n)
        have_acc = False
        p = x.copy()
        q = np.empty(n)
        width = 1
        shift = 0
        while count:
            if count & 1:
                off = (shift * step) % n
                if have_acc:
                    for i in range(n):
                        acc[i] = acc[i] + p[(i + off) % n]
                else:
                    for i in range(n):
                        acc[i] = p[(i + off) % n]
                    have_acc = True
                shift += width
            count >>= 1
            if count:
                off = (width * step) % n
                for i in range(n):
                    q[i] = p[i] + p[(i + off) % n]
                p, q = q, p
                width *= 2
        return acc

    @njit(cache=True, nogil=True)
    def _poly_eval_nb(x, coeffs, const_mask, plan):
        n = x.shape[0]
        degree = coeffs.shape[0] - 1
        out = np.empty(n)
        pw = np.empty(max(degree, 1) + 1)
        c1 = coeffs[1] if degree >= 1 else 0.0
        for s in range(n):
            pw[1] = x[s]
            for i in range(2, degree + 1):
                a = plan[i]
                pw[i] = pw[a] * pw[i - a]
            acc = x[s] * c1
            for i in range(2, degree + 1):
                acc = acc + pw[i] * coeffs[i]
            out[s] = acc + const_mask[s] * coeffs[0]
        return out

    def poly_eval_numba(x, coeffs, const_mask):
        return _poly_eval_nb(x, coeffs, const_mask, power_plan(coeffs.shape[0] - 1))

    rotsum = rotsum_numba
    poly_eval = poly_eval_numba
else:
    rotsum_numba = None
    poly_eval_numba = None
    rotsum = rotsum_numpy
    poly_eval = poly_eval_numpy
