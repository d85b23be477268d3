"""Polynomial SiLU activation and its encrypted evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Chebyshev, Polynomial

from .cipher import Ciphertext
from .packing import PackedLayout, logical_mask


def silu(x):
    x = np.asarray(x, dtype=np.float64)
    return x / (1.0 + np.exp(-x))


def silu_grad(x):
    x = np.asarray(x, dtype=np.float64)
    s = 1.0 / (1.0 + np.exp(-x))
    return s * (1.0 + x * (1.0 - s))


def poly_depth(degree: int) -> int:
    """Levels consumed by :func:`poly_eval_ct` for a polynomial of this degree."""
    return math.ceil(math.log2(max(degree, 1))) + 1


def poly_min_level(degree: int) -> int:
    """Input level :func:`poly_eval_ct` insists on."""
    return math.ceil(math.log2(degree + 1)) + 1


@dataclass(frozen=True)
class ActivationPoly:
    """Monomial-basis polynomial (ascending coefficients) plus its derivative."""

    coeffs: tuple
    domain: tuple = (-8.0, 8.0)
    fit_error: float = field(default=0.0, compare=False)
    deriv: tuple = field(default=None, compare=False)

    def __post_init__(self):
        c = tuple(float(v) for v in self.coeffs) or (0.0,)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "domain", (float(self.domain[0]), float(self.domain[1])))
        if self.deriv is None:
            d = tuple(i * c[i] for i in range(1, len(c))) or (0.0,)
            object.__setattr__(self, "deriv", d)

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def __call__(self, x):
        return Polynomial(self.coeffs)(np.asarray(x, dtype=np.float64))

    def derivative(self) -> ActivationPoly:
        return ActivationPoly(self.deriv, self.domain)

    def grad(self, x):
        return Polynomial(self.deriv)(np.asarray(x, dtype=np.float64))

    @classmethod
    def identity(cls) -> ActivationPoly:
        return cls((0.0, 1.0))


def cheb_fit_silu(degree: int = 15, domain=(-8.0, 8.0), grid: int = 20001) -> ActivationPoly:
    """Chebyshev interpolant of SiLU on ``domain``, returned in monomial form.

    ``fit_error`` is the max deviation from SiLU over a dense uniform grid.
    """
    a, b = float(domain[0]), float(domain[1])
    if degree < 1 or not a < b:
        raise ValueError("need degree >= 1 and a < b")
    cheb = Chebyshev.interpolate(silu, degree, domain=[a, b])
    mono = cheb.convert(kind=Polynomial, domain=[-1, 1], window=[-1, 1])
    coeffs = np.zeros(degree + 1)
    coeffs[: mono.coef.shape[0]] = mono.coef
    xs = np.linspace(a, b, grid)
    err = float(np.max(np.abs(Polynomial(coeffs)(xs) - silu(xs))))
    return ActivationPoly(tuple(coeffs), (a, b), err)


def poly_eval_ct(c: Ciphertext, p: ActivationPoly | tuple, layout: PackedLayout | None = None) -> Ciphertext:
    """Evaluate ``p`` slot-wise on ``c``.

    Powers come from a balanced product tree (depth ``ceil(log2 d)``), then
    one plaintext multiply by the coefficients. With ``layout`` the constant
    term is only added on the logical slots, so zero padding stays zero.
    """
    coeffs = np.asarray(p.coeffs if isinstance(p, ActivationPoly) else p, dtype=np.float64)
    degree = coeffs.shape[0] - 1
    mask = 1.0 if layout is None else logical_mask(layout)
    return c.ctx.poly_eval(c, coeffs, mask, poly_depth(degree), poly_min_level(degree))
