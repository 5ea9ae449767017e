"""Forward-mode dual numbers and a dual-safe math layer.

A ``Dual`` carries a value and one directional derivative (tangent). Second
and third derivatives are obtained by nesting: the ``val``/``dot`` slots of a
Dual may themselves be Duals, one layer per differentiation level. The
``seed`` helper wraps every coordinate of a point at the new layer (tangent 1
on the seeded axis, 0 elsewhere); wrapping all entries is what keeps the
layers structurally separated, so no perturbation tags are needed.

The module-level functions (``sin``, ``exp``, ...) dispatch on type: Duals get
the chain rule, everything else is forwarded to numpy, so closures written
against this module work unchanged on floats, numpy arrays, and Duals.
"""

from __future__ import annotations

import math

import numpy as np


class Dual:
    """A first-order dual number ``val + dot * eps`` with ``eps**2 = 0``."""

    __slots__ = ("val", "dot")

    def __init__(self, val, dot=0.0):
        self.val = val
        self.dot = dot

    def __repr__(self):
        return f"Dual({self.val!r}, {self.dot!r})"

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.dot + other.dot)
        return Dual(self.val + other, self.dot)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val - other.val, self.dot - other.dot)
        return Dual(self.val - other, self.dot)

    def __rsub__(self, other):
        return Dual(other - self.val, -self.dot)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val * other.val,
                        self.dot * other.val + self.val * other.dot)
        return Dual(self.val * other, self.dot * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.val
            return Dual(self.val * inv,
                        (self.dot - self.val * inv * other.dot) * inv)
        return Dual(self.val / other, self.dot / other)

    def __rtruediv__(self, other):
        inv = 1.0 / self.val
        val = other * inv
        return Dual(val, -val * inv * self.dot)

    def __pow__(self, other):
        if isinstance(other, Dual):
            return exp(other * log(self))
        if isinstance(other, int) and other >= 0:
            if other == 0:
                return Dual(1.0 + 0.0 * self.val, 0.0 * self.dot)
            result = self
            for _ in range(other - 1):
                result = result * self
            return result
        return Dual(self.val ** other,
                    other * self.val ** (other - 1) * self.dot)

    def __rpow__(self, other):
        return exp(self * log(other))

    def __neg__(self):
        return Dual(-self.val, -self.dot)

    def __pos__(self):
        return self

    def __abs__(self):
        return self if value(self) >= 0 else -self

    # Comparisons act on the real part so numeric branches behave as on
    # floats; equality compares real parts too.
    def __lt__(self, other):
        return value(self) < value(other)

    def __le__(self, other):
        return value(self) <= value(other)

    def __gt__(self, other):
        return value(self) > value(other)

    def __ge__(self, other):
        return value(self) >= value(other)

    def __eq__(self, other):
        return value(self) == value(other)

    def __ne__(self, other):
        return value(self) != value(other)

    def __hash__(self):
        return hash(value(self))


def value(x):
    """Strip all dual layers from ``x``, returning its real part."""
    while isinstance(x, Dual):
        x = x.val
    return x


def tangent(x):
    """Top-layer tangent of ``x`` (0 for plain numbers, elementwise on arrays)."""
    if isinstance(x, Dual):
        return x.dot
    if isinstance(x, np.ndarray) and x.dtype == object:
        return np.array([tangent(v) for v in x.ravel()],
                        dtype=object).reshape(x.shape)
    if isinstance(x, np.ndarray):
        return np.zeros_like(x)
    return 0.0


def sin(x):
    if isinstance(x, Dual):
        return Dual(sin(x.val), cos(x.val) * x.dot)
    return np.sin(x)


def cos(x):
    if isinstance(x, Dual):
        return Dual(cos(x.val), -sin(x.val) * x.dot)
    return np.cos(x)


def tan(x):
    if isinstance(x, Dual):
        c = cos(x.val)
        return Dual(tan(x.val), x.dot / (c * c))
    return np.tan(x)


def exp(x):
    if isinstance(x, Dual):
        e = exp(x.val)
        return Dual(e, e * x.dot)
    return np.exp(x)


def log(x):
    if isinstance(x, Dual):
        return Dual(log(x.val), x.dot / x.val)
    return np.log(x)


def sqrt(x):
    if isinstance(x, Dual):
        r = sqrt(x.val)
        return Dual(r, 0.5 * x.dot / r)
    return np.sqrt(x)


def sinh(x):
    if isinstance(x, Dual):
        return Dual(sinh(x.val), cosh(x.val) * x.dot)
    return np.sinh(x)


def cosh(x):
    if isinstance(x, Dual):
        return Dual(cosh(x.val), sinh(x.val) * x.dot)
    return np.cosh(x)


def tanh(x):
    if isinstance(x, Dual):
        c = cosh(x.val)
        return Dual(tanh(x.val), x.dot / (c * c))
    return np.tanh(x)


FUNCTIONS = {
    "sin": sin, "cos": cos, "tan": tan, "exp": exp, "log": log,
    "sqrt": sqrt, "sinh": sinh, "cosh": cosh, "tanh": tanh,
}

CONSTANTS = {"pi": math.pi, "e": math.e}


def seed(point, axis):
    """Wrap every entry of ``point`` at a fresh dual layer.

    The seeded ``axis`` gets tangent 1, all other entries tangent 0. Wrapping
    everything (not only the seeded slot) is required for correct nesting:
    quantities from different layers must never meet as bare Duals.
    """
    return [Dual(v, 1.0 if i == axis else 0.0) for i, v in enumerate(point)]


def d1(f, point, axis):
    """Exact first partial of ``f`` at ``point`` along coordinate ``axis``."""
    return tangent(f(seed(point, axis)))


def d2(f, point, axis1, axis2):
    """Exact second partial via one level of nesting."""
    def inner(p):
        return tangent(f(seed(p, axis2)))
    return tangent(inner(seed(point, axis1)))


def d3(f, point, axis1, axis2, axis3):
    """Exact third partial via two levels of nesting."""
    def mid(p):
        def inner(q):
            return tangent(f(seed(q, axis3)))
        return tangent(inner(seed(p, axis2)))
    return tangent(mid(seed(point, axis1)))
