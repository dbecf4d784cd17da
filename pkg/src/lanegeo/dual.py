"""Vectorised forward-mode dual numbers.

A :class:`Dual` carries a value array of shape ``S`` and a derivative array of
shape ``S + (n,)`` holding the partials with respect to ``n`` seed variables.
Only the operations the geometry and loss code needs are implemented.

>>> x = Dual.variables([2.0, 3.0])
>>> y = x[0] * x[1] + sin(x[0])
>>> round(float(y.der[1]), 6)
2.0
"""
from __future__ import annotations

import numpy as np


class Dual:
    __slots__ = ("val", "der")
    __array_priority__ = 1000  # make ndarray <op> Dual defer to Dual

    def __init__(self, val, der):
        self.val = np.asarray(val, dtype=float)
        self.der = np.asarray(der, dtype=float)

    @classmethod
    def variables(cls, values) -> "Dual":
        values = np.asarray(values, dtype=float)
        if values.ndim != 1:
            raise ValueError("seed values must be a 1-D vector")
        return cls(values, np.eye(values.size))

    @property
    def nvars(self) -> int:
        return self.der.shape[-1]

    @property
    def shape(self):
        return self.val.shape

    def __len__(self):
        return len(self.val)

    def __repr__(self):
        return f"Dual(val={self.val!r}, nvars={self.nvars})"

    def __getitem__(self, idx):
        return Dual(self.val[idx], self.der[idx])

    # arithmetic ------------------------------------------------------------
    def __neg__(self):
        return Dual(-self.val, -self.der)

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.der + other.der)
        other = np.asarray(other, dtype=float)
        val = self.val + other
        return Dual(val, np.broadcast_to(self.der, val.shape + (self.nvars,)))

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(
                self.val * other.val,
                self.der * other.val[..., None] + other.der * self.val[..., None],
            )
        other = np.asarray(other, dtype=float)
        return Dual(self.val * other, self.der * other[..., None])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.val
            val = self.val * inv
            return Dual(val, (self.der - other.der * val[..., None]) * inv[..., None])
        other = np.asarray(other, dtype=float)
        return Dual(self.val / other, self.der / other[..., None])

    def __rtruediv__(self, other):
        other = np.asarray(other, dtype=float)
        val = other / self.val
        return Dual(val, -self.der * (val / self.val)[..., None])

    def __pow__(self, p):
        if isinstance(p, Dual):
            raise TypeError("Dual exponents are not supported")
        if p == 0:
            return Dual(np.ones_like(self.val), np.zeros_like(self.der))
        return Dual(self.val**p, self.der * (p * self.val ** (p - 1))[..., None])

    # reductions ------------------------------------------------------------
    def sum(self, axis=None):
        if axis is None:
            axes = tuple(range(self.val.ndim))
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            axes = tuple(a % self.val.ndim for a in axes)
        return Dual(self.val.sum(axis=axes), self.der.sum(axis=axes))

    def mean(self, axis=None):
        n = self.val.size if axis is None else self.val.shape[axis]
        return self.sum(axis) / n


def value(x):
    """Plain float value of ``x`` whether or not it is a Dual."""
    return x.val if isinstance(x, Dual) else np.asarray(x, dtype=float)


def sin(x):
    if isinstance(x, Dual):
        return Dual(np.sin(x.val), x.der * np.cos(x.val)[..., None])
    return np.sin(x)


def cos(x):
    if isinstance(x, Dual):
        return Dual(np.cos(x.val), -x.der * np.sin(x.val)[..., None])
    return np.cos(x)


def log(x):
    if isinstance(x, Dual):
        return Dual(np.log(x.val), x.der / x.val[..., None])
    return np.log(x)


def absolute(x):
    """|x| with the subgradient convention sign(0) = 0."""
    if isinstance(x, Dual):
        return Dual(np.abs(x.val), x.der * np.sign(x.val)[..., None])
    return np.abs(x)


def concatenate(parts):
    """Concatenate 1-D Duals and/or arrays along axis 0."""
    nvars = next((p.nvars for p in parts if isinstance(p, Dual)), None)
    if nvars is None:
        return np.concatenate([np.atleast_1d(np.asarray(p, float)) for p in parts])
    vals, ders = [], []
    for p in parts:
        if isinstance(p, Dual):
            vals.append(np.atleast_1d(p.val))
            ders.append(p.der.reshape(vals[-1].shape + (nvars,)))
        else:
            v = np.atleast_1d(np.asarray(p, float))
            vals.append(v)
            ders.append(np.zeros(v.shape + (nvars,)))
    return Dual(np.concatenate(vals), np.concatenate(ders))


def horner(coeffs, y):
    """Evaluate ``sum_r coeffs[r] * y**r``; coefficients may be Duals or floats."""
    acc = coeffs[-1] * np.ones_like(np.asarray(y, dtype=float))
    for c in reversed(list(coeffs)[:-1]):
        acc = acc * y + c
    return acc
