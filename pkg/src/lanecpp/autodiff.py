"""Vectorized forward-mode automatic differentiation.

A :class:`Dual` pairs a value array with a partial-derivative array that
carries one trailing axis of length P (the number of traced parameters).
Seeding a flat parameter vector with the identity makes every downstream
scalar carry its full gradient, so a single forward pass through a loss
yields the exact derivative with respect to all parameters at once.

The module-level helpers (``sqrt``, ``sigmoid``, ``where``, ...) accept
either plain arrays or Duals, so numeric code written against them runs in
a cheap value-only mode when no gradient is required.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

__all__ = [
    "Dual", "seed", "value", "is_dual", "grad",
    "sqrt", "exp", "log", "sigmoid", "absolute", "power",
    "maximum", "minimum", "clip", "where", "softmax",
    "stack", "concatenate", "asum", "amean", "dot", "norm", "apply_basis",
]


def _as_val(x):
    return np.asarray(x, dtype=np.float64)


class Dual:
    """Value plus per-parameter partial derivatives (trailing axis)."""

    __slots__ = ("val", "eps")

    # Make numpy defer to the reflected operators instead of broadcasting
    # Duals as object scalars.
    __array_ufunc__ = None

    def __init__(self, val, eps):
        val = _as_val(val)
        eps = np.asarray(eps, dtype=np.float64)
        if eps.shape[:-1] != val.shape:
            eps = np.broadcast_to(eps, val.shape + eps.shape[-1:])
        self.val = val
        self.eps = eps

    @property
    def shape(self):
        return self.val.shape

    @property
    def ndim(self):
        return self.val.ndim

    @property
    def n_params(self):
        return self.eps.shape[-1]

    def __repr__(self):
        return f"Dual(val={self.val!r}, n_params={self.n_params})"

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.eps + other.eps)
        return Dual(self.val + _as_val(other), self.eps)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val - other.val, self.eps - other.eps)
        return Dual(self.val - _as_val(other), self.eps)

    def __rsub__(self, other):
        return Dual(_as_val(other) - self.val, -self.eps)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(
                self.val * other.val,
                self.eps * other.val[..., None] + other.eps * self.val[..., None],
            )
        o = _as_val(other)
        return Dual(self.val * o, self.eps * o[..., None])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.val
            v = self.val * inv
            return Dual(v, (self.eps - v[..., None] * other.eps) * inv[..., None])
        inv = 1.0 / _as_val(other)
        return Dual(self.val * inv, self.eps * inv[..., None])

    def __rtruediv__(self, other):
        inv = 1.0 / self.val
        v = _as_val(other) * inv
        return Dual(v, -v[..., None] * inv[..., None] * self.eps)

    def __neg__(self):
        return Dual(-self.val, -self.eps)

    def __pow__(self, p):
        p = float(p)
        v = self.val ** p
        return Dual(v, (p * self.val ** (p - 1.0))[..., None] * self.eps)

    # -- comparisons operate on values only ---------------------------------

    def __lt__(self, other):
        return self.val < value(other)

    def __le__(self, other):
        return self.val <= value(other)

    def __gt__(self, other):
        return self.val > value(other)

    def __ge__(self, other):
        return self.val >= value(other)

    # -- structure -----------------------------------------------------------

    def __getitem__(self, idx):
        return Dual(self.val[idx], self.eps[idx])

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return Dual(self.val.reshape(shape), self.eps.reshape(shape + (self.n_params,)))

    def sum(self, axis=None):
        return asum(self, axis=axis)

    def mean(self, axis=None):
        return amean(self, axis=axis)


def seed(params) -> Dual:
    """Trace a flat parameter vector: eps is the identity."""
    params = _as_val(params)
    if params.ndim != 1:
        raise ValueError("seed expects a flat parameter vector")
    return Dual(params, np.eye(params.size))


def is_dual(x) -> bool:
    return isinstance(x, Dual)


def value(x):
    return x.val if isinstance(x, Dual) else _as_val(x)


def grad(x) -> np.ndarray:
    """Gradient of a scalar Dual; zeros have to be supplied by the caller
    for plain values, so this raises on non-Dual input."""
    if not isinstance(x, Dual):
        raise TypeError("grad() expects a Dual")
    if x.val.shape != ():
        raise ValueError("grad() expects a scalar")
    return np.array(x.eps, copy=True)


def _normalize_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        return axis % ndim
    return tuple(a % ndim for a in axis)


# -- elementwise functions ----------------------------------------------------

def sqrt(x):
    if isinstance(x, Dual):
        v = np.sqrt(x.val)
        return Dual(v, (0.5 / v)[..., None] * x.eps)
    return np.sqrt(x)


def exp(x):
    if isinstance(x, Dual):
        v = np.exp(x.val)
        return Dual(v, v[..., None] * x.eps)
    return np.exp(x)


def log(x):
    if isinstance(x, Dual):
        return Dual(np.log(x.val), x.eps / x.val[..., None])
    return np.log(x)


def sigmoid(x):
    if isinstance(x, Dual):
        s = expit(x.val)
        return Dual(s, (s * (1.0 - s))[..., None] * x.eps)
    return expit(x)


def absolute(x):
    if isinstance(x, Dual):
        sign = np.where(x.val >= 0.0, 1.0, -1.0)
        return Dual(np.abs(x.val), sign[..., None] * x.eps)
    return np.abs(x)


def power(x, p):
    if isinstance(x, Dual):
        return x ** p
    return np.power(x, p)


def where(cond, a, b):
    cond = np.asarray(cond)
    if not (isinstance(a, Dual) or isinstance(b, Dual)):
        return np.where(cond, a, b)
    av, ae = (a.val, a.eps) if isinstance(a, Dual) else (_as_val(a), None)
    bv, be = (b.val, b.eps) if isinstance(b, Dual) else (_as_val(b), None)
    v = np.where(cond, av, bv)
    n_params = ae.shape[-1] if ae is not None else be.shape[-1]
    if ae is None:
        ae = np.zeros(v.shape + (n_params,))
    if be is None:
        be = np.zeros(v.shape + (n_params,))
    return Dual(v, np.where(cond[..., None], ae, be))


def maximum(a, b):
    return where(value(a) >= value(b), a, b)


def minimum(a, b):
    return where(value(a) <= value(b), a, b)


def clip(x, lo, hi):
    return minimum(maximum(x, lo), hi)


def softmax(x, axis=-1):
    shifted = x - np.max(value(x), axis=axis, keepdims=True)
    e = exp(shifted)
    return e / asum(e, axis=axis, keepdims=True)


# -- reductions and assembly --------------------------------------------------

def asum(x, axis=None, keepdims=False):
    if not isinstance(x, Dual):
        return np.sum(x, axis=axis, keepdims=keepdims)
    axis = _normalize_axis(axis, x.ndim)
    if axis is None:
        v = x.val.sum()
        e = x.eps.reshape(-1, x.n_params).sum(axis=0)
        if keepdims:
            return Dual(v.reshape((1,) * x.ndim), e.reshape((1,) * x.ndim + (-1,)))
        return Dual(v, e)
    return Dual(
        x.val.sum(axis=axis, keepdims=keepdims),
        x.eps.sum(axis=axis, keepdims=keepdims),
    )


def amean(x, axis=None, keepdims=False):
    if not isinstance(x, Dual):
        return np.mean(x, axis=axis, keepdims=keepdims)
    if axis is None:
        n = x.val.size
    elif isinstance(axis, int):
        n = x.val.shape[axis]
    else:
        n = int(np.prod([x.val.shape[a] for a in axis]))
    return asum(x, axis=axis, keepdims=keepdims) / n


def stack(parts, axis=0):
    if not any(isinstance(p, Dual) for p in parts):
        return np.stack(parts, axis=axis)
    n_params = next(p.n_params for p in parts if isinstance(p, Dual))
    vals, epss = [], []
    for p in parts:
        if isinstance(p, Dual):
            vals.append(p.val)
            epss.append(p.eps)
        else:
            v = _as_val(p)
            vals.append(v)
            epss.append(np.zeros(v.shape + (n_params,)))
    eps_axis = axis if axis >= 0 else axis - 1
    return Dual(np.stack(vals, axis=axis), np.stack(epss, axis=eps_axis))


def concatenate(parts, axis=0):
    if not any(isinstance(p, Dual) for p in parts):
        return np.concatenate(parts, axis=axis)
    n_params = next(p.n_params for p in parts if isinstance(p, Dual))
    vals, epss = [], []
    for p in parts:
        if isinstance(p, Dual):
            vals.append(p.val)
            epss.append(p.eps)
        else:
            v = _as_val(p)
            vals.append(v)
            epss.append(np.zeros(v.shape + (n_params,)))
    eps_axis = axis if axis >= 0 else axis - 1
    return Dual(np.concatenate(vals, axis=axis), np.concatenate(epss, axis=eps_axis))


def dot(a, b, axis=-1, keepdims=False):
    return asum(a * b, axis=axis, keepdims=keepdims)


def norm(x, axis=-1, keepdims=False):
    return sqrt(dot(x, x, axis=axis, keepdims=keepdims))


def cross3(a, b):
    """Cross product along the last value axis for arrays or Duals."""
    av, bv = value(a), value(b)
    v = np.cross(av, bv)
    if not (isinstance(a, Dual) or isinstance(b, Dual)):
        return v
    n_params = (a if isinstance(a, Dual) else b).n_params
    e = np.zeros(v.shape + (n_params,))
    if isinstance(a, Dual):
        ea = np.moveaxis(a.eps, -1, -2)  # (..., P, 3)
        e = e + np.moveaxis(np.cross(ea, bv[..., None, :]), -2, -1)
    if isinstance(b, Dual):
        eb = np.moveaxis(b.eps, -1, -2)
        e = e + np.moveaxis(np.cross(av[..., None, :], eb), -2, -1)
    return Dual(v, e)


def apply_basis(basis, x):
    """Contract a plain basis matrix (..., K) with control data (K, ...)."""
    basis = np.asarray(basis, dtype=np.float64)
    lead = basis.shape[:-1]
    k = basis.shape[-1]
    b2 = basis.reshape(-1, k)
    if isinstance(x, Dual):
        v = b2 @ x.val.reshape(k, -1)
        e = b2 @ x.eps.reshape(k, -1)
        return Dual(
            v.reshape(lead + x.val.shape[1:]),
            e.reshape(lead + x.eps.shape[1:]),
        )
    x = np.asarray(x, dtype=np.float64)
    return (b2 @ x.reshape(k, -1)).reshape(lead + x.shape[1:])
