"""Minimal reverse-mode differentiation over numpy arrays.

Primitives are plain functions that also accept :class:`Var` arguments.
Called with arrays they just compute; called with at least one ``Var`` they
record a node on the Var's :class:`Tape` so that :meth:`Tape.backward` can
replay vector-Jacobian products in reverse order. Solver layers are written
once against these primitives and serve both the classical iterations and
the trainable unrolled networks.
"""

from __future__ import annotations

import numpy as np


class Tape:
    """Ordered record of primitive applications."""

    def __init__(self):
        self.nodes = []

    def var(self, value) -> "Var":
        return Var(np.asarray(value, dtype=np.float64), self)

    def __len__(self):
        return len(self.nodes)

    def backward(self, seeds: dict, wrt) -> list:
        """Accumulate adjoints from ``{var: grad}`` seeds back to ``wrt``.

        Returns one gradient per entry of ``wrt`` (zeros when unreachable).
        """
        adj = {}
        for v, g in seeds.items():
            g = np.asarray(g, dtype=np.float64)
            if g.shape != v.value.shape:
                raise ValueError(f"seed shape {g.shape} does not match output shape {v.value.shape}")
            adj[id(v)] = adj.get(id(v), 0.0) + g
        for out, args, vals, kw, vjp in reversed(self.nodes):
            g = adj.pop(id(out), None)
            if g is None:
                continue
            grads = vjp(g, out.value, *vals, **kw)
            for a, ga in zip(args, grads):
                if ga is None or not isinstance(a, Var):
                    continue
                ga = _unbroadcast(ga, a.value.shape)
                key = id(a)
                adj[key] = adj[key] + ga if key in adj else ga
        return [np.asarray(adj.get(id(w), np.zeros_like(w.value)), dtype=np.float64) for w in wrt]


class Var:
    """Array value tracked on a tape."""

    __slots__ = ("value", "tape")
    __array_priority__ = 1000

    def __init__(self, value, tape):
        self.value = value
        self.tape = tape

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return mul(-1.0, self)

    def __repr__(self):
        return f"Var(shape={self.value.shape})"


def value(x):
    return x.value if isinstance(x, Var) else x


def _unbroadcast(g, shape):
    g = np.asarray(g)
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g.reshape(shape)


def primitive(vjp):
    """Decorate a numpy forward function with its VJP ``vjp(g, out, *args, **kw)``."""

    def wrap(fwd):
        def f(*args, **kw):
            tape = None
            for a in args:
                if isinstance(a, Var):
                    tape = a.tape
                    break
            if tape is None:
                return fwd(*args, **kw)
            vals = [value(a) for a in args]
            out = Var(np.asarray(fwd(*vals, **kw), dtype=np.float64), tape)
            tape.nodes.append((out, args, vals, kw, vjp))
            return out

        f.__name__ = fwd.__name__
        f.__doc__ = fwd.__doc__
        f.forward = fwd
        f.vjp = vjp
        return f

    return wrap


# -- elementwise arithmetic --------------------------------------------------

@primitive(lambda g, out, a, b: (g, g))
def add(a, b):
    return np.add(a, b)


@primitive(lambda g, out, a, b: (g, -g))
def sub(a, b):
    return np.subtract(a, b)


@primitive(lambda g, out, a, b: (g * b, g * a))
def mul(a, b):
    return np.multiply(a, b)


@primitive(lambda g, out, a, b: (g / b, -g * out / b))
def div(a, b):
    return np.divide(a, b)


def _safe_div_vjp(g, out, a, b):
    nz = b != 0
    bb = np.where(nz, b, 1.0)
    return np.where(nz, g / bb, 0.0), np.where(nz, -g * out / bb, 0.0)


@primitive(_safe_div_vjp)
def safe_div(a, b):
    """``a / b`` with 0 wherever ``b == 0``."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    nz = b != 0
    return np.where(nz, a / np.where(nz, b, 1.0), 0.0)


@primitive(lambda g, out, a, b: (g * b, g * a))
def rowdot(a, b):
    """Inner product along the last axis, keeping that axis with length 1."""
    return np.sum(np.multiply(a, b), axis=-1, keepdims=True)


def _softplus_vjp(g, out, u):
    return (g * (0.5 * (1.0 + np.tanh(0.5 * np.asarray(u)))),)


@primitive(_softplus_vjp)
def softplus(u):
    return np.logaddexp(0.0, u)


def softplus_inv(y):
    """Inverse of :func:`softplus` for ``y > 0``."""
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0):
        raise ValueError("softplus_inv needs strictly positive input")
    return np.where(y > 30.0, y + np.log(-np.expm1(-y)), np.log(np.expm1(np.minimum(y, 30.0))))


# -- linear operators ------------------------------------------------------

def _apply_vjp(g, out, op, x):
    return None, op.apply_adjoint(g)


def _adjoint_vjp(g, out, op, y):
    return None, op.apply(g)


@primitive(_apply_vjp)
def apply_op(op, x):
    return op.apply(x)


@primitive(_adjoint_vjp)
def apply_adjoint(op, y):
    return op.apply_adjoint(y)


# -- proximal maps -----------------------------------------------------------

def _soft_vjp(g, out, v, theta):
    live = np.abs(v) > theta
    gv = np.where(live, g, 0.0)
    return gv, -gv * np.sign(v)


@primitive(_soft_vjp)
def soft_threshold(v, theta):
    """Elementwise ``sign(v) * max(|v| - theta, 0)``."""
    return np.sign(v) * np.maximum(np.abs(v) - theta, 0.0)


def _ball_parts(v, center, rho):
    d = np.subtract(v, center)
    nd = np.sqrt(np.sum(d * d, axis=-1, keepdims=True))
    outside = nd > rho
    return d, nd, outside


def _ball_vjp(g, out, v, center, rho):
    d, nd, outside = _ball_parts(v, center, rho)
    safe = np.where(outside, nd, 1.0)
    u = d / safe
    ug = np.sum(u * g, axis=-1, keepdims=True)
    gd = np.where(outside, rho / safe * (g - u * ug), g)
    grho = np.where(outside, ug, 0.0)
    return gd, g - gd, grho


@primitive(_ball_vjp)
def project_l2_ball(v, center, rho):
    """Project rows of ``v`` onto the Euclidean ball of radius ``rho`` around ``center``."""
    d, nd, outside = _ball_parts(v, center, rho)
    scale = np.where(outside, rho / np.where(outside, nd, 1.0), 1.0)
    return np.asarray(center) + d * scale


# -- half-quadratic penalty --------------------------------------------------

def psi(t, l1, l2, d1, d2):
    """Hybrid log penalty; ``log(1 + t**2 / d2)`` with ``d2`` unsquared inside the log."""
    a = np.abs(t)
    return l1 * d1 * (a - d1 * np.log1p(a / d1)) + l2 * (d2 * d2 / 2.0) * np.log1p(t * t / d2)


def _weight_vjp(g, out, t, l1, l2, d1, d2):
    a = np.abs(t)
    q1 = a + d1
    q2 = d2 + t * t
    gt = -l1 * d1 * np.sign(t) / q1**2 - 2.0 * l2 * t / (1.0 + t * t / d2) ** 2
    return (
        g * gt,
        g * d1 / q1,
        g * d2 * d2 / q2,
        g * l1 * a / q1**2,
        g * l2 * d2 * (d2 + 2.0 * t * t) / q2**2,
    )


@primitive(_weight_vjp)
def hq_weight(t, l1, l2, d1, d2):
    """Curvature ``psi'(t) / t`` of the quadratic majorant (finite at ``t = 0``)."""
    return l1 * d1 / (np.abs(t) + d1) + l2 * d2 * d2 / (d2 + t * t)


def _dpsi_vjp(g, out, t, l1, l2, d1, d2):
    a = np.abs(t)
    q1 = a + d1
    q2 = d2 + t * t
    gt = l1 * d1 * d1 / q1**2 + l2 * d2 * d2 * (d2 - t * t) / q2**2
    return (
        g * gt,
        g * d1 * t / q1,
        g * d2 * d2 * t / q2,
        g * l1 * t * a / q1**2,
        g * l2 * t * d2 * (d2 + 2.0 * t * t) / q2**2,
    )


@primitive(_dpsi_vjp)
def psi_prime(t, l1, l2, d1, d2):
    return l1 * d1 * t / (np.abs(t) + d1) + l2 * d2 * d2 * t / (d2 + t * t)
