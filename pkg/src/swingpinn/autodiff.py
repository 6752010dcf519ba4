"""Differentiation engine for PINN training.

Two layers live here:

* ``Tape`` / ``Var``: reverse-mode differentiation over numpy arrays. Every
  operation touching a ``Var`` is appended to its tape, so the tape order is
  already a topological order and the backward sweep is a single reversed
  loop.
* ``DiffValue``: a (value, d/dt, d2/dt2) triple propagated forward with
  second-order Taylor rules. Its channels may hold plain numbers, numpy
  arrays or ``Var`` objects; in the last case the time derivatives are
  themselves differentiable with respect to the watched parameters, which is
  what the physics loss needs.

The primitive set is closed: add, mul, scale, neg, tanh, sin, cos, softplus,
square, mean, plus the two structural ops ``matmul`` and ``column``. Everything
else (subtraction, sigmoid, the Taylor rules) is composed from these.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tape",
    "Var",
    "DiffValue",
    "add",
    "sub",
    "mul",
    "scale",
    "neg",
    "tanh",
    "sin",
    "cos",
    "softplus",
    "sigmoid",
    "square",
    "mean",
    "matmul",
    "column",
    "value_of",
    "lift_input",
    "lift_constant",
    "linear",
]


class Var:
    """A node on a tape holding a numpy array value."""

    __slots__ = ("value", "tape", "index")
    __array_priority__ = 100.0

    def __init__(self, value: np.ndarray, tape: "Tape", index: int):
        self.value = value
        self.tape = tape
        self.index = index

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self) -> str:
        return f"Var(shape={self.shape}, index={self.index})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


class Tape:
    """Records operations on watched arrays for a single backward sweep.

    Each entry stores the forward function, its arguments (``Var`` or
    constant) and a backward rule mapping the output adjoint to one adjoint
    per argument. ``replay`` reruns the forward functions, which is how the
    record is checked against the values produced during evaluation.
    """

    def __init__(self):
        self._fns: list[Callable | None] = []
        self._args: list[tuple] = []
        self._backward: list[Callable | None] = []
        self._values: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self._values)

    def watch(self, value) -> Var:
        value = np.asarray(value, dtype=float)
        return self._push(value, None, (), None)

    def _push(self, value, fn, args, backward) -> Var:
        var = Var(value, self, len(self._values))
        self._values.append(value)
        self._fns.append(fn)
        self._args.append(args)
        self._backward.append(backward)
        return var

    def gradient(self, target, sources: Sequence[Var]) -> list[np.ndarray]:
        """Adjoints of ``target`` (summed if not scalar) for every source."""
        if not isinstance(target, Var):
            return [np.zeros_like(s.value) for s in sources]
        if target.tape is not self:
            raise ValueError("target was recorded on a different tape")
        adjoint: list = [None] * (target.index + 1)
        adjoint[target.index] = np.ones_like(target.value)
        for i in range(target.index, -1, -1):
            g = adjoint[i]
            rule = self._backward[i]
            if g is None or rule is None:
                continue
            for arg, ga in zip(self._args[i], rule(g)):
                if ga is None or not isinstance(arg, Var):
                    continue
                j = arg.index
                adjoint[j] = ga if adjoint[j] is None else adjoint[j] + ga
        grads = []
        for s in sources:
            g = adjoint[s.index] if s.index < len(adjoint) else None
            grads.append(np.zeros_like(s.value) if g is None else g)
        return grads

    def replay(self) -> list[np.ndarray]:
        """Recompute every recorded value from the watched leaves."""
        out: list[np.ndarray] = []
        for fn, args, recorded in zip(self._fns, self._args, self._values):
            if fn is None:
                out.append(recorded)
                continue
            vals = [out[a.index] if isinstance(a, Var) else a for a in args]
            out.append(fn(*vals))
        return out

    @property
    def values(self) -> list[np.ndarray]:
        return list(self._values)


def value_of(x):
    return x.value if isinstance(x, Var) else x


def _tape_of(*args) -> Tape | None:
    for a in args:
        if isinstance(a, Var):
            return a.tape
    return None


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if np.shape(g) == tuple(shape):
        return g
    while np.ndim(g) > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _record(fn, args, backward):
    tape = _tape_of(*args)
    vals = [value_of(a) for a in args]
    out = fn(*vals)
    if tape is None:
        return out
    return tape._push(out, fn, tuple(args), backward(out, *vals))


# primitives -----------------------------------------------------------------

def _add(a, b):
    return a + b


def add(a, b):
    def backward(out, va, vb):
        sa, sb = np.shape(va), np.shape(vb)
        return lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))

    return _record(_add, (a, b), backward)


def _mul(a, b):
    return a * b


def mul(a, b):
    def backward(out, va, vb):
        sa, sb = np.shape(va), np.shape(vb)
        return lambda g: (_unbroadcast(g * vb, sa), _unbroadcast(g * va, sb))

    return _record(_mul, (a, b), backward)


def scale(a, c: float):
    c = float(c)

    def fn(v):
        return v * c

    return _record(fn, (a,), lambda out, va: lambda g: (g * c,))


def _neg(a):
    return -a


def neg(a):
    return _record(_neg, (a,), lambda out, va: lambda g: (-g,))


def tanh(a):
    return _record(np.tanh, (a,), lambda out, va: lambda g: (g * (1.0 - out * out),))


def sin(a):
    return _record(np.sin, (a,), lambda out, va: lambda g: (g * np.cos(va),))


def cos(a):
    return _record(np.cos, (a,), lambda out, va: lambda g: (-g * np.sin(va),))


def _softplus(a):
    return np.logaddexp(0.0, a)


def _sigmoid_value(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def softplus(a):
    return _record(_softplus, (a,), lambda out, va: lambda g: (g * _sigmoid_value(va),))


def _square(a):
    return a * a


def square(a):
    return _record(_square, (a,), lambda out, va: lambda g: (2.0 * g * va,))


def _mean(a):
    return np.mean(a)


def mean(a):
    def backward(out, va):
        shape, n = np.shape(va), np.size(va)
        return lambda g: (np.broadcast_to(g / n, shape),)

    return _record(_mean, (a,), backward)


def _matmul(a, b):
    return a @ b


def matmul(a, b):
    def backward(out, va, vb):
        return lambda g: (g @ vb.T, va.T @ g)

    return _record(_matmul, (a, b), backward)


def column(a, j: int):
    """Column ``j`` of a 2-D array, kept 2-D (shape ``[rows, 1]``)."""

    def fn(v):
        return v[:, j : j + 1]

    def backward(out, va):
        shape = va.shape

        def rule(g):
            full = np.zeros(shape)
            full[:, j : j + 1] = g
            return (full,)

        return rule

    return _record(fn, (a,), backward)


# composites -----------------------------------------------------------------

def sub(a, b):
    if isinstance(b, Var):
        return add(a, neg(b))
    return add(a, -np.asarray(b) if not np.isscalar(b) else -b)


def sigmoid(a):
    return scale(add(tanh(scale(a, 0.5)), 1.0), 0.5)


# second-order Taylor values --------------------------------------------------

def _is_zero(x) -> bool:
    return isinstance(x, (int, float)) and x == 0


def _zadd(a, b):
    if _is_zero(a):
        return b
    if _is_zero(b):
        return a
    return add(a, b)


def _zmul(a, b):
    if _is_zero(a) or _is_zero(b):
        return 0.0
    return mul(a, b)


def _zscale(a, c):
    if _is_zero(a):
        return 0.0
    return scale(a, c)


def _zmatmul(a, b):
    if _is_zero(a):
        return 0.0
    return matmul(a, b)


class DiffValue:
    """Value with its first and second derivative along the time coordinate.

    Channels broadcast like numpy arrays, so a single ``DiffValue`` can carry
    a whole batch of collocation points.
    """

    __slots__ = ("value", "d_dt", "d2_dt2")

    def __init__(self, value, d_dt=0.0, d2_dt2=0.0):
        self.value = value
        self.d_dt = d_dt
        self.d2_dt2 = d2_dt2

    def __repr__(self) -> str:
        return f"DiffValue({self.value!r}, {self.d_dt!r}, {self.d2_dt2!r})"

    def channels(self) -> tuple:
        return (value_of(self.value), value_of(self.d_dt), value_of(self.d2_dt2))

    def __add__(self, other):
        other = _as_diff(other)
        return DiffValue(
            add(self.value, other.value),
            _zadd(self.d_dt, other.d_dt),
            _zadd(self.d2_dt2, other.d2_dt2),
        )

    __radd__ = __add__

    def __neg__(self):
        return DiffValue(neg(self.value), _zscale(self.d_dt, -1.0), _zscale(self.d2_dt2, -1.0))

    def __sub__(self, other):
        return self + (-_as_diff(other))

    def __rsub__(self, other):
        return _as_diff(other) + (-self)

    def __mul__(self, other):
        other = _as_diff(other)
        u, du, ddu = self.value, self.d_dt, self.d2_dt2
        v, dv, ddv = other.value, other.d_dt, other.d2_dt2
        first = _zadd(_zmul(du, v), _zmul(u, dv))
        second = _zadd(
            _zadd(_zmul(ddu, v), _zmul(u, ddv)),
            _zscale(_zmul(du, dv), 2.0),
        )
        return DiffValue(mul(u, v), first, second)

    __rmul__ = __mul__


def _as_diff(x) -> DiffValue:
    return x if isinstance(x, DiffValue) else DiffValue(x)


def lift_input(t, rate: float = 1.0) -> DiffValue:
    """The designated coordinate itself: derivative ``rate``, curvature 0."""
    return DiffValue(t, rate, 0.0)


def lift_constant(c) -> DiffValue:
    return DiffValue(c, 0.0, 0.0)


def _chain(x: DiffValue, y, dy, ddy) -> DiffValue:
    """Compose an elementwise function with known g(u), g'(u), g''(u)."""
    first = _zmul(dy, x.d_dt)
    second = _zadd(_zmul(ddy, square(x.d_dt)) if not _is_zero(x.d_dt) else 0.0,
                   _zmul(dy, x.d2_dt2))
    return DiffValue(y, first, second)


def _dispatch(name: str, scalar_fn, taylor_fn):
    def op(x, *args):
        if isinstance(x, DiffValue):
            return taylor_fn(x, *args)
        return scalar_fn(x, *args)

    op.__name__ = name
    return op


def _tanh_taylor(x: DiffValue) -> DiffValue:
    y = tanh(x.value)
    if _is_zero(x.d_dt) and _is_zero(x.d2_dt2):
        return DiffValue(y)
    dy = add(neg(square(y)), 1.0)
    ddy = scale(mul(y, dy), -2.0)
    return _chain(x, y, dy, ddy)


def _sin_taylor(x: DiffValue) -> DiffValue:
    y = sin(x.value)
    if _is_zero(x.d_dt) and _is_zero(x.d2_dt2):
        return DiffValue(y)
    return _chain(x, y, cos(x.value), neg(y))


def _cos_taylor(x: DiffValue) -> DiffValue:
    y = cos(x.value)
    if _is_zero(x.d_dt) and _is_zero(x.d2_dt2):
        return DiffValue(y)
    return _chain(x, y, neg(sin(x.value)), neg(y))


def _softplus_taylor(x: DiffValue) -> DiffValue:
    y = softplus(x.value)
    if _is_zero(x.d_dt) and _is_zero(x.d2_dt2):
        return DiffValue(y)
    s = sigmoid(x.value)
    return _chain(x, y, s, mul(s, add(neg(s), 1.0)))


def _square_taylor(x: DiffValue) -> DiffValue:
    return x * x


def _scale_taylor(x: DiffValue, c: float) -> DiffValue:
    return DiffValue(scale(x.value, c), _zscale(x.d_dt, c), _zscale(x.d2_dt2, c))


def _neg_taylor(x: DiffValue) -> DiffValue:
    return -x


_plain = {"tanh": tanh, "sin": sin, "cos": cos, "softplus": softplus, "square": square,
          "scale": scale, "neg": neg}

tanh = _dispatch("tanh", _plain["tanh"], _tanh_taylor)
sin = _dispatch("sin", _plain["sin"], _sin_taylor)
cos = _dispatch("cos", _plain["cos"], _cos_taylor)
softplus = _dispatch("softplus", _plain["softplus"], _softplus_taylor)
square = _dispatch("square", _plain["square"], _square_taylor)
scale = _dispatch("scale", _plain["scale"], _scale_taylor)
neg = _dispatch("neg", _plain["neg"], _neg_taylor)


def linear(x: DiffValue, weight, bias) -> DiffValue:
    """Affine map ``x @ weight + bias`` applied channelwise."""
    return DiffValue(
        add(matmul(x.value, weight), bias),
        _zmatmul(x.d_dt, weight),
        _zmatmul(x.d2_dt2, weight),
    )
