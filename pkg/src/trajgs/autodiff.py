"""Reverse-mode differentiation over numpy arrays.

Values flow through the ops in this module either as plain ``ndarray``s
(constants, no recording) or as :class:`Var` handles bound to a
:class:`Tape`. An op whose inputs are all constants just computes with numpy,
so the same model code serves forward-only evaluation and training.

    tape = Tape()
    x = tape.param("x", np.array([5.0]))
    loss = sum(2.0 * x)
    grads = tape.backward(loss)     # {"x": array([2.])}
"""
from __future__ import annotations

import numpy as np


class TapeError(RuntimeError):
    pass


class Var:
    """A value recorded on a tape."""

    __slots__ = ("value", "tape", "index")
    __array_ufunc__ = None  # make ndarray defer to our reflected operators

    def __init__(self, value: np.ndarray, tape: "Tape", index: int):
        self.value = value
        self.tape = tape
        self.index = index

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def T(self):
        return transpose(self)

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var(#{self.index}, shape={self.value.shape})"

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
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Tape:
    """Ordered record of primitive applications.

    Nodes are appended in evaluation order, so every node's inputs precede it.
    Backward walks the record in reverse and accumulates contributions in that
    fixed order, which makes gradients bit-reproducible.
    """

    def __init__(self):
        self._edges: list[tuple] = []
        self._shapes: list[tuple] = []
        self.params: dict[str, Var] = {}
        self._grads: list | None = None

    def __len__(self):
        return len(self._edges)

    def param(self, name: str, value) -> Var:
        if name in self.params:
            raise TapeError(f"parameter {name!r} already registered on this tape")
        v = self._leaf(np.asarray(value, dtype=np.float64))
        self.params[name] = v
        return v

    def _leaf(self, value) -> Var:
        self._edges.append(())
        self._shapes.append(value.shape)
        return Var(value, self, len(self._edges) - 1)

    def record(self, value, edges) -> Var:
        """Append a node; ``edges`` is a sequence of ``(parent_var, vjp)``."""
        for parent, _ in edges:
            if parent.tape is not self:
                raise TapeError("inputs recorded on different tapes")
        value = np.asarray(value, dtype=np.float64)
        self._edges.append(tuple((p.index, fn) for p, fn in edges))
        self._shapes.append(value.shape)
        return Var(value, self, len(self._edges) - 1)

    def backward(self, loss: Var) -> dict[str, np.ndarray]:
        if not isinstance(loss, Var) or loss.tape is not self:
            raise TapeError("loss is not a node of this tape")
        if loss.value.size != 1:
            raise TapeError(f"loss must be scalar, got shape {loss.value.shape}")
        if not np.isfinite(loss.value).all():
            raise TapeError(f"loss is not finite: {loss.value}")
        grads: list = [None] * len(self._edges)
        grads[loss.index] = np.ones_like(loss.value)
        for i in range(loss.index, -1, -1):
            g = grads[i]
            if g is None:
                continue
            for parent, fn in self._edges[i]:
                contrib = fn(g)
                grads[parent] = contrib if grads[parent] is None else grads[parent] + contrib
        self._grads = grads
        return {name: self.grad(v) for name, v in self.params.items()}

    def grad(self, var: Var) -> np.ndarray:
        """Gradient of the last backward's loss w.r.t. any recorded node."""
        if self._grads is None:
            raise TapeError("backward has not been run")
        g = self._grads[var.index]
        if g is None:
            return np.zeros(self._shapes[var.index])
        return np.broadcast_to(g, self._shapes[var.index]).copy()


def value(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def detach(x) -> np.ndarray:
    """Forward value with no path back to the tape."""
    return value(x).copy() if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def primitive(out, inputs, vjps):
    """Record ``out`` as a function of ``inputs`` with per-input VJP callables.

    Constant inputs (non-``Var``) are skipped. Returns a plain array when no
    input is on a tape.
    """
    edges = [(x, fn) for x, fn in zip(inputs, vjps) if isinstance(x, Var)]
    if not edges:
        return np.asarray(out, dtype=np.float64)
    return edges[0][0].tape.record(out, edges)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise -------------------------------------------------------------

def add(a, b):
    av, bv = value(a), value(b)
    return primitive(av + bv, (a, b),
                     (lambda g: _unbroadcast(g, av.shape), lambda g: _unbroadcast(g, bv.shape)))


def sub(a, b):
    av, bv = value(a), value(b)
    return primitive(av - bv, (a, b),
                     (lambda g: _unbroadcast(g, av.shape), lambda g: _unbroadcast(-g, bv.shape)))


def mul(a, b):
    av, bv = value(a), value(b)
    return primitive(av * bv, (a, b),
                     (lambda g: _unbroadcast(g * bv, av.shape),
                      lambda g: _unbroadcast(g * av, bv.shape)))


def div(a, b):
    av, bv = value(a), value(b)
    out = av / bv
    return primitive(out, (a, b),
                     (lambda g: _unbroadcast(g / bv, av.shape),
                      lambda g: _unbroadcast(-g * out / bv, bv.shape)))


def neg(a):
    return primitive(-value(a), (a,), (lambda g: -g,))


def power(a, p: float):
    av = value(a)
    return primitive(av ** p, (a,), (lambda g: g * p * av ** (p - 1),))


def square(a):
    av = value(a)
    return primitive(av * av, (a,), (lambda g: 2.0 * g * av,))


def exp(a):
    out = np.exp(value(a))
    return primitive(out, (a,), (lambda g: g * out,))


def log(a):
    av = value(a)
    return primitive(np.log(av), (a,), (lambda g: g / av,))


def sqrt(a):
    out = np.sqrt(value(a))
    return primitive(out, (a,), (lambda g: g * 0.5 / out,))


def sin(a):
    av = value(a)
    return primitive(np.sin(av), (a,), (lambda g: g * np.cos(av),))


def cos(a):
    av = value(a)
    return primitive(np.cos(av), (a,), (lambda g: -g * np.sin(av),))


def sigmoid(a):
    av = value(a)
    out = np.where(av >= 0, 1.0 / (1.0 + np.exp(-np.abs(av))),
                   np.exp(-np.abs(av)) / (1.0 + np.exp(-np.abs(av))))
    return primitive(out, (a,), (lambda g: g * out * (1.0 - out),))


def relu(a):
    av = value(a)
    on = av > 0
    return primitive(np.where(on, av, 0.0), (a,), (lambda g: g * on,))


def abs(a):  # noqa: A001
    av = value(a)
    return primitive(np.abs(av), (a,), (lambda g: g * np.sign(av),))


def clip(a, lo, hi):
    av = value(a)
    inside = (av >= lo) & (av <= hi)
    return primitive(np.clip(av, lo, hi), (a,), (lambda g: g * inside,))


def where(cond, a, b):
    cond = np.asarray(cond, dtype=bool)
    av, bv = value(a), value(b)
    return primitive(np.where(cond, av, bv), (a, b),
                     (lambda g: _unbroadcast(np.where(cond, g, 0.0), av.shape),
                      lambda g: _unbroadcast(np.where(cond, 0.0, g), bv.shape)))


# -- reductions and shape ----------------------------------------------------

def sum(a, axis=None, keepdims=False):  # noqa: A001
    av = value(a)
    out = av.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, av.shape).copy()

    return primitive(out, (a,), (vjp,))


def mean(a, axis=None, keepdims=False):
    av = value(a)
    n = av.size if axis is None else np.prod([av.shape[i] for i in np.atleast_1d(axis)])
    return sum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape):
    av = value(a)
    return primitive(av.reshape(shape), (a,), (lambda g: g.reshape(av.shape),))


def transpose(a, axes=None):
    av = value(a)
    inv = None if axes is None else np.argsort(axes)
    return primitive(np.transpose(av, axes), (a,), (lambda g: np.transpose(g, inv),))


def getitem(a, idx):
    av = value(a)

    def vjp(g):
        out = np.zeros_like(av)
        np.add.at(out, idx, g)
        return out

    return primitive(av[idx], (a,), (vjp,))


def scatter(a, idx, shape):
    """Zeros of ``shape`` with rows ``idx`` (unique) set to ``a``."""
    av = value(a)
    out = np.zeros(shape)
    out[idx] = av
    return primitive(out, (a,), (lambda g: g[idx],))


def concat(xs, axis=0):
    vals = [value(x) for x in xs]
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])

    def make(i):
        sl = [slice(None)] * vals[i].ndim
        sl[axis] = slice(bounds[i], bounds[i + 1])
        return lambda g: g[tuple(sl)]

    return primitive(np.concatenate(vals, axis=axis), xs, [make(i) for i in range(len(xs))])


def stack(xs, axis=0):
    vals = [value(x) for x in xs]

    def make(i):
        return lambda g: np.take(g, i, axis=axis)

    return primitive(np.stack(vals, axis=axis), xs, [make(i) for i in range(len(xs))])


# -- linear algebra ----------------------------------------------------------

def matmul(a, b):
    av, bv = value(a), value(b)
    if av.ndim != 2 or bv.ndim != 2:
        raise ValueError("matmul expects 2-D operands; use einsum for batches")
    return primitive(av @ bv, (a, b), (lambda g: g @ bv.T, lambda g: av.T @ g))


def einsum(subscripts: str, *operands):
    """Explicit-output einsum (``'ij,jk->ik'``).

    Every index of an operand must also appear in another operand or the
    output, which covers all contractions used in this package.
    """
    ins, out = subscripts.replace(" ", "").split("->")
    ins = ins.split(",")
    vals = [value(x) for x in operands]
    result = np.einsum(subscripts, *vals, optimize=len(vals) > 2)

    def make(i):
        others = [s for j, s in enumerate(ins) if j != i]
        if len(set(ins[i])) != len(ins[i]) or not set(ins[i]) <= set("".join(others) + out):
            raise ValueError(f"einsum operand {ins[i]!r} is not differentiable here")
        sub = ",".join([out] + others) + "->" + ins[i]

        def vjp(g):
            return np.einsum(sub, g, *[vals[j] for j in range(len(vals)) if j != i],
                             optimize=len(vals) > 2)

        return vjp

    vjps = [make(i) if isinstance(x, Var) else None for i, x in enumerate(operands)]
    return primitive(result, operands, vjps)


def norm(a, axis=-1):
    """Euclidean norm along ``axis``; subgradient 0 at the origin."""
    av = value(a)
    out = np.sqrt((av * av).sum(axis=axis))

    def vjp(g):
        safe = np.where(out > 0, out, 1.0)
        scale = np.where(out > 0, g / safe, 0.0)
        return np.expand_dims(scale, axis) * av

    return primitive(out, (a,), (vjp,))


# -- rotations ---------------------------------------------------------------

def normalize(q, axis=-1, what="vector"):
    """Unit-normalize along ``axis``. Zero-norm input is an error."""
    qv = value(q)
    n = np.sqrt((qv * qv).sum(axis=axis, keepdims=True))
    if np.any(n == 0) or not np.all(np.isfinite(n)):
        raise ValueError(f"cannot normalize zero-norm {what}")
    u = qv / n

    def vjp(g):
        return (g - u * (g * u).sum(axis=axis, keepdims=True)) / n

    return primitive(u, (q,), (vjp,))


def quat_to_rotmat(q):
    """Rotation matrices ``(..., 3, 3)`` from unit quaternions ``(..., 4)`` in (w, x, y, z)."""
    qv = value(q)
    w, x, y, z = np.moveaxis(qv, -1, 0)
    R = np.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ], axis=-1).reshape(qv.shape[:-1] + (3, 3))

    def vjp(G):
        g = G.reshape(G.shape[:-2] + (9,))
        g00, g01, g02, g10, g11, g12, g20, g21, g22 = np.moveaxis(g, -1, 0)
        dw = 2 * (-z * g01 + y * g02 + z * g10 - x * g12 - y * g20 + x * g21)
        dx = 2 * (y * g01 + z * g02 + y * g10 - 2 * x * g11 - w * g12
                  + z * g20 + w * g21 - 2 * x * g22)
        dy = 2 * (-2 * y * g00 + x * g01 + w * g02 + x * g10 + z * g12
                  - w * g20 + z * g21 - 2 * y * g22)
        dz = 2 * (-2 * z * g00 - w * g01 + x * g02 + w * g10 - 2 * z * g11
                  + y * g12 + x * g20 + y * g21)
        return np.stack([dw, dx, dy, dz], axis=-1)

    return primitive(R, (q,), (vjp,))

