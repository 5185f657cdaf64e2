"""Reverse-mode automatic differentiation on numpy arrays.

A `Tape` records primitive operations in execution order; `Tensor` wraps a
float64 array plus its node id on the tape. Every op here also accepts plain
numpy arrays (no tape involved), so the same field-evaluation code runs in a
fast untracked mode during simulation and in tracked mode during training.

Gradients are accumulated in a fixed reverse sweep over the record list, so
re-running backward on the same tape is bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

Array = np.ndarray


class Tape:
    """Ordered record of primitive ops; single-use per forward pass."""

    def __init__(self):
        # node i: (vjp, input_nids); vjp is None for leaves
        self.nodes: list[tuple] = []

    def leaf(self, value) -> "Tensor":
        t = Tensor(np.asarray(value, dtype=float), self, len(self.nodes))
        self.nodes.append((None, ()))
        return t

    def clear(self) -> None:
        self.nodes.clear()

    def backward(self, out: "Tensor", seed: Array | None = None) -> list:
        """Gradients of `out` (seeded with `seed`, default ones) w.r.t. every node."""
        if out.tape is not self:
            raise ContractError("output tensor does not belong to this tape")
        grads: list = [None] * len(self.nodes)
        grads[out.nid] = np.ones_like(out.value) if seed is None else np.asarray(seed, dtype=float)
        for nid in range(out.nid, -1, -1):
            g = grads[nid]
            if g is None:
                continue
            vjp, inputs = self.nodes[nid]
            if vjp is None:
                continue
            for in_nid, gi in zip(inputs, vjp(g)):
                if gi is None:
                    continue
                if grads[in_nid] is None:
                    grads[in_nid] = gi
                else:
                    grads[in_nid] = grads[in_nid] + gi
        return grads


class Tensor:
    """A primal value plus its node id on one live tape."""

    __slots__ = ("value", "tape", "nid")

    # make numpy defer to our reflected operators instead of coercing
    __array_ufunc__ = None
    __array_priority__ = 1000

    def __init__(self, value: Array, tape: Tape, nid: int):
        self.value = value
        self.tape = tape
        self.nid = nid

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Tensor(nid={self.nid}, shape={self.value.shape})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return powc(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)


def value(x):
    """Primal array of a Tensor, or the input itself."""
    return x.value if isinstance(x, Tensor) else x


def _val(x) -> Array:
    if isinstance(x, Tensor):
        return x.value
    if type(x) is np.ndarray:
        return x
    return np.asarray(x, dtype=float)


def _tape(*args) -> Tape | None:
    for a in args:
        if isinstance(a, Tensor):
            return a.tape
    return None


def _record(tape: Tape, out_value: Array, vjp, inputs) -> Tensor:
    out = Tensor(out_value, tape, len(tape.nodes))
    tape.nodes.append((vjp, tuple(t.nid for t in inputs)))
    return out


def _unbroadcast(g: Array, shape: tuple) -> Array:
    """Sum gradient over axes that numpy broadcasting added or stretched."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# arithmetic primitives


def add(a, b):
    tape = _tape(a, b)
    av, bv = _val(a), _val(b)
    out = av + bv
    if tape is None:
        return out
    ins = [t for t in (a, b) if isinstance(t, Tensor)]

    def vjp(g):
        return tuple(
            _unbroadcast(g, t.value.shape) for t in (a, b) if isinstance(t, Tensor)
        )

    return _record(tape, out, vjp, ins)


def sub(a, b):
    tape = _tape(a, b)
    av, bv = _val(a), _val(b)
    out = av - bv
    if tape is None:
        return out
    ins = [t for t in (a, b) if isinstance(t, Tensor)]

    def vjp(g):
        gs = []
        if isinstance(a, Tensor):
            gs.append(_unbroadcast(g, a.value.shape))
        if isinstance(b, Tensor):
            gs.append(_unbroadcast(-g, b.value.shape))
        return tuple(gs)

    return _record(tape, out, vjp, ins)


def mul(a, b):
    tape = _tape(a, b)
    av, bv = _val(a), _val(b)
    out = av * bv
    if tape is None:
        return out
    ins = [t for t in (a, b) if isinstance(t, Tensor)]

    def vjp(g):
        gs = []
        if isinstance(a, Tensor):
            gs.append(_unbroadcast(g * bv, a.value.shape))
        if isinstance(b, Tensor):
            gs.append(_unbroadcast(g * av, b.value.shape))
        return tuple(gs)

    return _record(tape, out, vjp, ins)


def div(a, b):
    tape = _tape(a, b)
    av, bv = _val(a), _val(b)
    out = av / bv
    if tape is None:
        return out
    ins = [t for t in (a, b) if isinstance(t, Tensor)]

    def vjp(g):
        gs = []
        if isinstance(a, Tensor):
            gs.append(_unbroadcast(g / bv, a.value.shape))
        if isinstance(b, Tensor):
            gs.append(_unbroadcast(-g * av / (bv * bv), b.value.shape))
        return tuple(gs)

    return _record(tape, out, vjp, ins)


def neg(a):
    tape = _tape(a)
    av = _val(a)
    if tape is None:
        return -av
    return _record(tape, -av, lambda g: (-g,), [a])


def powc(a, exponent: float):
    """a ** c for a constant real exponent."""
    tape = _tape(a)
    av = _val(a)
    out = av**exponent
    if tape is None:
        return out

    def vjp(g):
        return (g * exponent * av ** (exponent - 1.0),)

    return _record(tape, out, vjp, [a])


# ---------------------------------------------------------------------------
# linear-algebra primitives


def _swap(a: Array) -> Array:
    return np.swapaxes(a, -1, -2)


def matmul(a, b):
    """np.matmul semantics for stacked matrices (both operands ndim >= 2)."""
    tape = _tape(a, b)
    av, bv = _val(a), _val(b)
    out = np.matmul(av, bv)
    if tape is None:
        return out
    ins = [t for t in (a, b) if isinstance(t, Tensor)]

    def vjp(g):
        gs = []
        if isinstance(a, Tensor):
            gs.append(_unbroadcast(np.matmul(g, _swap(bv)), a.value.shape))
        if isinstance(b, Tensor):
            gs.append(_unbroadcast(np.matmul(_swap(av), g), b.value.shape))
        return tuple(gs)

    return _record(tape, out, vjp, ins)


def matvec(a, x):
    """Contract the last axis of x against matrices a: '...ij,...j->...i'."""
    tape = _tape(a, x)
    av, xv = _val(a), _val(x)
    out = np.einsum("...ij,...j->...i", av, xv)
    if tape is None:
        return out
    ins = [t for t in (a, x) if isinstance(t, Tensor)]

    def vjp(g):
        gs = []
        if isinstance(a, Tensor):
            gs.append(_unbroadcast(np.einsum("...i,...j->...ij", g, xv), a.value.shape))
        if isinstance(x, Tensor):
            gs.append(_unbroadcast(np.einsum("...ij,...i->...j", av, g), x.value.shape))
        return tuple(gs)

    return _record(tape, out, vjp, ins)


def outer(a, b):
    """Batched outer product '...i,...j->...ij'."""
    tape = _tape(a, b)
    av, bv = _val(a), _val(b)
    out = np.einsum("...i,...j->...ij", av, bv)
    if tape is None:
        return out
    ins = [t for t in (a, b) if isinstance(t, Tensor)]

    def vjp(g):
        gs = []
        if isinstance(a, Tensor):
            gs.append(_unbroadcast(np.einsum("...ij,...j->...i", g, bv), a.value.shape))
        if isinstance(b, Tensor):
            gs.append(_unbroadcast(np.einsum("...ij,...i->...j", g, av), b.value.shape))
        return tuple(gs)

    return _record(tape, out, vjp, ins)


def transpose_last2(a):
    tape = _tape(a)
    av = _val(a)
    if tape is None:
        return _swap(av)
    return _record(tape, _swap(av), lambda g: (_swap(g),), [a])


def pinv_psym(a, tol: float = 1e-10):
    """Pseudo-inverse of (stacked) symmetric PSD matrices via eigh.

    The backward rule -S g S is exact where the rank is locally constant
    (in particular whenever the matrix is invertible).
    """
    tape = _tape(a)
    av = _val(a)
    sym = (av + _swap(av)) * 0.5
    w, v = np.linalg.eigh(sym)
    wmax = np.maximum(w.max(axis=-1, keepdims=True), 0.0)
    keep = w > tol * np.maximum(wmax, np.finfo(float).tiny)
    inv_w = np.where(keep, 1.0 / np.where(keep, w, 1.0), 0.0)
    out = np.einsum("...ij,...j,...kj->...ik", v, inv_w, v)
    if tape is None:
        return out

    def vjp(g):
        gsym = (g + _swap(g)) * 0.5
        return (-np.matmul(out, np.matmul(gsym, out)),)

    return _record(tape, out, vjp, [a])


# ---------------------------------------------------------------------------
# shape primitives


def reshape(a, shape):
    tape = _tape(a)
    av = _val(a)
    out = av.reshape(shape)
    if tape is None:
        return out
    return _record(tape, out, lambda g: (g.reshape(av.shape),), [a])


def getitem(a, idx):
    tape = _tape(a)
    av = _val(a)
    out = av[idx]
    if tape is None:
        return out

    def vjp(g):
        full = np.zeros_like(av)
        full[idx] = g
        return (full,)

    return _record(tape, out, vjp, [a])


def concat(parts, axis: int = -1):
    tape = _tape(*parts)
    vals = [_val(p) for p in parts]
    out = np.concatenate(vals, axis=axis)
    if tape is None:
        return out
    sizes = [v.shape[axis] for v in vals]
    offsets = np.cumsum([0] + sizes)
    ins = [p for p in parts if isinstance(p, Tensor)]

    def vjp(g):
        gs = []
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if isinstance(p, Tensor):
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                gs.append(g[tuple(index)])
        return tuple(gs)

    return _record(tape, out, vjp, ins)


def tril_from_flat(a, n: int):
    """Scatter packed lower-triangle coordinates (row-major) into (..., n, n)."""
    tape = _tape(a)
    av = _val(a)
    rows, cols = np.tril_indices(n)
    out = np.zeros(av.shape[:-1] + (n, n))
    out[..., rows, cols] = av
    if tape is None:
        return out
    return _record(tape, out, lambda g: (g[..., rows, cols],), [a])


def where(cond, a, b):
    """Select by a boolean (non-differentiated) condition array."""
    cond = np.asarray(value(cond), dtype=bool)
    tape = _tape(a, b)
    av, bv = _val(a), _val(b)
    out = np.where(cond, av, bv)
    if tape is None:
        return out
    ins = [t for t in (a, b) if isinstance(t, Tensor)]

    def vjp(g):
        gs = []
        if isinstance(a, Tensor):
            gs.append(_unbroadcast(np.where(cond, g, 0.0), a.value.shape))
        if isinstance(b, Tensor):
            gs.append(_unbroadcast(np.where(cond, 0.0, g), b.value.shape))
        return tuple(gs)

    return _record(tape, out, vjp, ins)


# ---------------------------------------------------------------------------
# reductions


def sum_(a, axis=None, keepdims: bool = False):
    tape = _tape(a)
    av = _val(a)
    out = av.sum(axis=axis, keepdims=keepdims)
    if tape is None:
        return out

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, av.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, av.shape).copy(),)

    return _record(tape, out, vjp, [a])


def mean(a, axis=None, keepdims: bool = False):
    av = _val(a)
    n = av.size if axis is None else av.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# nonlinearities


def _sigmoid_np(x: Array) -> Array:
    e = np.exp(-np.abs(x))  # never overflows
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a):
    tape = _tape(a)
    out = _sigmoid_np(_val(a))
    if tape is None:
        return out
    return _record(tape, out, lambda g: (g * out * (1.0 - out),), [a])


def tanh(a):
    tape = _tape(a)
    out = np.tanh(_val(a))
    if tape is None:
        return out
    return _record(tape, out, lambda g: (g * (1.0 - out * out),), [a])


def exp(a):
    tape = _tape(a)
    out = np.exp(_val(a))
    if tape is None:
        return out
    return _record(tape, out, lambda g: (g * out,), [a])


def log(a):
    tape = _tape(a)
    av = _val(a)
    out = np.log(av)
    if tape is None:
        return out
    return _record(tape, out, lambda g: (g / av,), [a])


def sqrt(a):
    tape = _tape(a)
    out = np.sqrt(_val(a))
    if tape is None:
        return out
    return _record(tape, out, lambda g: (g * 0.5 / out,), [a])


def sin(a):
    tape = _tape(a)
    av = _val(a)
    out = np.sin(av)
    if tape is None:
        return out
    return _record(tape, out, lambda g: (g * np.cos(av),), [a])


def cos(a):
    tape = _tape(a)
    av = _val(a)
    out = np.cos(av)
    if tape is None:
        return out
    return _record(tape, out, lambda g: (-g * np.sin(av),), [a])


def silu(a):
    tape = _tape(a)
    av = _val(a)
    s = _sigmoid_np(av)
    out = av * s
    if tape is None:
        return out
    return _record(tape, out, lambda g: (g * (s + av * s * (1.0 - s)),), [a])


def softplus(a):
    tape = _tape(a)
    av = _val(a)
    out = np.logaddexp(0.0, av)
    if tape is None:
        return out
    return _record(tape, out, lambda g: (g * _sigmoid_np(av),), [a])


def relu(a):
    """max(0, x) with subgradient 0 at the kink."""
    tape = _tape(a)
    av = _val(a)
    out = np.maximum(av, 0.0)
    if tape is None:
        return out
    return _record(tape, out, lambda g: (g * (av > 0.0),), [a])


def absval(a):
    """|x| with subgradient 0 at the kink."""
    tape = _tape(a)
    av = _val(a)
    out = np.abs(av)
    if tape is None:
        return out
    return _record(tape, out, lambda g: (g * np.sign(av),), [a])


# ---------------------------------------------------------------------------
# driver-level API


def grad(loss: Tensor, params: Tensor) -> Array:
    """d(loss)/d(params) for a scalar loss; zeros where params are unreached."""
    if not isinstance(loss, Tensor) or loss.value.ndim != 0:
        raise ContractError("grad expects a scalar Tensor loss")
    grads = loss.tape.backward(loss)
    g = grads[params.nid]
    return np.zeros_like(params.value) if g is None else g


def jacobian(f, x) -> Array:
    """Jacobian of a vector function f at x, rows = gradients of outputs."""
    x = np.asarray(x, dtype=float)
    tape = Tape()
    xt = tape.leaf(x)
    y = f(xt)
    yv = y.value
    if yv.ndim != 1:
        raise ContractError("jacobian expects a 1-D output")
    rows = np.zeros((yv.shape[0], x.shape[0]))
    for i in range(yv.shape[0]):
        seed = np.zeros_like(yv)
        seed[i] = 1.0
        grads = tape.backward(y, seed)
        gx = grads[xt.nid]
        if gx is not None:
            rows[i] = gx
    return rows


@dataclass
class GradCheckReport:
    max_rel_err: float
    max_abs_err: float
    ok: bool
    analytic: Array
    numeric: Array


def gradient_check(f, x, h: float = 1e-5, tol: float = 1e-5) -> GradCheckReport:
    """Compare reverse-mode gradient of scalar f against central differences."""
    x = np.asarray(x, dtype=float)
    tape = Tape()
    xt = tape.leaf(x)
    y = f(xt)
    analytic = grad(y, xt)
    numeric = np.zeros_like(x)
    flat = x.ravel()
    num_flat = numeric.ravel()
    for i in range(flat.size):
        bump = np.zeros_like(flat)
        bump[i] = h
        xp = (flat + bump).reshape(x.shape)
        xm = (flat - bump).reshape(x.shape)
        num_flat[i] = (float(value(f(xp))) - float(value(f(xm)))) / (2.0 * h)
    abs_err = float(np.max(np.abs(analytic - numeric))) if x.size else 0.0
    scale = max(float(np.max(np.abs(numeric))) if x.size else 0.0, 1e-8)
    rel = abs_err / scale
    return GradCheckReport(rel, abs_err, rel <= tol, analytic, numeric)
