"""Reverse-mode automatic differentiation over dense float64 tensors.

Every operation records a node on an implicit tape (creation-ordered DAG).
Backward passes are themselves expressed through the same primitives, so a
gradient computed with ``create_graph=True`` is again differentiable; this
is the mechanism used for second spatial/temporal derivatives and for
parameter gradients of losses that already contain derivatives.

Design constraints:

- all arithmetic is float64; no mixed precision anywhere,
- broadcasting is limited to (a) identical shapes, (b) a lower-rank operand
  whose shape is a suffix of the other (leading batch broadcast), and
  (c) same-rank operands with size-1 axes (the keepdims pattern needed by
  reduction adjoints),
- gradient accumulation follows reverse creation order, so identical inputs
  give bit-identical gradients across runs.
"""

from __future__ import annotations

import itertools
import weakref
from contextlib import contextmanager

import numpy as np

__all__ = [
    "Tensor",
    "no_grad",
    "is_recording",
    "grad",
    "jacobian_rows",
    "sin",
    "cos",
    "exp",
    "softmax",
    "concat",
    "matmul",
    "pow_const",
    "square",
    "transpose",
    "reshape",
    "broadcast_to",
]

_ids = itertools.count()
_recording = [True]


def is_recording():
    """True when new operations are being recorded on the tape."""
    return _recording[-1]


@contextmanager
def no_grad():
    """Disable tape recording inside the block (pure numeric evaluation)."""
    _recording.append(False)
    try:
        yield
    finally:
        _recording.pop()


@contextmanager
def _recording_state(flag):
    _recording.append(flag)
    try:
        yield
    finally:
        _recording.pop()


class Tensor:
    """A float64 array that doubles as a node of the computation graph.

    Leaf tensors are created directly (optionally with ``requires_grad``);
    non-leaf tensors are produced by primitives and carry their operation
    name, parent references and a backward rule. A tensor produced during a
    ``create_graph`` backward pass is an ordinary node and supports further
    differentiation.
    """

    __slots__ = ("data", "requires_grad", "op", "_parents", "_backward",
                 "_id", "_sin", "_cos", "__weakref__")

    # keep numpy scalars from absorbing us in mixed expressions like
    # np.pi * tensor; numpy then defers to our reflected operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._parents = ()
        self._backward = None
        self._id = next(_ids)
        self._sin = None
        self._cos = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _from_op(data, op, parents, backward):
        t = Tensor.__new__(Tensor)
        t.data = data
        t.op = op
        t._id = next(_ids)
        t._sin = None
        t._cos = None
        if _recording[-1] and any(p.requires_grad for p in parents):
            t.requires_grad = True
            t._parents = parents
            t._backward = backward
        else:
            t.requires_grad = False
            t._parents = ()
            t._backward = None
        return t

    # -- basic introspection --------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def detach(self):
        """A view of the same values with no graph attached."""
        t = Tensor.__new__(Tensor)
        t.data = self.data
        t.requires_grad = False
        t.op = "leaf"
        t._parents = ()
        t._backward = None
        t._id = next(_ids)
        t._sin = None
        t._cos = None
        return t

    def __repr__(self):
        grad_tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{grad_tag})"

    # -- operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __pow__(self, exponent):
        return pow_const(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, ax1, ax2):
        return transpose(self, ax1, ax2)


def _wrap(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


# -- broadcasting -------------------------------------------------------------


def _broadcast_check(sa, sb, op):
    """Validate the restricted broadcast contract; return the result shape."""
    if sa == sb:
        return sa
    la, lb = len(sa), len(sb)
    if la != lb:
        # suffix (leading batch) broadcast: shorter shape must match the
        # trailing axes of the longer exactly
        long, short = (sa, sb) if la > lb else (sb, sa)
        n = len(short)
        if n == 0 or long[len(long) - n:] == short:
            return long
        raise ValueError(
            f"{op}: shapes {sa} and {sb} do not conform "
            "(lower-rank operand must match trailing axes)")
    out = []
    for da, db in zip(sa, sb):
        if da == db or db == 1:
            out.append(da)
        elif da == 1:
            out.append(db)
        else:
            raise ValueError(
                f"{op}: shapes {sa} and {sb} do not conform "
                "(same-rank axes must match or be 1)")
    return tuple(out)


def _unbroadcast(g, shape):
    """Reduce an adjoint of the broadcast result shape back to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = tsum(g, axis=tuple(range(extra)))
    if g.shape != shape:
        axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
        g = tsum(g, axis=axes, keepdims=True)
    return g


# -- elementwise primitives ---------------------------------------------------


def add(a, b):
    _broadcast_check(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape

    def backward(g, needed):
        ga = _unbroadcast(g, sa) if needed[0] else None
        gb = _unbroadcast(g, sb) if needed[1] else None
        return ga, gb

    return Tensor._from_op(a.data + b.data, "add", (a, b), backward)


def sub(a, b):
    _broadcast_check(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape

    def backward(g, needed):
        ga = _unbroadcast(g, sa) if needed[0] else None
        gb = _unbroadcast(neg(g), sb) if needed[1] else None
        return ga, gb

    return Tensor._from_op(a.data - b.data, "sub", (a, b), backward)


def mul(a, b):
    _broadcast_check(a.shape, b.shape, "mul")
    sa, sb = a.shape, b.shape

    def backward(g, needed):
        ga = _unbroadcast(mul(g, b), sa) if needed[0] else None
        gb = _unbroadcast(mul(g, a), sb) if needed[1] else None
        return ga, gb

    return Tensor._from_op(a.data * b.data, "mul", (a, b), backward)


def div(a, b):
    _broadcast_check(a.shape, b.shape, "div")
    if np.any(b.data == 0.0):
        raise ZeroDivisionError("div: divisor contains an exact zero")
    sa, sb = a.shape, b.shape
    out = Tensor._from_op(a.data / b.data, "div", (a, b), None)
    # weak self-reference: the closure must reuse the output node (second
    # derivatives flow through it) without pinning the graph in a cycle
    out_ref = weakref.ref(out)

    def backward(g, needed):
        o = out_ref()
        ga = _unbroadcast(div(g, b), sa) if needed[0] else None
        gb = _unbroadcast(neg(div(mul(g, o), b)), sb) if needed[1] else None
        return ga, gb

    out._backward = backward
    return out


def neg(a):
    def backward(g, needed):
        return (neg(g),)

    return Tensor._from_op(-a.data, "neg", (a,), backward)


def sin(a):
    if a._sin is not None:
        memo = a._sin()
        if memo is not None:
            return memo

    def backward(g, needed):
        return (mul(g, cos(a)),)

    out = Tensor._from_op(np.sin(a.data), "sin", (a,), backward)
    if out.requires_grad:
        # memoized so the backward rule of cos() can reuse this node instead
        # of recomputing a full-size sine; held weakly so the memo never
        # keeps a finished graph alive (input -> output would be a cycle)
        a._sin = weakref.ref(out)
    return out


def cos(a):
    if a._cos is not None:
        memo = a._cos()
        if memo is not None:
            return memo

    def backward(g, needed):
        return (neg(mul(g, sin(a))),)

    out = Tensor._from_op(np.cos(a.data), "cos", (a,), backward)
    if out.requires_grad:
        a._cos = weakref.ref(out)
    return out


def exp(a):
    out = Tensor._from_op(np.exp(a.data), "exp", (a,), None)
    out_ref = weakref.ref(out)

    def backward(g, needed):
        return (mul(g, out_ref()),)

    out._backward = backward
    return out


def pow_const(a, exponent):
    c = float(exponent)

    def backward(g, needed):
        return (mul(g, mul(Tensor(c), pow_const(a, c - 1.0))),)

    return Tensor._from_op(a.data ** c, "pow_const", (a,), backward)


def square(a):
    def backward(g, needed):
        return (mul(g, mul(Tensor(2.0), a)),)

    return Tensor._from_op(np.square(a.data), "square", (a,), backward)


# -- structural primitives ----------------------------------------------------


def matmul(a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul: operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner dimensions differ ({a.shape} @ {b.shape})")
    if a.ndim != b.ndim and min(a.ndim, b.ndim) != 2:
        raise ValueError("matmul: leading dims must match or one operand be 2-D")
    if a.ndim == b.ndim and a.shape[:-2] != b.shape[:-2]:
        raise ValueError(f"matmul: batch dimensions differ ({a.shape} @ {b.shape})")
    if a.ndim > 2 and b.ndim == 2:
        # collapse leading dims so BLAS sees one big gemm instead of a stack
        # of tiny ones; the 2-D adjoint then also contracts the batch in a
        # single product rather than materialising per-item outer products
        lead = a.shape[:-1]
        flat = matmul(reshape(a, (-1, a.shape[-1])), b)
        return reshape(flat, lead + (b.shape[-1],))
    sa, sb = a.shape, b.shape

    def backward(g, needed):
        ga = gb = None
        if needed[0]:
            ga = matmul(g, transpose(b, -1, -2))
            if len(sa) < ga.ndim:
                ga = tsum(ga, axis=tuple(range(ga.ndim - len(sa))))
        if needed[1]:
            gb = matmul(transpose(a, -1, -2), g)
            if len(sb) < gb.ndim:
                gb = tsum(gb, axis=tuple(range(gb.ndim - len(sb))))
        return ga, gb

    return Tensor._from_op(np.matmul(a.data, b.data), "matmul", (a, b), backward)


def transpose(a, ax1=-1, ax2=-2):
    def backward(g, needed):
        return (transpose(g, ax1, ax2),)

    return Tensor._from_op(np.swapaxes(a.data, ax1, ax2), "transpose", (a,), backward)


def reshape(a, shape):
    shape = tuple(int(s) for s in shape)
    old = a.shape

    def backward(g, needed):
        return (reshape(g, old),)

    return Tensor._from_op(np.reshape(a.data, shape), "reshape", (a,), backward)


def broadcast_to(a, shape):
    shape = tuple(int(s) for s in shape)
    _broadcast_check(shape, a.shape, "broadcast_to")
    old = a.shape

    def backward(g, needed):
        return (_unbroadcast(g, old),)

    # copy: downstream ops assume owned, writeable buffers
    return Tensor._from_op(
        np.broadcast_to(a.data, shape).copy(), "broadcast_to", (a,), backward)


def getitem(a, index):
    out_data = a.data[index]
    if isinstance(out_data, np.ndarray) and out_data.base is not None:
        out_data = out_data.copy()
    full_shape = a.shape

    def backward(g, needed):
        return (_unslice(g, index, full_shape),)

    return Tensor._from_op(np.asarray(out_data), "slice", (a,), backward)


def _unslice(g, index, full_shape):
    """Adjoint of slicing: embed ``g`` into zeros of the original shape."""
    data = np.zeros(full_shape)
    data[index] = g.data

    def backward(gg, needed):
        return (getitem(gg, index),)

    return Tensor._from_op(data, "unslice", (g,), backward)


def concat(tensors, axis=-1):
    tensors = [_wrap(t) for t in tensors]
    if not tensors:
        raise ValueError("concat: need at least one tensor")
    nd = tensors[0].ndim
    ax = axis if axis >= 0 else axis + nd
    for t in tensors[1:]:
        if t.ndim != nd:
            raise ValueError("concat: rank mismatch")
        if t.shape[:ax] + t.shape[ax + 1:] != tensors[0].shape[:ax] + tensors[0].shape[ax + 1:]:
            raise ValueError("concat: non-concatenated extents differ")
    sizes = [t.shape[ax] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g, needed):
        grads = []
        for i in range(len(tensors)):
            if needed[i]:
                sl = [slice(None)] * nd
                sl[ax] = slice(int(offsets[i]), int(offsets[i + 1]))
                grads.append(getitem(g, tuple(sl)))
            else:
                grads.append(None)
        return tuple(grads)

    data = np.concatenate([t.data for t in tensors], axis=ax)
    return Tensor._from_op(data, "concat", tuple(tensors), backward)


# -- reductions ---------------------------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    in_shape = a.shape
    kept = tuple(1 if i in axes else d for i, d in enumerate(in_shape))

    def backward(g, needed):
        gk = g if keepdims or a.ndim == 0 else reshape(g, kept)
        return (broadcast_to(gk, in_shape),)

    data = np.sum(a.data, axis=axes or None, keepdims=keepdims)
    return Tensor._from_op(np.asarray(data), "sum", (a,), backward)


def tmean(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    in_shape = a.shape
    kept = tuple(1 if i in axes else d for i, d in enumerate(in_shape))
    n = 1
    for i in axes:
        n *= in_shape[i]
    inv = 1.0 / n if n else 0.0

    def backward(g, needed):
        gk = g if keepdims or a.ndim == 0 else reshape(g, kept)
        return (mul(broadcast_to(gk, in_shape), Tensor(inv)),)

    data = np.mean(a.data, axis=axes or None, keepdims=keepdims)
    return Tensor._from_op(np.asarray(data), "mean", (a,), backward)


def softmax(a, axis=-1):
    """Numerically stable softmax along ``axis``; rows sum to one."""
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = Tensor._from_op(e / np.sum(e, axis=axis, keepdims=True), "softmax", (a,), None)
    out_ref = weakref.ref(out)

    def backward(g, needed):
        o = out_ref()
        gy = mul(g, o)
        return (sub(gy, mul(o, tsum(gy, axis=axis, keepdims=True))),)

    out._backward = backward
    return out


# -- backward driver ----------------------------------------------------------


def _collect_graph(output):
    """All recorded ancestors of ``output``, deduplicated."""
    nodes = {}
    stack = [output]
    while stack:
        n = stack.pop()
        if n._id in nodes:
            continue
        nodes[n._id] = n
        for p in n._parents:
            if p.requires_grad and p._id not in nodes:
                stack.append(p)
    return nodes


def grad(output, leaves, create_graph=False):
    """Gradients of a scalar ``output`` with respect to ``leaves``.

    Returns a dict mapping each requested leaf to its gradient tensor
    (zeros when the leaf does not reach the output). With ``create_graph``
    the returned gradients are graph nodes admitting further
    differentiation; without it they are plain tensors and the backward
    pass itself records nothing.
    """
    if output.size != 1:
        raise ValueError(
            f"grad: output must be scalar-shaped, got shape {output.shape}; "
            "reduce first")
    leaves = list(leaves)
    if not output.requires_grad:
        return {leaf: Tensor(np.zeros(leaf.shape)) for leaf in leaves}

    nodes = _collect_graph(output)
    order = sorted(nodes)  # ascending creation order

    # relevance: keep only nodes lying on a path from a requested leaf to the
    # output, so unrequested branches (e.g. parameters during a coordinate
    # derivative) cost nothing
    leaf_ids = {leaf._id for leaf in leaves}
    relevant = set()
    for nid in order:
        n = nodes[nid]
        if nid in leaf_ids or any(p._id in relevant for p in n._parents):
            relevant.add(nid)
    if output._id not in relevant:
        return {leaf: Tensor(np.zeros(leaf.shape)) for leaf in leaves}

    adjoint = {}
    with _recording_state(bool(create_graph)):
        adjoint[output._id] = Tensor(np.ones(output.shape))
        for nid in reversed(order):
            if nid not in adjoint or nid not in relevant:
                adjoint.pop(nid, None)
                continue
            n = nodes[nid]
            if not n._parents:
                continue
            g = adjoint.pop(nid) if nid not in leaf_ids else adjoint[nid]
            needed = tuple(p.requires_grad and p._id in relevant for p in n._parents)
            contribs = n._backward(g, needed)
            for p, c in zip(n._parents, contribs):
                if c is None:
                    continue
                prev = adjoint.get(p._id)
                # fixed accumulation order (reverse creation order of
                # consumers) keeps results bit-reproducible
                adjoint[p._id] = c if prev is None else add(prev, c)

        result = {}
        for leaf in leaves:
            g = adjoint.get(leaf._id)
            if g is None:
                g = Tensor(np.zeros(leaf.shape))
            elif g.shape != leaf.shape:
                g = reshape(g, leaf.shape)
            result[leaf] = g
    return result


def jacobian_rows(outputs, params, create_graph=False):
    """Per-output gradient maps for a flat collection of scalar outputs.

    Row ``r`` of the result is ``grad(outputs[r], params)``; ordering within
    each row follows the ``params`` sequence (registration order). An empty
    output collection yields an empty list.
    """
    if isinstance(outputs, Tensor):
        if outputs.ndim != 1:
            raise ValueError("jacobian_rows: tensor input must be 1-D")
        outputs = [outputs[i] for i in range(outputs.shape[0])]
    params = list(params)
    return [grad(o, params, create_graph=create_graph) for o in outputs]
