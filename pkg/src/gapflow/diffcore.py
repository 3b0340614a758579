"""Reverse-mode automatic differentiation over numpy arrays.

A Tape records primitive ops as they execute; backward() replays the records
in reverse, accumulating gradients into a GradientStore. Two features beyond a
plain tape support backprop-through-time training:

* stop_gradient(): identity forward, contributes exactly zero backward.
* mark_step_boundary(): marked nodes scale any gradient flowing through them
  by exp(-alpha*dt), implementing per-dynamics-step gradient decay. alpha=0
  reproduces plain BPTT.

Everything is float64. A Tensor is an immutable value plus an optional tape
handle; tensors without a node id are constants and receive no gradient. Ops
called on constants only (or with no active tape) compute eagerly and return
constants, which gives a tape-free inference path for free.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DiffcoreError, ShapeError

# Clamp for the arccos backward: keeps the alignment-loss gradient finite at
# exact alignment instead of blowing up at |x| = 1.
ARCCOS_EPS = 1e-7

# Below this rotation angle Rodrigues' coefficients switch to series form
# (the closed forms lose precision to cancellation well before underflow).
_SO3_SERIES_THRESHOLD = 1e-2


def _as_f64(data):
    arr = np.asarray(data, dtype=np.float64)
    return arr


class Tensor:
    """Immutable float64 array, optionally registered on a tape."""

    __slots__ = ("value", "tape", "nid")

    # keep numpy from hijacking ndarray <op> Tensor; our reflected ops run instead
    __array_ufunc__ = None

    def __init__(self, data, _tape=None, _nid=None, _validated=False):
        arr = _as_f64(data)
        if not _validated and not np.all(np.isfinite(arr)):
            raise DiffcoreError("tensor values must be finite (got NaN/Inf)")
        self.value = arr
        self.tape = _tape
        self.nid = _nid

    # -- construction ------------------------------------------------------

    @staticmethod
    def constant(data):
        """A tensor that participates in ops but never receives gradient."""
        return Tensor(data)

    @staticmethod
    def _wrap(arr, tape=None, nid=None):
        t = Tensor.__new__(Tensor)
        t.value = arr
        t.tape = tape
        t.nid = nid
        return t

    # -- introspection -----------------------------------------------------

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    def item(self):
        return float(self.value)

    def __repr__(self):
        where = "const" if self.nid is None else f"node {self.nid}"
        return f"Tensor(shape={self.shape}, {where})"

    # -- operator sugar ----------------------------------------------------

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, shape):
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)


class _Node:
    __slots__ = ("op", "parents", "backward", "value")

    def __init__(self, op, parents, backward, value):
        self.op = op
        self.parents = parents
        self.backward = backward
        self.value = value


class Tape:
    """Append-only record of primitive ops, replayed in reverse by backward()."""

    def __init__(self):
        self._nodes = []
        self._decay = {}

    def __len__(self):
        return len(self._nodes)

    def leaf(self, data):
        """Register an input tensor (e.g. a parameter) that wants a gradient."""
        arr = _as_f64(data)
        if not np.all(np.isfinite(arr)):
            raise DiffcoreError("leaf values must be finite")
        nid = len(self._nodes)
        self._nodes.append(_Node("leaf", (), None, arr))
        return Tensor._wrap(arr, self, nid)

    def record(self, op, value, parents, backward):
        """Append one primitive-op record and return its output tensor.

        parents is a sequence of Tensors; constants appear as None slots in the
        stored parent-id tuple and are skipped during accumulation.
        """
        pids = tuple(p.nid if (p is not None and p.tape is self) else None for p in parents)
        nid = len(self._nodes)
        self._nodes.append(_Node(op, pids, backward, value))
        return Tensor._wrap(value, self, nid)

    def node_value(self, nid):
        return self._nodes[nid].value

    def decay_scale(self, nid):
        return self._decay.get(nid)


class GradientStore:
    """Map from node-id to the accumulated gradient of the loss w.r.t. that node."""

    def __init__(self, grads):
        self._grads = grads

    def __len__(self):
        return len(self._grads)

    def __contains__(self, tensor):
        return tensor.nid in self._grads

    def get(self, tensor):
        """Gradient array for a tensor, or None if no gradient reached it."""
        if tensor.nid is None:
            return None
        return self._grads.get(tensor.nid)

    def grad(self, tensor):
        """Like get(), but absent entries come back as explicit zeros."""
        g = self.get(tensor)
        if g is None:
            return np.zeros(tensor.shape)
        return np.asarray(g)

    def by_id(self, nid):
        return self._grads.get(nid)

    def ids(self):
        return self._grads.keys()


def mark_step_boundary(tape, state_tensors, alpha, dt):
    """Mark state tensors crossing into the next simulated step.

    During backward every gradient flowing through a marked node is scaled by
    exp(-alpha*dt). Marking the same node twice is an error.
    """
    if alpha < 0.0:
        raise DiffcoreError(f"alpha must be >= 0, got {alpha}")
    if dt <= 0.0:
        raise DiffcoreError(f"dt must be > 0, got {dt}")
    scale = math.exp(-alpha * dt)
    for t in state_tensors:
        if t.tape is not tape or t.nid is None:
            raise DiffcoreError("can only mark tensors recorded on this tape")
        if t.nid in tape._decay:
            raise DiffcoreError(f"node {t.nid} already marked as a step boundary")
        tape._decay[t.nid] = scale


def backward(tape, loss):
    """Gradients of a scalar loss w.r.t. every non-constant node on the tape.

    Deterministic: the same tape always produces the identical store. Stop-
    gradient nodes contribute nothing; decay-marked nodes scale the gradient
    they pass to their parents (their own stored entry stays unscaled).
    """
    if loss.tape is not tape or loss.nid is None:
        raise DiffcoreError("loss tensor is not on this tape")
    if loss.value.size != 1:
        raise DiffcoreError(f"loss must be scalar, got shape {loss.shape}")
    nodes = tape._nodes
    decay = tape._decay
    grads = [None] * (loss.nid + 1)
    grads[loss.nid] = np.ones_like(loss.value)
    for nid in range(loss.nid, -1, -1):
        g = grads[nid]
        if g is None:
            continue
        node = nodes[nid]
        if node.backward is None:
            continue
        scale = decay.get(nid)
        gp = g if scale is None else g * scale
        parent_grads = node.backward(gp)
        for pid, pg in zip(node.parents, parent_grads):
            if pid is None or pg is None:
                continue
            if grads[pid] is None:
                grads[pid] = pg
            else:
                grads[pid] = grads[pid] + pg
    return GradientStore({i: g for i, g in enumerate(grads) if g is not None})


# ---------------------------------------------------------------------------
# op plumbing
# ---------------------------------------------------------------------------


def _lift(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _tape_of(*tensors):
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise DiffcoreError("operands live on different tapes")
    return tape


def _unbroadcast(g, shape):
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _elementwise_binary(op, a, b, fn, da, db):
    a, b = _lift(a), _lift(b)
    tape = _tape_of(a, b)
    try:
        value = fn(a.value, b.value)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None
    if tape is None:
        return Tensor._wrap(value)
    need_a = a.tape is tape
    need_b = b.tape is tape
    ash, bsh = a.shape, b.shape
    av, bv = a.value, b.value

    def bwd(g):
        ga = _unbroadcast(da(g, av, bv, value), ash) if need_a else None
        gb = _unbroadcast(db(g, av, bv, value), bsh) if need_b else None
        return ga, gb

    return tape.record(op, value, (a, b), bwd)


# ---------------------------------------------------------------------------
# arithmetic primitives
# ---------------------------------------------------------------------------


def add(a, b):
    return _elementwise_binary(
        "add", a, b, lambda x, y: x + y,
        lambda g, x, y, out: g,
        lambda g, x, y, out: g,
    )


def sub(a, b):
    return _elementwise_binary(
        "sub", a, b, lambda x, y: x - y,
        lambda g, x, y, out: g,
        lambda g, x, y, out: -g,
    )


def mul(a, b):
    return _elementwise_binary(
        "mul", a, b, lambda x, y: x * y,
        lambda g, x, y, out: g * y,
        lambda g, x, y, out: g * x,
    )


def div(a, b):
    return _elementwise_binary(
        "div", a, b, lambda x, y: x / y,
        lambda g, x, y, out: g / y,
        lambda g, x, y, out: -g * x / (y * y),
    )


def matmul(a, b):
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    tape = _tape_of(a, b)
    try:
        value = a.value @ b.value
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None
    if tape is None:
        return Tensor._wrap(value)
    need_a, need_b = a.tape is tape, b.tape is tape
    av, bv, ash, bsh = a.value, b.value, a.shape, b.shape

    def bwd(g):
        ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), ash) if need_a else None
        gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, bsh) if need_b else None
        return ga, gb

    return tape.record("matmul", value, (a, b), bwd)


def matvec(a, v):
    """(..., m, k) @ (..., k) -> (..., m)."""
    a, v = _lift(a), _lift(v)
    if a.ndim < 2 or v.ndim < 1 or a.shape[-1] != v.shape[-1]:
        raise ShapeError("matvec", a.shape, v.shape)
    tape = _tape_of(a, v)
    value = (a.value @ v.value[..., None])[..., 0]
    if tape is None:
        return Tensor._wrap(value)
    need_a, need_v = a.tape is tape, v.tape is tape
    av, vv, ash, vsh = a.value, v.value, a.shape, v.shape

    def bwd(g):
        ga = _unbroadcast(g[..., :, None] * vv[..., None, :], ash) if need_a else None
        gv = _unbroadcast((np.swapaxes(av, -1, -2) @ g[..., None])[..., 0], vsh) if need_v else None
        return ga, gv

    return tape.record("matvec", value, (a, v), bwd)


def transpose_last(x):
    """Swap the last two axes."""
    x = _lift(x)
    if x.ndim < 2:
        raise ShapeError("transpose", x.shape, None)
    value = np.swapaxes(x.value, -1, -2)
    if x.tape is None:
        return Tensor._wrap(value)

    def bwd(g):
        return (np.swapaxes(g, -1, -2),)

    return x.tape.record("transpose", value, (x,), bwd)


def reshape(x, shape):
    x = _lift(x)
    try:
        value = x.value.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", x.shape, shape if isinstance(shape, tuple) else tuple(np.atleast_1d(shape))) from None
    if x.tape is None:
        return Tensor._wrap(value)
    orig = x.shape

    def bwd(g):
        return (g.reshape(orig),)

    return x.tape.record("reshape", value, (x,), bwd)


def concat(tensors, axis=0):
    tensors = [_lift(t) for t in tensors]
    if not tensors:
        raise DiffcoreError("concat needs at least one tensor")
    tape = _tape_of(*tensors)
    try:
        value = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", tensors[0].shape, tensors[-1].shape) from None
    if tape is None:
        return Tensor._wrap(value)
    sizes = [t.shape[axis] for t in tensors]
    needs = [t.tape is tape for t in tensors]

    def bwd(g):
        pieces = np.split(g, np.cumsum(sizes)[:-1], axis=axis)
        return tuple(p if need else None for p, need in zip(pieces, needs))

    return tape.record("concat", value, tuple(tensors), bwd)


def take(x, key):
    """Basic slicing (ints, slices, Ellipsis). Backward scatters into zeros."""
    x = _lift(x)
    value = x.value[key]
    if x.tape is None:
        return Tensor._wrap(value)
    xsh = x.shape

    def bwd(g):
        gx = np.zeros(xsh)
        gx[key] += g
        return (gx,)

    return x.tape.record("slice", value, (x,), bwd)


def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axs = axis if isinstance(axis, tuple) else (axis,)
        axs = tuple(a % len(shape) for a in axs)
        g = g.reshape(tuple(1 if i in axs else s for i, s in enumerate(shape)))
    return np.broadcast_to(g, shape)


def reduce_sum(x, axis=None, keepdims=False):
    x = _lift(x)
    value = x.value.sum(axis=axis, keepdims=keepdims)
    if x.tape is None:
        return Tensor._wrap(np.asarray(value))
    xsh = x.shape

    def bwd(g):
        return (_expand_reduced(np.asarray(g), xsh, axis, keepdims),)

    return x.tape.record("sum", np.asarray(value), (x,), bwd)


def reduce_mean(x, axis=None, keepdims=False):
    x = _lift(x)
    value = x.value.mean(axis=axis, keepdims=keepdims)
    if x.tape is None:
        return Tensor._wrap(np.asarray(value))
    xsh = x.shape
    count = x.size if axis is None else np.prod(
        [x.shape[a % x.ndim] for a in (axis if isinstance(axis, tuple) else (axis,))])

    def bwd(g):
        return (_expand_reduced(np.asarray(g) / count, xsh, axis, keepdims),)

    return x.tape.record("mean", np.asarray(value), (x,), bwd)


def powc(x, p):
    """Elementwise x**p for a python-scalar exponent."""
    x = _lift(x)
    p = float(p)
    value = x.value ** p
    if x.tape is None:
        return Tensor._wrap(value)
    xv = x.value

    def bwd(g):
        return (g * p * xv ** (p - 1.0),)

    return x.tape.record("pow", value, (x,), bwd)


def sqrt(x):
    x = _lift(x)
    value = np.sqrt(x.value)
    if x.tape is None:
        return Tensor._wrap(value)

    def bwd(g, out=value):
        return (g * 0.5 / out,)

    return x.tape.record("sqrt", value, (x,), bwd)


def exp(x):
    x = _lift(x)
    value = np.exp(x.value)
    if x.tape is None:
        return Tensor._wrap(value)

    def bwd(g, out=value):
        return (g * out,)

    return x.tape.record("exp", value, (x,), bwd)


def log(x):
    x = _lift(x)
    value = np.log(x.value)
    if x.tape is None:
        return Tensor._wrap(value)
    xv = x.value

    def bwd(g):
        return (g / xv,)

    return x.tape.record("log", value, (x,), bwd)


def tanh(x):
    x = _lift(x)
    value = np.tanh(x.value)
    if x.tape is None:
        return Tensor._wrap(value)

    def bwd(g, out=value):
        return (g * (1.0 - out * out),)

    return x.tape.record("tanh", value, (x,), bwd)


def sigmoid(x):
    x = _lift(x)
    xv = x.value
    value = np.where(xv >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(xv))),
                     np.exp(-np.abs(xv)) / (1.0 + np.exp(-np.abs(xv))))
    if x.tape is None:
        return Tensor._wrap(value)

    def bwd(g, out=value):
        return (g * out * (1.0 - out),)

    return x.tape.record("sigmoid", value, (x,), bwd)


def leaky_relu(x, negative_slope=0.01):
    x = _lift(x)
    xv = x.value
    value = np.where(xv >= 0.0, xv, negative_slope * xv)
    if x.tape is None:
        return Tensor._wrap(value)

    def bwd(g):
        return (g * np.where(xv > 0.0, 1.0, negative_slope),)

    return x.tape.record("leaky_relu", value, (x,), bwd)


def maximum_const(x, c):
    """Elementwise max(x, c) against a python-scalar constant."""
    x = _lift(x)
    c = float(c)
    value = np.maximum(x.value, c)
    if x.tape is None:
        return Tensor._wrap(value)
    xv = x.value

    def bwd(g):
        return (g * (xv > c),)

    return x.tape.record("max_const", value, (x,), bwd)


def absolute(x):
    x = _lift(x)
    value = np.abs(x.value)
    if x.tape is None:
        return Tensor._wrap(value)
    xv = x.value

    def bwd(g):
        return (g * np.sign(xv),)

    return x.tape.record("abs", value, (x,), bwd)


def norm(x, axis=None, keepdims=False):
    """L2 norm. Backward is x/norm with the 0/0 case defined as 0."""
    x = _lift(x)
    value = np.sqrt((x.value * x.value).sum(axis=axis, keepdims=keepdims))
    if x.tape is None:
        return Tensor._wrap(np.asarray(value))
    xsh, xv = x.shape, x.value

    def bwd(g):
        out_e = _expand_reduced(np.asarray(value), xsh, axis, keepdims)
        g_e = _expand_reduced(np.asarray(g), xsh, axis, keepdims)
        safe = np.where(out_e == 0.0, 1.0, out_e)
        return (np.where(out_e == 0.0, 0.0, g_e * xv / safe),)

    return x.tape.record("norm", np.asarray(value), (x,), bwd)


def arccos(x):
    """arccos with input clipped to [-1, 1]; backward clamps to +-(1 - 1e-7)."""
    x = _lift(x)
    value = np.arccos(np.clip(x.value, -1.0, 1.0))
    if x.tape is None:
        return Tensor._wrap(value)
    xv = x.value

    def bwd(g):
        xc = np.clip(xv, -1.0 + ARCCOS_EPS, 1.0 - ARCCOS_EPS)
        return (-g / np.sqrt(1.0 - xc * xc),)

    return x.tape.record("arccos", value, (x,), bwd)


def cross(a, b):
    """Cross product over the last axis (3-vectors)."""
    a, b = _lift(a), _lift(b)
    if a.shape[-1] != 3 or b.shape[-1] != 3:
        raise ShapeError("cross", a.shape, b.shape)
    tape = _tape_of(a, b)
    try:
        value = np.cross(a.value, b.value)
    except ValueError:
        raise ShapeError("cross", a.shape, b.shape) from None
    if tape is None:
        return Tensor._wrap(value)
    need_a, need_b = a.tape is tape, b.tape is tape
    av, bv, ash, bsh = a.value, b.value, a.shape, b.shape

    def bwd(g):
        ga = _unbroadcast(np.cross(bv, g), ash) if need_a else None
        gb = _unbroadcast(np.cross(g, av), bsh) if need_b else None
        return ga, gb

    return tape.record("cross", value, (a, b), bwd)


def stop_gradient(x):
    """Identity forward; exactly zero gradient to x and its ancestors."""
    x = _lift(x)
    if x.tape is None:
        return x

    def bwd(g):
        return (None,)

    return x.tape.record("stop_gradient", x.value, (x,), bwd)


# ---------------------------------------------------------------------------
# SO(3) exponential
# ---------------------------------------------------------------------------


def _skew(w):
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def _so3_coefficients(theta2):
    """Rodrigues A = sin(t)/t, B = (1-cos(t))/t^2, Jacobian C = (t-sin(t))/t^3."""
    theta = np.sqrt(theta2)
    small = theta < _SO3_SERIES_THRESHOLD
    ts = np.where(small, 1.0, theta)  # avoid 0/0 in the closed forms
    a = np.where(small, 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0, np.sin(ts) / ts)
    b = np.where(small, 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0,
                 (1.0 - np.cos(ts)) / (ts * ts))
    c = np.where(small, 1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0,
                 (ts - np.sin(ts)) / (ts * ts * ts))
    return a, b, c


def so3_exp_values(w):
    """Plain-numpy Rodrigues formula: (..., 3) rotation vector -> (..., 3, 3)."""
    w = _as_f64(w)
    theta2 = (w * w).sum(axis=-1)
    a, b, _ = _so3_coefficients(theta2)
    k = _skew(w)
    k2 = k @ k
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + a[..., None, None] * k + b[..., None, None] * k2


def so3_right_jacobian(w):
    w = _as_f64(w)
    theta2 = (w * w).sum(axis=-1)
    _, b, c = _so3_coefficients(theta2)
    k = _skew(w)
    k2 = k @ k
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye - b[..., None, None] * k + c[..., None, None] * k2


def exp_so3(w):
    """Matrix exponential of the skew matrix built from w: (..., 3) -> (..., 3, 3).

    Backward uses the right Jacobian: for G = dL/dR,
    dL/dw = J_r(w)^T vee(R^T G - G^T R).
    """
    w = _lift(w)
    if w.shape[-1] != 3:
        raise ShapeError("exp_so3", w.shape, (3,))
    value = so3_exp_values(w.value)
    if w.tape is None:
        return Tensor._wrap(value)
    wv = w.value

    def bwd(g):
        m = np.swapaxes(value, -1, -2) @ g
        v = np.stack([m[..., 2, 1] - m[..., 1, 2],
                      m[..., 0, 2] - m[..., 2, 0],
                      m[..., 1, 0] - m[..., 0, 1]], axis=-1)
        jr = so3_right_jacobian(wv)
        return ((np.swapaxes(jr, -1, -2) @ v[..., None])[..., 0],)

    return w.tape.record("exp_so3", value, (w,), bwd)


# ---------------------------------------------------------------------------
# network primitives
# ---------------------------------------------------------------------------


def linear(x, w, b=None):
    """x (B, n) @ w (m, n)^T + b (m,)."""
    x, w = _lift(x), _lift(w)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError("linear", x.shape, w.shape)
    b = _lift(b) if b is not None else None
    tape = _tape_of(x, w) if b is None else _tape_of(x, w, b)
    value = x.value @ w.value.T
    if b is not None:
        value = value + b.value
    if tape is None:
        return Tensor._wrap(value)
    need_x, need_w = x.tape is tape, w.tape is tape
    need_b = b is not None and b.tape is tape
    xv, wv = x.value, w.value

    def bwd(g):
        gx = g @ wv if need_x else None
        gw = g.T @ xv if need_w else None
        gb = g.sum(axis=0) if need_b else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return tape.record("linear", value, parents, bwd)


def _conv_out_size(n, k, s, p):
    return (n + 2 * p - k) // s + 1


def _im2col(xp, kh, kw, sh, sw, ho, wo):
    bsz, c, _, _ = xp.shape
    s0, s1, s2, s3 = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, (bsz, c, kh, kw, ho, wo), (s0, s1, s2, s3, s2 * sh, s3 * sw), writeable=False)
    # (C*kh*kw, B*ho*wo) with columns ordered batch-major
    return win.transpose(1, 2, 3, 0, 4, 5).reshape(c * kh * kw, bsz * ho * wo)


def conv2d(x, w, b, stride, padding):
    """NCHW convolution. x (B,C,H,W), w (O,C,kh,kw), b (O,) or None."""
    x, w = _lift(x), _lift(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError("conv2d", x.shape, w.shape)
    b = _lift(b) if b is not None else None
    tape = _tape_of(x, w) if b is None else _tape_of(x, w, b)
    bsz, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    ph, pw = (padding, padding) if isinstance(padding, int) else padding
    ho, wo = _conv_out_size(h, kh, sh, ph), _conv_out_size(wd, kw, sw, pw)
    if ho <= 0 or wo <= 0:
        raise ShapeError("conv2d", x.shape, w.shape)

    xp = np.pad(x.value, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.value
    cols = _im2col(xp, kh, kw, sh, sw, ho, wo)
    wm = w.value.reshape(cout, cin * kh * kw)
    out = (wm @ cols).reshape(cout, bsz, ho, wo).transpose(1, 0, 2, 3)
    if b is not None:
        out = out + b.value[None, :, None, None]
    if tape is None:
        return Tensor._wrap(out)
    need_x, need_w = x.tape is tape, w.tape is tape
    need_b = b is not None and b.tape is tape
    xv = x.value

    def bwd(g):
        gm = g.transpose(1, 0, 2, 3).reshape(cout, bsz * ho * wo)
        gw = gb = gx = None
        if need_w or need_x:
            xpad = np.pad(xv, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else xv
        if need_w:
            gw = (gm @ _im2col(xpad, kh, kw, sh, sw, ho, wo).T).reshape(cout, cin, kh, kw)
        if need_b:
            gb = g.sum(axis=(0, 2, 3))
        if need_x:
            cm = (wm.T @ gm).reshape(cin, kh, kw, bsz, ho, wo).transpose(3, 0, 1, 2, 4, 5)
            gxp = np.zeros_like(xpad)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += cm[:, :, i, j]
            gx = gxp[:, :, ph:ph + h, pw:pw + wd] if (ph or pw) else gxp
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return tape.record("conv2d", out, parents, bwd)


def bce_with_logits(z, y):
    """Mean binary cross-entropy between logits z and constant targets y.

    Numerically stable form max(z,0) - z*y + log(1+exp(-|z|)); backward is
    (sigmoid(z) - y) / N.
    """
    z, y = _lift(z), _lift(y)
    if z.shape != y.shape:
        raise ShapeError("bce_with_logits", z.shape, y.shape)
    zv, yv = z.value, y.value
    value = np.asarray((np.maximum(zv, 0.0) - zv * yv + np.log1p(np.exp(-np.abs(zv)))).mean())
    if z.tape is None:
        return Tensor._wrap(value)
    n = zv.size

    def bwd(g):
        s = np.where(zv >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(zv))),
                     np.exp(-np.abs(zv)) / (1.0 + np.exp(-np.abs(zv))))
        return (g * (s - yv) / n, None)

    return z.tape.record("bce_with_logits", value, (z, y), bwd)
