"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Every op checks shapes at its boundary. Elementwise binary ops accept two
tensors of identical shape, or a tensor paired with a scalar (a python number
or a 0-d tensor); nothing else is broadcast.

Usage::

    with Tape() as tape:
        loss = (w * w).sum()
    grads = tape.backward(loss)      # {w: dloss/dw}
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for an op."""


class TapeError(RuntimeError):
    """Misuse of a differentiation tape (e.g. a second backward pass)."""


_local = threading.local()


def _active_tape() -> "Tape | None":
    return getattr(_local, "tape", None)


class _Node:
    __slots__ = ("outs", "parents", "backward")

    def __init__(self, outs, parents, backward):
        self.outs = outs
        self.parents = parents
        self.backward = backward


class Tape:
    """Append-only record of differentiable ops, consumed by one backward pass."""

    def __init__(self) -> None:
        self.nodes: list[_Node] = []
        self.leaves: dict[int, Tensor] = {}
        self.consumed = False
        self._prev: Tape | None = None

    def __enter__(self) -> "Tape":
        self._prev = _active_tape()
        _local.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _local.tape = self._prev
        self._prev = None

    def record(self, outs: Sequence["Tensor"], parents: Sequence["Tensor"], backward: Callable) -> None:
        if self.consumed:
            raise TapeError("cannot record onto a consumed tape")
        for p in parents:
            if p.requires_grad and p._node is None:
                self.leaves.setdefault(id(p), p)
        node = _Node(tuple(outs), tuple(parents), backward)
        for o in outs:
            o._node = node
            o._tape = self
        self.nodes.append(node)

    def backward(self, loss: "Tensor") -> dict["Tensor", np.ndarray]:
        """Accumulate dloss/dleaf into ``leaf.grad`` and return the gradient map.

        Leaves that were recorded on the tape but not reached get exact zeros.
        """
        if self.consumed:
            raise TapeError("backward called twice on the same tape")
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise TapeError("loss was not produced on this tape")
        self.consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaf_grads: dict[int, np.ndarray] = {}
        for node in reversed(self.nodes):
            gs = [grads.pop(id(o), None) for o in node.outs]
            if all(g is None for g in gs):
                continue
            if len(node.outs) == 1:
                pgs = node.backward(gs[0])
            else:
                gs = [np.zeros_like(o.data) if g is None else g for o, g in zip(node.outs, gs)]
                pgs = node.backward(gs)
            for p, pg in zip(node.parents, pgs):
                if pg is None or not p.requires_grad:
                    continue
                if pg.shape != p.shape:
                    raise ShapeError(f"internal: gradient shape {pg.shape} != operand shape {p.shape}")
                store = leaf_grads if p._node is None else grads
                key = id(p)
                if key in store:
                    store[key] = store[key] + pg
                else:
                    store[key] = pg
        out: dict[Tensor, np.ndarray] = {}
        for key, leaf in self.leaves.items():
            g = leaf_grads.get(key)
            if g is None:
                g = np.zeros_like(leaf.data)
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
            out[leaf] = g
        # intermediates become constants; this also breaks tensor<->node cycles
        for node in self.nodes:
            for o in node.outs:
                o._node = None
                o.requires_grad = False
        self.nodes.clear()
        return out


@contextmanager
def no_grad():
    """Suspend recording: ops inside produce constant tensors."""
    prev = _active_tape()
    _local.tape = None
    try:
        yield
    finally:
        _local.tape = prev


def backward(loss: "Tensor", params: Iterable["Tensor"] | None = None):
    """Run the backward pass of the tape that produced ``loss``.

    With ``params`` given, returns their gradients as a list in the same order
    (exact zeros for parameters the loss does not depend on).
    """
    tape = loss._tape
    if tape is None:
        raise TapeError("loss is not attached to any tape")
    gmap = tape.backward(loss)
    if params is None:
        return gmap
    return [gmap.get(p, np.zeros_like(p.data)) for p in params]


class Tensor:
    """A numpy array with an optional link into the active tape."""

    __slots__ = ("data", "grad", "requires_grad", "_node", "_tape", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.array(data, dtype=dtype if dtype is not None else None, copy=True)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._node = None
        self._tape = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.grad = None
        t.requires_grad = False
        t._node = None
        t._tape = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    # operators
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return mul(power(self, -1.0), other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def make_op(out_data, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap ``out_data`` as the output of a differentiable op.

    ``backward(g)`` must return one gradient (or None) per parent.
    """
    out = Tensor._wrap(out_data)
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.record((out,), parents, backward)
    return out


def make_multi_op(out_datas: Sequence[np.ndarray], parents: Sequence[Tensor], backward: Callable) -> tuple[Tensor, ...]:
    """Like :func:`make_op` for ops with several outputs; ``backward`` gets a list of grads."""
    outs = tuple(Tensor._wrap(d) for d in out_datas)
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        for o in outs:
            o.requires_grad = True
        tape.record(outs, parents, backward)
    return outs


def _check_same(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _is_scalar(x) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer))


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    if _is_scalar(b):
        a = as_tensor(a)
        return make_op(a.data + b, (a,), lambda g: (g,))
    if _is_scalar(a):
        return add(b, a)
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return make_op(a.data + b.data, (a, b), lambda g: (g, g))
    if b.ndim == 0:
        return make_op(a.data + b.data, (a, b), lambda g: (g, np.asarray(g.sum(), dtype=g.dtype)))
    if a.ndim == 0:
        return add(b, a)
    _check_same("add", a, b)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_op(-a.data, (a,), lambda g: (-g,))


def sub(a, b) -> Tensor:
    if _is_scalar(b):
        return add(a, -b)
    return add(a, neg(b))


def mul(a, b) -> Tensor:
    if _is_scalar(b):
        a = as_tensor(a)
        return make_op(a.data * b, (a,), lambda g: (g * b,))
    if _is_scalar(a):
        return mul(b, a)
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if a.shape == b.shape:
        return make_op(ad * bd, (a, b), lambda g: (g * bd, g * ad))
    if b.ndim == 0:
        return make_op(ad * bd, (a, b), lambda g: (g * bd, np.asarray((g * ad).sum(), dtype=g.dtype)))
    if a.ndim == 0:
        return mul(b, a)
    _check_same("mul", a, b)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    if not _is_scalar(p):
        raise TypeError("power: exponent must be a python scalar")
    ad = a.data
    return make_op(ad**p, (a,), lambda g: (g * p * ad ** (p - 1),))


def div(a, b) -> Tensor:
    if _is_scalar(b):
        return mul(a, 1.0 / b)
    return mul(a, power(b, -1.0))


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return make_op(y, (a,), lambda g: (g * y,))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return make_op(np.log(ad), (a,), lambda g: (g / ad,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return make_op(y, (a,), lambda g: (g * (1.0 - y * y),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = _sigmoid(a.data)
    return make_op(y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return make_op(np.where(mask, a.data, 0.0).astype(a.dtype, copy=False), (a,), lambda g: (g * mask,))


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only where the input is strictly inside."""
    a = as_tensor(a)
    inside = (a.data > lo) & (a.data < hi)
    return make_op(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def minimum(a, b) -> Tensor:
    """Elementwise minimum; on ties the gradient goes to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    _check_same("minimum", a, b)
    pick_a = a.data <= b.data
    return make_op(np.where(pick_a, a.data, b.data), (a, b), lambda g: (g * pick_a, g * ~pick_a))


def where(mask, a, b) -> Tensor:
    """Select ``a`` where ``mask`` else ``b``; values are copied, not blended."""
    a, b = as_tensor(a), as_tensor(b)
    _check_same("where", a, b)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise ShapeError(f"where: mask shape {mask.shape} vs operand {a.shape}")
    zero = np.zeros((), dtype=a.dtype)
    return make_op(np.where(mask, a.data, b.data), (a, b), lambda g: (np.where(mask, g, zero), np.where(mask, zero, g)))


def stop_gradient(a) -> Tensor:
    return Tensor._wrap(as_tensor(a).data)


# ---------------------------------------------------------------- reductions


def _normalize_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _normalize_axis(axis, a.ndim)
    y = np.sum(a.data, axis=axes, keepdims=keepdims)
    shape = a.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return make_op(np.asarray(y, dtype=a.dtype), (a,), bw)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _normalize_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return mul(tsum(a, axis, keepdims), 1.0 / count)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """2-D matrix product."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    return make_op(ad @ bd, (a, b), lambda g: (g @ bd.T if a.requires_grad else None, ad.T @ g if b.requires_grad else None))


def bmm(a, b) -> Tensor:
    """Batched product of [B, m, k] and [B, k, n]."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(f"bmm: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = np.matmul(g, bd.transpose(0, 2, 1)) if a.requires_grad else None
        gb = np.matmul(ad.transpose(0, 2, 1), g) if b.requires_grad else None
        return ga, gb

    return make_op(np.matmul(ad, bd), (a, b), bw)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight.T + bias`` for x of shape [..., in], weight [out, in], bias [out]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    x2 = xd.reshape(-1, xd.shape[-1])
    y = x2 @ wd.T
    if bias is not None:
        y += bias.data
    out_shape = xd.shape[:-1] + (wd.shape[0],)

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ wd).reshape(xd.shape) if x.requires_grad else None
        gw = g2.T @ x2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_op(y.reshape(out_shape), parents, bw)


def einsum(spec: str, a, b) -> Tensor:
    """Two-operand einsum.

    Every index of each operand must also appear in the other operand or in the
    output, so that gradients are einsums of the same form.
    """
    a, b = as_tensor(a), as_tensor(b)
    ins, out = spec.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    if len(sa) != a.ndim or len(sb) != b.ndim:
        raise ShapeError(f"einsum {spec}: operand ranks {a.shape}, {b.shape}")
    for s, other in ((sa, sb), (sb, sa)):
        for ch in s:
            if ch not in other and ch not in out:
                raise ValueError(f"einsum {spec}: index {ch!r} is summed within one operand")
    try:
        y = np.einsum(spec, a.data, b.data, optimize=True)
    except ValueError as e:
        raise ShapeError(f"einsum {spec}: {a.shape}, {b.shape}: {e}") from None
    ad, bd = a.data, b.data

    def bw(g):
        ga = np.einsum(f"{out},{sb}->{sa}", g, bd, optimize=True) if a.requires_grad else None
        gb = np.einsum(f"{out},{sa}->{sb}", g, ad, optimize=True) if b.requires_grad else None
        return ga, gb

    return make_op(np.asarray(y), (a, b), bw)


# ---------------------------------------------------------------- shape ops


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    orig = a.shape
    try:
        y = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {orig} into {tuple(shape)}") from None
    return make_op(y, (a,), lambda g: (g.reshape(orig),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return make_op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def swap_last(a) -> Tensor:
    a = as_tensor(a)
    axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    return transpose(a, axes)


def _has_advanced(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    y = a.data[idx]
    advanced = _has_advanced(idx)
    shape, dtype = a.shape, a.dtype

    def bw(g):
        ga = np.zeros(shape, dtype=dtype)
        if advanced:
            np.add.at(ga, idx, g)
        else:
            ga[idx] = g
        return (ga,)

    return make_op(np.array(y, copy=True) if not advanced else y, (a,), bw)


def index_put(base, idx, values) -> Tensor:
    """Copy of ``base`` with ``base[idx] = values``; idx positions must be unique."""
    base, values = as_tensor(base), as_tensor(values)
    out = base.data.copy()
    try:
        out[idx] = values.data
    except ValueError as e:
        raise ShapeError(f"index_put: {values.shape} into {base.shape}: {e}") from None
    vshape = values.shape

    def bw(g):
        gb = g.copy()
        gv = g[idx].reshape(vshape) if values.requires_grad else None
        gb[idx] = 0
        return gb, gv

    return make_op(out, (base, values), bw)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    nd = ts[0].ndim
    ax = axis % nd
    for t in ts[1:]:
        if t.ndim != nd or any(t.shape[i] != ts[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]} along axis {axis}")
    y = np.concatenate([t.data for t in ts], axis=ax)
    splits = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=ax))

    return make_op(y, ts, bw)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    for t in ts[1:]:
        if t.shape != ts[0].shape:
            raise ShapeError(f"stack: shapes differ {[t.shape for t in ts]}")
    y = np.stack([t.data for t in ts], axis=axis)
    ax = axis % y.ndim

    def bw(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(ts)))

    return make_op(y, ts, bw)


def unstack(a, axis: int = 0) -> tuple[Tensor, ...]:
    """Split along ``axis`` into a tuple of tensors, one tape node for all of them."""
    a = as_tensor(a)
    ax = axis % a.ndim
    parts = [np.ascontiguousarray(np.take(a.data, i, axis=ax)) for i in range(a.shape[ax])]
    return make_multi_op(parts, (a,), lambda gs: (np.stack(gs, axis=ax),))


# ---------------------------------------------------------------- softmax family


def _softmax_np(x: np.ndarray, axis: int) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if a.shape[axis] < 1:
        raise ShapeError("softmax over an empty axis")
    y = _softmax_np(a.data, axis)

    def bw(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return make_op(y, (a,), bw)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - np.max(a.data, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(z), axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def bw(g):
        return (g - p * np.sum(g, axis=axis, keepdims=True),)

    return make_op(y, (a,), bw)


def all_finite(*arrays) -> bool:
    return all(np.all(np.isfinite(a.data if isinstance(a, Tensor) else a)) for a in arrays)


# ---------------------------------------------------------------- gradient checking


def numeric_gradient(
    fn: Callable[[], float], param: np.ndarray, eps: float = 1e-5, coords: np.ndarray | None = None
) -> np.ndarray:
    """Central finite differences of scalar ``fn()`` w.r.t. ``param`` (mutated in place, restored).

    With ``coords`` (flat indices) only those entries are differenced; the rest stay zero.
    """
    grad = np.zeros_like(param, dtype=np.float64)
    flat = param.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size) if coords is None else coords:
        orig = flat[i]
        flat[i] = orig + eps
        fp = fn()
        flat[i] = orig - eps
        fm = fn()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def gradcheck(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    sample: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max over params of ``|analytic - numeric|_inf / (|numeric|_inf + 1e-8)``.

    ``sample`` limits each parameter to that many randomly chosen entries, which keeps
    checks of large composed losses affordable.
    """
    with Tape() as tape:
        loss = loss_fn()
    grads = tape.backward(loss)
    rng = rng if rng is not None else np.random.default_rng(0)
    worst = 0.0

    def scalar():
        with no_grad():
            return float(loss_fn().data)

    for p in params:
        analytic = np.asarray(grads.get(p, np.zeros_like(p.data)), dtype=np.float64).reshape(-1)
        coords = None
        if sample is not None and p.data.size > sample:
            coords = rng.choice(p.data.size, size=sample, replace=False)
        numeric = numeric_gradient(scalar, p.data, eps, coords).reshape(-1)
        if coords is not None:
            analytic, numeric = analytic[coords], numeric[coords]
        err = np.max(np.abs(analytic - numeric)) / (np.max(np.abs(numeric)) + 1e-8)
        worst = max(worst, float(err))
    return worst
