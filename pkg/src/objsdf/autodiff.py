"""Tape-based reverse-mode automatic differentiation over dense numpy arrays.

A :class:`Tape` records primitive operations (matmul, elementwise transcendental
functions, reductions, gather/scatter) as they execute on :class:`Variable`
handles.  A single reverse sweep over the recorded nodes produces exact
gradients with respect to every leaf created via :meth:`Tape.variable`.
Spatial derivatives of a network are obtained by composing forward-mode tangent
arithmetic out of these same primitives, so the one reverse pass differentiates
through them as well; the tape itself never runs more than one backward sweep.

Conventions:
  * nodes only reference earlier nodes (topological order by construction),
  * elementwise/reduction min and max resolve exact ties in favour of the
    lowest-index argument, so ``relu`` is ``maximum(x, 0)`` with the tie going
    to ``x``,
  * dtype is configured per tape; float64 is the default and is what the
    gradient-check tolerances assume.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    """A forward value stopped being finite; carries the offending node."""

    def __init__(self, node_id: int, op: str):
        super().__init__(f"non-finite value produced by node {node_id} (op '{op}')")
        self.node_id = node_id
        self.op = op


class _Node:
    __slots__ = ("op", "inputs", "value", "ctx", "requires_grad")

    def __init__(self, op, inputs, value, ctx, requires_grad):
        self.op = op
        self.inputs = inputs
        self.value = value
        self.ctx = ctx
        self.requires_grad = requires_grad


class Variable:
    """Handle to one node of a tape. Supports numpy-like operator syntax."""

    __slots__ = ("tape", "nid")

    def __init__(self, tape: "Tape", nid: int):
        self.tape = tape
        self.nid = nid

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.nid].value

    @property
    def shape(self):
        return self.value.shape

    @property
    def grad(self):
        return self.tape.grad_of(self)

    def __repr__(self):
        return f"Variable(nid={self.nid}, shape={self.shape})"

    def __array__(self, *args, **kwargs):
        # keep unsupported numpy functions a loud construction-time failure
        raise TypeError("Variable cannot be coerced to ndarray; use a supported tape primitive")

    def __add__(self, other):
        return self.tape.add(self, self.tape.lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self.tape.sub(self, self.tape.lift(other))

    def __rsub__(self, other):
        return self.tape.sub(self.tape.lift(other), self)

    def __mul__(self, other):
        return self.tape.mul(self, self.tape.lift(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self.tape.neg(self)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return self.tape.mul(self, self.tape.lift(1.0 / other))
        return self.tape.mul(self, self.tape.reciprocal(self.tape.lift(other)))

    def __rtruediv__(self, other):
        return self.tape.mul(self.tape.lift(other), self.tape.reciprocal(self))

    def __matmul__(self, other):
        return self.tape.matmul(self, self.tape.lift(other))

    def __pow__(self, k):
        if k != int(k) or k < 1:
            raise ValueError("only positive integer powers are supported")
        out = self
        for _ in range(int(k) - 1):
            out = self.tape.mul(out, self)
        return out


def _sigmoid_np(x):
    # tanh form is stable at both tails and uses SIMD tanh
    return 0.5 * np.tanh(0.5 * x) + 0.5


def _softplus_np(x, sharpness):
    sx = sharpness * x
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(sx))) / sharpness


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tape:
    """Define-by-run record of primitive operations; rebuilt per batch.

    Args:
        dtype: array dtype for every node (constants are cast on entry).
        check_finite: verify every forward value; raises :class:`NonFiniteError`
            with the node id on the first non-finite entry.
    """

    def __init__(self, dtype=np.float64, check_finite: bool = False):
        self.dtype = np.dtype(dtype)
        self.check_finite = check_finite
        self.nodes: list[_Node] = []
        self._grads: list = []
        self._owned: list = []

    def __len__(self) -> int:
        return len(self.nodes)

    # ---- node construction -------------------------------------------------

    def _push(self, op, inputs, value, ctx=None, requires_grad=None) -> Variable:
        if requires_grad is None:
            requires_grad = any(self.nodes[i].requires_grad for i in inputs)
        if self.check_finite and not np.all(np.isfinite(value)):
            raise NonFiniteError(len(self.nodes), op)
        self.nodes.append(_Node(op, inputs, value, ctx, requires_grad))
        return Variable(self, len(self.nodes) - 1)

    def constant(self, array) -> Variable:
        value = np.asarray(array, dtype=self.dtype)
        return self._push("const", (), value, requires_grad=False)

    def variable(self, array) -> Variable:
        value = np.array(array, dtype=self.dtype)
        return self._push("leaf", (), value, requires_grad=True)

    def lift(self, x) -> Variable:
        if isinstance(x, Variable):
            if x.tape is not self:
                raise ValueError("variable belongs to a different tape")
            return x
        return self.constant(x)

    # ---- primitives ----------------------------------------------------------

    def add(self, a, b):
        return self._push("add", (a.nid, b.nid), a.value + b.value)

    def sub(self, a, b):
        return self._push("sub", (a.nid, b.nid), a.value - b.value)

    def mul(self, a, b):
        return self._push("mul", (a.nid, b.nid), a.value * b.value)

    def neg(self, a):
        return self._push("neg", (a.nid,), -a.value)

    def matmul(self, a, b):
        if b.value.ndim != 2 or a.value.ndim not in (2, 3):
            raise ValueError("matmul supports 2d@2d or 3d@2d only")
        return self._push("matmul", (a.nid, b.nid), a.value @ b.value)

    def sin(self, a):
        return self._push("sin", (a.nid,), np.sin(a.value))

    def cos(self, a):
        return self._push("cos", (a.nid,), np.cos(a.value))

    def exp(self, a):
        return self._push("exp", (a.nid,), np.exp(a.value))

    def log(self, a):
        return self._push("log", (a.nid,), np.log(a.value))

    def sqrt(self, a):
        return self._push("sqrt", (a.nid,), np.sqrt(a.value))

    def reciprocal(self, a):
        return self._push("reciprocal", (a.nid,), 1.0 / a.value)

    def absolute(self, a):
        return self._push("abs", (a.nid,), np.abs(a.value))

    def sigmoid(self, a):
        return self._push("sigmoid", (a.nid,), _sigmoid_np(a.value))

    def softplus(self, a, sharpness: float = 1.0):
        value = _softplus_np(a.value, sharpness)
        return self._push("softplus", (a.nid,), value, ctx=sharpness)

    def relu(self, a):
        return self._push("relu", (a.nid,), np.maximum(a.value, 0.0))

    def maximum(self, a, b):
        # ties give the full gradient to the first argument
        return self._push("maximum", (a.nid, b.nid), np.maximum(a.value, b.value))

    def minimum(self, a, b):
        return self._push("minimum", (a.nid, b.nid), np.minimum(a.value, b.value))

    def where(self, mask, a, b):
        mask = np.asarray(mask, dtype=bool)
        return self._push("where", (a.nid, b.nid), np.where(mask, a.value, b.value), ctx=mask)

    def min_reduce(self, a, axis: int):
        idx = np.argmin(a.value, axis=axis, keepdims=True)
        value = np.take_along_axis(a.value, idx, axis=axis).squeeze(axis)
        return self._push("min_reduce", (a.nid,), value, ctx=(axis, idx))

    def max_reduce(self, a, axis: int):
        idx = np.argmax(a.value, axis=axis, keepdims=True)
        value = np.take_along_axis(a.value, idx, axis=axis).squeeze(axis)
        return self._push("max_reduce", (a.nid,), value, ctx=(axis, idx))

    def sum(self, a, axis=None, keepdims: bool = False):
        value = np.sum(a.value, axis=axis, keepdims=keepdims)
        return self._push("sum", (a.nid,), value, ctx=(axis, keepdims, a.value.shape))

    def cumsum(self, a, axis: int):
        return self._push("cumsum", (a.nid,), np.cumsum(a.value, axis=axis), ctx=axis)

    def reshape(self, a, shape):
        return self._push("reshape", (a.nid,), a.value.reshape(shape), ctx=a.value.shape)

    def transpose(self, a, axes):
        return self._push("transpose", (a.nid,), np.transpose(a.value, axes), ctx=axes)

    def concat(self, parts: Sequence, axis: int):
        parts = [self.lift(p) for p in parts]
        value = np.concatenate([p.value for p in parts], axis=axis)
        sizes = [p.value.shape[axis] for p in parts]
        return self._push("concat", tuple(p.nid for p in parts), value, ctx=(axis, sizes))

    def narrow(self, a, axis: int, start: int, stop: int):
        slicer = [slice(None)] * a.value.ndim
        slicer[axis] = slice(start, stop)
        return self._push("narrow", (a.nid,), a.value[tuple(slicer)],
                          ctx=(axis, start, stop, a.value.shape))

    def gather(self, a, idx, axis: int = 0):
        idx = np.asarray(idx)
        return self._push("gather", (a.nid,), np.take(a.value, idx, axis=axis),
                          ctx=(axis, idx, a.value.shape))

    def take_along(self, a, idx, axis: int):
        idx = np.asarray(idx)
        return self._push("take_along", (a.nid,), np.take_along_axis(a.value, idx, axis=axis),
                          ctx=(axis, idx, a.value.shape))

    def scatter_rows(self, values, idx, n_rows: int, fill: float = 0.0):
        """Rows `idx` of an (n_rows, ...) array come from `values`; rest are `fill`."""
        idx = np.asarray(idx)
        out = np.full((n_rows,) + values.value.shape[1:], fill, dtype=self.dtype)
        out[idx] = values.value
        return self._push("scatter_rows", (values.nid,), out, ctx=(idx, fill))

    def stop_gradient(self, a):
        return self._push("stop_gradient", (a.nid,), a.value, requires_grad=False)

    # ---- reverse sweep -------------------------------------------------------

    def backward(self, out: Variable, seed=None) -> None:
        """One reverse pass from `out`, accumulating grads on every leaf."""
        if seed is None:
            if out.value.size != 1:
                raise ValueError("backward without a seed requires a scalar output")
            seed = np.ones_like(out.value)
        grads: list = [None] * len(self.nodes)
        self._owned = [False] * len(self.nodes)
        grads[out.nid] = np.asarray(seed, dtype=self.dtype)
        for nid in range(out.nid, -1, -1):
            g = grads[nid]
            node = self.nodes[nid]
            if g is None or not node.requires_grad or not node.inputs:
                continue
            self._BACKWARD[node.op](self, node, g, grads)
            grads[nid] = None  # free as we go; earlier nodes cannot feed this one
        # keep leaf grads only
        self._grads = [
            grads[i] if self.nodes[i].op == "leaf" else None for i in range(len(self.nodes))
        ]

    def grad_of(self, var: Variable):
        if not self._grads:
            raise RuntimeError("backward() has not been run")
        g = self._grads[var.nid]
        if g is None and self.nodes[var.nid].op == "leaf":
            return np.zeros_like(var.value)
        return g

    def _acc(self, grads, nid, g):
        if not self.nodes[nid].requires_grad:
            return
        g = _unbroadcast(np.asarray(g, dtype=self.dtype), self.nodes[nid].value.shape)
        if grads[nid] is None:
            # first contribution is borrowed; never mutate it in place since the
            # same array object may back another node's gradient or be a view
            grads[nid] = g
            self._owned[nid] = False
        elif self._owned[nid]:
            grads[nid] += g
        else:
            grads[nid] = grads[nid] + g
            self._owned[nid] = True

    # backward rules ------------------------------------------------------------

    def _bw_add(self, node, g, grads):
        self._acc(grads, node.inputs[0], g)
        self._acc(grads, node.inputs[1], g)

    def _bw_sub(self, node, g, grads):
        self._acc(grads, node.inputs[0], g)
        self._acc(grads, node.inputs[1], -g)

    def _bw_mul(self, node, g, grads):
        a, b = node.inputs
        self._acc(grads, a, g * self.nodes[b].value)
        self._acc(grads, b, g * self.nodes[a].value)

    def _bw_neg(self, node, g, grads):
        self._acc(grads, node.inputs[0], -g)

    def _bw_matmul(self, node, g, grads):
        a, b = node.inputs
        av, bv = self.nodes[a].value, self.nodes[b].value
        if self.nodes[a].requires_grad:
            self._acc(grads, a, g @ bv.T)
        if self.nodes[b].requires_grad:
            if av.ndim == 2:
                self._acc(grads, b, av.T @ g)
            else:  # (B,m,k) @ (k,n): fold batch into rows for one GEMM
                k = av.shape[-1]
                n = g.shape[-1]
                self._acc(grads, b, av.reshape(-1, k).T @ g.reshape(-1, n))

    def _bw_sin(self, node, g, grads):
        self._acc(grads, node.inputs[0], g * np.cos(self.nodes[node.inputs[0]].value))

    def _bw_cos(self, node, g, grads):
        self._acc(grads, node.inputs[0], -g * np.sin(self.nodes[node.inputs[0]].value))

    def _bw_exp(self, node, g, grads):
        self._acc(grads, node.inputs[0], g * node.value)

    def _bw_log(self, node, g, grads):
        self._acc(grads, node.inputs[0], g / self.nodes[node.inputs[0]].value)

    def _bw_sqrt(self, node, g, grads):
        self._acc(grads, node.inputs[0], g * (0.5 / node.value))

    def _bw_reciprocal(self, node, g, grads):
        self._acc(grads, node.inputs[0], -g * node.value * node.value)

    def _bw_abs(self, node, g, grads):
        self._acc(grads, node.inputs[0], g * np.sign(self.nodes[node.inputs[0]].value))

    def _bw_sigmoid(self, node, g, grads):
        self._acc(grads, node.inputs[0], g * node.value * (1.0 - node.value))

    def _bw_softplus(self, node, g, grads):
        x = self.nodes[node.inputs[0]].value
        self._acc(grads, node.inputs[0], g * _sigmoid_np(node.ctx * x))

    def _bw_relu(self, node, g, grads):
        x = self.nodes[node.inputs[0]].value
        self._acc(grads, node.inputs[0], g * (x >= 0.0))

    def _bw_maximum(self, node, g, grads):
        a, b = node.inputs
        mask = self.nodes[a].value >= self.nodes[b].value
        self._acc(grads, a, g * mask)
        self._acc(grads, b, g * np.logical_not(mask))

    def _bw_minimum(self, node, g, grads):
        a, b = node.inputs
        mask = self.nodes[a].value <= self.nodes[b].value
        self._acc(grads, a, g * mask)
        self._acc(grads, b, g * np.logical_not(mask))

    def _bw_where(self, node, g, grads):
        mask = node.ctx
        self._acc(grads, node.inputs[0], g * mask)
        self._acc(grads, node.inputs[1], g * np.logical_not(mask))

    def _bw_min_reduce(self, node, g, grads):
        axis, idx = node.ctx
        z = np.zeros_like(self.nodes[node.inputs[0]].value)
        np.put_along_axis(z, idx, np.expand_dims(g, axis), axis)
        self._acc(grads, node.inputs[0], z)

    _bw_max_reduce = _bw_min_reduce

    def _bw_sum(self, node, g, grads):
        axis, keepdims, in_shape = node.ctx
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        self._acc(grads, node.inputs[0], np.broadcast_to(g, in_shape))

    def _bw_cumsum(self, node, g, grads):
        axis = node.ctx
        rg = np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis)
        self._acc(grads, node.inputs[0], rg)

    def _bw_reshape(self, node, g, grads):
        self._acc(grads, node.inputs[0], g.reshape(node.ctx))

    def _bw_transpose(self, node, g, grads):
        self._acc(grads, node.inputs[0], np.transpose(g, np.argsort(node.ctx)))

    def _bw_concat(self, node, g, grads):
        axis, sizes = node.ctx
        start = 0
        for nid, size in zip(node.inputs, sizes):
            slicer = [slice(None)] * g.ndim
            slicer[axis] = slice(start, start + size)
            self._acc(grads, nid, g[tuple(slicer)])
            start += size

    def _bw_narrow(self, node, g, grads):
        axis, start, stop, in_shape = node.ctx
        z = np.zeros(in_shape, dtype=self.dtype)
        slicer = [slice(None)] * len(in_shape)
        slicer[axis] = slice(start, stop)
        z[tuple(slicer)] = g
        self._acc(grads, node.inputs[0], z)

    def _bw_gather(self, node, g, grads):
        axis, idx, in_shape = node.ctx
        z = np.zeros(in_shape, dtype=self.dtype)
        zm = np.moveaxis(z, axis, 0)
        np.add.at(zm, idx, np.moveaxis(g, axis, 0))
        self._acc(grads, node.inputs[0], z)

    def _bw_take_along(self, node, g, grads):
        axis, idx, in_shape = node.ctx
        z = np.zeros(in_shape, dtype=self.dtype)
        np.put_along_axis(z, idx, g, axis)  # indices are unique along axis in our uses
        self._acc(grads, node.inputs[0], z)

    def _bw_scatter_rows(self, node, g, grads):
        self._acc(grads, node.inputs[0], g[node.ctx[0]])

    _BACKWARD: dict[str, Callable] = {}

    # ---- verification helpers -------------------------------------------------

    def replay(self) -> bool:
        """Re-run every forward record; True iff all cached values reproduce bit-for-bit."""
        values = []
        for node in self.nodes:
            v = self._replay_node(node, values)
            if not np.array_equal(v, node.value):
                return False
            values.append(v)
        return True

    def _replay_node(self, node, values):
        ins = [values[i] for i in node.inputs]
        op = node.op
        if op in ("const", "leaf"):
            return node.value
        if op == "add":
            return ins[0] + ins[1]
        if op == "sub":
            return ins[0] - ins[1]
        if op == "mul":
            return ins[0] * ins[1]
        if op == "neg":
            return -ins[0]
        if op == "matmul":
            return ins[0] @ ins[1]
        if op == "sin":
            return np.sin(ins[0])
        if op == "cos":
            return np.cos(ins[0])
        if op == "exp":
            return np.exp(ins[0])
        if op == "log":
            return np.log(ins[0])
        if op == "sqrt":
            return np.sqrt(ins[0])
        if op == "reciprocal":
            return 1.0 / ins[0]
        if op == "abs":
            return np.abs(ins[0])
        if op == "sigmoid":
            return _sigmoid_np(ins[0])
        if op == "softplus":
            return _softplus_np(ins[0], node.ctx)
        if op == "relu":
            return np.maximum(ins[0], 0.0)
        if op == "maximum":
            return np.maximum(ins[0], ins[1])
        if op == "minimum":
            return np.minimum(ins[0], ins[1])
        if op == "where":
            return np.where(node.ctx, ins[0], ins[1])
        if op == "min_reduce":
            axis, idx = node.ctx
            return np.take_along_axis(ins[0], idx, axis=axis).squeeze(axis)
        if op == "max_reduce":
            axis, idx = node.ctx
            return np.take_along_axis(ins[0], idx, axis=axis).squeeze(axis)
        if op == "sum":
            axis, keepdims, _ = node.ctx
            return np.sum(ins[0], axis=axis, keepdims=keepdims)
        if op == "cumsum":
            return np.cumsum(ins[0], axis=node.ctx)
        if op == "reshape":
            return ins[0].reshape(node.value.shape)
        if op == "transpose":
            return np.transpose(ins[0], node.ctx)
        if op == "concat":
            return np.concatenate(ins, axis=node.ctx[0])
        if op == "narrow":
            axis, start, stop, _ = node.ctx
            slicer = [slice(None)] * ins[0].ndim
            slicer[axis] = slice(start, stop)
            return ins[0][tuple(slicer)]
        if op == "gather":
            axis, idx, _ = node.ctx
            return np.take(ins[0], idx, axis=axis)
        if op == "take_along":
            axis, idx, _ = node.ctx
            return np.take_along_axis(ins[0], idx, axis=axis)
        if op == "scatter_rows":
            idx, fill = node.ctx
            out = np.full(node.value.shape, fill, dtype=self.dtype)
            out[idx] = ins[0]
            return out
        if op == "stop_gradient":
            return ins[0]
        raise ValueError(f"unknown op '{op}'")


Tape._BACKWARD = {
    "add": Tape._bw_add,
    "sub": Tape._bw_sub,
    "mul": Tape._bw_mul,
    "neg": Tape._bw_neg,
    "matmul": Tape._bw_matmul,
    "sin": Tape._bw_sin,
    "cos": Tape._bw_cos,
    "exp": Tape._bw_exp,
    "log": Tape._bw_log,
    "sqrt": Tape._bw_sqrt,
    "reciprocal": Tape._bw_reciprocal,
    "abs": Tape._bw_abs,
    "sigmoid": Tape._bw_sigmoid,
    "softplus": Tape._bw_softplus,
    "relu": Tape._bw_relu,
    "maximum": Tape._bw_maximum,
    "minimum": Tape._bw_minimum,
    "where": Tape._bw_where,
    "min_reduce": Tape._bw_min_reduce,
    "max_reduce": Tape._bw_max_reduce,
    "sum": Tape._bw_sum,
    "cumsum": Tape._bw_cumsum,
    "reshape": Tape._bw_reshape,
    "transpose": Tape._bw_transpose,
    "concat": Tape._bw_concat,
    "narrow": Tape._bw_narrow,
    "gather": Tape._bw_gather,
    "take_along": Tape._bw_take_along,
    "scatter_rows": Tape._bw_scatter_rows,
}


# ---- generic functional wrappers (work on Variables and plain ndarrays) -------

def _is_var(x):
    return isinstance(x, Variable)


def sin(x):
    return x.tape.sin(x) if _is_var(x) else np.sin(x)


def cos(x):
    return x.tape.cos(x) if _is_var(x) else np.cos(x)


def exp(x):
    return x.tape.exp(x) if _is_var(x) else np.exp(x)


def log(x):
    return x.tape.log(x) if _is_var(x) else np.log(x)


def sqrt(x):
    return x.tape.sqrt(x) if _is_var(x) else np.sqrt(x)


def absolute(x):
    return x.tape.absolute(x) if _is_var(x) else np.abs(x)


def sigmoid(x):
    return x.tape.sigmoid(x) if _is_var(x) else _sigmoid_np(x)


def softplus(x, sharpness: float = 1.0):
    return x.tape.softplus(x, sharpness) if _is_var(x) else _softplus_np(x, sharpness)


def relu(x):
    return x.tape.relu(x) if _is_var(x) else np.maximum(x, 0.0)


def maximum(a, b):
    if _is_var(a):
        return a.tape.maximum(a, a.tape.lift(b))
    if _is_var(b):
        return b.tape.maximum(b.tape.lift(a), b)
    return np.maximum(a, b)


def minimum(a, b):
    if _is_var(a):
        return a.tape.minimum(a, a.tape.lift(b))
    if _is_var(b):
        return b.tape.minimum(b.tape.lift(a), b)
    return np.minimum(a, b)


def where(mask, a, b):
    if _is_var(a) or _is_var(b):
        tape = a.tape if _is_var(a) else b.tape
        return tape.where(mask, tape.lift(a), tape.lift(b))
    return np.where(mask, a, b)


def asum(x, axis=None, keepdims=False):
    return x.tape.sum(x, axis, keepdims) if _is_var(x) else np.sum(x, axis=axis, keepdims=keepdims)


def cumsum(x, axis):
    return x.tape.cumsum(x, axis) if _is_var(x) else np.cumsum(x, axis=axis)


def min_reduce(x, axis):
    if _is_var(x):
        return x.tape.min_reduce(x, axis)
    idx = np.argmin(x, axis=axis, keepdims=True)
    return np.take_along_axis(x, idx, axis=axis).squeeze(axis)


def reshape(x, shape):
    return x.tape.reshape(x, shape) if _is_var(x) else np.reshape(x, shape)


def value_of(x) -> np.ndarray:
    return x.value if _is_var(x) else np.asarray(x)


# ---- gradient evaluation, finite differences, and checking --------------------


def evaluate_with_gradient(f: Callable, x, dtype=np.float64):
    """Forward-evaluate a tape-composed scalar function and its exact gradient.

    `f` receives a :class:`Variable` of the same shape as `x` and must return a
    scalar Variable built from supported primitives (anything else fails when
    the expression is constructed). Every intermediate is checked for
    finiteness; violations raise :class:`NonFiniteError` with the node id.
    """
    tape = Tape(dtype=dtype, check_finite=True)
    xv = tape.variable(np.asarray(x, dtype=dtype))
    out = f(xv)
    if not isinstance(out, Variable):
        raise TypeError("function must return a tape Variable")
    tape.backward(out)
    return float(out.value.reshape(())), xv.grad


def finite_difference_gradient(f: Callable, x, h: float = 1e-4, dtype=np.float64):
    """Central-difference gradient, one coordinate at a time (testing oracle)."""
    if h <= 0:
        raise ValueError("step size must be positive")
    x = np.asarray(x, dtype=dtype)

    def forward(pt):
        tape = Tape(dtype=dtype)
        out = f(tape.variable(pt))
        v = float(out.value.reshape(())) if isinstance(out, Variable) else float(out)
        if not np.isfinite(v):
            raise ValueError(f"non-finite function value at {pt}")
        return v

    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xflat = x.reshape(-1)
    for i in range(x.size):
        step = np.zeros_like(xflat)
        step[i] = h
        flat[i] = (forward((xflat + step).reshape(x.shape))
                   - forward((xflat - step).reshape(x.shape))) / (2.0 * h)
    return grad


@dataclass
class GradientCheckReport:
    passed: bool
    max_rel_error: float
    worst_index: int
    analytic: np.ndarray
    numeric: np.ndarray

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"gradient check {status}: max rel error {self.max_rel_error:.3e} "
                f"at coordinate {self.worst_index} "
                f"(analytic {self.analytic.reshape(-1)[self.worst_index]:.9g}, "
                f"numeric {self.numeric.reshape(-1)[self.worst_index]:.9g})")


def gradient_check(f: Callable, x, tol: float = 1e-5, h: float = 1e-4) -> GradientCheckReport:
    """Compare reverse-mode and central-difference gradients coordinate-wise.

    The caller must keep `x` away from kinks of min/max/relu/abs; relative
    error uses a 1e-6 floor so near-zero coordinates compare absolutely.
    """
    _, analytic = evaluate_with_gradient(f, x)
    numeric = finite_difference_gradient(f, x, h=h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    rel = np.abs(analytic - numeric) / denom
    worst = int(np.argmax(rel))
    return GradientCheckReport(
        passed=bool(rel.reshape(-1)[worst] <= tol),
        max_rel_error=float(rel.reshape(-1)[worst]),
        worst_index=worst,
        analytic=analytic,
        numeric=numeric,
    )
