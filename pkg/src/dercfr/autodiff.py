"""Reverse-mode differentiation over dense 2-D float64 matrices.

A :class:`Tape` records every primitive applied to tensors that depend on a
watched :class:`Parameter`. Operations on constants are evaluated eagerly and
never recorded, so evaluation code can run the same forward functions with
``tape=None``.

    >>> p = Parameter(np.zeros((2, 2)))
    >>> tape = Tape()
    >>> loss = sum_(sigmoid(tape.watch(p)))
    >>> tape.gradients(loss, [p])[0]
    array([[0.25, 0.25],
           [0.25, 0.25]])
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import ContractViolation, NumericError

BackwardFn = Callable[[np.ndarray, tuple], tuple]


class Parameter:
    """A persistent trainable array; the optimizer mutates ``value`` in place."""

    __slots__ = ("value", "name")

    def __init__(self, value, name: str = ""):
        value = np.array(value, dtype=np.float64)
        if value.ndim != 2:
            raise ContractViolation(f"parameter {name!r} must be 2-D, got shape {value.shape}")
        self.value = value
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class Tensor:
    """A 2-D value, optionally tied to a node on a tape."""

    __slots__ = ("value", "tape", "node_id")
    # make numpy arrays defer to the reflected operators below
    __array_ufunc__ = None

    def __init__(self, value, tape: "Tape | None" = None, node_id: int | None = None):
        self.value = value
        self.tape = tape
        self.node_id = node_id

    @property
    def requires_grad(self) -> bool:
        return self.node_id is not None

    @property
    def shape(self):
        return self.value.shape

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ContractViolation(f"item() needs a 1x1 tensor, got {self.value.shape}")
        return float(self.value[0, 0])

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self):
        tag = f", node={self.node_id}" if self.node_id is not None else ""
        return f"Tensor(shape={self.value.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    @property
    def T(self):
        return transpose(self)


class _Node:
    __slots__ = ("parents", "backward", "name", "param")

    def __init__(self, parents, backward, name, param=None):
        self.parents = parents
        self.backward = backward
        self.name = name
        self.param = param


class Tape:
    """Ordered record of primitives; parents always precede their children."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._leaves: dict[int, Tensor] = {}

    def __len__(self):
        return len(self.nodes)

    def watch(self, param: Parameter) -> Tensor:
        """Leaf tensor for ``param``; repeated calls return the same leaf."""
        leaf = self._leaves.get(id(param))
        if leaf is None:
            self.nodes.append(_Node((), None, "leaf", param))
            leaf = Tensor(param.value, self, len(self.nodes) - 1)
            self._leaves[id(param)] = leaf
        return leaf

    def release(self):
        """Drop recorded nodes so their closures and buffers are freed now.

        Leaves and closures point back at the tape, so without this the
        arrays wait for the cyclic garbage collector.
        """
        self.nodes.clear()
        self._leaves.clear()

    def _record(self, value, parents, backward, name) -> Tensor:
        self.nodes.append(_Node(parents, backward, name))
        return Tensor(value, self, len(self.nodes) - 1)

    def gradients(self, loss: Tensor, params: Sequence[Parameter]) -> list[np.ndarray]:
        """Gradient of scalar ``loss`` with respect to each of ``params``.

        Only nodes lying on a path from a requested parameter to ``loss`` are
        visited. Parameters the loss does not depend on get zeros.
        """
        if loss.value.shape != (1, 1):
            raise ContractViolation(f"loss must be a 1x1 scalar, got shape {loss.value.shape}")
        out = [np.zeros_like(p.value) for p in params]
        if loss.node_id is None:
            return out
        if loss.tape is not self:
            raise ContractViolation("loss was recorded on a different tape")

        slot = {}
        for k, p in enumerate(params):
            leaf = self._leaves.get(id(p))
            if leaf is not None:
                slot[leaf.node_id] = k
        top = loss.node_id
        need = np.zeros(top + 1, dtype=bool)
        for i in range(top + 1):
            node = self.nodes[i]
            if node.param is not None:
                need[i] = i in slot
            else:
                need[i] = any(p is not None and need[p] for p in node.parents)
        if not need[top]:
            return out

        pending = {top: np.ones((1, 1))}
        for i in range(top, -1, -1):
            g = pending.pop(i, None)
            if g is None:
                continue
            node = self.nodes[i]
            if node.param is not None:
                out[slot[i]] = out[slot[i]] + g
                continue
            flags = tuple(p is not None and bool(need[p]) for p in node.parents)
            grads = node.backward(g, flags)
            for p, gp, f in zip(node.parents, grads, flags):
                if not f:
                    continue
                if p in pending:
                    pending[p] = pending[p] + gp
                else:
                    pending[p] = gp
        return out


# ---------------------------------------------------------------- helpers

def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise ContractViolation(f"tensors are 2-D, got {arr.ndim}-D input")
    return Tensor(arr)


def constant(x) -> Tensor:
    """Detached copy-free view of ``x`` that never receives gradient."""
    if isinstance(x, Tensor):
        return Tensor(x.value)
    return as_tensor(x)


def _check_finite(value, name):
    s = value.sum()
    if not np.isfinite(s) and not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite result in primitive '{name}'")


def _make(value, inputs: Sequence[Tensor], backward: BackwardFn, name: str) -> Tensor:
    _check_finite(value, name)
    tape = None
    for t in inputs:
        if t.node_id is not None:
            if tape is not None and t.tape is not tape:
                raise ContractViolation(f"'{name}' mixes tensors from different tapes")
            tape = t.tape
    if tape is None:
        return Tensor(value)
    parents = tuple(t.node_id for t in inputs)
    return tape._record(value, parents, backward, name)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    axes = tuple(ax for ax in range(2) if shape[ax] == 1 and g.shape[ax] != 1)
    return g.sum(axis=axes, keepdims=True).reshape(shape)


def _broadcast_shape(a, b, name):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractViolation(f"'{name}': incompatible shapes {a.shape} and {b.shape}") from None


# ------------------------------------------------------------- primitives

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape

    def back(g, need):
        return (_unbroadcast(g, sa) if need[0] else None,
                _unbroadcast(g, sb) if need[1] else None)

    return _make(a.value + b.value, (a, b), back, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape

    def back(g, need):
        return (_unbroadcast(g, sa) if need[0] else None,
                _unbroadcast(-g, sb) if need[1] else None)

    return _make(a.value - b.value, (a, b), back, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    av, bv = a.value, b.value

    def back(g, need):
        return (_unbroadcast(g * bv, av.shape) if need[0] else None,
                _unbroadcast(g * av, bv.shape) if need[1] else None)

    return _make(av * bv, (a, b), back, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    av, bv = a.value, b.value
    if np.any(bv == 0):
        raise NumericError("division by zero in primitive 'div'")
    out = av / bv

    def back(g, need):
        return (_unbroadcast(g / bv, av.shape) if need[0] else None,
                _unbroadcast(-g * out / bv, bv.shape) if need[1] else None)

    return _make(out, (a, b), back, "div")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ContractViolation(f"'matmul': shapes {a.shape} and {b.shape} do not align")
    av, bv = a.value, b.value

    def back(g, need):
        return (g @ bv.T if need[0] else None, av.T @ g if need[1] else None)

    return _make(av @ bv, (a, b), back, "matmul")


def transpose(a) -> Tensor:
    a = as_tensor(a)

    def back(g, need):
        return (g.T,)

    return _make(a.value.T, (a,), back, "transpose")


def square(a) -> Tensor:
    a = as_tensor(a)
    av = a.value

    def back(g, need):
        return (2.0 * av * g,)

    return _make(av * av, (a,), back, "square")


def abs_(a) -> Tensor:
    a = as_tensor(a)
    av = a.value

    def back(g, need):
        return (np.sign(av) * g,)

    return _make(np.abs(av), (a,), back, "abs")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.value)

    def back(g, need):
        return (g * out,)

    return _make(out, (a,), back, "exp")


def log(a, floor: float = 0.0) -> Tensor:
    """Natural log of ``max(a, floor)``; no gradient where the floor is active."""
    a = as_tensor(a)
    av = a.value
    if floor > 0:
        clipped = np.maximum(av, floor)
        live = av > floor
    else:
        if np.any(av <= 0):
            raise NumericError("non-positive argument in primitive 'log'")
        clipped, live = av, None

    def back(g, need):
        gx = g / clipped
        return (gx if live is None else np.where(live, gx, 0.0),)

    return _make(np.log(clipped), (a,), back, "log")


def softplus(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    out = np.logaddexp(0.0, av)

    def back(g, need):
        return (g * kernels.sigmoid_forward(av),)

    return _make(out, (a,), back, "softplus")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = kernels.sigmoid_forward(a.value)

    def back(g, need):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), back, "sigmoid")


def elu(a) -> Tensor:
    """ELU with unit scale: ``x`` for ``x > 0``, ``exp(x) - 1`` otherwise."""
    a = as_tensor(a)
    av = a.value
    out = kernels.elu_forward(av)

    def back(g, need):
        return (kernels.elu_backward(g, av, out),)

    return _make(out, (a,), back, "elu")


def relu0(a) -> Tensor:
    """``max(a, 0)``; used to clamp discrepancies against rounding."""
    a = as_tensor(a)
    av = a.value
    live = av > 0

    def back(g, need):
        return (np.where(live, g, 0.0),)

    return _make(np.where(live, av, 0.0), (a,), back, "relu0")


def sum_(a, axis: int | None = None) -> Tensor:
    """Sum of all entries (1x1) or along ``axis`` keeping two dimensions."""
    a = as_tensor(a)
    shape = a.shape
    if axis is None:
        out = np.array([[a.value.sum()]])
    else:
        out = a.value.sum(axis=axis, keepdims=True)

    def back(g, need):
        return (np.broadcast_to(g, shape).copy(),)

    return _make(out, (a,), back, "sum")


def mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    count = a.value.size if axis is None else a.shape[axis]
    if count == 0:
        raise ContractViolation("'mean' of an empty tensor")
    return mul(sum_(a, axis), 1.0 / count)


def concat_cols(parts: Sequence) -> Tensor:
    """Join per-row feature blocks side by side: (n, a) + (n, b) -> (n, a + b)."""
    parts = [as_tensor(p) for p in parts]
    n = parts[0].rows
    if any(p.rows != n for p in parts):
        raise ContractViolation("'concat_cols': row counts differ")
    bounds = np.cumsum([0] + [p.cols for p in parts])

    def back(g, need):
        return tuple(g[:, bounds[k]:bounds[k + 1]] if need[k] else None for k in range(len(parts)))

    return _make(np.concatenate([p.value for p in parts], axis=1), parts, back, "concat")


def take_rows(a, idx) -> Tensor:
    """Rows ``idx`` of ``a``; indices must be unique."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    shape = a.shape

    def back(g, need):
        full = np.zeros(shape)
        full[idx] = g
        return (full,)

    return _make(a.value[idx], (a,), back, "take_rows")


def l2_normalize_rows(a, eps: float = 1e-12) -> Tensor:
    """Scale every row to unit Euclidean norm."""
    a = as_tensor(a)
    av = a.value
    norm = np.sqrt(np.sum(av * av, axis=1, keepdims=True) + eps)
    out = av / norm

    def back(g, need):
        dot = np.sum(g * out, axis=1, keepdims=True)
        return ((g - out * dot) / norm,)

    return _make(out, (a,), back, "l2_normalize")


def batch_norm(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.99, eps: float = 1e-5) -> Tensor:
    """Per-feature standardization followed by a learned scale and shift.

    ``gamma``/``beta`` are (1, k). In training mode the full-batch statistics
    are used and the running arrays are updated in place with
    ``running = momentum * running + (1 - momentum) * batch``.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    k = x.cols
    if gamma.shape != (1, k) or beta.shape != (1, k):
        raise ContractViolation(f"'batch_norm': scale/shift must be (1, {k})")
    g1, b1 = gamma.value[0], beta.value[0]
    if training:
        if x.rows < 2:
            raise ContractViolation("'batch_norm' in training mode needs at least 2 rows")
        out, xhat, bmean, bvar, inv_std = kernels.batchnorm_forward(x.value, g1, b1, eps)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * bmean
        running_var *= momentum
        running_var += (1.0 - momentum) * bvar

        def back(g, need):
            gx, gg, gb = kernels.batchnorm_backward(g, xhat, inv_std, g1)
            return gx, gg[None, :], gb[None, :]
    else:
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.value - running_mean) * inv_std
        out = xhat * g1 + b1

        def back(g, need):
            return (g * (g1 * inv_std) if need[0] else None,
                    np.sum(g * xhat, axis=0, keepdims=True) if need[1] else None,
                    np.sum(g, axis=0, keepdims=True) if need[2] else None)

    return _make(out, (x, gamma, beta), back, "batch_norm")


def rbf_mmd(a, b, wa, wb, bandwidth: float) -> Tensor:
    """Weighted Gaussian-kernel double sum for normalized (n, 1) weights."""
    a, b, wa, wb = (as_tensor(v) for v in (a, b, wa, wb))
    if a.cols != b.cols:
        raise ContractViolation("'rbf_mmd': sample dimensions differ")
    value, ga, gb, gwa, gwb = kernels.rbf_mmd(a.value, b.value, wa.value[:, 0],
                                             wb.value[:, 0], bandwidth)

    def back(g, need):
        s = g[0, 0]
        return (ga * s, gb * s, gwa[:, None] * s, gwb[:, None] * s)

    return _make(np.array([[value]]), (a, b, wa, wb), back, "rbf_mmd")
