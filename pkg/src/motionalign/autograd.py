"""Minimal dense tensor engine with reverse-mode automatic differentiation.

Every differentiable operation is registered in ``OPS`` as an :class:`Op`
holding a forward and a backward rule over plain numpy arrays. Calling an op
on :class:`Tensor` inputs records the inputs on the output tensor, so the
computation graph is implicit in the tensors themselves. :func:`backward`
walks that graph in reverse topological order.

Tests run in float64; float32 is accepted for faster training runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractViolation, NotFoundError, NumericError

LOG_CLAMP = 1e-12
LAYER_NORM_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class Op:
    name: str
    forward: Callable
    backward: Callable


OPS: dict[str, Op] = {}


def register(name, forward, backward):
    OPS[name] = Op(name, forward, backward)


class Tensor:
    """An n-dimensional array that remembers how it was computed."""

    __slots__ = ("data", "requires_grad", "op", "inputs", "attrs", "ctx", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite values in leaf tensor {name or ''}".strip())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.op = None
        self.inputs = ()
        self.attrs = {}
        self.ctx = None
        self.name = name

    @classmethod
    def _from_op(cls, data, op, inputs, attrs, ctx):
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = any(x.requires_grad for x in inputs)
        t.op = op
        t.inputs = tuple(inputs)
        t.attrs = attrs
        t.ctx = ctx
        t.name = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_leaf(self):
        return self.op is None

    def numpy(self):
        return self.data

    def __repr__(self):
        tag = f"op={self.op.name}" if self.op else "leaf"
        return f"Tensor(shape={self.shape}, {tag}, requires_grad={self.requires_grad})"

    # operator sugar
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
        if isinstance(other, Tensor):
            raise ContractViolation("division is only supported by constants")
        return mul(self, 1.0 / np.asarray(other, dtype=self.data.dtype))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def apply(name: str, *inputs, **attrs) -> Tensor:
    try:
        op = OPS[name]
    except KeyError:
        raise NotFoundError(f"unregistered op: {name}") from None
    tensors = []
    dtype = None
    for x in inputs:
        if isinstance(x, Tensor):
            dtype = dtype or x.data.dtype
    for x in inputs:
        tensors.append(x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype or np.float64)))
    out, ctx = op.forward(*[t.data for t in tensors], **attrs)
    if np.isnan(out).any():
        raise NumericError(f"NaN produced by op '{name}'")
    return Tensor._from_op(out, op, tensors, attrs, ctx)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


# ----------------------------------------------------------------------------
# elementwise arithmetic

def _add_f(a, b):
    return a + b, None


def _add_b(g, ctx, a, b, out):
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _sub_f(a, b):
    return a - b, None


def _sub_b(g, ctx, a, b, out):
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def _mul_f(a, b):
    return a * b, None


def _mul_b(g, ctx, a, b, out):
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _matmul_f(a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise ContractViolation("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise ContractViolation(f"matmul shape mismatch {a.shape} @ {b.shape}")
    return a @ b, None


def _matmul_b(g, ctx, a, b, out):
    ga = g @ np.swapaxes(b, -1, -2)
    gb = np.swapaxes(a, -1, -2) @ g
    return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


register("add", _add_f, _add_b)
register("sub", _sub_f, _sub_b)
register("mul", _mul_f, _mul_b)
register("matmul", _matmul_f, _matmul_b)


# ----------------------------------------------------------------------------
# shape manipulation

def _transpose_f(a, axes=None):
    return np.transpose(a, axes), None


def _transpose_b(g, ctx, a, out, axes=None):
    if axes is None:
        return (np.transpose(g),)
    return (np.transpose(g, np.argsort(axes)),)


def _reshape_f(a, shape):
    return a.reshape(shape), None


def _reshape_b(g, ctx, a, out, shape):
    return (g.reshape(a.shape),)


def _concat_f(*arrays, axis=0):
    return np.concatenate(arrays, axis=axis), None


def _concat_b(g, ctx, *arrays_and_out, axis=0):
    arrays = arrays_and_out[:-1]
    bounds = np.cumsum([x.shape[axis] for x in arrays])[:-1]
    return tuple(np.split(g, bounds, axis=axis))


def _slice_f(a, index):
    return np.array(a[index], copy=True), None


def _slice_b(g, ctx, a, out, index):
    ga = np.zeros_like(a)
    ga[index] += g
    return (ga,)


def _diagonal_f(a):
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractViolation("diagonal expects a square matrix")
    return np.diagonal(a).copy(), None


def _diagonal_b(g, ctx, a, out):
    ga = np.zeros_like(a)
    np.fill_diagonal(ga, g)
    return (ga,)


register("transpose", _transpose_f, _transpose_b)
register("reshape", _reshape_f, _reshape_b)
register("concat", _concat_f, _concat_b)
register("slice", _slice_f, _slice_b)
register("diagonal", _diagonal_f, _diagonal_b)


# ----------------------------------------------------------------------------
# reductions

def _sum_f(a, axis=None, keepdims=False):
    return np.asarray(np.sum(a, axis=axis, keepdims=keepdims)), None


def _sum_b(g, ctx, a, out, axis=None, keepdims=False):
    if not keepdims:
        g = np.expand_dims(g, _norm_axes(axis, a.ndim))
    return (np.broadcast_to(g, a.shape).copy(),)


def _mean_f(a, axis=None, keepdims=False):
    return np.asarray(np.mean(a, axis=axis, keepdims=keepdims)), None


def _mean_b(g, ctx, a, out, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes]))
    if not keepdims:
        g = np.expand_dims(g, axes)
    return (np.broadcast_to(g / count, a.shape).copy(),)


register("sum", _sum_f, _sum_b)
register("mean", _mean_f, _mean_b)


# ----------------------------------------------------------------------------
# nonlinearities

def _softmax_f(a):
    z = a - a.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True), None


def _softmax_b(g, ctx, a, out):
    return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)


def _log_softmax_f(a, mask=None):
    # masked entries are excluded from the normalizer and come out as -inf
    if mask is not None:
        a = np.where(mask, -np.inf, a)
    m = a.max(axis=-1, keepdims=True)
    z = a - m
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    return out, np.exp(out)


def _log_softmax_b(g, ctx, a, out, mask=None):
    p = ctx
    if mask is not None:
        g = np.where(mask, 0.0, g)
    ga = g - p * g.sum(axis=-1, keepdims=True)
    if mask is not None:
        ga = np.where(mask, 0.0, ga)
    return (ga,)


def _layer_norm_f(x, gain, bias, eps=LAYER_NORM_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * rstd
    return xhat * gain + bias, (xhat, rstd)


def _layer_norm_b(g, ctx, x, gain, bias, out, eps=LAYER_NORM_EPS):
    xhat, rstd = ctx
    dxhat = g * gain
    dx = rstd * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)


def _gelu_f(x):
    t = np.tanh(_GELU_C * (x + 0.044715 * x**3))
    return 0.5 * x * (1.0 + t), t


def _gelu_b(g, t, x, out):
    dt = (1.0 - t**2) * _GELU_C * (1.0 + 3 * 0.044715 * x**2)
    return (g * (0.5 * (1.0 + t) + 0.5 * x * dt),)


def _sigmoid_f(x):
    return _stable_sigmoid(x), None


def _stable_sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _sigmoid_b(g, ctx, x, out):
    return (g * out * (1.0 - out),)


def _log_f(x):
    return np.log(np.maximum(x, LOG_CLAMP)), None


def _log_b(g, ctx, x, out):
    return (np.where(x > LOG_CLAMP, g / np.maximum(x, LOG_CLAMP), 0.0),)


def _exp_f(x):
    return np.exp(x), None


def _exp_b(g, ctx, x, out):
    return (g * out,)


def _sqrt_f(x):
    if (x < 0).any():
        raise NumericError("sqrt of negative value")
    return np.sqrt(x), None


def _sqrt_b(g, ctx, x, out):
    # subgradient 0 at the origin keeps zero distances differentiable
    safe = np.where(out > 0, out, 1.0)
    return (np.where(out > 0, g / (2.0 * safe), 0.0),)


def _l2_normalize_f(x, axis=-1):
    # rescale by the max magnitude so tiny inputs do not underflow
    scale = np.abs(x).max(axis=axis, keepdims=True)
    if (scale == 0).any():
        raise NumericError("l2_normalize of a zero vector")
    norm = scale * np.sqrt(((x / scale) ** 2).sum(axis=axis, keepdims=True))
    return x / norm, norm


def _l2_normalize_b(g, norm, x, out, axis=-1):
    return ((g - out * (g * out).sum(axis=axis, keepdims=True)) / norm,)


def _square_f(x):
    return x * x, None


def _square_b(g, ctx, x, out):
    return (2.0 * x * g,)


def _relu_f(x):
    return np.maximum(x, 0.0), None


def _relu_b(g, ctx, x, out):
    return (np.where(x > 0, g, 0.0),)


def _bce_logits_f(x, targets):
    loss = np.maximum(x, 0.0) - x * targets + np.log1p(np.exp(-np.abs(x)))
    return loss, None


def _bce_logits_b(g, ctx, x, out, targets):
    return (g * (_stable_sigmoid(x) - targets),)


register("softmax", _softmax_f, _softmax_b)
register("log_softmax", _log_softmax_f, _log_softmax_b)
register("layer_norm", _layer_norm_f, _layer_norm_b)
register("gelu", _gelu_f, _gelu_b)
register("sigmoid", _sigmoid_f, _sigmoid_b)
register("log", _log_f, _log_b)
register("exp", _exp_f, _exp_b)
register("sqrt", _sqrt_f, _sqrt_b)
register("l2_normalize", _l2_normalize_f, _l2_normalize_b)
register("square", _square_f, _square_b)
register("relu", _relu_f, _relu_b)
register("bce_with_logits", _bce_logits_f, _bce_logits_b)


# ----------------------------------------------------------------------------
# functional front end

def add(a, b):
    return apply("add", a, b)


def sub(a, b):
    return apply("sub", a, b)


def mul(a, b):
    return apply("mul", a, b)


def matmul(a, b):
    return apply("matmul", a, b)


def transpose(a, axes=None):
    return apply("transpose", a, axes=None if axes is None else tuple(axes))


def reshape(a, shape):
    return apply("reshape", a, shape=tuple(shape))


def concat(tensors: Sequence, axis=0):
    return apply("concat", *tensors, axis=axis)


def slice_(a, index):
    return apply("slice", a, index=index)


def diagonal(a):
    return apply("diagonal", a)


def sum_(a, axis=None, keepdims=False):
    return apply("sum", a, axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims=False):
    return apply("mean", a, axis=axis, keepdims=keepdims)


def softmax(a):
    return apply("softmax", a)


def log_softmax(a, mask=None):
    return apply("log_softmax", a, mask=mask)


def layer_norm(x, gain, bias, eps=LAYER_NORM_EPS):
    return apply("layer_norm", x, gain, bias, eps=eps)


def gelu(x):
    return apply("gelu", x)


def sigmoid(x):
    return apply("sigmoid", x)


def log(x):
    return apply("log", x)


def exp(x):
    return apply("exp", x)


def sqrt(x):
    return apply("sqrt", x)


def l2_normalize(x, axis=-1):
    return apply("l2_normalize", x, axis=axis)


def square(x):
    return apply("square", x)


def relu(x):
    return apply("relu", x)


def bce_with_logits(x, targets):
    return apply("bce_with_logits", x, targets=np.asarray(targets, dtype=as_tensor(x).data.dtype))


# ----------------------------------------------------------------------------
# graph traversal

@dataclass
class Graph:
    """Nodes reachable from an output, inputs always before consumers."""

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def from_output(cls, out: Tensor) -> "Graph":
        order, seen = [], set()
        stack = [(out, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in reversed(node.inputs):
                if id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)


def backward(loss: Tensor, params):
    """Gradients of a scalar ``loss`` with respect to ``params``.

    ``params`` is a mapping name -> Tensor or a sequence of tensors; the result
    has the same form with numpy arrays. Parameters the loss does not depend
    on get zero gradients.
    """
    if loss.data.size != 1:
        raise ContractViolation(f"loss must be scalar, got shape {loss.shape}")
    if not np.all(np.isfinite(loss.data)):
        raise NumericError("loss is not finite")

    graph = Graph.from_output(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = grads.get(id(node))
        if g is None or node.op is None or not node.requires_grad:
            continue
        input_arrays = [t.data for t in node.inputs]
        in_grads = node.op.backward(g, node.ctx, *input_arrays, node.data, **node.attrs)
        for parent, pg in zip(node.inputs, in_grads):
            if not parent.requires_grad or pg is None:
                continue
            if np.isnan(pg).any():
                raise NumericError(f"NaN gradient in backward of op '{node.op.name}'")
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg

    def lookup(t):
        g = grads.get(id(t))
        return np.zeros_like(t.data) if g is None else np.asarray(g).reshape(t.shape)

    if isinstance(params, Mapping):
        return {k: lookup(t) for k, t in params.items()}
    return [lookup(t) for t in params]


# ----------------------------------------------------------------------------
# finite-difference checking

def relative_error(analytic, numeric, floor=1e-8) -> float:
    """max |analytic - numeric| over the larger of the two inf-norms.

    Measured against the gradient's scale rather than per component: central
    differences carry ~1e-10 absolute rounding noise, which swamps components
    many orders of magnitude below the largest one.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if not analytic.size:
        return 0.0
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), floor)
    return float(np.abs(analytic - numeric).max() / scale)


def check_gradients(fn: Callable[..., Tensor], arrays: Iterable, h=1e-6) -> float:
    """Max relative error between backward() and central differences of ``fn``.

    ``fn`` takes one Tensor per array and returns a scalar Tensor.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    analytic = backward(fn(*leaves), leaves)

    worst = 0.0
    for k, base in enumerate(arrays):
        numeric = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            point = [a.copy() for a in arrays]
            point[k][idx] = base[idx] + h
            f_plus = float(fn(*[Tensor(p) for p in point]).data)
            point[k][idx] = base[idx] - h
            f_minus = float(fn(*[Tensor(p) for p in point]).data)
            numeric[idx] = (f_plus - f_minus) / (2 * h)
        worst = max(worst, relative_error(analytic[k], numeric))
    return worst


def grad_check(op_name: str, point: Sequence, h=1e-6, seed=0, **attrs) -> float:
    """Finite-difference check of a registered op at ``point``.

    The op output is contracted with a fixed random tensor so every output
    component contributes to the scalar being differentiated.
    """
    if op_name not in OPS:
        raise NotFoundError(f"unregistered op: {op_name}")
    op = OPS[op_name]
    point = [np.asarray(p, dtype=np.float64) for p in point]
    probe_out, _ = op.forward(*point, **attrs)
    weights = np.random.default_rng(seed).standard_normal(np.shape(probe_out))

    def fn(*xs):
        return sum_(mul(apply(op_name, *xs, **attrs), weights))

    return check_gradients(fn, point, h=h)
