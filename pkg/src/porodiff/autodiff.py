"""Small reverse-mode differentiation engine over float64 numpy arrays.

There is no implicit broadcasting: elementwise binary operations require
equal shapes, except that either operand may be a Python scalar or a
0-d tensor. Use :func:`expand` to broadcast explicitly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.special import erf

from .errors import NonScalarOutput, ShapeMismatch

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """A float64 array plus an optional link into the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf", parents=(), backward=None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self._parents = tuple(parents)
        self._backward = backward
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op})"

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every ``requires_grad`` ancestor."""
        if self.data.size != 1:
            raise NonScalarOutput(f"backward needs a scalar output, got shape {self.shape}")
        order = _topological(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not _needs_grad(parent):
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

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
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name=None):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def _topological(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tracked(*xs) -> bool:
    return any(_needs_grad(x) for x in xs)


def _make(data, op, parents, backward) -> Tensor:
    if _tracked(*parents):
        return Tensor(data, op=op, parents=parents, backward=backward)
    return Tensor(data, op=op)


def _is_scalar(x) -> bool:
    return not isinstance(x, Tensor) or x.ndim == 0


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    if a.ndim and b.ndim and a.shape != b.shape:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} differ (use expand)")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    return g if g.shape == shape else np.asarray(g.sum()).reshape(shape)


def add(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _binary_shapes(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, "add", (a, b), lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)))


def sub(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _binary_shapes(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, "sub", (a, b), lambda g: (_reduce_to(g, sa), _reduce_to(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _binary_shapes(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, "mul", (a, b), lambda g: (_reduce_to(g * bd, ad.shape), _reduce_to(g * ad, bd.shape)))


def reciprocal(a) -> Tensor:
    a = tensor(a)
    out = 1.0 / a.data
    return _make(out, "reciprocal", (a,), lambda g: (-g * out * out,))


def matmul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _make(
        ad @ bd, "matmul", (a, b),
        lambda g: (g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g),
    )


def concat(xs, axis: int = -1) -> Tensor:
    xs = [tensor(x) for x in xs]
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from None
    splits = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return _make(out, "concat", tuple(xs), lambda g: tuple(np.split(g, splits, axis=axis)))


def take(a, index, axis: int = 0) -> Tensor:
    """Gather ``a[index]`` along ``axis``; repeated indices accumulate gradient."""
    a = tensor(a)
    index = np.asarray(index, dtype=np.int64)
    shape = a.shape

    def back(g):
        if index.ndim == 1:
            # scatter-add as a sparse product; much faster than ufunc.at
            g0 = np.moveaxis(g, axis, 0)
            rows = shape[axis]
            S = sparse.csr_matrix((np.ones(index.size), (index, np.arange(index.size))), shape=(rows, index.size))
            out = (S @ g0.reshape(index.size, -1)).reshape((rows,) + g0.shape[1:])
            return (np.moveaxis(out, 0, axis),)
        out = np.zeros(shape)
        np.add.at(np.moveaxis(out, axis, 0), index, np.moveaxis(g, axis, 0) if index.ndim else g)
        return (out,)

    return _make(np.take(a.data, index, axis=axis), "take", (a,), back)


def getitem(a, index) -> Tensor:
    a = tensor(a)
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _make(a.data[index], "getitem", (a,), back)


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = tensor(a)
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), "sum", (a,), back)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = tensor(a)
    n = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return reduce_sum(a, axis, keepdims) / float(n)


def reshape(a, shape) -> Tensor:
    a = tensor(a)
    old = a.shape
    return _make(a.data.reshape(shape), "reshape", (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = tensor(a)
    inv = None if axes is None else np.argsort(axes)
    return _make(np.transpose(a.data, axes), "transpose", (a,), lambda g: (np.transpose(g, inv),))


def expand(a, shape) -> Tensor:
    """Explicit numpy-style broadcast to ``shape``; gradient sums back."""
    a = tensor(a)
    old = a.shape
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from None
    lead = len(shape) - len(old)

    def back(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, n in enumerate(old) if n == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (g.reshape(old),)

    return _make(out.copy(), "expand", (a,), back)


def relu(a) -> Tensor:
    a = tensor(a)
    pos = a.data > 0
    return _make(np.where(pos, a.data, 0.0), "relu", (a,), lambda g: (g * pos,))


def gelu(a) -> Tensor:
    """Exact GELU ``x * Phi(x)``."""
    a = tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return _make(x * cdf, "gelu", (a,), lambda g: (g * (cdf + x * pdf),))


def exp(a) -> Tensor:
    a = tensor(a)
    out = np.exp(a.data)
    return _make(out, "exp", (a,), lambda g: (g * out,))


def expm1(a) -> Tensor:
    """``exp(a) - 1`` without cancellation near zero."""
    a = tensor(a)
    x = a.data
    return _make(np.expm1(x), "expm1", (a,), lambda g: (g * np.exp(x),))


def log1p(a) -> Tensor:
    """``log(1 + a)`` without cancellation near zero."""
    a = tensor(a)
    x = a.data
    return _make(np.log1p(x), "log1p", (a,), lambda g: (g / (1.0 + x),))


def log(a) -> Tensor:
    a = tensor(a)
    x = a.data
    return _make(np.log(x), "log", (a,), lambda g: (g / x,))


def sqrt(a) -> Tensor:
    a = tensor(a)
    out = np.sqrt(a.data)
    return _make(out, "sqrt", (a,), lambda g: (g * 0.5 / out,))


def square(a) -> Tensor:
    a = tensor(a)
    x = a.data
    return _make(x * x, "square", (a,), lambda g: (2.0 * g * x,))


def sigmoid(a) -> Tensor:
    a = tensor(a)
    x = a.data
    e = np.exp(-np.abs(x))
    # stable in both tails: no cancellation for large negative x
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


def log_sigmoid(a) -> Tensor:
    """``log(sigmoid(x)) = -log(1 + exp(-x))`` evaluated stably."""
    a = tensor(a)
    x = a.data
    out = -np.logaddexp(0.0, -x)
    s_neg = 0.5 * (1.0 - np.tanh(0.5 * x))
    return _make(out, "log_sigmoid", (a,), lambda g: (g * s_neg,))


def tanh(a) -> Tensor:
    a = tensor(a)
    out = np.tanh(a.data)
    return _make(out, "tanh", (a,), lambda g: (g * (1.0 - out * out),))


def clip(a, lo: float, hi: float) -> Tensor:
    a = tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), "clip", (a,), lambda g: (g * inside,))


def softmax(a, axis: int = -1) -> Tensor:
    a = tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return _make(out, "softmax", (a,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def log_softmax(a, axis: int = -1) -> Tensor:
    a = tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _make(out, "log_softmax", (a,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def layer_norm(a, scale=None, shift=None, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Standardize along ``axis`` then apply optional ``scale`` and ``shift``.

    ``scale`` and ``shift`` have the extent of ``axis`` and are broadcast
    along the remaining axes.
    """
    a = tensor(a)
    x = a.data
    n = x.shape[axis]
    mu = x.mean(axis=axis, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def back(g):
        dx = inv / n * (n * g - g.sum(axis=axis, keepdims=True) - xhat * (g * xhat).sum(axis=axis, keepdims=True))
        return (dx,)

    out = _make(xhat, "layer_norm", (a,), back)
    if scale is not None or shift is not None:
        shape = [1] * x.ndim
        shape[axis] = n
        if scale is not None:
            out = mul(out, expand(reshape(scale, shape), x.shape))
        if shift is not None:
            out = add(out, expand(reshape(shift, shape), x.shape))
    return out


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` for ``x`` of shape (n, d_in)."""
    y = matmul(x, weight)
    if bias is not None:
        y = add(y, expand(reshape(bias, (1, -1)), y.shape))
    return y


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    worst: tuple | None
    failures: list = field(default_factory=list)
    checked: int = 0


def grad_check(function, point, step: float = 1e-5, tolerance: float = 1e-5, abs_floor: float = 1e-8,
               coords=None) -> GradCheckReport:
    """Compare reverse-mode gradients with central differences.

    Parameters
    ----------
    function : callable
        Maps one tensor per entry of ``point`` to a scalar tensor.
    point : array or list of arrays
        Where to evaluate.
    coords : list, optional
        Per input, an iterable of flat indices to check (all if omitted).

    Notes
    -----
    A coordinate fails when ``|a - n| > abs_floor`` and
    ``|a - n| / max(|a|, |n|) >= tolerance``.
    """
    single = not isinstance(point, (list, tuple))
    arrays = [np.array(point, dtype=np.float64)] if single else [np.array(p, dtype=np.float64) for p in point]
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = function(*leaves)
    out.backward()
    analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]
    worst, worst_err, failures, checked = None, 0.0, [], 0
    for k, base in enumerate(arrays):
        idxs = range(base.size) if coords is None else coords[k]
        for flat in idxs:
            idx = np.unravel_index(int(flat), base.shape) if base.ndim else ()
            vals = []
            for sign in (1.0, -1.0):
                trial = [a.copy() for a in arrays]
                trial[k][idx] += sign * step
                vals.append(function(*[Tensor(t) for t in trial]).item())
            num = (vals[0] - vals[1]) / (2.0 * step)
            ana = float(analytic[k][idx])
            diff = abs(ana - num)
            rel = 0.0 if diff <= abs_floor else diff / max(abs(ana), abs(num))
            checked += 1
            if rel > worst_err:
                worst_err, worst = rel, (k, tuple(int(i) for i in idx))
            if rel >= tolerance:
                failures.append((k, tuple(int(i) for i in idx), ana, num))
    return GradCheckReport(not failures, worst_err, worst, failures, checked)


class Adam:
    """Adaptive moment estimation with global gradient-norm clipping."""

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8, clip_norm: float = 1.0):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> float:
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
        scale = 1.0
        if self.clip_norm is not None and norm > self.clip_norm:
            scale = self.clip_norm / norm
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if p.grad is None:
                continue
            g = g * scale
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return norm
