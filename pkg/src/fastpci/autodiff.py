"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

The tape is dynamic: every op on a tensor that requires grad records its
parents and a closure mapping the output gradient to parent gradients.
``backward`` walks the recorded graph once in reverse topological order.
"""
from __future__ import annotations

import contextlib
import threading

import numba
import numpy as np

from .errors import ArgumentError, ContractError, NumericError, ShapeError

_DTYPES = {"f32": np.float32, "f64": np.float64}
_default_dtype = np.float32
_local = threading.local()


def _grad_enabled():
    return getattr(_local, "grad_enabled", True)


def _strict():
    return getattr(_local, "strict", False)


def get_default_dtype():
    return _default_dtype


def set_default_dtype(dtype):
    global _default_dtype
    if isinstance(dtype, str):
        dtype = _DTYPES[dtype]
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ArgumentError(f"unsupported dtype {dtype}")
    _default_dtype = dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default float type ("f32"/"f64" or a numpy dtype)."""
    old = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


@contextlib.contextmanager
def no_grad():
    old = _grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = old


@contextlib.contextmanager
def strict_mode(enabled=True):
    """Reject NaN/Inf inputs to every op while active."""
    old = _strict()
    _local.strict = enabled
    try:
        yield
    finally:
        _local.strict = old


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = _default_dtype
        data = np.asarray(data, dtype=dtype)
        # ascontiguousarray would promote 0-d scalars to shape (1,)
        self.data = data if data.flags.c_contiguous else data.copy(order="C")
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return self.data.shape[0]

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose_last2(self)


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    if dtype is None and isinstance(x, np.ndarray) and x.dtype in (np.float32, np.float64):
        dtype = x.dtype
    return Tensor(np.asarray(x), dtype=dtype)


def _check_finite(kind, arrays):
    if not _strict():
        return
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericError(f"{kind}: non-finite values in input")


def _result(data, parents, backward_fn, kind):
    out = Tensor(data, dtype=data.dtype if isinstance(data, np.ndarray) else None)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out.op = kind
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    nlead = grad.ndim - len(shape)
    if nlead:
        grad = grad.sum(axis=tuple(range(nlead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(kind, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: shapes {a.shape} and {b.shape} do not broadcast") from None


# --------------------------------------------------------------------------
# elementwise / arithmetic


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    _check_finite("add", (a.data, b.data))
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _result(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    _check_finite("sub", (a.data, b.data))
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    _check_finite("mul", (a.data, b.data))
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _result(ad * bd, (a, b), bw, "mul")


def scale(a, s):
    a = as_tensor(a)
    _check_finite("scale", (a.data,))
    s = float(s)
    out = a.data * a.data.dtype.type(s)

    def bw(g):
        return (g * g.dtype.type(s),)

    return _result(out, (a,), bw, "scale")


def square(a):
    a = as_tensor(a)
    _check_finite("square", (a.data,))
    ad = a.data

    def bw(g):
        return (2 * g * ad,)

    return _result(ad * ad, (a,), bw, "square")


def sqrt(a):
    a = as_tensor(a)
    _check_finite("sqrt", (a.data,))
    out = np.sqrt(a.data)

    def bw(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            return (g * 0.5 / out,)

    return _result(out, (a,), bw, "sqrt")


def relu(a):
    a = as_tensor(a)
    _check_finite("relu", (a.data,))
    mask = a.data > 0

    def bw(g):
        return (g * mask,)

    return _result(a.data * mask, (a,), bw, "relu")


def leaky_relu(a, slope=0.1):
    if not 0.0 < slope < 1.0:
        raise ArgumentError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    a = as_tensor(a)
    _check_finite("leaky_relu", (a.data,))
    mask = a.data > 0
    s = a.dtype.type(slope)

    def bw(g):
        return (np.where(mask, g, g * s),)

    return _result(np.where(mask, a.data, a.data * s), (a,), bw, "leaky_relu")


def sigmoid(a):
    a = as_tensor(a)
    _check_finite("sigmoid", (a.data,))
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    e = np.exp(a.data[~pos])
    out[~pos] = e / (1.0 + e)

    def bw(g):
        return (g * out * (1.0 - out),)

    return _result(out, (a,), bw, "sigmoid")


def reciprocal(a):
    a = as_tensor(a)
    _check_finite("reciprocal", (a.data,))
    if np.any(a.data == 0):
        raise NumericError("reciprocal: division by zero")
    out = 1.0 / a.data

    def bw(g):
        return (-g * out * out,)

    return _result(out, (a,), bw, "reciprocal")


def clamp_min(a, floor):
    """``max(a, floor)``; the gradient is zero where the floor is active."""
    a = as_tensor(a)
    _check_finite("clamp_min", (a.data,))
    keep = a.data >= floor
    fill = a.dtype.type(floor)

    def bw(g):
        return (np.where(keep, g, 0),)

    return _result(np.where(keep, a.data, fill), (a,), bw, "clamp_min")


# --------------------------------------------------------------------------
# contractions and structural ops


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    _check_finite("matmul", (a.data, b.data))
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _result(ad @ bd, (a, b), bw, "matmul")


def linear(x, weight, bias=None):
    """``x @ weight (+ bias)`` over the last axis; weight is (in, out)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    arrays = (x.data, weight.data) if bias is None else (x.data, weight.data, bias.data)
    _check_finite("linear", arrays)
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data
    if bias is not None:
        out += bias.data
    out = out.reshape(lead + (weight.shape[1],))
    wd = weight.data

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ wd.T).reshape(lead + (wd.shape[0],)) if x.requires_grad else None
        gw = x2.T @ g2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, bw, "linear")


def transpose_last2(a):
    a = as_tensor(a)
    if a.ndim < 2:
        raise ShapeError(f"transpose_last2: need at least 2 dims, got {a.shape}")

    def bw(g):
        return (np.swapaxes(g, -1, -2),)

    return _result(np.ascontiguousarray(np.swapaxes(a.data, -1, -2)), (a,), bw, "transpose_last2")


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} to {shape}") from None

    def bw(g):
        return (g.reshape(old),)

    return _result(out, (a,), bw, "reshape")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ArgumentError("concat: no inputs")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    _check_finite("concat", [t.data for t in tensors])
    sizes = [t.shape[ax] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _result(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), bw, "concat")


def concat_rows(*tensors):
    return concat(tensors, axis=0)


@numba.njit(cache=True)
def _scatter_add_rows(index, g, n):
    out = np.zeros((n, g.shape[1]), dtype=g.dtype)
    for r in range(index.shape[0]):
        dst = index[r]
        for c in range(g.shape[1]):
            out[dst, c] += g[r, c]
    return out


def gather_rows(x, index):
    """``x[index]`` along axis 0; ``index`` may have any integer shape."""
    x = as_tensor(x)
    index = np.asarray(index)
    if not np.issubdtype(index.dtype, np.integer):
        raise ArgumentError("gather_rows: index must be integer")
    n = x.shape[0]
    if index.size and (index.min() < 0 or index.max() >= n):
        raise ShapeError(f"gather_rows: index out of range for {x.shape}")
    _check_finite("gather_rows", (x.data,))
    shape = x.shape

    def bw(g):
        flat = np.ascontiguousarray(index.reshape(-1), dtype=np.int64)
        g2 = np.ascontiguousarray(g.reshape(flat.size, -1))
        return (_scatter_add_rows(flat, g2, n).reshape(shape),)

    return _result(x.data[index], (x,), bw, "gather_rows")


# --------------------------------------------------------------------------
# reductions


def reduce_sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    _check_finite("reduce_sum", (a.data,))
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw, "reduce_sum")


def reduce_mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    _check_finite("reduce_mean", (a.data,))
    shape = a.shape
    count = a.data.size if axis is None else int(np.prod([shape[i] for i in np.atleast_1d(axis)]))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).copy(),)

    return _result(np.asarray(a.data.mean(axis=axis, keepdims=keepdims)), (a,), bw, "reduce_mean")


def min_over_rows_with_index(a):
    """Per row, the minimum over the last axis and its index (lowest on ties).

    The gradient is routed to the selected element only.
    """
    a = as_tensor(a)
    _check_finite("min_over_rows_with_index", (a.data,))
    idx = np.argmin(a.data, axis=-1)
    vals = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]
    shape = a.shape

    def bw(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(out, idx[..., None], g[..., None], axis=-1)
        return (out,)

    return _result(vals, (a,), bw, "min_over_rows_with_index"), idx


def max_over_axis(a, axis):
    """Max along ``axis`` (neighbour max-pooling); ties route gradient to the first."""
    a = as_tensor(a)
    _check_finite("max_over_axis", (a.data,))
    idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    vals = np.take_along_axis(a.data, idx, axis=axis)
    shape = a.shape

    def bw(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(out, idx, np.expand_dims(g, axis), axis=axis)
        return (out,)

    return _result(np.squeeze(vals, axis), (a,), bw, "max_over_axis")


def l2norm_rows(a):
    """Euclidean norm over the last axis. Zero rows get a zero subgradient."""
    a = as_tensor(a)
    _check_finite("l2norm_rows", (a.data,))
    ad = a.data
    out = np.sqrt((ad * ad).sum(axis=-1))

    def bw(g):
        safe = np.where(out > 0, out, 1.0)
        return (ad * (np.where(out > 0, g, 0.0) / safe)[..., None],)

    return _result(out, (a,), bw, "l2norm_rows")


def softmax(a, axis=-1):
    a = as_tensor(a)
    _check_finite("softmax", (a.data,))
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (a,), bw, "softmax")


def softmax_lastdim(a):
    return softmax(a, axis=-1)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalise each row over the last axis to zero mean / unit variance, then affine."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError(f"layer_norm: affine {gamma.shape} does not match input {x.shape}")
    _check_finite("layer_norm", (x.data, gamma.data, beta.data))
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data
    lead = tuple(range(x.ndim - 1))

    def bw(g):
        dxhat = g * gd
        gx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(xhat * gd + beta.data, (x, gamma, beta), bw, "layer_norm")


_KINDS = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "concat_rows": concat_rows,
    "concat": concat,
    "gather_rows": gather_rows,
    "linear": linear,
    "softmax_lastdim": softmax_lastdim,
    "softmax": softmax,
    "relu": relu,
    "leaky_relu": leaky_relu,
    "sigmoid": sigmoid,
    "reciprocal": reciprocal,
    "clamp_min": clamp_min,
    "transpose_last2": transpose_last2,
    "reduce_sum": reduce_sum,
    "reduce_mean": reduce_mean,
    "min_over_rows_with_index": min_over_rows_with_index,
    "max_over_axis": max_over_axis,
    "sqrt": sqrt,
    "square": square,
    "l2norm_rows": l2norm_rows,
    "layer_norm": layer_norm,
    "reshape": reshape,
}


def forward_op(kind, *inputs, **attrs):
    """Dispatch an op by name, e.g. ``forward_op("leaky_relu", x, slope=0.2)``."""
    try:
        fn = _KINDS[kind]
    except KeyError:
        raise ArgumentError(f"unknown op kind {kind!r}") from None
    return fn(*inputs, **attrs)


# --------------------------------------------------------------------------
# backward pass and verification


def _toposort(root):
    order, seen = [], {id(root)}
    stack = [(root, iter(root._parents))]
    while stack:
        node, it = stack[-1]
        for p in it:
            if p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                stack.append((p, iter(p._parents)))
                break
        else:
            stack.pop()
            order.append(node)
    return order


def backward(loss):
    """Populate ``.grad`` on every requires-grad leaf reachable from ``loss``."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _toposort(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            prev = grads.get(id(p))
            grads[id(p)] = pg if prev is None else prev + pg


def grad_check(f, x, eps=1e-5, indices=None):
    """Max relative error between autograd and central differences of ``f`` at ``x``.

    Error per element is ``|auto - fd| / max(1, |fd|)``. ``indices`` restricts the
    check to a subset of flat element positions.
    """
    x.grad = None
    y = f(x)
    if y.data.size != 1:
        raise ContractError("grad_check: f must return a scalar")
    if not np.all(np.isfinite(y.data)):
        raise NumericError("grad_check: f returned a non-finite value")
    backward(y)
    auto = np.zeros(x.shape, dtype=np.float64) if x.grad is None else x.grad.astype(np.float64)
    auto = auto.reshape(-1)
    flat = x.data.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    worst = 0.0
    with no_grad():
        for i in indices:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f(x).data)
            flat[i] = orig - eps
            fm = float(f(x).data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError("grad_check: f returned a non-finite value")
            fd = (fp - fm) / (2 * eps)
            worst = max(worst, abs(auto[i] - fd) / max(1.0, abs(fd)))
    return worst


def grad_check_params(loss_fn, params, eps=1e-5, per_param=None, rng=None):
    """Run :func:`grad_check` over several leaves of a zero-argument loss.

    With ``per_param`` set, at most that many randomly chosen elements of each
    parameter are checked.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    for p in params:
        p.grad = None
    loss = loss_fn()
    backward(loss)
    autos = {id(p): (np.zeros(p.shape) if p.grad is None else p.grad.copy()) for p in params}
    worst = 0.0
    for p in params:
        n = p.data.size
        idx = np.arange(n) if per_param is None or n <= per_param else rng.choice(n, per_param, replace=False)
        auto = autos[id(p)].reshape(-1)
        flat = p.data.reshape(-1)
        with no_grad():
            for i in idx:
                orig = flat[i]
                flat[i] = orig + eps
                fp = float(loss_fn().data)
                flat[i] = orig - eps
                fm = float(loss_fn().data)
                flat[i] = orig
                fd = (fp - fm) / (2 * eps)
                worst = max(worst, abs(auto[i] - fd) / max(1.0, abs(fd)))
    return worst
