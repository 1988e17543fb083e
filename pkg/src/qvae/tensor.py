"""A small dense tensor type with reverse-mode automatic differentiation.

Every differentiable operation returns a new :class:`Tensor` that records
its parents and a closure mapping the output gradient to parent gradients.
Tensors carry a creation counter, so sorting the reachable nodes by that
counter (descending) is a valid reverse topological order: inputs always
exist before the outputs computed from them.
"""
from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import InvalidGeometry, NotScalar, ShapeMismatch

_ids = itertools.count()
_state = threading.local()

BCE_EPS = 1e-7


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_id", "op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.array(data, dtype=dtype, copy=True)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None
        self._id = next(_ids)
        self.op = "leaf"

    @classmethod
    def from_op(cls, data: np.ndarray, parents, backward, op: str) -> "Tensor":
        """Wrap ``data`` as the output of an op; ``backward(g)`` returns one grad per parent."""
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._id = next(_ids)
        out.op = op
        track = _grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward = backward if track else None
        return out

    shape = property(lambda self: self.data.shape)
    ndim = property(lambda self: self.data.ndim)
    dtype = property(lambda self: self.data.dtype)
    size = property(lambda self: self.data.size)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        other = _lift(other, self.dtype)
        a, b = self.shape, other.shape
        return Tensor.from_op(self.data + other.data, (self, other),
                              lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)), "add")

    __radd__ = __add__

    def __sub__(self, other):
        other = _lift(other, self.dtype)
        a, b = self.shape, other.shape
        return Tensor.from_op(self.data - other.data, (self, other),
                              lambda g: (_unbroadcast(g, a), _unbroadcast(-g, b)), "sub")

    def __rsub__(self, other):
        return _lift(other, self.dtype) - self

    def __neg__(self):
        return Tensor.from_op(-self.data, (self,), lambda g: (-g,), "neg")

    def __mul__(self, other):
        other = _lift(other, self.dtype)
        x, y = self.data, other.data
        return Tensor.from_op(x * y, (self, other),
                              lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)), "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _lift(other, self.dtype)
        x, y = self.data, other.data
        return Tensor.from_op(
            x / y, (self, other),
            lambda g: (_unbroadcast(g / y, x.shape), _unbroadcast(-g * x / (y * y), y.shape)), "div")

    def __matmul__(self, other):
        x, y = self.data, other.data
        return Tensor.from_op(x @ y, (self, other), lambda g: (g @ y.T, x.T @ g), "matmul")

    def __getitem__(self, idx):
        shape = self.shape
        dtype = self.dtype

        def backward(g):
            full = np.zeros(shape, dtype=dtype)
            np.add.at(full, idx, g)
            return (full,)

        return Tensor.from_op(self.data[idx], (self,), backward, "getitem")

    # reductions and shape ----------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor.from_op(np.asarray(self.data.sum(axis=axis, keepdims=keepdims)), (self,), backward, "sum")

    def mean(self, axis=None):
        n = self.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor.from_op(self.data.reshape(shape), (self,), lambda g: (g.reshape(old),), "reshape")

    def transpose(self, *axes):
        inv = np.argsort(axes)
        return Tensor.from_op(self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),), "transpose")

    # elementwise -------------------------------------------------------------
    def exp(self):
        y = np.exp(self.data)
        return Tensor.from_op(y, (self,), lambda g: (g * y,), "exp")

    def log(self):
        x = self.data
        return Tensor.from_op(np.log(x), (self,), lambda g: (g / x,), "log")

    def clip(self, lo: float, hi: float):
        x = self.data
        inside = (x >= lo) & (x <= hi)
        return Tensor.from_op(np.clip(x, lo, hi), (self,), lambda g: (g * inside,), "clip")

    def backward(self) -> None:
        backward(self)


def _lift(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def concat(tensors, axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return Tensor.from_op(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                          lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires grad."""
    if loss.size != 1:
        raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")
    nodes = {}
    stack = [loss]
    while stack:
        node = stack.pop()
        if node._id in nodes:
            continue
        nodes[node._id] = node
        stack.extend(node._parents)
    grads = {loss._id: np.ones_like(loss.data)}
    for nid in sorted(nodes, reverse=True):
        node = nodes[nid]
        g = grads.pop(nid, None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=parent.dtype)
            if parent._id in grads:
                grads[parent._id] = grads[parent._id] + pg
            else:
                grads[parent._id] = pg


# convolution kernels -----------------------------------------------------------

def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - kernel
    if span < 0 or span % stride:
        raise InvalidGeometry(
            f"size {size} with kernel {kernel}, stride {stride}, padding {padding} is not a whole number of steps")
    return span // stride + 1


def transposed_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    out = (size - 1) * stride - 2 * padding + kernel
    if out <= 0:
        raise InvalidGeometry(f"transposed geometry gives non-positive size {out}")
    return out


def _windows(x: np.ndarray, k: int, stride: int, padding: int, ho: int, wo: int) -> np.ndarray:
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))
    return win[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]


def _correlate(x, w, stride, padding):
    n, c, h, wd = x.shape
    o, c2, k, _ = w.shape
    if c != c2:
        raise ShapeMismatch(f"input has {c} channels, kernel expects {c2}")
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(wd, k, stride, padding)
    cols = _windows(x, k, stride, padding, ho, wo)  # n c ho wo k k
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))  # n ho wo o
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _correlate_kernel_grad(x, gy, k, stride, padding):
    """Gradient of ``_correlate(x, w)`` w.r.t. ``w`` given output gradient ``gy``."""
    ho, wo = gy.shape[2:]
    cols = _windows(x, k, stride, padding, ho, wo)
    return np.tensordot(gy, cols, axes=([0, 2, 3], [0, 2, 3]))  # o c k k


def _correlate_input_grad(gy, w, in_hw, stride, padding):
    """Adjoint of ``_correlate`` in its input (the transposed convolution)."""
    n, _, ho, wo = gy.shape
    _, c, k, _ = w.shape
    h, wd = in_hw
    gcols = np.tensordot(gy, w, axes=([1], [0]))  # n ho wo c k k
    gcols = gcols.transpose(0, 3, 1, 2, 4, 5)
    full = np.zeros((n, c, h + 2 * padding, wd + 2 * padding), dtype=np.result_type(gy, w))
    for i in range(k):
        for j in range(k):
            full[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += gcols[..., i, j]
    if padding:
        full = full[:, :, padding:-padding, padding:-padding]
    return np.ascontiguousarray(full)


def _check_kernel(kernel: Tensor):
    if kernel.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise ShapeMismatch(f"kernel must be (out, in, k, k), got {kernel.shape}")


def _add_bias(out: Tensor, bias, channels: int) -> Tensor:
    if bias is None:
        return out
    if bias.shape != (channels,):
        raise ShapeMismatch(f"bias shape {bias.shape} does not match {channels} channels")
    return out + bias.reshape(1, channels, 1, 1)


def conv2d(input: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of an (N, C_in, H, W) input with a (C_out, C_in, k, k) kernel."""
    _check_kernel(kernel)
    if input.ndim != 4:
        raise ShapeMismatch(f"conv2d input must be 4-d, got {input.shape}")
    x, w = input.data, kernel.data
    k = w.shape[2]
    out = _correlate(x, w, stride, padding)

    def backward(g):
        gx = _correlate_input_grad(g, w, x.shape[2:], stride, padding) if input.requires_grad else None
        return gx, _correlate_kernel_grad(x, g, k, stride, padding)

    return _add_bias(Tensor.from_op(out, (input, kernel), backward, "conv2d"), bias, w.shape[0])


def transposed_conv2d(input: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1,
                      padding: int = 0) -> Tensor:
    """Adjoint of :func:`conv2d`; kernel layout is (C_in, C_out, k, k)."""
    _check_kernel(kernel)
    if input.ndim != 4:
        raise ShapeMismatch(f"transposed_conv2d input must be 4-d, got {input.shape}")
    y, w = input.data, kernel.data
    if y.shape[1] != w.shape[0]:
        raise ShapeMismatch(f"input has {y.shape[1]} channels, kernel expects {w.shape[0]}")
    k = w.shape[2]
    h = transposed_output_size(y.shape[2], k, stride, padding)
    wd = transposed_output_size(y.shape[3], k, stride, padding)
    out = _correlate_input_grad(y, w, (h, wd), stride, padding)

    def backward(g):
        gy = _correlate(g, w, stride, padding) if input.requires_grad else None
        return gy, _correlate_kernel_grad(g, y, k, stride, padding)

    return _add_bias(Tensor.from_op(out, (input, kernel), backward, "transposed_conv2d"), bias, w.shape[1])


def dense(input: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``input @ weight.T + bias`` with weight laid out (F_out, F_in)."""
    if input.ndim != 2 or weight.ndim != 2 or input.shape[1] != weight.shape[1]:
        raise ShapeMismatch(f"dense: input {input.shape} incompatible with weight {weight.shape}")
    x, w = input.data, weight.data
    out = Tensor.from_op(x @ w.T, (input, weight), lambda g: (g @ w, g.T @ x), "dense")
    if bias is None:
        return out
    if bias.shape != (w.shape[0],):
        raise ShapeMismatch(f"bias shape {bias.shape} does not match {w.shape[0]} outputs")
    return out + bias


def leaky_relu(input: Tensor, slope: float = 0.2) -> Tensor:
    if not 0.0 <= slope < 1.0:
        raise ValueError("slope must lie in [0, 1)")
    x = input.data
    scale = np.where(x >= 0, 1.0, slope).astype(x.dtype)
    return Tensor.from_op(x * scale, (input,), lambda g: (g * scale,), "leaky_relu")


def sigmoid(input: Tensor) -> Tensor:
    y = expit(input.data)
    return Tensor.from_op(y, (input,), lambda g: (g * y * (1 - y),), "sigmoid")


def bce_loss(prediction: Tensor, target) -> Tensor:
    """Mean binary cross entropy; predictions are clamped to [eps, 1 - eps]."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    if prediction.shape != t.shape:
        raise ShapeMismatch(f"prediction {prediction.shape} vs target {t.shape}")
    p = prediction.data
    pc = np.clip(p, BCE_EPS, 1 - BCE_EPS)
    n = p.size
    value = -np.mean(t * np.log(pc) + (1 - t) * np.log1p(-pc))
    inside = (p >= BCE_EPS) & (p <= 1 - BCE_EPS)

    def backward(g):
        return (g * inside * (-t / pc + (1 - t) / (1 - pc)) / n,)

    return Tensor.from_op(np.asarray(value, dtype=p.dtype), (prediction,), backward, "bce")
