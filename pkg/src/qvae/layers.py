"""Quaternion layers as Hamilton-structured real tensor operations.

A quaternion feature map with ``Q`` quaternion channels is a real tensor
with ``4Q`` channels grouped by component: channels ``[0, Q)`` hold the
real parts, ``[Q, 2Q)`` the i parts, then j, then k. With that layout the
quaternion weight ``W = Wa + Wb i + Wc j + Wd k`` acts as one real kernel
whose 4x4 grid of blocks follows the Hamilton product table, so a
quaternion layer costs one real convolution with four times the channels
while holding a quarter of the weights.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ChannelNotDivisibleBy4, ShapeMismatch
from .quaternion import HAMILTON_INDEX, HAMILTON_SIGN
from .tensor import Tensor, conv2d, dense, leaky_relu, transposed_conv2d

DEFAULT_SLOPE = 0.2


class LayerKind(str, enum.Enum):
    QCONV = "QConv"
    QTRANSPOSED_CONV = "QTransposedConv"
    QDENSE = "QDense"
    REAL_CONV = "RealConv"
    REAL_TRANSPOSED_CONV = "RealTransposedConv"
    REAL_DENSE = "RealDense"

    @property
    def quaternion(self) -> bool:
        return self.value.startswith("Q")

    @property
    def transposed(self) -> bool:
        return "Transposed" in self.value

    @property
    def is_dense(self) -> bool:
        return self.value.endswith("Dense")


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    in_channels: int
    out_channels: int
    kernel: int = 1
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))
        if self.kind.quaternion and (self.in_channels % 4 or self.out_channels % 4):
            raise ChannelNotDivisibleBy4(
                f"{self.kind.value} needs channel counts divisible by 4, got {self.in_channels}->{self.out_channels}")
        if self.kind.is_dense and self.kernel != 1:
            raise ValueError("dense layers have kernel size 1")

    @property
    def weight_shape(self) -> tuple:
        """Shape of one weight tensor (a component tensor for quaternion kinds)."""
        div = 4 if self.kind.quaternion else 1
        cin, cout = self.in_channels // div, self.out_channels // div
        if self.kind.is_dense:
            return (cout, cin)
        if self.kind.transposed:
            return (cin, cout, self.kernel, self.kernel)
        return (cout, cin, self.kernel, self.kernel)


def count_weights(spec: LayerSpec) -> int:
    n = spec.out_channels * spec.in_channels * spec.kernel**2
    return n // 4 if spec.kind.quaternion else n


def count_parameters(spec: LayerSpec) -> int:
    """Trainable parameters; quaternion biases are one quaternion per output channel."""
    return count_weights(spec) + spec.out_channels


# Hamilton-structured kernel ----------------------------------------------------------

def hamilton_kernel(components, transposed: bool = False) -> Tensor:
    """Assemble the block-structured real kernel from four component tensors.

    Block (r, c) maps input component c to output component r and equals
    ``HAMILTON_SIGN[r, c] * W[HAMILTON_INDEX[r, c]]``. For transposed
    layers the kernel is laid out (in, out, ...), so the block sits at (c, r).
    """
    parts = [t.data for t in components]
    shape = parts[0].shape
    if any(p.shape != shape for p in parts):
        raise ShapeMismatch("quaternion weight components must share one shape")
    m, n = shape[:2]
    full = np.empty((4 * m, 4 * n) + shape[2:], dtype=parts[0].dtype)
    for r in range(4):
        for c in range(4):
            i, j = (c, r) if transposed else (r, c)
            block = parts[HAMILTON_INDEX[r, c]]
            full[i * m:(i + 1) * m, j * n:(j + 1) * n] = block if HAMILTON_SIGN[r, c] > 0 else -block

    def backward(g):
        grads = [np.zeros(shape, dtype=g.dtype) for _ in range(4)]
        for r in range(4):
            for c in range(4):
                i, j = (c, r) if transposed else (r, c)
                grads[HAMILTON_INDEX[r, c]] += HAMILTON_SIGN[r, c] * g[i * m:(i + 1) * m, j * n:(j + 1) * n]
        return tuple(grads)

    return Tensor.from_op(full, tuple(components), backward, "hamilton_kernel")


@dataclass
class QuaternionLayerWeights:
    Wa: Tensor
    Wb: Tensor
    Wc: Tensor
    Wd: Tensor
    bias: Optional[Tensor] = None  # (4 * Q_out,), component-major

    @property
    def components(self) -> tuple:
        return (self.Wa, self.Wb, self.Wc, self.Wd)

    def named(self) -> list:
        out = [("Wa", self.Wa), ("Wb", self.Wb), ("Wc", self.Wc), ("Wd", self.Wd)]
        if self.bias is not None:
            out.append(("bias", self.bias))
        return out

    def num_parameters(self) -> int:
        return sum(t.size for _, t in self.named())


@dataclass
class RealLayerWeights:
    weight: Tensor
    bias: Optional[Tensor] = None

    def named(self) -> list:
        return [("weight", self.weight)] + ([("bias", self.bias)] if self.bias is not None else [])

    def num_parameters(self) -> int:
        return sum(t.size for _, t in self.named())


def _check_quaternion_input(x: Tensor, expected: int) -> None:
    if x.shape[1] % 4:
        raise ChannelNotDivisibleBy4(f"input has {x.shape[1]} channels, not a multiple of 4")
    if x.shape[1] != expected:
        raise ShapeMismatch(f"input has {x.shape[1]} channels, layer expects {expected}")


def qconv2d_forward(input: Tensor, weights: QuaternionLayerWeights, stride: int = 1, padding: int = 0) -> Tensor:
    kernel = hamilton_kernel(weights.components)
    _check_quaternion_input(input, kernel.shape[1])
    return conv2d(input, kernel, weights.bias, stride=stride, padding=padding)


def qtransposed_conv2d_forward(input: Tensor, weights: QuaternionLayerWeights, stride: int = 1,
                               padding: int = 0) -> Tensor:
    kernel = hamilton_kernel(weights.components, transposed=True)
    _check_quaternion_input(input, kernel.shape[0])
    return transposed_conv2d(input, kernel, weights.bias, stride=stride, padding=padding)


def qdense_forward(input: Tensor, weights: QuaternionLayerWeights) -> Tensor:
    kernel = hamilton_kernel(weights.components)
    _check_quaternion_input(input, kernel.shape[1])
    return dense(input, kernel, weights.bias)


def split_leaky_relu(input: Tensor, slope: float = DEFAULT_SLOPE) -> Tensor:
    """Leaky-ReLU applied to every real component independently."""
    return leaky_relu(input, slope)


# initialisation ------------------------------------------------------------------------

def leaky_gain(slope: float) -> float:
    return math.sqrt(2.0 / (1.0 + slope**2))


def fans(spec: LayerSpec) -> tuple[int, int]:
    """(fan_in, fan_out), in quaternion units for quaternion kinds."""
    div = 4 if spec.kind.quaternion else 1
    k2 = spec.kernel**2
    return spec.in_channels // div * k2, spec.out_channels // div * k2


def init_scale(spec: LayerSpec, slope: float = DEFAULT_SLOPE) -> float:
    """Target per-component weight standard deviation.

    Equal to ``gain * sqrt(2 / (fan_in + fan_out))`` counted in real units,
    which for quaternion layers is ``gain / sqrt(2 (fan_in + fan_out))`` in
    quaternion units.
    """
    fi, fo = fans(spec)
    if spec.kind.quaternion:
        return leaky_gain(slope) / math.sqrt(2.0 * (fi + fo))
    return leaky_gain(slope) * math.sqrt(2.0 / (fi + fo))


def init_weights(spec: LayerSpec, seed, slope: float = DEFAULT_SLOPE, dtype=np.float64):
    """Deterministic initialisation; biases start at zero.

    Quaternion weights are drawn in polar form: a chi-distributed (4 dof)
    modulus, a uniformly random pure unit axis and a uniform angle in
    (-pi, pi). The mean per-component variance equals ``init_scale**2``.
    """
    rng = np.random.default_rng(seed)
    shape = spec.weight_shape
    scale = init_scale(spec, slope)
    bias = Tensor(np.zeros(spec.out_channels, dtype=dtype), requires_grad=True)
    if not spec.kind.quaternion:
        w = rng.normal(0.0, scale, size=shape)
        return RealLayerWeights(Tensor(w.astype(dtype), requires_grad=True), bias)
    modulus = scale * np.sqrt(rng.chisquare(4, size=shape))
    axis = rng.standard_normal((3,) + shape)
    axis /= np.linalg.norm(axis, axis=0)
    angle = rng.uniform(-np.pi, np.pi, size=shape)
    a = modulus * np.cos(angle)
    b, c, d = modulus * np.sin(angle) * axis
    return QuaternionLayerWeights(*(Tensor(x.astype(dtype), requires_grad=True) for x in (a, b, c, d)), bias=bias)


# layer objects -------------------------------------------------------------------------

class Layer:
    """A parameterised layer built from a :class:`LayerSpec`."""

    def __init__(self, spec: LayerSpec, weights):
        self.spec = spec
        self.weights = weights

    @classmethod
    def create(cls, spec: LayerSpec, seed, slope: float = DEFAULT_SLOPE, dtype=np.float64) -> "Layer":
        return cls(spec, init_weights(spec, seed, slope=slope, dtype=dtype))

    def parameters(self) -> list:
        return self.weights.named()

    def num_parameters(self) -> int:
        return self.weights.num_parameters()

    def __call__(self, x: Tensor) -> Tensor:
        s, w = self.spec, self.weights
        kind = s.kind
        if kind is LayerKind.QCONV:
            return qconv2d_forward(x, w, s.stride, s.padding)
        if kind is LayerKind.QTRANSPOSED_CONV:
            return qtransposed_conv2d_forward(x, w, s.stride, s.padding)
        if kind is LayerKind.QDENSE:
            return qdense_forward(x, w)
        if kind is LayerKind.REAL_CONV:
            return conv2d(x, w.weight, w.bias, s.stride, s.padding)
        if kind is LayerKind.REAL_TRANSPOSED_CONV:
            return transposed_conv2d(x, w.weight, w.bias, s.stride, s.padding)
        return dense(x, w.weight, w.bias)

    def __repr__(self) -> str:
        s = self.spec
        return f"Layer({s.kind.value} {s.in_channels}->{s.out_channels} k{s.kernel} s{s.stride} p{s.padding})"
