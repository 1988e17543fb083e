"""Quaternion scalars and split-storage quaternion arrays.

All arithmetic is float64. A :class:`QuaternionArray` keeps its four
components as separate real planes stacked on a leading axis of length 4,
so ``planes[0]`` is the real part and ``planes[1:]`` the i, j, k parts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import NonUnitAxis, ShapeMismatch

# Hamilton product as a table: component r of p*q is
#   sum_c HAMILTON_SIGN[r, c] * p[HAMILTON_INDEX[r, c]] * q[c]
# The same table gives the block layout of every quaternion layer kernel.
HAMILTON_INDEX = np.array([
    [0, 1, 2, 3],
    [1, 0, 3, 2],
    [2, 3, 0, 1],
    [3, 2, 1, 0],
])
HAMILTON_SIGN = np.array([
    [1, -1, -1, -1],
    [1, 1, -1, 1],
    [1, 1, 1, -1],
    [1, -1, 1, 1],
])

_UNIT_TOL = 1e-9


@dataclass(frozen=True)
class Quaternion:
    a: float = 0.0
    b: float = 0.0
    c: float = 0.0
    d: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c, self.d], dtype=np.float64)

    @classmethod
    def from_array(cls, v) -> "Quaternion":
        a, b, c, d = (float(x) for x in v)
        return cls(a, b, c, d)

    @property
    def imag(self) -> np.ndarray:
        return np.array([self.b, self.c, self.d], dtype=np.float64)

    def __mul__(self, other):
        if isinstance(other, Quaternion):
            return qmul(self, other)
        return Quaternion(self.a * other, self.b * other, self.c * other, self.d * other)

    def __rmul__(self, other):
        return Quaternion(self.a * other, self.b * other, self.c * other, self.d * other)

    def __add__(self, other: "Quaternion") -> "Quaternion":
        return Quaternion(self.a + other.a, self.b + other.b, self.c + other.c, self.d + other.d)

    def __sub__(self, other: "Quaternion") -> "Quaternion":
        return Quaternion(self.a - other.a, self.b - other.b, self.c - other.c, self.d - other.d)

    def __neg__(self) -> "Quaternion":
        return Quaternion(-self.a, -self.b, -self.c, -self.d)


ONE = Quaternion(1.0, 0.0, 0.0, 0.0)
I = Quaternion(0.0, 1.0, 0.0, 0.0)
J = Quaternion(0.0, 0.0, 1.0, 0.0)
K = Quaternion(0.0, 0.0, 0.0, 1.0)


@dataclass(frozen=True)
class PureUnitQuaternion:
    b: float
    c: float
    d: float

    def __post_init__(self):
        if abs(self.b**2 + self.c**2 + self.d**2 - 1.0) > _UNIT_TOL:
            raise NonUnitAxis(f"axis ({self.b}, {self.c}, {self.d}) is not unit length")

    @property
    def quaternion(self) -> Quaternion:
        return Quaternion(0.0, self.b, self.c, self.d)


AXIS_I = PureUnitQuaternion(1.0, 0.0, 0.0)
AXIS_J = PureUnitQuaternion(0.0, 1.0, 0.0)
AXIS_K = PureUnitQuaternion(0.0, 0.0, 1.0)


def _hamilton(p, q):
    """Hamilton product on component sequences (works elementwise on arrays)."""
    pa, pb, pc, pd = p
    qa, qb, qc, qd = q
    return (
        pa * qa - pb * qb - pc * qc - pd * qd,
        pa * qb + pb * qa + pc * qd - pd * qc,
        pa * qc - pb * qd + pc * qa + pd * qb,
        pa * qd + pb * qc - pc * qb + pd * qa,
    )


def qmul(p: Quaternion, q: Quaternion) -> Quaternion:
    return Quaternion(*_hamilton((p.a, p.b, p.c, p.d), (q.a, q.b, q.c, q.d)))


def conjugate(q: Quaternion) -> Quaternion:
    return Quaternion(q.a, -q.b, -q.c, -q.d)


def norm(q: Quaternion) -> float:
    return math.hypot(q.a, q.b, q.c, q.d)  # no underflow for tiny components


def dot(p: Quaternion, q: Quaternion) -> float:
    return p.a * q.a + p.b * q.b + p.c * q.c + p.d * q.d


def _as_axis(nu) -> Quaternion:
    if isinstance(nu, PureUnitQuaternion):
        return nu.quaternion
    if isinstance(nu, Quaternion):
        nu = (nu.b, nu.c, nu.d) if nu.a == 0.0 else None
        if nu is None:
            raise NonUnitAxis("involution axis must be a pure quaternion")
    return PureUnitQuaternion(*nu).quaternion


def involution(q: Quaternion, nu) -> Quaternion:
    """Return ``-nu q nu``, a rotation by pi about the axis ``nu``."""
    v = _as_axis(nu)
    return qmul(qmul(-v, q), v)


class PolarForm(NamedTuple):
    modulus: float
    axis: Optional[PureUnitQuaternion]
    angle: float
    degenerate: bool


def polar(q: Quaternion) -> PolarForm:
    """Decompose ``q = |q| (cos t + axis sin t)``.

    For a real quaternion the axis is undefined: ``axis`` is None,
    ``degenerate`` is True and the angle is 0 or pi depending on sign.
    """
    modulus = norm(q)
    imag_norm = math.sqrt(q.b * q.b + q.c * q.c + q.d * q.d)
    if imag_norm == 0.0:
        angle = math.pi if q.a < 0 else 0.0
        return PolarForm(modulus, None, angle, True)
    angle = math.atan2(imag_norm, q.a)
    v = np.array([q.b, q.c, q.d]) / imag_norm
    # renormalise once more so the unit check survives rounding
    v = v / np.linalg.norm(v)
    return PolarForm(modulus, PureUnitQuaternion(*map(float, v)), angle, False)


def from_polar(modulus: float, axis: PureUnitQuaternion, angle: float) -> Quaternion:
    s = math.sin(angle)
    return Quaternion(modulus * math.cos(angle), modulus * s * axis.b, modulus * s * axis.c, modulus * s * axis.d)


def to_left_matrix(q: Quaternion) -> np.ndarray:
    """Real 4x4 matrix ``M`` with ``M @ p.as_array() == qmul(q, p).as_array()``."""
    comps = q.as_array()
    return HAMILTON_SIGN * comps[HAMILTON_INDEX]


class QuaternionArray:
    """An n-dimensional array of quaternions stored as four real planes."""

    __slots__ = ("planes",)

    def __init__(self, planes):
        planes = np.asarray(planes, dtype=np.float64)
        if planes.ndim < 1 or planes.shape[0] != 4:
            raise ShapeMismatch(f"expected leading axis of length 4, got shape {planes.shape}")
        self.planes = planes

    @classmethod
    def from_components(cls, a, b, c, d) -> "QuaternionArray":
        a, b, c, d = (np.asarray(x, dtype=np.float64) for x in (a, b, c, d))
        if not (a.shape == b.shape == c.shape == d.shape):
            raise ShapeMismatch("component planes must share one shape")
        return cls(np.stack([a, b, c, d]))

    @classmethod
    def from_quaternions(cls, qs) -> "QuaternionArray":
        return cls(np.array([q.as_array() for q in qs]).T)

    @classmethod
    def zeros(cls, shape) -> "QuaternionArray":
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        return cls(np.zeros((4,) + shape))

    @classmethod
    def real(cls, values) -> "QuaternionArray":
        values = np.asarray(values, dtype=np.float64)
        planes = np.zeros((4,) + values.shape)
        planes[0] = values
        return cls(planes)

    @property
    def shape(self) -> tuple:
        return self.planes.shape[1:]

    def __len__(self) -> int:
        return self.shape[0]

    a = property(lambda self: self.planes[0])
    b = property(lambda self: self.planes[1])
    c = property(lambda self: self.planes[2])
    d = property(lambda self: self.planes[3])

    def __getitem__(self, idx):
        if not isinstance(idx, tuple):
            idx = (idx,)
        sub = self.planes[(slice(None),) + idx]
        if sub.ndim == 1:
            return Quaternion.from_array(sub)
        return QuaternionArray(sub)

    def __iter__(self):
        for n in range(len(self)):
            yield self[n]

    def __repr__(self) -> str:
        return f"QuaternionArray(shape={self.shape})"

    def __eq__(self, other) -> bool:
        return isinstance(other, QuaternionArray) and np.array_equal(self.planes, other.planes)

    def __add__(self, other: "QuaternionArray") -> "QuaternionArray":
        return QuaternionArray(self.planes + other.planes)

    def __sub__(self, other: "QuaternionArray") -> "QuaternionArray":
        return QuaternionArray(self.planes - other.planes)

    def __neg__(self) -> "QuaternionArray":
        return QuaternionArray(-self.planes)

    def __mul__(self, other):
        """Elementwise Hamilton product (broadcasting), or real scaling."""
        if isinstance(other, Quaternion):
            other = other.as_array().reshape((4,) + (1,) * len(self.shape))
            return QuaternionArray(np.stack(_hamilton(self.planes, other)))
        if isinstance(other, QuaternionArray):
            return QuaternionArray(np.stack(_hamilton(self.planes, other.planes)))
        return QuaternionArray(self.planes * other)

    def __rmul__(self, other):
        if isinstance(other, Quaternion):
            other = other.as_array().reshape((4,) + (1,) * len(self.shape))
            return QuaternionArray(np.stack(_hamilton(other, self.planes)))
        return QuaternionArray(self.planes * other)

    def __matmul__(self, other: "QuaternionArray") -> "QuaternionArray":
        return qmatmul(self, other)

    def conj(self) -> "QuaternionArray":
        return QuaternionArray(self.planes * np.array([1.0, -1.0, -1.0, -1.0]).reshape((4,) + (1,) * len(self.shape)))

    @property
    def H(self) -> "QuaternionArray":
        """Conjugate transpose of a quaternion matrix (swaps the last two axes)."""
        return QuaternionArray(np.swapaxes(self.conj().planes, -1, -2))

    def abs2(self) -> np.ndarray:
        return np.sum(self.planes**2, axis=0)

    def norm(self) -> np.ndarray:
        return np.sqrt(self.abs2())

    def involution(self, nu) -> "QuaternionArray":
        v = _as_axis(nu)
        return QuaternionArray(np.stack(_hamilton(_hamilton(_bcast(-v, self), self.planes), _bcast(v, self))))

    def reshape(self, *shape) -> "QuaternionArray":
        if len(shape) == 1 and not isinstance(shape[0], int):
            shape = tuple(shape[0])
        return QuaternionArray(self.planes.reshape((4,) + shape))

    def real_matrix(self) -> np.ndarray:
        """Real representation of a quaternion matrix: every entry becomes its 4x4 left matrix."""
        if len(self.shape) != 2:
            raise ShapeMismatch("real_matrix needs a 2-d quaternion array")
        m, n = self.shape
        blocks = HAMILTON_SIGN[:, :, None, None] * self.planes[HAMILTON_INDEX]  # (4, 4, m, n)
        return blocks.transpose(2, 0, 3, 1).reshape(4 * m, 4 * n)


def _bcast(q: Quaternion, like: QuaternionArray) -> np.ndarray:
    return q.as_array().reshape((4,) + (1,) * len(like.shape))


def qmatmul(A: QuaternionArray, B: QuaternionArray) -> QuaternionArray:
    """Quaternion matrix product (last axis of A against second-to-last of B)."""
    Ap, Bp = A.planes, B.planes
    out = []
    for r in range(4):
        acc = 0.0
        for c in range(4):
            acc = acc + HAMILTON_SIGN[r, c] * np.matmul(Ap[HAMILTON_INDEX[r, c]], Bp[c])
        out.append(acc)
    return QuaternionArray(np.stack(out))
