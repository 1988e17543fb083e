"""Augmented second-order statistics of quaternion random vectors.

Sample sets are :class:`QuaternionArray` objects of shape ``(n, N)``: ``n``
draws of an ``N``-dimensional quaternion vector. The augmented vector of a
draw is ``[q, q^i, q^j, q^k]`` and its covariance is a ``4N x 4N``
quaternion matrix whose first row of blocks holds ``C_qq`` and the three
complementary covariances.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (InsufficientSamples, NonPositiveVariance, ShapeMismatch, SingularCovariance,
                     ZeroVariance)
from .quaternion import AXIS_I, AXIS_J, AXIS_K, QuaternionArray, qmatmul

AXES = (AXIS_I, AXIS_J, AXIS_K)
AXIS_NAMES = ("i", "j", "k")

# sign pattern of the three basis involutions: q^i = (a, b, -c, -d), ...
_INVOLUTION_SIGNS = np.array([
    [1.0, 1.0, -1.0, -1.0],
    [1.0, -1.0, 1.0, -1.0],
    [1.0, -1.0, -1.0, 1.0],
])


class KLVariant(str, enum.Enum):
    PAPER_EXACT = "paper"
    REAL_AUGMENTED = "real"


def as_samples(samples) -> QuaternionArray:
    """Stack a list of length-N quaternion vectors into an (n, N) array."""
    if isinstance(samples, QuaternionArray):
        arr = samples
    else:
        samples = list(samples)
        if not samples:
            raise InsufficientSamples("no samples given")
        lengths = {s.shape for s in samples}
        if len(lengths) != 1:
            raise ShapeMismatch(f"samples have differing shapes {sorted(lengths)}")
        arr = QuaternionArray(np.stack([s.planes for s in samples], axis=1))
    if len(arr.shape) == 1:
        arr = arr.reshape(arr.shape[0], 1)
    if len(arr.shape) != 2:
        raise ShapeMismatch(f"expected an (n, N) sample array, got {arr.shape}")
    return arr


@dataclass(frozen=True)
class AugmentedSample:
    base: QuaternionArray
    inv_i: QuaternionArray
    inv_j: QuaternionArray
    inv_k: QuaternionArray

    def stacked(self) -> QuaternionArray:
        return QuaternionArray(np.concatenate(
            [self.base.planes, self.inv_i.planes, self.inv_j.planes, self.inv_k.planes], axis=-1))


def _augment_planes(x: QuaternionArray) -> QuaternionArray:
    """Augmented vectors along the last axis: (..., N) -> (..., 4N)."""
    extra = (1,) * len(x.shape)
    parts = [x.planes] + [x.planes * s.reshape((4,) + extra) for s in _INVOLUTION_SIGNS]
    return QuaternionArray(np.concatenate(parts, axis=-1))


def augment(samples) -> list[AugmentedSample]:
    x = as_samples(samples)
    out = []
    for n in range(x.shape[0]):
        q = QuaternionArray(x.planes[:, n])
        out.append(AugmentedSample(q, *(q.involution(nu) for nu in AXES)))
    return out


@dataclass(frozen=True)
class AugmentedCovariance:
    matrix: QuaternionArray  # (4N, 4N)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0] // 4

    def block(self, r: int, c: int) -> QuaternionArray:
        n = self.dim
        return QuaternionArray(self.matrix.planes[:, r * n:(r + 1) * n, c * n:(c + 1) * n])

    @property
    def cqq(self) -> QuaternionArray:
        return self.block(0, 0)

    @property
    def complementary(self) -> tuple[QuaternionArray, QuaternionArray, QuaternionArray]:
        return self.block(0, 1), self.block(0, 2), self.block(0, 3)

    def real_matrix(self) -> np.ndarray:
        return self.matrix.real_matrix()

    def hermitian_error(self) -> float:
        return float(np.max(np.abs(self.matrix.planes - self.matrix.H.planes)))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.real_matrix()).min())

    @classmethod
    def proper(cls, variance) -> "AugmentedCovariance":
        """Block-scalar covariance ``4 sigma^2 I`` of a proper vector."""
        var = np.atleast_1d(np.asarray(variance, dtype=np.float64))
        return cls(QuaternionArray.real(np.diag(np.tile(4.0 * var, 4))))


def frobenius(m: QuaternionArray) -> float:
    return float(math.sqrt(np.sum(m.planes**2)))


def augmented_covariance(samples) -> AugmentedCovariance:
    """Mean-centred estimate of ``E{q~ q~^H}`` with 1/(n-1) normalisation."""
    x = as_samples(samples)
    n = x.shape[0]
    if n < 2:
        raise InsufficientSamples(f"need at least 2 samples, got {n}")
    centred = QuaternionArray(x.planes - x.planes.mean(axis=1, keepdims=True))
    aug = _augment_planes(centred)  # (n, 4N)
    lhs = QuaternionArray(np.swapaxes(aug.planes, 1, 2))  # (4N, n)
    m = QuaternionArray(qmatmul(lhs, aug.conj()).planes / (n - 1))
    # symmetrise so Hermitian symmetry (and a real diagonal) holds exactly
    return AugmentedCovariance(QuaternionArray(0.5 * (m.planes + m.H.planes)))


def improperness_measure(samples) -> float:
    """Squared Frobenius mass of the complementary covariances relative to ``C_qq``."""
    cov = samples if isinstance(samples, AugmentedCovariance) else augmented_covariance(samples)
    base = frobenius(cov.cqq) ** 2
    if base == 0.0:
        raise ZeroVariance("C_qq is the zero matrix")
    return sum(frobenius(b) ** 2 for b in cov.complementary) / base


@dataclass(frozen=True)
class ProperGaussianParams:
    mean: QuaternionArray  # (N,)
    variance: np.ndarray  # (N,)

    def __post_init__(self):
        var = np.broadcast_to(np.asarray(self.variance, dtype=np.float64), self.mean.shape).copy()
        object.__setattr__(self, "variance", var)

    @classmethod
    def standard(cls, dim: int) -> "ProperGaussianParams":
        return cls(QuaternionArray.zeros(dim), np.ones(dim))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def require_positive(self) -> None:
        if np.any(self.variance <= 0):
            raise NonPositiveVariance("variance entries must be strictly positive")


def proper_gaussian_logpdf(q: QuaternionArray, params: ProperGaussianParams):
    """Log density of a proper Gaussian; rows of a 2-d ``q`` are scored independently."""
    params.require_positive()
    if q.shape[-1] != params.dim:
        raise ShapeMismatch(f"q has length {q.shape[-1]}, params expect {params.dim}")
    var = params.variance
    sq = np.sum((q.planes - params.mean.planes.reshape((4,) + (1,) * (len(q.shape) - 1) + (-1,))) ** 2, axis=0)
    out = np.sum(-2.0 * np.log(2 * np.pi * var) - sq / (2 * var), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def augmented_gaussian_logpdf(q, mean: QuaternionArray, cov: AugmentedCovariance) -> float:
    """Log density of the general augmented Gaussian.

    ``det`` is the determinant of the quaternion Hermitian matrix, i.e. the
    product of its 4N real eigenvalues, which is the fourth root of the
    determinant of its real representation.
    """
    if isinstance(q, AugmentedSample):
        qt = q.stacked()
    else:
        qt = _augment_planes(q)
    diff = qt.planes - _augment_planes(mean).planes  # (4, 4N)
    n = qt.shape[-1] // 4
    if cov.dim != n:
        raise ShapeMismatch(f"covariance has dimension {cov.dim}, sample has {n}")
    chi = cov.real_matrix()
    try:
        chol = np.linalg.cholesky(chi)
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance("augmented covariance is not positive definite") from exc
    v = diff.T.reshape(-1)  # entry-major, matching real_matrix
    w = np.linalg.solve(chol, v)
    quad = float(w @ w)
    logdet = 0.25 * 2.0 * float(np.sum(np.log(np.diag(chol))))
    return -0.5 * quad - 2 * n * math.log(math.pi / 2) - 0.5 * logdet


def sample_proper(params: ProperGaussianParams, n: int, seed) -> QuaternionArray:
    """Draw ``n`` proper Gaussian vectors; returns an (n, N) array."""
    if np.any(params.variance < 0):
        raise NonPositiveVariance("variance must be non-negative")
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((4, n, params.dim))
    return QuaternionArray(params.mean.planes[:, None, :] + np.sqrt(params.variance) * eps)


def kl_formula(var_sum, mu_sq_sum, log_var_sum, dim: int, variant=KLVariant.PAPER_EXACT):
    """Closed-form KL to the standard proper prior from summed sufficient statistics.

    Works on floats, arrays and autodiff tensors alike.
    """
    variant = KLVariant(variant)
    if variant is KLVariant.PAPER_EXACT:
        return 0.5 * (var_sum + mu_sq_sum - dim) - 2.0 * log_var_sum
    return 2.0 * var_sum + 0.5 * mu_sq_sum - 2.0 * dim - 2.0 * log_var_sum


def kl_proper(posterior: ProperGaussianParams, variant=KLVariant.PAPER_EXACT) -> float:
    posterior.require_positive()
    var = posterior.variance
    return float(kl_formula(var.sum(), posterior.mean.abs2().sum(), np.log(var).sum(), posterior.dim, variant))


# Table-1 style moment diagnostics ------------------------------------------------

# standard deviation of each per-draw statistic for a proper Gaussian, in units of sigma^2
_MOMENT_SPREAD = {
    "E{q_d^2}": math.sqrt(2.0),
    "E{q_d q_e}": 1.0,
    "Re E{qq}": math.sqrt(8.0),
    "Im E{qq}": 2.0,
    "E{|q|^2}": math.sqrt(8.0),
}


def table1_moments(samples) -> dict:
    """Per-component moments of (n, N) draws, pooled over the N dimensions."""
    x = as_samples(samples)
    p = x.planes - x.planes.mean(axis=1, keepdims=True)
    second = np.einsum("dnk,enk->de", p, p) / p[0].size
    q2 = QuaternionArray(p) * QuaternionArray(p)
    return {
        "n": int(x.shape[0]),
        "dim": int(x.shape[1]),
        "component_second_moments": np.diag(second).tolist(),
        "cross_moments": {f"{'abcd'[i]}{'abcd'[j]}": float(second[i, j]) for i in range(4) for j in range(i + 1, 4)},
        "E{qq}": q2.planes.mean(axis=(1, 2)).tolist(),
        "E{|q|^2}": float(np.mean(np.sum(p**2, axis=0))),
    }


def table1_check(samples, sigma2: float, n_sigma: float = 5.0) -> dict:
    """Compare moments against the proper-variable identities within n-sigma bands.

    Returns a mapping of identity name to ``(observed, expected, tolerance, ok)``.
    """
    m = table1_moments(samples)
    count = m["n"] * m["dim"]
    band = {k: n_sigma * s * sigma2 / math.sqrt(count) for k, s in _MOMENT_SPREAD.items()}
    out = {}
    for i, v in enumerate(m["component_second_moments"]):
        out[f"E{{q_{'abcd'[i]}^2}}"] = (v, sigma2, band["E{q_d^2}"])
    for name, v in m["cross_moments"].items():
        out[f"E{{q_{name[0]} q_{name[1]}}}"] = (v, 0.0, band["E{q_d q_e}"])
    out["Re E{qq}"] = (m["E{qq}"][0], -2 * sigma2, band["Re E{qq}"])
    for i, v in enumerate(m["E{qq}"][1:]):
        out[f"Im_{AXIS_NAMES[i]} E{{qq}}"] = (v, 0.0, band["Im E{qq}"])
    out["E{|q|^2}"] = (m["E{|q|^2}"], 4 * sigma2, band["E{|q|^2}"])
    return {k: (obs, exp, tol, abs(obs - exp) <= tol) for k, (obs, exp, tol) in out.items()}


def stats_report(samples) -> dict:
    x = as_samples(samples)
    cov = augmented_covariance(x)
    moments = table1_moments(x)
    sigma2 = float(np.mean(moments["component_second_moments"]))
    checks = table1_check(x, sigma2)
    return {
        "n": moments["n"],
        "dim": moments["dim"],
        "improperness": improperness_measure(cov),
        "frobenius": {
            "C_qq": frobenius(cov.cqq),
            **{f"C_qq^{name}": frobenius(b) for name, b in zip(AXIS_NAMES, cov.complementary)},
        },
        "moments": moments,
        "sigma2_estimate": sigma2,
        "table1": {k: {"observed": o, "expected": e, "tolerance": t, "ok": bool(ok)}
                   for k, (o, e, t, ok) in checks.items()},
    }


def load_quaternion_text(path) -> QuaternionArray:
    """Read whitespace-separated rows holding 4 columns (a b c d) per quaternion dimension."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # empty file is reported below
        data = np.loadtxt(path, ndmin=2)
    if data.size == 0:
        raise ValueError(f"{path}: no numeric rows")
    if data.shape[1] % 4:
        raise ValueError(f"{path}: {data.shape[1]} columns is not a multiple of 4")
    n, cols = data.shape
    return QuaternionArray(data.reshape(n, cols // 4, 4).transpose(2, 0, 1))
