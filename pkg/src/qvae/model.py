"""Quaternion variational autoencoder and its real-valued baseline.

Images enter as (N, 4, H, W) batches: plane 0 is the real part (always
zero) and planes 1-3 carry R, G, B on the i, j, k axes. Latent vectors of
``L`` quaternion dimensions are (N, 4L) real tensors in component-major
order, the same grouping the quaternion layers use for channels.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from .errors import ShapeMismatch
from .layers import DEFAULT_SLOPE, Layer, LayerKind, LayerSpec
from .quaternion import QuaternionArray
from .stats import KLVariant, ProperGaussianParams, kl_formula, sample_proper
from .tensor import Tensor, bce_loss, concat, leaky_relu, no_grad, sigmoid

LOG_VAR_MIN, LOG_VAR_MAX = -30.0, 20.0
ENC_KERNEL, DEC_KERNEL = 4, 4


@dataclass
class QvaeConfig:
    encoder_channels: tuple = (32, 64, 128, 256, 512)
    latent_dim: int = 100
    lambda_kl: float = 1e-5
    leaky_slope: float = DEFAULT_SLOPE
    kl_variant: str = KLVariant.PAPER_EXACT.value
    mc_samples: int = 1
    input_size: int = 64
    seed: int = 0
    model: str = "qvae"  # or "vae"
    latent_policy: str = "real"  # baseline only: "real" = 4 * latent_dim real dims, "count" = latent_dim
    dtype: str = "float32"

    def __post_init__(self):
        self.encoder_channels = tuple(int(c) for c in self.encoder_channels)
        self.kl_variant = KLVariant(self.kl_variant).value
        if self.model not in ("qvae", "vae"):
            raise ValueError(f"unknown model kind {self.model!r}")
        if self.latent_policy not in ("real", "count"):
            raise ValueError(f"unknown latent policy {self.latent_policy!r}")
        if not self.encoder_channels:
            raise ValueError("encoder_channels must not be empty")
        if self.model == "qvae" and any(c % 4 for c in self.encoder_channels):
            from .errors import ChannelNotDivisibleBy4
            raise ChannelNotDivisibleBy4(f"channel plan {self.encoder_channels} has entries not divisible by 4")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.lambda_kl < 0:
            raise ValueError("lambda_kl must be >= 0")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")
        if self.input_size % 2 ** len(self.encoder_channels):
            raise ValueError(
                f"input_size {self.input_size} must be divisible by 2^{len(self.encoder_channels)}")

    @property
    def bottleneck(self) -> int:
        return self.input_size // 2 ** len(self.encoder_channels)

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_channels"] = list(self.encoder_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "QvaeConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class LatentDistribution:
    mu: Tensor  # (N, 4L) for the quaternion model, (N, L) for the baseline
    log_var: Tensor  # (N, L)

    @property
    def quaternion_dims(self) -> int:
        return self.log_var.shape[1]

    def mean_quaternions(self) -> QuaternionArray:
        return features_to_quaternions(self.mu.data)

    def variance(self) -> np.ndarray:
        return np.exp(self.log_var.data)


def quaternions_to_features(q: QuaternionArray) -> np.ndarray:
    """(n, L) quaternion array -> (n, 4L) component-major real features."""
    return np.concatenate(list(q.planes), axis=-1)


def features_to_quaternions(x: np.ndarray) -> QuaternionArray:
    n, f = x.shape
    return QuaternionArray(x.reshape(n, 4, f // 4).transpose(1, 0, 2))


def to_image_batch(rgb: np.ndarray, dtype=np.float32) -> np.ndarray:
    """(N, 3, H, W) colour images in [0, 1] -> (N, 4, H, W) with a zero real plane."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 4 or rgb.shape[1] != 3:
        raise ShapeMismatch(f"expected (N, 3, H, W) images, got {rgb.shape}")
    out = np.zeros((rgb.shape[0], 4) + rgb.shape[2:], dtype=dtype)
    out[:, 1:] = rgb
    return out


def _batch_kl(dist: LatentDistribution, variant, real_prior: bool) -> Tensor:
    """Per-sample KL to the standard prior, averaged over the batch."""
    log_var = dist.log_var
    var_sum = log_var.exp().sum(axis=1)
    mu_sq = (dist.mu * dist.mu).sum(axis=1)
    lv_sum = log_var.sum(axis=1)
    dim = log_var.shape[1]
    if real_prior:
        kl = 0.5 * (var_sum + mu_sq - dim - lv_sum)
    else:
        kl = kl_formula(var_sum, mu_sq, lv_sum, dim, variant)
    return kl.mean()


class _VaeBase:
    quaternion = True

    def __init__(self, config: QvaeConfig):
        self.config = config
        self.layers: dict[str, Layer] = {}
        seeds = np.random.SeedSequence(config.seed).spawn(len(self.layer_specs()))
        for (name, spec), seed in zip(self.layer_specs().items(), seeds):
            self.layers[name] = Layer.create(spec, seed, slope=config.leaky_slope, dtype=config.np_dtype)

    # subclasses define layer_specs()

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [(f"{lname}.{pname}", t) for lname, layer in self.layers.items() for pname, t in layer.parameters()]

    def num_parameters(self) -> int:
        return sum(t.size for _, t in self.parameters())

    def zero_grad(self) -> None:
        for _, t in self.parameters():
            t.grad = None

    @property
    def latent_features(self) -> int:
        raise NotImplementedError

    def encode(self, x) -> LatentDistribution:
        cfg = self.config
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=cfg.np_dtype))
        if x.ndim != 4 or x.shape[1] != 4 or x.shape[2:] != (cfg.input_size, cfg.input_size):
            raise ShapeMismatch(f"expected (N, 4, {cfg.input_size}, {cfg.input_size}) images, got {x.shape}")
        h = self._input(x)
        for i in range(len(cfg.encoder_channels)):
            h = leaky_relu(self.layers[f"enc{i}"](h), cfg.leaky_slope)
        h = h.reshape(h.shape[0], -1)
        mu = self.layers["mu"](h)
        log_var = self._log_var_head(self.layers["log_var"](h)).clip(LOG_VAR_MIN, LOG_VAR_MAX)
        return LatentDistribution(mu, log_var)

    def _log_var_head(self, out: Tensor) -> Tensor:
        return out

    def _input(self, x: Tensor) -> Tensor:
        mask = np.ones((1, 4, 1, 1), dtype=x.dtype)
        mask[0, 0] = 0.0
        return x * Tensor(mask)

    def _decode_output(self, h: Tensor) -> Tensor:
        return concat([h[:, :1], sigmoid(h[:, 1:])], axis=1)

    def reparameterize(self, dist: LatentDistribution, rng) -> Tensor:
        """``z = mu + sigma * eps`` with eps standard normal and held fixed for gradients."""
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        eps = rng.standard_normal(dist.mu.shape).astype(dist.mu.dtype)
        sigma = (dist.log_var * 0.5).exp()
        if self.quaternion:
            sigma = concat([sigma] * 4, axis=1)
        return dist.mu + sigma * Tensor(eps)

    def decode(self, z) -> Tensor:
        cfg = self.config
        z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=cfg.np_dtype))
        if z.ndim != 2 or z.shape[1] != self.latent_features:
            raise ShapeMismatch(f"expected (N, {self.latent_features}) latents, got {z.shape}")
        g = cfg.bottleneck
        h = self.layers["project"](z).reshape(z.shape[0], cfg.encoder_channels[-1], g, g)
        for i in range(len(cfg.encoder_channels)):
            h = leaky_relu(self.layers[f"dec{i}"](h), cfg.leaky_slope)
        return self._decode_output(self.layers["out"](h))

    def kl(self, dist: LatentDistribution) -> Tensor:
        return _batch_kl(dist, self.config.kl_variant, real_prior=not self.quaternion)

    def loss(self, x, x_hat: Tensor, dist: LatentDistribution, lam: Optional[float] = None):
        """Return ``(total, bce, kl)`` where total = bce + lam * kl; the real plane is not scored."""
        lam = self.config.lambda_kl if lam is None else lam
        target = x.data if isinstance(x, Tensor) else np.asarray(x)
        if target.shape != x_hat.shape:
            raise ShapeMismatch(f"target {target.shape} vs prediction {x_hat.shape}")
        bce = bce_loss(x_hat[:, 1:], target[:, 1:].astype(x_hat.dtype))
        kl = self.kl(dist)
        return bce + kl * lam, bce, kl

    def forward_loss(self, x, rng, lam: Optional[float] = None):
        """Encode, draw ``mc_samples`` latents, decode, and score; returns (total, bce, kl, dist)."""
        dist = self.encode(x)
        bce = None
        for _ in range(self.config.mc_samples):
            x_hat = self.decode(self.reparameterize(dist, rng))
            _, b, kl = self.loss(x, x_hat, dist, lam=0.0)
            bce = b if bce is None else bce + b
        bce = bce * (1.0 / self.config.mc_samples)
        lam = self.config.lambda_kl if lam is None else lam
        return bce + kl * lam, bce, kl, dist

    def reconstruct(self, x) -> np.ndarray:
        """Decode the posterior mean (no sampling)."""
        with no_grad():
            return self.decode(self.encode(x).mu).data

    def sample_prior(self, n: int, seed) -> np.ndarray:
        raise NotImplementedError

    def generate(self, n: int, seed) -> np.ndarray:
        with no_grad():
            return self.decode(self.sample_prior(n, seed)).data


class QVAE(_VaeBase):
    quaternion = True

    def layer_specs(self) -> dict[str, LayerSpec]:
        cfg = self.config
        ch = cfg.encoder_channels
        flat = ch[-1] * cfg.bottleneck**2
        specs = {}
        prev = 4
        for i, c in enumerate(ch):
            specs[f"enc{i}"] = LayerSpec(LayerKind.QCONV, prev, c, ENC_KERNEL, 2, 1)
            prev = c
        specs["mu"] = LayerSpec(LayerKind.QDENSE, flat, 4 * cfg.latent_dim)
        specs["log_var"] = LayerSpec(LayerKind.QDENSE, flat, 4 * cfg.latent_dim)
        specs["project"] = LayerSpec(LayerKind.QDENSE, 4 * cfg.latent_dim, flat)
        dec = list(ch[::-1]) + [ch[0]]
        for i in range(len(ch)):
            specs[f"dec{i}"] = LayerSpec(LayerKind.QTRANSPOSED_CONV, dec[i], dec[i + 1], DEC_KERNEL, 2, 1)
        specs["out"] = LayerSpec(LayerKind.QCONV, ch[0], 4, 3, 1, 1)
        return specs

    @property
    def latent_features(self) -> int:
        return 4 * self.config.latent_dim

    def _log_var_head(self, out: Tensor) -> Tensor:
        # real part of the quaternion head output; imaginary parts are unused
        return out[:, : self.config.latent_dim]

    def sample_prior(self, n: int, seed) -> np.ndarray:
        q = sample_proper(ProperGaussianParams.standard(self.config.latent_dim), n, seed)
        return quaternions_to_features(q).astype(self.config.np_dtype)


class RealVAE(_VaeBase):
    """Real-valued baseline with the same channel plan.

    It reads and writes the same 4-plane image batches as the QVAE, so
    every layer has exactly four times the weights of its quaternion twin.
    """

    quaternion = False

    @property
    def latent_features(self) -> int:
        cfg = self.config
        return 4 * cfg.latent_dim if cfg.latent_policy == "real" else cfg.latent_dim

    def layer_specs(self) -> dict[str, LayerSpec]:
        cfg = self.config
        ch = cfg.encoder_channels
        flat = ch[-1] * cfg.bottleneck**2
        lat = self.latent_features
        specs = {}
        prev = 4
        for i, c in enumerate(ch):
            specs[f"enc{i}"] = LayerSpec(LayerKind.REAL_CONV, prev, c, ENC_KERNEL, 2, 1)
            prev = c
        specs["mu"] = LayerSpec(LayerKind.REAL_DENSE, flat, lat)
        specs["log_var"] = LayerSpec(LayerKind.REAL_DENSE, flat, lat)
        specs["project"] = LayerSpec(LayerKind.REAL_DENSE, lat, flat)
        dec = list(ch[::-1]) + [ch[0]]
        for i in range(len(ch)):
            specs[f"dec{i}"] = LayerSpec(LayerKind.REAL_TRANSPOSED_CONV, dec[i], dec[i + 1], DEC_KERNEL, 2, 1)
        specs["out"] = LayerSpec(LayerKind.REAL_CONV, ch[0], 4, 3, 1, 1)
        return specs

    def sample_prior(self, n: int, seed) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return rng.standard_normal((n, self.latent_features)).astype(self.config.np_dtype)


def build_model(config: QvaeConfig):
    return QVAE(config) if config.model == "qvae" else RealVAE(config)


def build_baseline_vae(config: QvaeConfig) -> RealVAE:
    d = config.to_dict()
    d["model"] = "vae"
    return RealVAE(QvaeConfig.from_dict(d))


def model_specs(config: QvaeConfig) -> dict[str, LayerSpec]:
    """Layer plan of a model without allocating its weights."""
    cls = QVAE if config.model == "qvae" else RealVAE
    obj = cls.__new__(cls)
    obj.config = config
    return obj.layer_specs()
