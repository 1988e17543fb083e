"""Optimisation loop, Adam with step decay, checkpointing and metric logs."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import checkpoint
from .errors import CheckpointError, Divergence, EmptyDataset, MissingGradient
from .metrics import mse, ssim
from .model import QvaeConfig, build_model
from .tensor import backward

log = logging.getLogger(__name__)

CSV_HEADER = ["epoch", "step", "loss", "bce", "kl", "lr"]


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 64
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_every: int = 10
    milestones: Optional[list] = None  # explicit epoch milestones override decay_every
    decay_factor: float = 0.5
    checkpoint_every: int = 1

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 0-based epoch index."""
        if self.milestones is not None:
            k = sum(1 for m in self.milestones if epoch >= m)
        else:
            k = epoch // self.decay_every if self.decay_every > 0 else 0
        return self.lr * self.decay_factor**k

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class OptimizerState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr, beta1=0.9, beta2=0.999, eps=1e-8) -> "OptimizerState":
        return cls(lr, beta1, beta2, eps, 0, [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params: list, grads: list, state: OptimizerState) -> list:
    """One bias-corrected Adam update. Moments in ``state`` are updated in place."""
    if any(g is None for g in grads):
        raise MissingGradient("every parameter needs a gradient before an Adam step")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        m = state.m[i] = state.beta1 * state.m[i] + (1 - state.beta1) * g
        v = state.v[i] = state.beta2 * state.v[i] + (1 - state.beta2) * (g * g)
        update = (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
        out.append(p - update)
    return out


@dataclass
class StepRecord:
    epoch: int
    step: int
    loss: float
    bce: float
    kl: float
    lr: float

    def row(self) -> list:
        return [self.epoch, self.step, repr(self.loss), repr(self.bce), repr(self.kl), repr(self.lr)]


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    bce: float
    kl: float
    lr: float
    steps: list


class Trainer:
    """Holds model, optimiser and RNG; everything needed to continue bit-for-bit."""

    def __init__(self, config: QvaeConfig, train_config: TrainConfig, dataset, model=None):
        if dataset is None or len(dataset) == 0:
            raise EmptyDataset("training needs at least one image")
        if dataset.target_size != config.input_size:
            raise ValueError(f"dataset images are {dataset.target_size}px, model expects {config.input_size}px")
        self.config = config
        self.train_config = train_config
        self.dataset = dataset
        self.model = model if model is not None else build_model(config)
        self.params = [t for _, t in self.model.parameters()]
        tc = train_config
        self.opt = OptimizerState.for_params([p.data for p in self.params], tc.lr, tc.beta1, tc.beta2, tc.eps)
        self.rng = np.random.default_rng([config.seed, 1])
        self.epoch = 0
        self.global_step = 0
        self._order = None  # shuffled indices of the epoch in progress
        self._steps = []

    @property
    def lam(self) -> float:
        return self.config.lambda_kl

    def train_step(self, x: np.ndarray) -> StepRecord:
        self.model.zero_grad()
        total, bce, kl, _ = self.model.forward_loss(x, self.rng)
        b, k = float(bce.item()), float(kl.item())
        if not (math.isfinite(total.item()) and math.isfinite(b) and math.isfinite(k)):
            raise Divergence(f"non-finite loss at step {self.global_step}")
        backward(total)
        new = adam_step([p.data for p in self.params], [p.grad for p in self.params], self.opt)
        for p, d in zip(self.params, new):
            p.data = d
        self.global_step += 1
        return StepRecord(self.epoch, self.global_step, b + self.lam * k, b, k, self.opt.lr)

    def run_steps(self, max_steps=None) -> Optional[EpochRecord]:
        """Advance through the current epoch; returns its record once the epoch completes.

        The epoch's shuffled order and the finished steps live on the trainer,
        so a checkpoint written between calls resumes mid-epoch exactly.
        """
        n = len(self.dataset)
        bs = self.train_config.batch_size
        if self._order is None:
            self.opt.lr = self.train_config.lr_at(self.epoch)
            self._order = self.rng.permutation(n)
            self._steps = []
        done = 0
        while len(self._steps) * bs < n and (max_steps is None or done < max_steps):
            start = len(self._steps) * bs
            x = self.dataset.batch(self._order[start:start + bs], dtype=self.config.np_dtype)
            self._steps.append(self.train_step(x))
            done += 1
        if len(self._steps) * bs < n:
            return None
        steps = self._steps
        weights = np.array([min(bs, n - s) for s in range(0, n, bs)], dtype=np.float64)
        avg = lambda attr: float(np.average([getattr(s, attr) for s in steps], weights=weights))
        rec = EpochRecord(self.epoch, avg("loss"), avg("bce"), avg("kl"), self.opt.lr, steps)
        self.epoch += 1
        self._order, self._steps = None, []
        return rec

    def run_epoch(self) -> EpochRecord:
        return self.run_steps()

    # persistence ---------------------------------------------------------------------

    def save(self, path) -> None:
        meta = {
            "model_kind": "quaternion" if self.config.model == "qvae" else "real",
            "config": self.config.to_dict(),
            "train_config": self.train_config.to_dict(),
            "epoch": self.epoch,
            "global_step": self.global_step,
            "optimizer": {"step": self.opt.step, "lr": self.opt.lr, "beta1": self.opt.beta1,
                          "beta2": self.opt.beta2, "eps": self.opt.eps},
            "rng_state": self.rng.bit_generator.state,
            "epoch_order": None if self._order is None else self._order.tolist(),
            "epoch_steps": [asdict(r) for r in self._steps],
        }
        named = [(name, t.data) for name, t in self.model.parameters()]
        checkpoint.save(path, meta, named, self.opt.m, self.opt.v, dtype=self.config.np_dtype)

    @classmethod
    def from_checkpoint(cls, path, dataset, train_config: Optional[TrainConfig] = None) -> "Trainer":
        ck = checkpoint.load(path)
        config = config_from_meta(ck.meta)
        tc = train_config or TrainConfig.from_dict(ck.meta["train_config"])
        trainer = cls(config, tc, dataset)
        _assign_params(trainer.model, ck)
        if ck.moments1:
            trainer.opt.m = list(ck.moments1)
            trainer.opt.v = list(ck.moments2)
        o = ck.meta["optimizer"]
        trainer.opt.step, trainer.opt.lr = o["step"], o["lr"]
        trainer.epoch = ck.meta["epoch"]
        trainer.global_step = ck.meta["global_step"]
        trainer.rng.bit_generator.state = ck.meta["rng_state"]
        order = ck.meta.get("epoch_order")
        if order is not None:
            if len(order) != len(dataset):
                raise CheckpointError("checkpoint was taken mid-epoch on a dataset of a different size")
            trainer._order = np.array(order, dtype=np.int64)
            trainer._steps = [StepRecord(**r) for r in ck.meta.get("epoch_steps", [])]
        return trainer


def config_from_meta(meta: dict) -> QvaeConfig:
    try:
        return QvaeConfig.from_dict(meta["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"checkpoint config is invalid: {exc}") from exc


def _assign_params(model, ck) -> None:
    named = model.parameters()
    if [n for n, _ in named] != [n for n, _ in ck.params]:
        raise CheckpointError("checkpoint parameters do not match the model layout")
    for (name, t), (_, arr) in zip(named, ck.params):
        if t.shape != arr.shape:
            raise CheckpointError(f"shape mismatch for {name}: {t.shape} vs {arr.shape}")
        t.data = arr.astype(t.dtype)


def load_model(path):
    """Rebuild a model (weights only) from a checkpoint file."""
    ck = checkpoint.load(path)
    model = build_model(config_from_meta(ck.meta))
    _assign_params(model, ck)
    return model, ck.meta


class MetricsLog:
    """Append-only per-step CSV."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not self.path.exists() or self.path.stat().st_size == 0:
            with self.path.open("w", newline="") as fh:
                csv.writer(fh).writerow(CSV_HEADER)

    def append(self, steps) -> None:
        with self.path.open("a", newline="") as fh:
            w = csv.writer(fh)
            for s in steps:
                w.writerow(s.row())


def train(config: QvaeConfig, train_config: TrainConfig, dataset, out_dir=None, resume=None):
    """Run the remaining epochs, yielding one :class:`EpochRecord` per epoch.

    With ``out_dir`` set, per-step metrics go to ``metrics.csv`` and
    checkpoints to ``epoch_XXXX.qvae`` plus ``last.qvae``.
    """
    if resume is not None:
        trainer = Trainer.from_checkpoint(resume, dataset, train_config)
    else:
        trainer = Trainer(config, train_config, dataset)
    metrics = MetricsLog(Path(out_dir) / "metrics.csv") if out_dir is not None else None
    while trainer.epoch < train_config.epochs:
        rec = trainer.run_epoch()
        log.info("epoch %d loss %.6f bce %.6f kl %.4f lr %.2e", rec.epoch, rec.loss, rec.bce, rec.kl, rec.lr)
        if metrics is not None:
            metrics.append(rec.steps)
            done = trainer.epoch
            if done % train_config.checkpoint_every == 0 or done == train_config.epochs:
                trainer.save(Path(out_dir) / f"epoch_{done:04d}.qvae")
                trainer.save(Path(out_dir) / "last.qvae")
        yield rec
    return trainer


def evaluate_reconstruction(model, dataset, n: Optional[int] = None, batch_size: int = 64) -> dict:
    """Mean SSIM and MSE between images and posterior-mean reconstructions."""
    n = len(dataset) if n is None else min(n, len(dataset))
    originals, recons = [], []
    for start in range(0, n, batch_size):
        x = dataset.batch(range(start, min(n, start + batch_size)), dtype=model.config.np_dtype)
        originals.append(x)
        recons.append(model.reconstruct(x))
    x, y = np.concatenate(originals), np.concatenate(recons)
    return {"ssim": ssim(x, y), "mse": mse(x, y), "n": n, "originals": x, "reconstructions": y}
