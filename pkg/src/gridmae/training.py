"""Deterministic training loop with an Adam-style optimizer.

Every source of randomness (shuffling, mask placement, the choice of
which batches use the power-flow mask pattern) derives from the train
seed, the epoch and the sample position through hashed Philox keys, so
two runs with identical configs produce bit-identical parameter
trajectories and byte-identical checkpoints.
"""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import NonFiniteLoss, ValidationError
from .masking import MaskedSample, mask_pf, mask_random, merge
from .model import (
    Model,
    ModelConfig,
    backward,
    compute_feature_stats,
    init_model,
    save_checkpoint,
    set_feature_stats,
)
from .network import injection_mismatch
from .scenarios import Sample

logger = logging.getLogger(__name__)

_SHUFFLE_STREAM = 11
_PF_BATCH_STREAM = 12


def derive_seed(*parts: int) -> int:
    """Stable 63-bit seed from integer parts (order-sensitive)."""
    h = hashlib.blake2b(repr(tuple(int(p) for p in parts)).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "big") >> 1


def _stream(seed: int, label: int, draw: int) -> np.random.Generator:
    key = [seed & ((1 << 64) - 1), ((label << 48) ^ draw) & ((1 << 64) - 1)]
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 3e-3
    lr_decay: float = 0.98  # per-epoch multiplier
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    alpha: float = 0.3  # random-mask probability
    pf_mask_fraction: float = 0.25  # fraction of batches masked as power flow
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be >= 1")
        if self.learning_rate < 0 or self.lr_decay <= 0:
            raise ValidationError("learning_rate must be >= 0 and lr_decay > 0")
        if not 0.0 <= self.pf_mask_fraction <= 1.0:
            raise ValidationError(
                f"pf_mask_fraction must be in [0, 1], got {self.pf_mask_fraction}"
            )
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(f"alpha must be in [0, 1], got {self.alpha}")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "lr_decay": self.lr_decay,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "adam_eps": self.adam_eps,
            "alpha": self.alpha,
            "pf_mask_fraction": self.pf_mask_fraction,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class Metrics:
    """Per-epoch (or per-evaluation) reconstruction quality summary."""

    per_feature_mse: list[float]  # masked entries only, (p, q, v, delta)
    masked_mse: float  # pooled over features
    mean_pf_residual: float  # infinity norm of merged-state balance residual
    sce: float
    pf: float
    total: float
    n_samples: int
    wall_clock_s: float = 0.0

    def to_dict(self, include_timing: bool = False) -> dict:
        out = {
            "per_feature_mse": self.per_feature_mse,
            "masked_mse": self.masked_mse,
            "mean_pf_residual": self.mean_pf_residual,
            "sce": self.sce,
            "pf": self.pf,
            "total": self.total,
            "n_samples": self.n_samples,
        }
        # timing is excluded by default so identical runs emit identical reports
        if include_timing:
            out["wall_clock_s"] = self.wall_clock_s
        return out


class Adam:
    """Gradient descent with first/second-moment accumulation."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, model: Model, grads: dict[str, np.ndarray], lr: float) -> None:
        c = self.cfg
        self.step_count += 1
        t = self.step_count
        for name, tensor in model.params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            self.m[name] = c.beta1 * self.m[name] + (1 - c.beta1) * g
            self.v[name] = c.beta2 * self.v[name] + (1 - c.beta2) * g * g
            m_hat = self.m[name] / (1 - c.beta1**t)
            v_hat = self.v[name] / (1 - c.beta2**t)
            tensor.data = tensor.data - lr * m_hat / (np.sqrt(v_hat) + c.adam_eps)


@dataclass
class _MetricAccumulator:
    sq_err: np.ndarray = field(default_factory=lambda: np.zeros(4))
    counts: np.ndarray = field(default_factory=lambda: np.zeros(4))
    residuals: list[float] = field(default_factory=list)
    sce_sum: float = 0.0
    pf_sum: float = 0.0
    total_sum: float = 0.0
    n_batches: int = 0

    def add_sample(self, masked: MaskedSample, prediction: np.ndarray) -> None:
        bits = masked.mask.bits
        err = np.where(bits, prediction - masked.sample.state, 0.0)
        self.sq_err += (err * err).sum(axis=0)
        self.counts += bits.sum(axis=0)
        merged = merge(masked, prediction)
        residual = np.abs(injection_mismatch(masked.sample.grid, merged)).max()
        self.residuals.append(float(residual))

    def add_batch_loss(self, breakdown) -> None:
        self.sce_sum += breakdown.sce
        self.pf_sum += breakdown.pf
        self.total_sum += breakdown.total
        self.n_batches += 1

    def finish(self, wall_clock_s: float) -> Metrics:
        counts = np.maximum(self.counts, 1.0)
        per_feature = (self.sq_err / counts).tolist()
        total_count = max(self.counts.sum(), 1.0)
        nb = max(self.n_batches, 1)
        return Metrics(
            per_feature_mse=per_feature,
            masked_mse=float(self.sq_err.sum() / total_count),
            mean_pf_residual=float(np.mean(self.residuals)) if self.residuals else 0.0,
            sce=self.sce_sum / nb,
            pf=self.pf_sum / nb,
            total=self.total_sum / nb,
            n_samples=len(self.residuals),
            wall_clock_s=wall_clock_s,
        )


def build_masks(
    samples: Sequence[Sample],
    order: np.ndarray,
    batch_size: int,
    train_cfg: TrainConfig,
    epoch: int,
) -> list[list[MaskedSample]]:
    """Deterministic per-epoch batches with the mixed masking curriculum."""
    n_batches = int(np.ceil(len(order) / batch_size))
    pf_draws = _stream(train_cfg.seed, _PF_BATCH_STREAM, epoch).uniform(size=n_batches)
    batches: list[list[MaskedSample]] = []
    for b in range(n_batches):
        members = order[b * batch_size : (b + 1) * batch_size]
        use_pf = pf_draws[b] < train_cfg.pf_mask_fraction
        batch = []
        for pos in members:
            sample = samples[int(pos)]
            if use_pf:
                batch.append(mask_pf(sample))
            else:
                batch.append(
                    mask_random(
                        sample,
                        train_cfg.alpha,
                        derive_seed(train_cfg.seed, epoch, int(pos)),
                    )
                )
        batches.append(batch)
    return batches


def train(
    samples: Sequence[Sample],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    out_dir: str | Path | None = None,
    warm_start: Model | None = None,
) -> tuple[Model, list[Metrics]]:
    """Train on converged samples; returns the model and per-epoch metrics.

    Checkpoints are written per epoch when ``out_dir`` is given. A
    non-finite loss aborts with :class:`NonFiniteLoss` carrying the path
    of the last good checkpoint. Fine-tuning is the same loop warm-started
    from an existing model.
    """
    if not samples:
        raise ValidationError("training dataset is empty")
    if any(not s.converged for s in samples):
        raise ValidationError("training dataset contains non-converged samples")

    if warm_start is not None:
        model = warm_start
    else:
        model = init_model(model_cfg)
        set_feature_stats(model, *compute_feature_stats(samples))

    optimizer = Adam(train_cfg)
    history: list[Metrics] = []
    out_path = Path(out_dir) if out_dir is not None else None
    last_checkpoint: str | None = None

    for epoch in range(train_cfg.epochs):
        t0 = time.perf_counter()
        lr = train_cfg.learning_rate * train_cfg.lr_decay**epoch
        order = _stream(train_cfg.seed, _SHUFFLE_STREAM, epoch).permutation(len(samples))
        acc = _MetricAccumulator()
        for batch in build_masks(samples, order, train_cfg.batch_size, train_cfg, epoch):
            predictions: list[np.ndarray] = []
            try:
                breakdown, grads = backward(
                    model, batch, predictions_out=predictions
                )
            except NonFiniteLoss as exc:
                raise NonFiniteLoss(str(exc), last_checkpoint=last_checkpoint) from exc
            optimizer.step(model, grads, lr)
            acc.add_batch_loss(breakdown)
            for masked, pred in zip(batch, predictions):
                acc.add_sample(masked, pred)
        metrics = acc.finish(time.perf_counter() - t0)
        history.append(metrics)
        logger.info(
            "epoch %d: total=%.5f sce=%.5f pf=%.5f masked_mse=%.5f residual=%.4f",
            epoch, metrics.total, metrics.sce, metrics.pf,
            metrics.masked_mse, metrics.mean_pf_residual,
        )
        if out_path is not None:
            ckpt = out_path / f"ckpt-epoch-{epoch:04d}.json"
            save_checkpoint(model, ckpt)
            last_checkpoint = str(ckpt)

    return model, history
