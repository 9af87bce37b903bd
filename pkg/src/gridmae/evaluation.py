"""Evaluation harness: held-out metrics, dataset splits, the neural power
flow path and the mean-imputation baseline."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .errors import ValidationError
from .masking import MaskedSample, mask_pf, mask_random, merge
from .model import Model, loss as model_loss
from .network import Grid, injection_mismatch
from .scenarios import Sample, sample_from_solution
from .training import Metrics, _MetricAccumulator, derive_seed


class Predictor(Protocol):
    """Anything with a ``predict(masked) -> (n, 4) array`` method."""

    def predict(self, masked: MaskedSample) -> np.ndarray: ...


@dataclass(frozen=True)
class MaskingSpec:
    """Evaluation masking protocol: random with a given alpha, or the
    fixed power-flow pattern."""

    kind: str  # "random" | "pf"
    alpha: float = 0.3

    def __post_init__(self):
        if self.kind not in ("random", "pf"):
            raise ValidationError(f"unknown masking kind {self.kind!r}")
        if self.kind == "random" and not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(f"alpha must be in [0, 1], got {self.alpha}")

    @classmethod
    def parse(cls, text: str) -> "MaskingSpec":
        """CLI form: ``pf`` or ``random:0.3``."""
        if text == "pf":
            return cls(kind="pf")
        if text.startswith("random:"):
            return cls(kind="random", alpha=float(text.split(":", 1)[1]))
        raise ValidationError(f"cannot parse masking spec {text!r}")

    def apply(self, sample: Sample, seed: int) -> MaskedSample:
        if self.kind == "pf":
            return mask_pf(sample)
        return mask_random(sample, self.alpha, seed)


def evaluate(
    model: Model,
    samples: Sequence[Sample],
    masking: MaskingSpec,
    seed: int = 0,
) -> Metrics:
    """Reconstruction metrics over a dataset under a masking protocol.

    Mask placement is deterministic in (seed, sample index), so repeated
    evaluations are directly comparable.
    """
    if not samples:
        raise ValidationError("evaluation dataset is empty")
    t0 = time.perf_counter()
    acc = _MetricAccumulator()
    for index, sample in enumerate(samples):
        masked = masking.apply(sample, derive_seed(seed, index))
        prediction = model.predict(masked)
        acc.add_sample(masked, prediction)
        acc.add_batch_loss(model_loss(model, [masked]))
    return acc.finish(time.perf_counter() - t0)


@dataclass
class MeanImputer:
    """Baseline predictor: per-feature means regardless of the input."""

    means: np.ndarray  # (4,)

    def predict(self, masked: MaskedSample) -> np.ndarray:
        return np.tile(self.means, (masked.sample.n_bus, 1))


def mean_imputation_mse(
    samples: Sequence[Sample],
    masking: MaskingSpec,
    means: np.ndarray,
    seed: int = 0,
) -> float:
    """Pooled masked-entry MSE of the mean-imputation baseline."""
    baseline = MeanImputer(means=np.asarray(means, dtype=np.float64))
    sq_sum = 0.0
    count = 0
    for index, sample in enumerate(samples):
        masked = masking.apply(sample, derive_seed(seed, index))
        err = np.where(
            masked.mask.bits, baseline.predict(masked) - sample.state, 0.0
        )
        sq_sum += float((err * err).sum())
        count += int(masked.mask.bits.sum())
    return sq_sum / max(count, 1)


def masked_mse(
    predictor: Predictor,
    samples: Sequence[Sample],
    masking: MaskingSpec,
    seed: int = 0,
) -> float:
    """Pooled masked-entry MSE of an arbitrary predictor."""
    sq_sum = 0.0
    count = 0
    for index, sample in enumerate(samples):
        masked = masking.apply(sample, derive_seed(seed, index))
        err = np.where(
            masked.mask.bits, predictor.predict(masked) - sample.state, 0.0
        )
        sq_sum += float((err * err).sum())
        count += int(masked.mask.bits.sum())
    return sq_sum / max(count, 1)


def mean_merged_residual(
    predictor: Predictor,
    samples: Sequence[Sample],
    masking: MaskingSpec,
    seed: int = 0,
) -> float:
    """Mean over samples of the merged-state balance residual (inf norm)."""
    residuals = []
    for index, sample in enumerate(samples):
        masked = masking.apply(sample, derive_seed(seed, index))
        merged = merge(masked, predictor.predict(masked))
        residuals.append(
            float(np.abs(injection_mismatch(sample.grid, merged)).max())
        )
    return float(np.mean(residuals))


# --- neural power flow -------------------------------------------------------


def sample_from_grid(grid: Grid, case_id: str | None = None) -> Sample:
    """Knowns-only sample: the state array carries the problem setpoints;
    entries that the power-flow mask hides are placeholders."""
    return sample_from_solution(
        grid,
        grid.setpoint_state(),
        case_id or grid.name,
        dropped=(),
        converged=False,
        iterations=0,
    )


def neural_pf(
    model: Predictor, grid: Grid, knowns: Sample
) -> tuple[np.ndarray, float]:
    """Reconstruct the solved state from standard power-flow knowns.

    Applies the power-flow mask, predicts, merges, and reports the
    infinity norm of the merged state's balance residual. Known entries
    are returned bit-identical to the input.
    """
    masked = mask_pf(knowns)
    prediction = model.predict(masked)
    merged = merge(masked, prediction)
    residual = float(np.abs(injection_mismatch(grid, merged)).max())
    return merged, residual


class OracleModel:
    """Test double: returns a fixed true state regardless of the mask."""

    def __init__(self, state: np.ndarray):
        self.state = np.asarray(state, dtype=np.float64)

    def predict(self, masked: MaskedSample) -> np.ndarray:
        return self.state


# --- dataset splits -----------------------------------------------------------


def split_by_scenario(
    samples: Sequence[Sample], train_fraction: float = 0.8, seed: int = 0
) -> tuple[list[Sample], list[Sample]]:
    """Deterministic shuffled split into (train, held-out)."""
    if not 0.0 < train_fraction < 1.0:
        raise ValidationError(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.Generator(np.random.Philox(key=derive_seed(seed, len(samples))))
    order = rng.permutation(len(samples))
    cut = int(round(train_fraction * len(samples)))
    train = [samples[int(i)] for i in order[:cut]]
    held = [samples[int(i)] for i in order[cut:]]
    return train, held


def split_by_topology(
    samples: Sequence[Sample], held_out_cases: Sequence[str] | None = None
) -> tuple[list[Sample], list[Sample]]:
    """Hold out whole topologies: by case id, or the last topology-hash
    group when no case ids are named."""
    if held_out_cases:
        held_set = set(held_out_cases)
        train = [s for s in samples if s.case_id not in held_set]
        held = [s for s in samples if s.case_id in held_set]
    else:
        hashes = sorted({s.topology_hash for s in samples})
        if len(hashes) < 2:
            raise ValidationError(
                "topology split needs at least two distinct topologies"
            )
        held_hash = hashes[-1]
        train = [s for s in samples if s.topology_hash != held_hash]
        held = [s for s in samples if s.topology_hash == held_hash]
    if not train or not held:
        raise ValidationError("topology split produced an empty side")
    return train, held
