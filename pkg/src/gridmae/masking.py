"""Node-feature masking: random per-entry masks and the fixed power-flow
pattern that hides exactly the variables a numeric solver would compute.

Masks are boolean (n_bus, 4) arrays over the (p, q, v, delta) feature
order; True means hidden. Random masks come from a Philox stream keyed on
the seed alone, drawing one uniform per entry in row-major order, so a
mask is reproducible from (seed, n_bus) on any platform. Masked entries
carry no sentinel value in the data; the placeholder is supplied by the
model's learnable mask token at embedding time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadAlpha, NoSlack, ShapeMismatch
from .network import BusType
from .scenarios import Sample

#: Feature columns kept visible per bus type under the power-flow mask.
PF_KNOWN_COLUMNS = {
    BusType.GENERATOR: (0, 2),  # p, v
    BusType.LOAD: (0, 1),  # p, q
    BusType.SLACK: (2, 3),  # v, delta
}

#: Identifier of the only placeholder policy implemented: masked inputs
#: are replaced by the model's learnable token, never by a number.
MASK_TOKEN_POLICY = "mask_token"


@dataclass(frozen=True, eq=False)
class Mask:
    bits: np.ndarray  # (n_bus, 4) bool, True = masked

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2 or bits.shape[1] != 4 or bits.dtype != np.bool_:
            raise ShapeMismatch(f"mask must be (n, 4) bool, got {bits.shape} {bits.dtype}")

    @property
    def n_masked(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True, eq=False)
class MaskedSample:
    sample: Sample
    mask: Mask
    placeholder_policy: str = MASK_TOKEN_POLICY

    def __post_init__(self):
        if self.mask.bits.shape[0] != self.sample.n_bus:
            raise ShapeMismatch(
                f"mask covers {self.mask.bits.shape[0]} buses, "
                f"sample has {self.sample.n_bus}"
            )

    def visible_state(self) -> np.ndarray:
        """Source state with masked entries zeroed (for inspection only;
        models must substitute their mask token instead)."""
        return np.where(self.mask.bits, 0.0, self.sample.state)


def mask_entry_stream(seed: int, n_entries: int) -> np.ndarray:
    """The uniform draws behind mask_random: one per entry, in row-major
    (bus, feature) order, from Philox keyed on the seed."""
    rng = np.random.Generator(np.random.Philox(key=seed & ((1 << 64) - 1)))
    return rng.uniform(size=n_entries)


def mask_random(sample: Sample, alpha: float, seed: int) -> MaskedSample:
    """Mask each of the 4 n entries independently with probability alpha."""
    if not 0.0 <= alpha <= 1.0:
        raise BadAlpha(f"alpha must be in [0, 1], got {alpha}")
    n = sample.n_bus
    draws = mask_entry_stream(seed, 4 * n)
    bits = (draws < alpha).reshape(n, 4)
    return MaskedSample(sample=sample, mask=Mask(bits=bits))


def mask_pf(sample: Sample) -> MaskedSample:
    """Mask everything except the standard power-flow knowns.

    Keeps (p, v) at generator buses, (p, q) at load buses and (v, delta)
    at the slack; exactly 2 n_bus entries stay visible.
    """
    types = sample.bus_types
    if int(np.sum(types == BusType.SLACK)) != 1:
        raise NoSlack("power-flow masking requires exactly one slack bus")
    bits = np.ones((sample.n_bus, 4), dtype=bool)
    for bus_type, cols in PF_KNOWN_COLUMNS.items():
        rows = np.flatnonzero(types == bus_type)
        for c in cols:
            bits[rows, c] = False
    return MaskedSample(sample=sample, mask=Mask(bits=bits))


def merge(masked: MaskedSample, prediction: np.ndarray) -> np.ndarray:
    """Visible entries from the source sample, masked entries from the
    prediction; the output is a full (n_bus, 4) state array."""
    pred = np.asarray(prediction, dtype=np.float64)
    if pred.shape != masked.sample.state.shape:
        raise ShapeMismatch(
            f"prediction shape {pred.shape} != state shape {masked.sample.state.shape}"
        )
    return np.where(masked.mask.bits, pred, masked.sample.state)


def mask_test_vector(seed: int, alpha: float, n: int) -> dict:
    """Portable test vector: flat row-major indices of masked entries."""
    if not 0.0 <= alpha <= 1.0:
        raise BadAlpha(f"alpha must be in [0, 1], got {alpha}")
    draws = mask_entry_stream(seed, 4 * n)
    return {
        "seed": seed,
        "alpha": alpha,
        "n": n,
        "masked_indices": np.flatnonzero(draws < alpha).tolist(),
    }
