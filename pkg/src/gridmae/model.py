"""Masked graph autoencoder over bus/branch graphs.

The model embeds per-bus features (standardized by dataset statistics)
together with a bus-type one-hot channel, substitutes a learnable mask
token for hidden entries, and runs message passing along both branch
orientations: each message transforms the sender's hidden state and an
embedding of the branch impedance, messages are sum-aggregated, and the
node update carries a residual connection. Before decoding, the mask
token is re-applied at masked positions; a linear head maps hidden state
back to the 4 per-bus features in physical units.

Training minimizes a scaled cosine reconstruction error on masked nodes
plus a weighted physics penalty: the mean squared magnitude of the
per-bus power-balance residual of the merged (known-truth + predicted)
state, evaluated in physical units.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .errors import NonFiniteLoss, ShapeMismatch, ValidationError
from .masking import Mask, MaskedSample
from .network import Grid
from .scenarios import Sample

logger = logging.getLogger(__name__)

_ACTIVATIONS = {"tanh": ad.tanh, "relu": ad.relu}

#: Bus-type one-hot channel order (integer code - 1): load, generator, slack.
N_TYPE_CHANNELS = 3
N_FEATURES = 4


@dataclass(frozen=True)
class ModelConfig:
    hidden_dim: int = 64
    n_encoder_layers: int = 4
    n_decoder_layers: int = 1
    gamma: float = 2.0
    lambda_pf: float = 1.0
    activation: str = "tanh"
    init_seed: int = 0

    def __post_init__(self):
        if self.hidden_dim < 4:
            raise ValidationError(f"hidden_dim must be >= 4, got {self.hidden_dim}")
        if self.n_encoder_layers < 1:
            raise ValidationError(
                f"n_encoder_layers must be >= 1, got {self.n_encoder_layers}"
            )
        if self.n_decoder_layers < 0:
            raise ValidationError(
                f"n_decoder_layers must be >= 0, got {self.n_decoder_layers}"
            )
        if self.gamma < 1:
            raise ValidationError(f"gamma must be >= 1, got {self.gamma}")
        if self.lambda_pf < 0:
            raise ValidationError(f"lambda_pf must be >= 0, got {self.lambda_pf}")
        if self.activation not in _ACTIVATIONS:
            raise ValidationError(
                f"unknown activation {self.activation!r}; options: {sorted(_ACTIVATIONS)}"
            )

    def to_dict(self) -> dict:
        return {
            "hidden_dim": self.hidden_dim,
            "n_encoder_layers": self.n_encoder_layers,
            "n_decoder_layers": self.n_decoder_layers,
            "gamma": self.gamma,
            "lambda_pf": self.lambda_pf,
            "activation": self.activation,
            "init_seed": self.init_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def _parameter_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Parameter names and shapes in declared (checkpoint) order."""
    h = cfg.hidden_dim
    shapes: list[tuple[str, tuple[int, ...]]] = [
        ("w_in", (N_FEATURES, h)),
        ("w_type", (N_TYPE_CHANNELS, h)),
        ("mask_token", (h,)),
        ("b_in", (h,)),
        ("w_edge", (2, h)),
        ("b_edge", (h,)),
    ]
    for section, count in (("enc", cfg.n_encoder_layers), ("dec", cfg.n_decoder_layers)):
        for i in range(count):
            shapes += [
                (f"{section}{i}.w_msg", (2 * h, h)),
                (f"{section}{i}.b_msg", (h,)),
                (f"{section}{i}.w_upd", (2 * h, h)),
                (f"{section}{i}.b_upd", (h,)),
            ]
    shapes += [("w_out", (h, N_FEATURES)), ("b_out", (N_FEATURES,))]
    return shapes


def parameter_count(cfg: ModelConfig) -> int:
    return sum(int(np.prod(s)) for _, s in _parameter_shapes(cfg))


@dataclass
class Model:
    """Parameters plus the dataset statistics used for standardization."""

    config: ModelConfig
    params: dict[str, ad.Tensor]
    feature_mean: np.ndarray = field(default_factory=lambda: np.zeros(N_FEATURES))
    feature_std: np.ndarray = field(default_factory=lambda: np.ones(N_FEATURES))

    def predict(self, masked: MaskedSample) -> np.ndarray:
        """Reconstruction in physical units, shape (n_bus, 4)."""
        y_phys, _ = _forward_graph(self, masked)
        return y_phys.data

    def parameter_count(self) -> int:
        return parameter_count(self.config)

    def clone_parameters(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}


def init_model(cfg: ModelConfig) -> Model:
    """Seeded Glorot-style initialization; biases start at zero and the
    mask token starts with a small random direction."""
    rng = np.random.Generator(np.random.Philox(key=cfg.init_seed & ((1 << 64) - 1)))
    params: dict[str, ad.Tensor] = {}
    for name, shape in _parameter_shapes(cfg):
        if name.endswith(("b_msg", "b_upd", "b_in", "b_edge", "b_out")):
            data = np.zeros(shape)
        elif name == "mask_token":
            data = rng.normal(0.0, 0.1, size=shape)
        else:
            fan_in, fan_out = (shape[0], shape[1]) if len(shape) == 2 else (shape[0], shape[0])
            scale = np.sqrt(2.0 / (fan_in + fan_out))
            data = rng.normal(0.0, scale, size=shape)
        params[name] = ad.parameter(data)
    return Model(config=cfg, params=params)


def set_feature_stats(model: Model, mean: np.ndarray, std: np.ndarray) -> None:
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if mean.shape != (N_FEATURES,) or std.shape != (N_FEATURES,):
        raise ShapeMismatch("feature stats must have shape (4,)")
    model.feature_mean = mean
    model.feature_std = np.maximum(std, 1e-6)


def compute_feature_stats(samples: Sequence[Sample]) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature mean/std pooled over all buses of all samples."""
    stacked = np.concatenate([s.state for s in samples], axis=0)
    return stacked.mean(axis=0), stacked.std(axis=0)


def _one_hot_types(bus_types: np.ndarray) -> np.ndarray:
    onehot = np.zeros((len(bus_types), N_TYPE_CHANNELS))
    onehot[np.arange(len(bus_types)), np.asarray(bus_types, dtype=int) - 1] = 1.0
    return onehot


def _bidirectional_edges(grid: Grid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Messages travel along both orientations of every branch; the edge
    feature (r, x) is shared by both directions."""
    frm, to = grid.edge_index()
    z = grid.impedances()
    src = np.concatenate([frm, to])
    dst = np.concatenate([to, frm])
    rx = np.stack(
        [np.concatenate([z.real, z.real]), np.concatenate([z.imag, z.imag])], axis=1
    )
    return src, dst, rx


def _forward_graph(
    model: Model, masked: MaskedSample
) -> tuple[ad.Tensor, ad.Tensor]:
    """Build the reconstruction graph; returns (physical, standardized)."""
    sample = masked.sample
    if masked.mask.bits.shape != sample.state.shape:
        raise ShapeMismatch("mask shape does not match sample state")
    cfg = model.config
    act = _ACTIVATIONS[cfg.activation]
    p = model.params
    n = sample.n_bus

    mean, std = model.feature_mean, model.feature_std
    x_std = (sample.state - mean) / std
    x_visible = np.where(masked.mask.bits, 0.0, x_std)
    mask_counts = masked.mask.bits.sum(axis=1, keepdims=True).astype(np.float64)
    onehot = _one_hot_types(sample.bus_types)

    token_term = ad.mul(ad.Tensor(mask_counts), p["mask_token"])
    h = ad.Tensor(x_visible) @ p["w_in"] + ad.Tensor(onehot) @ p["w_type"]
    h = h + token_term + p["b_in"]

    src, dst, rx = _bidirectional_edges(sample.grid)
    edge_h = ad.Tensor(rx) @ p["w_edge"] + p["b_edge"]

    def run_layers(h: ad.Tensor, section: str, count: int) -> ad.Tensor:
        for i in range(count):
            msg_in = ad.concat([h[src], edge_h], axis=1)
            msg = act(msg_in @ p[f"{section}{i}.w_msg"] + p[f"{section}{i}.b_msg"])
            agg = ad.scatter_add(msg, dst, n)
            upd_in = ad.concat([h, agg], axis=1)
            h = act(upd_in @ p[f"{section}{i}.w_upd"] + p[f"{section}{i}.b_upd"]) + h
        return h

    h = run_layers(h, "enc", cfg.n_encoder_layers)
    h = h + token_term  # re-apply the token at masked positions
    h = run_layers(h, "dec", cfg.n_decoder_layers)

    y_std = h @ p["w_out"] + p["b_out"]
    y_phys = y_std * ad.Tensor(std) + ad.Tensor(mean)
    return y_phys, y_std


def forward(model: Model, masked: MaskedSample) -> np.ndarray:
    """Per-node 4-feature reconstruction in physical units."""
    return model.predict(masked)


def sce_loss(prediction, target, mask: Mask, gamma: float):
    """Scaled cosine error (1 - cos(pred_i, target_i))^gamma averaged over
    nodes with at least one masked entry; 0 when none is masked.

    Target rows with zero norm are skipped and reported via the module
    logger (cosine similarity is undefined for them). Returns a float for
    array input and a Tensor when the prediction is part of a graph.
    """
    as_float = not isinstance(prediction, ad.Tensor)
    out = _sce_graph(prediction, target, mask, gamma)
    return out.item() if as_float else out


def _sce_graph(prediction, target, mask: Mask, gamma: float) -> ad.Tensor:
    if gamma < 1:
        raise ValidationError(f"gamma must be >= 1, got {gamma}")
    pred = ad.as_tensor(prediction)
    target_arr = np.asarray(
        target.data if isinstance(target, ad.Tensor) else target, dtype=np.float64
    )
    if pred.data.shape != target_arr.shape:
        raise ShapeMismatch(
            f"prediction {pred.data.shape} vs target {target_arr.shape}"
        )

    node_rows = np.flatnonzero(mask.bits.any(axis=1))
    if node_rows.size == 0:
        return ad.Tensor(0.0)

    target_norms = np.linalg.norm(target_arr[node_rows], axis=1)
    degenerate = target_norms == 0.0
    if degenerate.any():
        logger.warning(
            "sce_loss: skipping %d masked node(s) with zero-norm target",
            int(degenerate.sum()),
        )
        node_rows = node_rows[~degenerate]
        if node_rows.size == 0:
            return ad.Tensor(0.0)

    pred_rows = pred[node_rows]
    tgt_rows = target_arr[node_rows]
    dots = ad.tensor_sum(pred_rows * ad.Tensor(tgt_rows), axis=1)
    pred_norm = ad.sqrt(ad.tensor_sum(ad.square(pred_rows), axis=1))
    cosine = dots / (pred_norm * ad.Tensor(np.linalg.norm(tgt_rows, axis=1)))
    return ad.mean(ad.power(1.0 - cosine, gamma))


def float_row(values: np.ndarray) -> ad.Tensor:
    """Constant 1-D tensor helper for per-branch coefficients."""
    return ad.Tensor(np.asarray(values, dtype=np.float64))


def pf_loss(state, grid: Grid):
    """Mean squared magnitude of the per-bus power-balance residual.

    Mirrors :func:`gridmae.network.injection_mismatch` in autodiff ops so
    gradients flow through the trigonometric voltage terms of every
    predicted entry. Returns a float for array input, a Tensor otherwise.
    """
    as_float = not isinstance(state, ad.Tensor)
    out = _pf_graph(state, grid)
    return out.item() if as_float else out


def _pf_graph(state, grid: Grid) -> ad.Tensor:
    st = ad.as_tensor(state)
    if st.data.ndim != 2 or st.data.shape[1] != 4:
        raise ShapeMismatch(f"state must be (n, 4), got {st.data.shape}")
    n = st.data.shape[0]
    if n != grid.n_bus:
        raise ShapeMismatch(f"state has {n} rows for a {grid.n_bus}-bus grid")

    p = st[(slice(None), 0)]
    q = st[(slice(None), 1)]
    v = st[(slice(None), 2)]
    delta = st[(slice(None), 3)]
    v_re = v * ad.cos(delta)
    v_im = v * ad.sin(delta)

    if grid.n_branch:
        frm, to = grid.edge_index()
        z = grid.impedances()
        w = 1.0 / z
        d_re = v_re[frm] - v_re[to]
        d_im = v_im[frm] - v_im[to]
        i_re = d_re * float_row(w.real) - d_im * float_row(w.imag)
        i_im = d_re * float_row(w.imag) + d_im * float_row(w.real)
        send_re = v_re[frm] * i_re + v_im[frm] * i_im
        send_im = v_im[frm] * i_re - v_re[frm] * i_im
        i_sq = ad.square(i_re) + ad.square(i_im)
        recv_re = send_re - i_sq * float_row(z.real)
        recv_im = send_im - i_sq * float_row(z.imag)
        bal_re = ad.scatter_add(send_re, frm, n) - ad.scatter_add(recv_re, to, n)
        bal_im = ad.scatter_add(send_im, frm, n) - ad.scatter_add(recv_im, to, n)
        mis_re = bal_re - p
        mis_im = bal_im - q
    else:
        mis_re = -p
        mis_im = -q
    return ad.mean(ad.square(mis_re) + ad.square(mis_im))


@dataclass(frozen=True)
class LossBreakdown:
    sce: float
    pf: float
    lambda_pf: float

    @property
    def total(self) -> float:
        return self.sce + self.lambda_pf * self.pf


def _loss_graph(
    model: Model, batch: Sequence[MaskedSample], cfg: ModelConfig
) -> tuple[ad.Tensor, ad.Tensor, ad.Tensor, list[np.ndarray]]:
    if not batch:
        raise ValidationError("batch must be nonempty")
    sce_terms: list[ad.Tensor] = []
    pf_terms: list[ad.Tensor] = []
    predictions: list[np.ndarray] = []
    mean, std = model.feature_mean, model.feature_std
    for masked in batch:
        y_phys, y_std = _forward_graph(model, masked)
        predictions.append(y_phys.data)
        target_std = (masked.sample.state - mean) / std
        sce_terms.append(_sce_graph(y_std, target_std, masked.mask, cfg.gamma))
        merged = ad.where_const(
            masked.mask.bits, y_phys, ad.Tensor(masked.sample.state)
        )
        pf_terms.append(_pf_graph(merged, masked.sample.grid))
    inv = 1.0 / len(batch)
    sce_total = sce_terms[0] * inv
    pf_total = pf_terms[0] * inv
    for t in sce_terms[1:]:
        sce_total = sce_total + t * inv
    for t in pf_terms[1:]:
        pf_total = pf_total + t * inv
    total = sce_total + cfg.lambda_pf * pf_total
    return sce_total, pf_total, total, predictions


def loss(
    model: Model, batch: Sequence[MaskedSample], cfg: ModelConfig | None = None
) -> LossBreakdown:
    """Batch-averaged reconstruction + physics loss."""
    cfg = cfg or model.config
    sce_t, pf_t, _, _ = _loss_graph(model, batch, cfg)
    return LossBreakdown(sce=sce_t.item(), pf=pf_t.item(), lambda_pf=cfg.lambda_pf)


def backward(
    model: Model,
    batch: Sequence[MaskedSample],
    cfg: ModelConfig | None = None,
    predictions_out: list[np.ndarray] | None = None,
) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    """Loss plus exact reverse-mode gradients for every parameter.

    Parameters that do not influence the loss get zero gradients. Raises
    :class:`NonFiniteLoss` if the loss is NaN/inf. When a list is passed
    as ``predictions_out`` it receives the per-sample reconstructions.
    """
    cfg = cfg or model.config
    for tensor in model.params.values():
        tensor.grad = None
    sce_t, pf_t, total, predictions = _loss_graph(model, batch, cfg)
    if not np.isfinite(total.data):
        raise NonFiniteLoss(f"loss is not finite: {float(total.data)}")
    total.backward()
    grads = {
        name: (t.grad if t.grad is not None else np.zeros_like(t.data))
        for name, t in model.params.items()
    }
    if predictions_out is not None:
        predictions_out.extend(predictions)
    breakdown = LossBreakdown(sce=sce_t.item(), pf=pf_t.item(), lambda_pf=cfg.lambda_pf)
    return breakdown, grads


# --- checkpoints ------------------------------------------------------------

CHECKPOINT_FORMAT = 1


def _checkpoint_payload(model: Model) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "config": model.config.to_dict(),
        "feature_mean": model.feature_mean.tolist(),
        "feature_std": model.feature_std.tolist(),
        "params": [
            [name, list(t.data.shape), t.data.reshape(-1).tolist()]
            for name, t in model.params.items()
        ],
    }


def _content_hash(payload: dict) -> str:
    canonical = json.dumps(payload, separators=(",", ":"), sort_keys=True)
    return hashlib.blake2b(canonical.encode(), digest_size=16).hexdigest()


def save_checkpoint(model: Model, path: str | Path) -> str:
    """Write the model as versioned JSON; returns the content hash."""
    payload = _checkpoint_payload(model)
    payload["content_hash"] = _content_hash(
        {k: v for k, v in payload.items() if k != "content_hash"}
    )
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload, separators=(",", ":")), encoding="utf-8")
    return payload["content_hash"]


def load_checkpoint(path: str | Path) -> Model:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(
            f"unsupported checkpoint format {payload.get('format')!r}"
        )
    expected = payload.pop("content_hash", None)
    if expected is not None and _content_hash(payload) != expected:
        raise ValidationError(f"checkpoint {path} failed its content hash check")
    cfg = ModelConfig.from_dict(payload["config"])
    model = init_model(cfg)
    stored = {name: (shape, flat) for name, shape, flat in payload["params"]}
    if set(stored) != set(model.params):
        raise ValidationError("checkpoint parameters do not match the config")
    for name, tensor in model.params.items():
        shape, flat = stored[name]
        arr = np.asarray(flat, dtype=np.float64).reshape(shape)
        if arr.shape != tensor.data.shape:
            raise ShapeMismatch(f"parameter {name}: {arr.shape} != {tensor.data.shape}")
        tensor.data = arr
    set_feature_stats(
        model,
        np.asarray(payload["feature_mean"]),
        np.asarray(payload["feature_std"]),
    )
    return model


def with_config(model: Model, **overrides) -> Model:
    """Model view with a tweaked config (e.g. lambda_pf) sharing parameters."""
    return Model(
        config=replace(model.config, **overrides),
        params=model.params,
        feature_mean=model.feature_mean,
        feature_std=model.feature_std,
    )
