"""EFI-GNN layer stack, GCN branch, and the joint output head.

The EFI-GNN branch is deliberately linear: a first-order embedding X0 is
crossed into every layer with a Hadamard product, so the l-th block holds
interactions of feature order l+1. The GCN branch is a standard leaky-ReLU
message-passing stack. Either branch, or both concatenated, feeds one shared
output matrix. All ops are invoked through the autodiff module namespace so
the recorded graph stays swappable for verification harnesses.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .graph import SparseAdj

SKIP_MODES = ("none", "additive", "dense")
MODEL_KINDS = ("efignn", "gcn", "joint")


@dataclass(frozen=True)
class EfiGnnConfig:
    num_layers: int
    units: int
    dropout: float = 0.0
    include_block0: bool = True

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("EfiGnnConfig.num_layers must be >= 1")
        if self.units < 1:
            raise ValueError("EfiGnnConfig.units must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("EfiGnnConfig.dropout must be in [0, 1)")


@dataclass(frozen=True)
class GcnConfig:
    num_layers: int
    units: int
    slope: float = 0.01
    dropout: float = 0.0
    skip_mode: str = "none"
    batch_norm: bool = False

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("GcnConfig.num_layers must be >= 1")
        if self.units < 1:
            raise ValueError("GcnConfig.units must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("GcnConfig.dropout must be in [0, 1)")
        if self.skip_mode not in SKIP_MODES:
            raise ValueError(f"GcnConfig.skip_mode must be one of {SKIP_MODES}")


@dataclass
class ForwardOutputs:
    """Logits plus every per-block representation and its W_out row slice."""

    logits: ad.Tensor
    blocks: list = field(default_factory=list)        # ordered (name, Tensor)
    block_slices: list = field(default_factory=list)  # ordered (name, lo, hi)


def glorot_init(shape, rng: np.random.Generator) -> np.ndarray:
    """Uniform Glorot: bound sqrt(6/(fan_in+fan_out))."""
    fan_in, fan_out = shape
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"glorot_init needs positive dims, got {shape}")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def first_order(x_init: ad.Tensor, w0: ad.Tensor) -> ad.Tensor:
    """X0 = X_init @ W0, the sum of first-order feature interactions."""
    return ad.matmul(x_init, w0)


def efignn_layer(adj: SparseAdj, x_prev: ad.Tensor, wl: ad.Tensor,
                 x0: ad.Tensor) -> ad.Tensor:
    """One crossing layer: aggregate nodes, mix features, cross with X0."""
    aggregated = ad.spmm(adj, x_prev)
    mixed = ad.matmul(aggregated, wl)
    return ad.hadamard(mixed, x0)


def _maybe_dropout(t: ad.Tensor, rate: float, training: bool, rng) -> ad.Tensor:
    if not training or rate == 0.0:
        return t
    if rng is None:
        raise ValueError("training with dropout requires an rng")
    return ad.dropout(t, rate, True, rng)


def _efi_blocks(tape: ad.Tape, adj: SparseAdj, x_init: ad.Tensor,
                leaves: dict, cfg: EfiGnnConfig, training: bool, rng,
                prefix: str = "efi") -> list:
    x_in = _maybe_dropout(x_init, cfg.dropout, training, rng)
    x0 = first_order(x_in, leaves[f"{prefix}.w0"])
    blocks = [(f"{prefix}0", x0)]
    prev = x0
    for layer in range(1, cfg.num_layers + 1):
        prev_in = _maybe_dropout(prev, cfg.dropout, training, rng)
        prev = efignn_layer(adj, prev_in, leaves[f"{prefix}.w{layer}"], x0)
        blocks.append((f"{prefix}{layer}", prev))
    if not cfg.include_block0:
        blocks = blocks[1:]
    return blocks


def gcn_layer(adj: SparseAdj, h_prev: ad.Tensor, w: ad.Tensor,
              slope: float = 0.01, bn: dict | None = None,
              skip: ad.Tensor | None = None) -> ad.Tensor:
    """H = leaky_relu(bn?(Â·H_prev·W) + skip?).

    ``bn`` bundles the batch-norm tensors and state: keys gamma, beta,
    running, training. ``skip`` is added before the activation.
    """
    pre = ad.matmul(ad.spmm(adj, h_prev), w)
    if bn is not None:
        pre = ad.batch_norm(pre, bn["gamma"], bn["beta"], bn["running"],
                            bn["training"])
    if skip is not None:
        pre = ad.add(pre, skip)
    return ad.leaky_relu(pre, slope)


def _gcn_blocks(tape: ad.Tape, adj: SparseAdj, x_init: ad.Tensor,
                leaves: dict, cfg: GcnConfig, bn_state: dict | None,
                training: bool, rng, prefix: str = "gcn") -> list:
    blocks = []
    prev = x_init
    carry = [x_init]  # dense mode: every earlier representation
    for layer in range(1, cfg.num_layers + 1):
        if cfg.skip_mode == "dense" and layer > 1:
            h_in = ad.concat_cols(carry)
        else:
            h_in = prev
        h_in = _maybe_dropout(h_in, cfg.dropout, training, rng)
        bn = None
        if cfg.batch_norm:
            bn = {"gamma": leaves[f"{prefix}.bn{layer}.gamma"],
                  "beta": leaves[f"{prefix}.bn{layer}.beta"],
                  "running": bn_state[f"{prefix}.bn{layer}"],
                  "training": training}
        skip = None
        if cfg.skip_mode == "additive" and prev.shape[1] == cfg.units:
            skip = prev  # width must match; the first layer rarely does
        prev = gcn_layer(adj, h_in, leaves[f"{prefix}.w{layer}"],
                         cfg.slope, bn=bn, skip=skip)
        carry.append(prev)
        blocks.append((f"{prefix}{layer}", prev))
    return blocks


def _head(tape: ad.Tape, blocks: list, out_w: ad.Tensor) -> ForwardOutputs:
    cat = ad.concat_cols([t for _, t in blocks])
    logits = ad.matmul(cat, out_w)
    slices = [(name, lo, hi)
              for (name, _), (lo, hi) in zip(blocks, cat.col_blocks)]
    return ForwardOutputs(logits=logits, blocks=blocks, block_slices=slices)


class Model:
    """A configured architecture: parameter layout plus the forward pass."""

    def __init__(self, kind: str, num_features: int, num_classes: int,
                 efi_cfg: EfiGnnConfig | None = None,
                 gcn_cfg: GcnConfig | None = None):
        if kind not in MODEL_KINDS:
            raise ValueError(f"model kind must be one of {MODEL_KINDS}")
        if kind in ("efignn", "joint") and efi_cfg is None:
            raise ValueError(f"{kind} model requires an EfiGnnConfig")
        if kind in ("gcn", "joint") and gcn_cfg is None:
            raise ValueError(f"{kind} model requires a GcnConfig")
        if num_features < 1 or num_classes < 2:
            raise ValueError("need at least 1 feature and 2 classes")
        self.kind = kind
        self.num_features = num_features
        self.num_classes = num_classes
        self.efi_cfg = efi_cfg if kind in ("efignn", "joint") else None
        self.gcn_cfg = gcn_cfg if kind in ("gcn", "joint") else None

    # -- layout ----------------------------------------------------------
    def _gcn_in_width(self, layer: int) -> int:
        cfg = self.gcn_cfg
        if layer == 1:
            return self.num_features
        if cfg.skip_mode == "dense":
            return self.num_features + cfg.units * (layer - 1)
        return cfg.units

    def param_shapes(self) -> dict:
        """Name → shape for every trainable array, in a stable order."""
        shapes = {}
        if self.efi_cfg is not None:
            shapes["efi.w0"] = (self.num_features, self.efi_cfg.units)
            for layer in range(1, self.efi_cfg.num_layers + 1):
                shapes[f"efi.w{layer}"] = (self.efi_cfg.units, self.efi_cfg.units)
        if self.gcn_cfg is not None:
            for layer in range(1, self.gcn_cfg.num_layers + 1):
                shapes[f"gcn.w{layer}"] = (self._gcn_in_width(layer),
                                           self.gcn_cfg.units)
                if self.gcn_cfg.batch_norm:
                    shapes[f"gcn.bn{layer}.gamma"] = (self.gcn_cfg.units,)
                    shapes[f"gcn.bn{layer}.beta"] = (self.gcn_cfg.units,)
        shapes["out.w"] = (self.concat_width(), self.num_classes)
        return shapes

    def block_layout(self) -> list:
        """Ordered (name, lo, hi) row slices of W_out, EFI blocks first."""
        layout = []
        offset = 0
        if self.efi_cfg is not None:
            start_block = 0 if self.efi_cfg.include_block0 else 1
            for layer in range(start_block, self.efi_cfg.num_layers + 1):
                layout.append((f"efi{layer}", offset, offset + self.efi_cfg.units))
                offset += self.efi_cfg.units
        if self.gcn_cfg is not None:
            for layer in range(1, self.gcn_cfg.num_layers + 1):
                layout.append((f"gcn{layer}", offset, offset + self.gcn_cfg.units))
                offset += self.gcn_cfg.units
        return layout

    def concat_width(self) -> int:
        layout = self.block_layout()
        return layout[-1][2] if layout else 0

    # -- parameters ------------------------------------------------------
    def init_params(self, rng: np.random.Generator) -> dict:
        params = {}
        for name, shape in self.param_shapes().items():
            if name.endswith(".gamma"):
                params[name] = np.ones(shape)
            elif name.endswith(".beta"):
                params[name] = np.zeros(shape)
            else:
                params[name] = glorot_init(shape, rng)
        return params

    def init_bn_state(self) -> dict:
        state = {}
        if self.gcn_cfg is not None and self.gcn_cfg.batch_norm:
            for layer in range(1, self.gcn_cfg.num_layers + 1):
                state[f"gcn.bn{layer}"] = {
                    "mean": np.zeros(self.gcn_cfg.units),
                    "var": np.ones(self.gcn_cfg.units),
                }
        return state

    # -- forward ---------------------------------------------------------
    def forward(self, tape: ad.Tape, adj: SparseAdj, x_init: np.ndarray,
                params: dict, bn_state: dict | None = None,
                training: bool = False, rng=None) -> ForwardOutputs:
        expected = self.param_shapes()
        if set(params) != set(expected):
            missing = sorted(set(expected) - set(params))
            extra = sorted(set(params) - set(expected))
            raise ValueError(f"parameter set mismatch: missing={missing} extra={extra}")
        leaves = {name: tape.leaf(name, params[name]) for name in expected}
        x = tape.constant(np.asarray(x_init))
        blocks = []
        if self.efi_cfg is not None:
            blocks += _efi_blocks(tape, adj, x, leaves, self.efi_cfg,
                                  training, rng)
        if self.gcn_cfg is not None:
            blocks += _gcn_blocks(tape, adj, x, leaves, self.gcn_cfg,
                                  bn_state, training, rng)
        return _head(tape, blocks, leaves["out.w"])


def efignn_forward(tape: ad.Tape, adj: SparseAdj, x_init: np.ndarray,
                   params: dict, cfg: EfiGnnConfig, training: bool = False,
                   rng=None) -> ForwardOutputs:
    """Standalone EFI-GNN: blocks X0…XL (per cfg), then the output head."""
    n_feats = np.asarray(x_init).shape[1]
    model = Model("efignn", n_feats, params["out.w"].shape[1], efi_cfg=cfg)
    return model.forward(tape, adj, x_init, params, training=training, rng=rng)


def gcn_forward(tape: ad.Tape, adj: SparseAdj, x_init: np.ndarray,
                params: dict, cfg: GcnConfig, bn_state: dict | None = None,
                training: bool = False, rng=None) -> ForwardOutputs:
    """Standalone GCN branch with the same concat-then-project head."""
    n_feats = np.asarray(x_init).shape[1]
    model = Model("gcn", n_feats, params["out.w"].shape[1], gcn_cfg=cfg)
    return model.forward(tape, adj, x_init, params, bn_state=bn_state,
                         training=training, rng=rng)


def joint_forward(tape: ad.Tape, adj: SparseAdj, x_init: np.ndarray,
                  params: dict, efi_cfg: EfiGnnConfig,
                  gcn_cfg: GcnConfig | None = None,
                  bn_state: dict | None = None, training: bool = False,
                  rng=None) -> ForwardOutputs:
    """Both branches concatenated (EFI blocks first) under one W_out.

    With ``gcn_cfg`` None the GCN branch is disabled and the result matches
    ``efignn_forward`` exactly.
    """
    n_feats = np.asarray(x_init).shape[1]
    kind = "joint" if gcn_cfg is not None else "efignn"
    model = Model(kind, n_feats, params["out.w"].shape[1],
                  efi_cfg=efi_cfg, gcn_cfg=gcn_cfg)
    return model.forward(tape, adj, x_init, params, bn_state=bn_state,
                         training=training, rng=rng)
