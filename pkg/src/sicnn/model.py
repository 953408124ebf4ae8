"""The tied multi-column network.

Each conv layer owns one canonical 5x5 filter bank; every column sees that
bank through a fixed linear transform (identity, scale-up, scale-down,
flip), materialized once and refreshed after every parameter update.  The
canonical filters and the classifier are the only free parameters, so the
conv parameter count is independent of the number of columns.

Backward runs through every column independently; per-column filter
gradients are pulled through the transform adjoints and summed onto the
canonical parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers
from .config import NetworkConfig
from .errors import ConfigError, ModelStateError, ShapeMismatchError
from .transforms import (
    ColumnTransform,
    gather_gradient,
    make_column_transform,
    transform_filter_bank,
)


@dataclass
class TiedConvLayer:
    """Canonical filter bank plus its per-column materializations."""

    canonical_filters: np.ndarray  # (k, c_in, side, side)
    canonical_bias: np.ndarray     # (k,)
    transforms: tuple[ColumnTransform, ...]
    materialized: list[np.ndarray] = field(default_factory=list)

    def sync(self) -> None:
        self.materialized = [
            transform_filter_bank(q, self.canonical_filters)
            for q in self.transforms
        ]

    def parameter_count(self) -> int:
        return self.canonical_filters.size + self.canonical_bias.size


@dataclass
class CanonicalGradients:
    """Gradients w.r.t. the free parameters only.

    conv_filters / conv_bias are None for classifier-only backward passes.
    """

    conv_filters: list[np.ndarray] | None
    conv_bias: list[np.ndarray] | None
    fc_weight: np.ndarray
    fc_bias: np.ndarray


class Model:
    """A built network: parameters, optimizer state and forward/backward."""

    def __init__(self, config: NetworkConfig, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.conv_layers: list[TiedConvLayer] = []
        self.fc_weight: np.ndarray | None = None
        self.fc_bias: np.ndarray | None = None
        self.velocity: dict[str, np.ndarray] = {}
        self.pixel_mean: np.ndarray | None = None
        self.epochs_done: int = 0
        self._synced = False
        self._cache = None

    # -- construction ------------------------------------------------------

    def initialize(self, seed: int) -> None:
        cfg = self.config
        cfg.spatial_sizes()  # raises ConfigError on underflow
        rng = np.random.default_rng(seed)
        side = cfg.canonical_side
        in_channels = cfg.input_shape[0]
        self.conv_layers = []
        for i, k in enumerate(cfg.conv_channels):
            filters = rng.normal(0.0, cfg.init_sigma,
                                 (k, in_channels, side, side)).astype(self.dtype)
            bias = np.zeros(k, dtype=self.dtype)
            transforms = tuple(
                make_column_transform(side, col.filter_sides[i], col.flipped)
                for col in cfg.columns
            )
            self.conv_layers.append(TiedConvLayer(filters, bias, transforms))
            in_channels = k
        feat = cfg.feature_length()
        self.fc_weight = rng.normal(0.0, cfg.init_sigma,
                                    (cfg.num_classes, feat)).astype(self.dtype)
        self.fc_bias = np.zeros(cfg.num_classes, dtype=self.dtype)
        self.velocity = {}
        self.epochs_done = 0
        self.sync()

    def sync(self) -> None:
        """Rematerialize every column's filters from the canonical banks."""
        for layer in self.conv_layers:
            layer.sync()
        self._synced = True

    def set_canonical_filters(self, layer_index: int, filters: np.ndarray) -> None:
        layer = self.conv_layers[layer_index]
        if filters.shape != layer.canonical_filters.shape:
            raise ShapeMismatchError(
                f"layer {layer_index} expects {layer.canonical_filters.shape}, "
                f"got {filters.shape}")
        layer.canonical_filters = filters.astype(self.dtype)
        self._synced = False

    # -- accounting --------------------------------------------------------

    @property
    def n_columns(self) -> int:
        return len(self.config.columns)

    def conv_parameter_count(self) -> int:
        """Free conv parameters; independent of the column count."""
        return sum(layer.parameter_count() for layer in self.conv_layers)

    def parameter_count(self) -> int:
        return self.conv_parameter_count() + self.fc_weight.size + self.fc_bias.size

    # -- forward / backward ------------------------------------------------

    def _lrn_alpha(self) -> float:
        # stored alpha is scaled by the window size before use
        return self.config.lrn_alpha / (2 * self.config.lrn_depth_radius + 1)

    def _column_blocks(self, x: np.ndarray, col_index: int,
                       keep_caches: bool):
        """Run one column's conv->ReLU->pool->LRN stack.

        Returns (block outputs per layer, caches per layer or None).
        """
        cfg = self.config
        col = cfg.columns[col_index]
        alpha = self._lrn_alpha()
        outputs, caches = [], []
        h = x
        for i, layer in enumerate(self.conv_layers):
            filters = layer.materialized[col_index]
            conv_out, conv_cache = layers.conv_forward(
                h, filters, layer.canonical_bias, cfg.conv_stride,
                col.pad_per_layer[i])
            act, relu_cache = layers.relu_forward(conv_out)
            if cfg.pool_kinds[i] == "max":
                pooled, pool_cache = layers.maxpool_forward(
                    act, cfg.pool_side, cfg.pool_stride)
            else:
                pooled, pool_cache = layers.avgpool_forward(
                    act, cfg.pool_side, cfg.pool_stride)
            out, lrn_cache = layers.lrn_forward(
                pooled, cfg.lrn_depth_radius, alpha, cfg.lrn_beta, cfg.lrn_k)
            outputs.append(out)
            caches.append((conv_cache, relu_cache, pool_cache, lrn_cache)
                          if keep_caches else None)
            h = out
        return outputs, caches

    def forward(self, x: np.ndarray, train: bool = False):
        """Run all columns and the classifier.

        Returns (logits, per-column flattened feature vectors).  With
        train=True the caches needed by :meth:`backward` are retained.
        """
        if not self._synced:
            raise ModelStateError("model must be synced before forward")
        if x.ndim != 4 or x.shape[1:] != self.config.input_shape:
            raise ShapeMismatchError(
                f"expected (n, {self.config.input_shape}) batch, got {x.shape}")
        x = x.astype(self.dtype, copy=False)
        n = x.shape[0]
        per_column_feats = []
        column_caches = []
        for j in range(self.n_columns):
            outputs, caches = self._column_blocks(x, j, keep_caches=train)
            per_column_feats.append(outputs[-1].reshape(n, -1))
            column_caches.append(caches)
        features = np.concatenate(per_column_feats, axis=1)
        logits, fc_cache = layers.fc_forward(features, self.fc_weight, self.fc_bias)
        if train:
            self._cache = (column_caches, fc_cache,
                           [f.shape for f in per_column_feats])
        return logits, per_column_feats

    def column_maps(self, x: np.ndarray, col_index: int) -> list[np.ndarray]:
        """Per-layer block outputs of one column (analysis helper)."""
        if not self._synced:
            raise ModelStateError("model must be synced before forward")
        outputs, _ = self._column_blocks(x.astype(self.dtype, copy=False),
                                         col_index, keep_caches=False)
        return outputs

    def backward(self, grad_logits: np.ndarray,
                 classifier_only: bool = False) -> CanonicalGradients:
        """Back-propagate a logit gradient down to the free parameters."""
        if self._cache is None:
            raise ModelStateError("backward requires a cached training forward")
        column_caches, fc_cache, feat_shapes = self._cache
        dfeat, dfc_w, dfc_b = layers.fc_backward(grad_logits, fc_cache)
        if classifier_only:
            return CanonicalGradients(None, None, dfc_w, dfc_b)

        n_layers = self.config.n_layers
        canon_filters = [np.zeros_like(l.canonical_filters) for l in self.conv_layers]
        canon_bias = [np.zeros_like(l.canonical_bias) for l in self.conv_layers]
        offset = 0
        for j in range(self.n_columns):
            width = feat_shapes[j][1]
            d = dfeat[:, offset:offset + width]
            offset += width
            final_shape = column_caches[j][-1][3][0].shape  # lrn cache holds x
            d = d.reshape(final_shape)
            for i in reversed(range(n_layers)):
                conv_cache, relu_cache, pool_cache, lrn_cache = column_caches[j][i]
                d = layers.lrn_backward(d, lrn_cache)
                if self.config.pool_kinds[i] == "max":
                    d = layers.maxpool_backward(d, pool_cache)
                else:
                    d = layers.avgpool_backward(d, pool_cache)
                d = layers.relu_backward(d, relu_cache)
                d, dw, db = layers.conv_backward(d, conv_cache)
                q = self.conv_layers[i].transforms[j]
                canon_filters[i] += gather_gradient(q, dw)
                canon_bias[i] += db
        return CanonicalGradients(canon_filters, canon_bias, dfc_w, dfc_b)

    # -- updates -----------------------------------------------------------

    def _momentum_step(self, name: str, param: np.ndarray, grad: np.ndarray,
                       lr: float, momentum: float, weight_decay: float) -> None:
        g = grad + weight_decay * param if weight_decay else grad
        vel = self.velocity.get(name)
        if vel is None:
            vel = np.zeros_like(param)
        vel = momentum * vel - lr * g
        self.velocity[name] = vel.astype(self.dtype)
        param += vel.astype(self.dtype)

    def apply_update(self, grads: CanonicalGradients, lr: float,
                     momentum: float, weight_decay: float) -> None:
        """Momentum-SGD on the free parameters, then rematerialize columns.

        Weight decay applies to canonical filters and classifier weights,
        never to biases.
        """
        if grads.conv_filters is not None:
            for i, layer in enumerate(self.conv_layers):
                self._momentum_step(f"layer{i}.filters", layer.canonical_filters,
                                    grads.conv_filters[i], lr, momentum,
                                    weight_decay)
                self._momentum_step(f"layer{i}.bias", layer.canonical_bias,
                                    grads.conv_bias[i], lr, momentum, 0.0)
        self._momentum_step("fc.weight", self.fc_weight, grads.fc_weight,
                            lr, momentum, weight_decay)
        self._momentum_step("fc.bias", self.fc_bias, grads.fc_bias,
                            lr, momentum, 0.0)
        self.sync()

    # -- persistence hooks ---------------------------------------------------

    def state_tensors(self) -> dict[str, np.ndarray]:
        """All persistent arrays, in a fixed serialization order."""
        out: dict[str, np.ndarray] = {}
        for i, layer in enumerate(self.conv_layers):
            out[f"layer{i}.filters"] = layer.canonical_filters
            out[f"layer{i}.bias"] = layer.canonical_bias
        out["fc.weight"] = self.fc_weight
        out["fc.bias"] = self.fc_bias
        for name in sorted(self.velocity):
            out[f"vel.{name}"] = self.velocity[name]
        if self.pixel_mean is not None:
            out["pixel_mean"] = self.pixel_mean
        out["epochs_done"] = np.array(float(self.epochs_done), dtype=np.float32)
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        for i, layer in enumerate(self.conv_layers):
            layer.canonical_filters = tensors[f"layer{i}.filters"].astype(self.dtype)
            layer.canonical_bias = tensors[f"layer{i}.bias"].astype(self.dtype)
        self.fc_weight = tensors["fc.weight"].astype(self.dtype)
        self.fc_bias = tensors["fc.bias"].astype(self.dtype)
        self.velocity = {
            name[len("vel."):]: arr.astype(self.dtype)
            for name, arr in tensors.items() if name.startswith("vel.")
        }
        if "pixel_mean" in tensors:
            self.pixel_mean = tensors["pixel_mean"].astype(np.float32)
        self.epochs_done = int(tensors.get("epochs_done", np.zeros(()))[()])
        self.sync()


def build_network(config: NetworkConfig, seed: int, dtype=np.float32) -> Model:
    """Construct and initialize a model; deterministic given the seed."""
    try:
        config.spatial_sizes()
    except ConfigError:
        raise
    model = Model(config, dtype=dtype)
    model.initialize(seed)
    return model


def adopt_canonical_parameters(target: Model, source_tensors: dict[str, np.ndarray],
                               adopt_classifier: bool = False) -> None:
    """Copy canonical conv parameters from checkpoint tensors into a model.

    Used to expand a trained baseline into a multi-column net: the tied
    banks transfer unchanged (their shapes are column-independent) and the
    columns are rematerialized.  The classifier is only adopted when its
    shape matches (same column count).
    """
    for i, layer in enumerate(target.conv_layers):
        src = source_tensors.get(f"layer{i}.filters")
        if src is None or src.shape != layer.canonical_filters.shape:
            raise ShapeMismatchError(
                f"layer{i}.filters missing or wrong shape in source checkpoint")
        layer.canonical_filters = src.astype(target.dtype)
        layer.canonical_bias = source_tensors[f"layer{i}.bias"].astype(target.dtype)
    if adopt_classifier:
        target.fc_weight = source_tensors["fc.weight"].astype(target.dtype)
        target.fc_bias = source_tensors["fc.bias"].astype(target.dtype)
    if "pixel_mean" in source_tensors:
        target.pixel_mean = source_tensors["pixel_mean"].astype(np.float32)
    target.velocity = {}
    target.epochs_done = 0
    target.sync()
