"""Architecture and training-plan descriptions.

Configs serialize to a plain ``key=value`` text block (one key per line)
that round-trips exactly; the same format is used for CLI config files and
for the config record embedded in checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError


@dataclass(frozen=True)
class ColumnSpec:
    """One column: filter side per conv layer plus an optional flip."""

    filter_sides: tuple[int, ...]
    flipped: bool = False

    def __post_init__(self):
        for side in self.filter_sides:
            if side < 1 or side % 2 == 0:
                raise ConfigError(
                    f"filter sides must be odd and >= 1, got {self.filter_sides}")

    @property
    def pad_per_layer(self) -> tuple[int, ...]:
        # "same" padding keeps every column's spatial sizes identical
        return tuple((side - 1) // 2 for side in self.filter_sides)

    def encode(self) -> str:
        tag = "f" if self.flipped else ""
        return tag + "x".join(str(s) for s in self.filter_sides)

    @classmethod
    def decode(cls, text: str) -> "ColumnSpec":
        flipped = text.startswith("f")
        body = text[1:] if flipped else text
        try:
            sides = tuple(int(p) for p in body.split("x"))
        except ValueError as exc:
            raise ConfigError(f"bad column spec {text!r}") from exc
        return cls(sides, flipped)


def default_columns(n_layers: int = 3) -> tuple[ColumnSpec, ...]:
    """Six columns: filter sides 3/5/7 plus their flipped versions."""
    return tuple(
        ColumnSpec((side,) * n_layers, flipped)
        for flipped in (False, True)
        for side in (3, 5, 7)
    )


def baseline_columns(n_layers: int = 3) -> tuple[ColumnSpec, ...]:
    """The single canonical column (side 5, not flipped)."""
    return (ColumnSpec((5,) * n_layers, False),)


@dataclass(frozen=True)
class NetworkConfig:
    """Full architecture description.

    Three tied conv layers (canonical side 5, stride 1), each followed by
    ReLU, pooling (max after layer 1, average after layers 2-3) and LRN;
    a single fully-connected softmax classifier reads the concatenation of
    all columns' final maps.
    """

    input_shape: tuple[int, int, int] = (3, 32, 32)
    num_classes: int = 10
    canonical_side: int = 5
    conv_channels: tuple[int, ...] = (32, 32, 64)
    conv_stride: int = 1
    pool_side: int = 3
    pool_stride: int = 2
    pool_kinds: tuple[str, ...] = ("max", "avg", "avg")
    lrn_depth_radius: int = 2
    lrn_alpha: float = 1e-4
    lrn_beta: float = 0.75
    lrn_k: float = 1.0
    init_sigma: float = 0.01
    columns: tuple[ColumnSpec, ...] = field(default_factory=default_columns)

    def __post_init__(self):
        n_layers = len(self.conv_channels)
        if len(self.pool_kinds) != n_layers:
            raise ConfigError("pool_kinds must match conv_channels length")
        for kind in self.pool_kinds:
            if kind not in ("max", "avg"):
                raise ConfigError(f"unknown pool kind {kind!r}")
        if not self.columns:
            raise ConfigError("at least one column is required")
        for col in self.columns:
            if len(col.filter_sides) != n_layers:
                raise ConfigError(
                    f"column {col.encode()} has {len(col.filter_sides)} sides, "
                    f"expected {n_layers}")
        if self.canonical_side % 2 == 0:
            raise ConfigError("canonical side must be odd")

    @property
    def n_layers(self) -> int:
        return len(self.conv_channels)

    def spatial_sizes(self) -> list[int]:
        """Per-layer feature-map side after each conv+pool block."""
        size = self.input_shape[1]
        sizes = []
        for i in range(self.n_layers):
            # same-padding conv keeps size; pooling shrinks it
            size = (size - self.pool_side) // self.pool_stride + 1
            if size < 1:
                raise ConfigError(f"spatial size underflow at layer {i + 1}")
            sizes.append(size)
        return sizes

    def features_per_column(self) -> int:
        final = self.spatial_sizes()[-1]
        return self.conv_channels[-1] * final * final

    def feature_length(self) -> int:
        return len(self.columns) * self.features_per_column()

    def to_text(self) -> str:
        lines = [
            f"input_shape={','.join(map(str, self.input_shape))}",
            f"num_classes={self.num_classes}",
            f"canonical_side={self.canonical_side}",
            f"conv_channels={','.join(map(str, self.conv_channels))}",
            f"conv_stride={self.conv_stride}",
            f"pool_side={self.pool_side}",
            f"pool_stride={self.pool_stride}",
            f"pool_kinds={','.join(self.pool_kinds)}",
            f"lrn_depth_radius={self.lrn_depth_radius}",
            f"lrn_alpha={self.lrn_alpha!r}",
            f"lrn_beta={self.lrn_beta!r}",
            f"lrn_k={self.lrn_k!r}",
            f"init_sigma={self.init_sigma!r}",
            f"columns={','.join(col.encode() for col in self.columns)}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "NetworkConfig":
        kv = parse_key_values(text)
        try:
            return cls(
                input_shape=tuple(int(p) for p in kv["input_shape"].split(",")),
                num_classes=int(kv["num_classes"]),
                canonical_side=int(kv["canonical_side"]),
                conv_channels=tuple(int(p) for p in kv["conv_channels"].split(",")),
                conv_stride=int(kv["conv_stride"]),
                pool_side=int(kv["pool_side"]),
                pool_stride=int(kv["pool_stride"]),
                pool_kinds=tuple(kv["pool_kinds"].split(",")),
                lrn_depth_radius=int(kv["lrn_depth_radius"]),
                lrn_alpha=float(kv["lrn_alpha"]),
                lrn_beta=float(kv["lrn_beta"]),
                lrn_k=float(kv["lrn_k"]),
                init_sigma=float(kv["init_sigma"]),
                columns=tuple(ColumnSpec.decode(c)
                              for c in kv["columns"].split(",")),
            )
        except KeyError as exc:
            raise ConfigError(f"missing config key {exc.args[0]!r}") from exc


def baseline_config(**overrides) -> NetworkConfig:
    overrides.setdefault("columns", baseline_columns())
    return NetworkConfig(**overrides)


def sicnn_config(**overrides) -> NetworkConfig:
    overrides.setdefault("columns", default_columns())
    return NetworkConfig(**overrides)


@dataclass(frozen=True)
class TrainPlan:
    """Learning-rate schedule and optimizer settings.

    The net trains epochs_main at lr, then epochs_fine1 at lr/drop, then
    epochs_fine2 at lr/drop^2.
    """

    epochs_main: int
    epochs_fine1: int = 0
    epochs_fine2: int = 0
    lr: float = 0.001
    lr_drop_factor: float = 10.0
    momentum: float = 0.9
    weight_decay: float = 0.004
    batch_size: int = 128
    mode: str = "scratch"  # scratch | inc1 | inc2
    seed: int = 0

    def __post_init__(self):
        if self.epochs_main < 0 or self.epochs_fine1 < 0 or self.epochs_fine2 < 0:
            raise ConfigError("epoch counts must be non-negative")
        if self.lr < 0:
            raise ConfigError("lr must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.mode not in ("scratch", "inc1", "inc2"):
            raise ConfigError(f"unknown mode {self.mode!r}")

    @property
    def total_epochs(self) -> int:
        return self.epochs_main + self.epochs_fine1 + self.epochs_fine2

    def lr_at_epoch(self, epoch: int) -> float:
        """Learning rate for a 0-based epoch index; pure function of the plan."""
        if epoch < self.epochs_main:
            return self.lr
        if epoch < self.epochs_main + self.epochs_fine1:
            return self.lr / self.lr_drop_factor
        return self.lr / self.lr_drop_factor**2

    def phase_at_epoch(self, epoch: int) -> str:
        if epoch < self.epochs_main:
            return "main"
        if epoch < self.epochs_main + self.epochs_fine1:
            return "fine1"
        return "fine2"


def parse_key_values(text: str) -> dict[str, str]:
    """Parse 'key=value' lines; '#' starts a comment, blank lines ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out
