"""Binary checkpoint format.

Layout, all integers little-endian u32, all tensor data little-endian f32:

    magic  b"SICN"
    version u32 (currently 1)
    config  u32 byte length + UTF-8 key=value text
    tensor records until EOF:
        u32 name length + UTF-8 name
        u32 rank
        rank * u32 dims
        prod(dims) * f32 data

The byte stream is platform-independent; save->load round-trips are
bit-exact for float32 models.
"""

from __future__ import annotations

import io
import os

import numpy as np

from .config import NetworkConfig
from .errors import CheckpointError
from .model import Model, adopt_canonical_parameters, build_network

MAGIC = b"SICN"
VERSION = 1


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def _read_u32(fh, what: str) -> int:
    return int(np.frombuffer(_read_exact(fh, 4, what), dtype="<u4")[0])


def _write_u32(fh, value: int) -> None:
    fh.write(np.array([value], dtype="<u4").tobytes())


def write_checkpoint(path: str, config_text: str,
                     tensors: dict[str, np.ndarray]) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    _write_u32(buf, VERSION)
    encoded = config_text.encode("utf-8")
    _write_u32(buf, len(encoded))
    buf.write(encoded)
    for name, arr in tensors.items():
        name_bytes = name.encode("utf-8")
        _write_u32(buf, len(name_bytes))
        buf.write(name_bytes)
        arr = np.asarray(arr)
        _write_u32(buf, arr.ndim)
        for dim in arr.shape:
            _write_u32(buf, dim)
        buf.write(arr.astype("<f4", copy=False).tobytes())
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def read_checkpoint(path: str) -> tuple[str, dict[str, np.ndarray]]:
    """Read raw (config text, tensors); validates framing, not shapes."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
        version = _read_u32(fh, "version")
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        config_len = _read_u32(fh, "config length")
        config_text = _read_exact(fh, config_len, "config text").decode("utf-8")
        tensors: dict[str, np.ndarray] = {}
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise CheckpointError("truncated checkpoint while reading tensor name length")
            name_len = int(np.frombuffer(head, dtype="<u4")[0])
            name = _read_exact(fh, name_len, "tensor name").decode("utf-8")
            rank = _read_u32(fh, f"rank of {name}")
            dims = tuple(_read_u32(fh, f"dims of {name}") for _ in range(rank))
            count = int(np.prod(dims)) if dims else 1
            data = _read_exact(fh, 4 * count, f"data of {name}")
            tensors[name] = np.frombuffer(data, dtype="<f4").reshape(dims).copy()
    return config_text, tensors


def save_checkpoint(model: Model, path: str) -> None:
    write_checkpoint(path, model.config.to_text(), model.state_tensors())


def load_checkpoint(path: str, config: NetworkConfig | None = None,
                    seed: int = 0) -> Model:
    """Rebuild a model from a checkpoint.

    With ``config=None`` the embedded config is used and every tensor is
    restored bit-exactly.  With an overriding config (e.g. expanding a
    1-column baseline into 6 columns) the canonical conv parameters are
    adopted, the columns rematerialized, and the classifier is taken over
    only if its shape matches; otherwise it is freshly initialized from
    ``seed``.
    """
    config_text, tensors = read_checkpoint(path)
    stored = NetworkConfig.from_text(config_text)
    if config is None or config == stored:
        model = build_network(stored, seed=0)
        _validate_tensor_shapes(model, tensors)
        model.load_state_tensors(tensors)
        return model
    model = build_network(config, seed=seed)
    fc_matches = ("fc.weight" in tensors
                  and tuple(tensors["fc.weight"].shape) == tuple(model.fc_weight.shape))
    adopt_canonical_parameters(model, tensors, adopt_classifier=fc_matches)
    return model


def _validate_tensor_shapes(model: Model, tensors: dict[str, np.ndarray]) -> None:
    params = {f"layer{i}.filters": layer.canonical_filters
              for i, layer in enumerate(model.conv_layers)}
    params.update({f"layer{i}.bias": layer.canonical_bias
                   for i, layer in enumerate(model.conv_layers)})
    params["fc.weight"] = model.fc_weight
    params["fc.bias"] = model.fc_bias
    for name, expected in params.items():
        if name not in tensors:
            raise CheckpointError(f"checkpoint missing tensor {name!r}")
        if tuple(tensors[name].shape) != tuple(expected.shape):
            raise CheckpointError(
                f"tensor {name!r} has shape {tensors[name].shape}, "
                f"expected {expected.shape}")
    for name, arr in tensors.items():
        if name.startswith("vel."):
            target = params.get(name[len("vel."):])
            if target is not None and tuple(arr.shape) != tuple(target.shape):
                raise CheckpointError(
                    f"tensor {name!r} has shape {arr.shape}, "
                    f"expected {target.shape}")
    if "pixel_mean" in tensors and \
            tuple(tensors["pixel_mean"].shape) != tuple(model.config.input_shape):
        raise CheckpointError(
            f"tensor 'pixel_mean' has shape {tensors['pixel_mean'].shape}, "
            f"expected {model.config.input_shape}")
