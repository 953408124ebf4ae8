"""Linear resampling operators on square patches.

Bicubic scaling and horizontal flipping are realized as explicit matrices
acting on row-major vectorized patches, so that filter derivations can
manipulate them with plain linear algebra.  Conventions, fixed globally:

- vectorization: row-major scan, ``v[r * side + c] = patch[r, c]``
- bicubic kernel: Keys kernel with a = -0.5
- sampling grid: align-centers, output pixel i reads input coordinate
  ``(i + 0.5) * (in / out) - 0.5``
- boundary: clamp-to-edge (out-of-range taps fold onto the border pixel,
  which keeps every row of a resampling matrix summing to exactly 1)

All matrices are built in float64 and cached per size pair.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ShapeMismatchError

CUBIC_A = -0.5


class OperatorKind(Enum):
    RESAMPLE = "resample"
    HORIZONTAL_FLIP = "hflip"
    IDENTITY = "identity"


@dataclass(frozen=True)
class ScalingOperator:
    """A linear map from in_size x in_size patches to out_size x out_size.

    ``matrix`` has shape (out_size**2, in_size**2) and acts on row-major
    vectorized patches.
    """

    in_size: int
    out_size: int
    matrix: np.ndarray
    kind: OperatorKind


def vectorize(patch: np.ndarray) -> np.ndarray:
    """Flatten a square patch row-major into a side**2 vector."""
    side = patch.shape[-1]
    if patch.shape[-2] != side:
        raise ShapeMismatchError(f"patch is not square: {patch.shape}")
    return patch.reshape(*patch.shape[:-2], side * side)

def devectorize(vec: np.ndarray, side: int) -> np.ndarray:
    """Inverse of :func:`vectorize`."""
    if vec.shape[-1] != side * side:
        raise ShapeMismatchError(
            f"vector length {vec.shape[-1]} does not match side {side}")
    return vec.reshape(*vec.shape[:-1], side, side)


def cubic_kernel(x: np.ndarray | float) -> np.ndarray | float:
    """Keys bicubic kernel with a = -0.5, supported on |x| < 2."""
    a = CUBIC_A
    ax = np.abs(x)
    near = (a + 2.0) * ax**3 - (a + 3.0) * ax**2 + 1.0
    far = a * ax**3 - 5.0 * a * ax**2 + 8.0 * a * ax - 4.0 * a
    return np.where(ax <= 1.0, near, np.where(ax < 2.0, far, 0.0))


def resample_weights_1d(in_size: int, out_size: int) -> np.ndarray:
    """(out_size, in_size) bicubic weight matrix for one axis.

    Row i holds the 4-tap kernel weights around the align-centers source
    coordinate of output pixel i, with out-of-range taps clamped onto the
    border pixel.
    """
    if in_size < 1 or out_size < 1:
        raise ValueError(f"sizes must be positive, got {in_size}->{out_size}")
    w = np.zeros((out_size, in_size), dtype=np.float64)
    scale = in_size / out_size
    for i in range(out_size):
        src = (i + 0.5) * scale - 0.5
        base = math.floor(src)
        for m in range(-1, 3):
            tap = base + m
            weight = float(cubic_kernel(src - tap))
            w[i, min(max(tap, 0), in_size - 1)] += weight
    return w


_cache_lock = threading.Lock()
_resample_cache: dict[tuple[int, int], ScalingOperator] = {}
_flip_cache: dict[int, ScalingOperator] = {}


def build_resample_matrix(in_size: int, out_size: int) -> ScalingOperator:
    """Bicubic resampling as a (out_size**2, in_size**2) matrix.

    Separable: the 2D matrix is the Kronecker product of the 1D weight
    matrix with itself (rows outermost, matching row-major vectorization).
    Equal sizes yield the exact identity.
    """
    if in_size < 1 or out_size < 1:
        raise ValueError(f"sizes must be positive, got {in_size}->{out_size}")
    key = (in_size, out_size)
    with _cache_lock:
        if key in _resample_cache:
            return _resample_cache[key]
    w = resample_weights_1d(in_size, out_size)
    matrix = np.kron(w, w)
    kind = OperatorKind.IDENTITY if in_size == out_size else OperatorKind.RESAMPLE
    op = ScalingOperator(in_size, out_size, matrix, kind)
    with _cache_lock:
        _resample_cache.setdefault(key, op)
    return op


def build_flip_matrix(size: int) -> ScalingOperator:
    """Horizontal mirror (column reversal) as a permutation matrix."""
    if size < 1:
        raise ValueError(f"size must be positive, got {size}")
    with _cache_lock:
        if size in _flip_cache:
            return _flip_cache[size]
    n = size * size
    matrix = np.zeros((n, n), dtype=np.float64)
    for r in range(size):
        for c in range(size):
            matrix[r * size + c, r * size + (size - 1 - c)] = 1.0
    op = ScalingOperator(size, size, matrix, OperatorKind.HORIZONTAL_FLIP)
    with _cache_lock:
        _flip_cache.setdefault(size, op)
    return op


def apply_operator(op: ScalingOperator, patch: np.ndarray) -> np.ndarray:
    """Apply an operator channel-wise to a (c, s, s) patch."""
    if patch.ndim != 3 or patch.shape[1] != op.in_size or patch.shape[2] != op.in_size:
        raise ShapeMismatchError(
            f"expected (c, {op.in_size}, {op.in_size}) patch, got {patch.shape}")
    flat = patch.reshape(patch.shape[0], -1)
    out = flat @ op.matrix.T
    return out.reshape(patch.shape[0], op.out_size, op.out_size)


def resample_image(image: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    """Separable bicubic resampling of a (c, h, w) image.

    For square sizes this computes exactly the same weights as
    :func:`build_resample_matrix`, applied without materializing the
    Kronecker product.  Result dtype follows the input.
    """
    if image.ndim != 3:
        raise ShapeMismatchError(f"expected (c, h, w) image, got {image.shape}")
    if new_h < 1 or new_w < 1:
        raise ValueError(f"target sizes must be positive, got {new_h}x{new_w}")
    _, h, w = image.shape
    wh = resample_weights_1d(h, new_h)
    ww = resample_weights_1d(w, new_w)
    out = np.einsum("ij,cjk,lk->cil", wh, image.astype(np.float64, copy=False), ww)
    return out.astype(image.dtype, copy=False)
