"""Closed-form filter derivations between columns.

Every column's filters are a fixed linear image of the canonical ones,
``f_t = Q f_c``.  Three cases, by target size t versus canonical size c:

- t > c: minimum-L2-norm solution of ``S^T f_t = f_c``, i.e.
  ``Q = S (S^T S)^{-1}`` with S the c->t resampling matrix
- t < c: ``Q = S~^T`` with S~ the t->c resampling matrix
- flip: the permutation F_t composed onto the scale case

``Q^T`` is the exact adjoint used to gather per-column filter gradients
back onto the canonical parameters.  Everything is built in float64.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeMismatchError
from .scaling import build_flip_matrix, build_resample_matrix

MAX_NORMAL_EQUATION_COND = 1e12


@dataclass(frozen=True)
class ColumnTransform:
    """Fixed linear map from canonical filters to one column's filters."""

    q_matrix: np.ndarray  # (target_size**2, canonical_size**2)
    canonical_size: int
    target_size: int
    flipped: bool


def make_scale_up_transform(canonical_size: int, target_size: int) -> ColumnTransform:
    """Minimum-norm scale-up transform for target_size > canonical_size."""
    if target_size <= canonical_size:
        raise ValueError(
            f"scale-up requires target > canonical, got {canonical_size}->{target_size}")
    s = build_resample_matrix(canonical_size, target_size).matrix
    gram = s.T @ s
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > MAX_NORMAL_EQUATION_COND:
        raise NumericError(
            f"normal equations for {canonical_size}->{target_size} are "
            f"ill-conditioned (cond ~ {cond:.3e})")
    # LU with partial pivoting; gram is tiny (<= 49x49 in this architecture).
    q = np.linalg.solve(gram, s.T).T
    return ColumnTransform(q, canonical_size, target_size, flipped=False)


def make_scale_down_transform(canonical_size: int, target_size: int) -> ColumnTransform:
    """Adjoint-of-upsampling transform for target_size < canonical_size."""
    if target_size >= canonical_size:
        raise ValueError(
            f"scale-down requires target < canonical, got {canonical_size}->{target_size}")
    s_up = build_resample_matrix(target_size, canonical_size).matrix
    return ColumnTransform(s_up.T.copy(), canonical_size, target_size, flipped=False)


def make_flip_transform(canonical_size: int, target_size: int) -> ColumnTransform:
    """Horizontal flip composed with whatever scaling the size pair needs."""
    scale = make_column_transform(canonical_size, target_size, flipped=False)
    flip = build_flip_matrix(target_size).matrix
    return ColumnTransform(flip @ scale.q_matrix, canonical_size, target_size, flipped=True)


_transform_lock = threading.Lock()
_transform_cache: dict[tuple[int, int, bool], ColumnTransform] = {}


def make_column_transform(canonical_size: int, target_size: int,
                          flipped: bool) -> ColumnTransform:
    """Dispatch to identity / scale-up / scale-down / flip, with caching."""
    key = (canonical_size, target_size, flipped)
    with _transform_lock:
        if key in _transform_cache:
            return _transform_cache[key]
    if flipped:
        t = make_flip_transform(canonical_size, target_size)
    elif target_size == canonical_size:
        t = ColumnTransform(np.eye(canonical_size**2), canonical_size,
                            canonical_size, flipped=False)
    elif target_size > canonical_size:
        t = make_scale_up_transform(canonical_size, target_size)
    else:
        t = make_scale_down_transform(canonical_size, target_size)
    with _transform_lock:
        _transform_cache.setdefault(key, t)
    return t


def transform_filter_bank(q: ColumnTransform, bank: np.ndarray) -> np.ndarray:
    """Apply Q to every spatial slice of a (n_out, n_in, c, c) filter bank.

    Channel dimensions are untouched; biases are not part of the bank and
    pass between columns unchanged.
    """
    n_out, n_in, hc, wc = bank.shape
    if hc != q.canonical_size or wc != q.canonical_size:
        raise ShapeMismatchError(
            f"bank spatial side {hc}x{wc} does not match canonical size "
            f"{q.canonical_size}")
    flat = bank.reshape(n_out * n_in, hc * wc)
    out = flat @ q.q_matrix.T
    t = q.target_size
    return out.reshape(n_out, n_in, t, t).astype(bank.dtype, copy=False)


def gather_gradient(q: ColumnTransform, grad_t: np.ndarray) -> np.ndarray:
    """Pull a column's filter gradient back through Q^T (exact adjoint)."""
    n_out, n_in, ht, wt = grad_t.shape
    if ht != q.target_size or wt != q.target_size:
        raise ShapeMismatchError(
            f"gradient spatial side {ht}x{wt} does not match target size "
            f"{q.target_size}")
    flat = grad_t.reshape(n_out * n_in, ht * wt)
    out = flat @ q.q_matrix
    c = q.canonical_size
    return out.reshape(n_out, n_in, c, c).astype(grad_t.dtype, copy=False)
