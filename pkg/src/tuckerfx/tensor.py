"""Dense tensors stored mode-1-major, with permutation, unfolding and norms.

Indices and modes are 1-based at the API boundary. Internally a tensor of
shape ``(I_1, ..., I_d)`` is a flat buffer in which ``i_1`` varies fastest,
which is numpy's Fortran order. A C-order view with reversed axes gives the
same memory without copying, and the kernels in :mod:`tuckerfx.ttm` use that
view to contract a mode without permuting data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from tuckerfx.fxp import FxFormat

MAX_ORDER = 8
_INDEX_LIMIT = np.iinfo(np.int64).max


class ShapeError(ValueError):
    """Raised when tensor dimensions, modes or indices are inconsistent."""


def check_shape(dims: Sequence[int], max_order: int = MAX_ORDER) -> tuple[int, ...]:
    dims = tuple(int(n) for n in dims)
    if not 1 <= len(dims) <= max_order:
        raise ShapeError(f"tensor order must be in [1, {max_order}], got {len(dims)}")
    for k, n in enumerate(dims, start=1):
        if n < 1:
            raise ShapeError(f"mode {k} has non-positive extent {n}")
    if math.prod(dims) > _INDEX_LIMIT:
        raise ShapeError(f"element count of {dims} exceeds the 64-bit index range")
    return dims


def check_mode(k: int, d: int) -> int:
    if not 1 <= k <= d:
        raise ShapeError(f"mode {k} out of range for order-{d} tensor")
    return k


@dataclass(eq=False)
class DenseTensor:
    """A d-way array with explicit mode-1-major storage.

    ``data`` is the flat buffer (``float64`` for the real path, ``int64`` raw
    integers when ``fmt`` is set). ``fmt`` is ``None`` for real tensors.
    """

    shape: tuple[int, ...]
    data: np.ndarray
    fmt: Optional[FxFormat] = field(default=None)

    def __post_init__(self):
        self.shape = check_shape(self.shape)
        self.data = np.ascontiguousarray(self.data).reshape(-1)
        if self.data.size != math.prod(self.shape):
            raise ShapeError(
                f"buffer length {self.data.size} does not match shape {self.shape}"
            )

    @classmethod
    def from_array(cls, arr, fmt: Optional[FxFormat] = None) -> "DenseTensor":
        arr = np.asarray(arr)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        dtype = np.int64 if fmt is not None else np.float64
        return cls(arr.shape, arr.ravel(order="F").astype(dtype, copy=False), fmt)

    @classmethod
    def zeros(cls, shape, fmt: Optional[FxFormat] = None) -> "DenseTensor":
        shape = check_shape(shape)
        dtype = np.int64 if fmt is not None else np.float64
        return cls(shape, np.zeros(math.prod(shape), dtype=dtype), fmt)

    @property
    def order(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_fixed(self) -> bool:
        return self.fmt is not None

    def to_array(self) -> np.ndarray:
        """Return an ndarray view indexed ``[i_1-1, ..., i_d-1]``."""
        return self.data.reshape(self.shape, order="F")

    def values(self) -> np.ndarray:
        """Real-valued ndarray (dequantized when fixed-point)."""
        arr = self.to_array()
        if self.fmt is None:
            return arr
        return arr * self.fmt.lsb

    def cview(self) -> np.ndarray:
        """C-order view with axes reversed: ``cview()[i_d-1, ..., i_1-1]``."""
        return self.data.reshape(self.shape[::-1])

    def __getitem__(self, index):
        return self.data[linear_offset(index, self.shape)]

    def copy(self) -> "DenseTensor":
        return DenseTensor(self.shape, self.data.copy(), self.fmt)

    def __repr__(self):
        kind = "real" if self.fmt is None else f"fixed{self.fmt}"
        return f"DenseTensor(shape={self.shape}, {kind})"


def linear_offset(index: Sequence[int], shape: Sequence[int]) -> int:
    """Flat offset of a 1-based index in mode-1-major storage."""
    shape = tuple(shape)
    if len(index) != len(shape):
        raise ShapeError(f"index of length {len(index)} for order-{len(shape)} tensor")
    offset, stride = 0, 1
    for k, (i, n) in enumerate(zip(index, shape), start=1):
        if not 1 <= i <= n:
            raise ShapeError(f"index {i} out of bounds [1, {n}] in mode {k}")
        offset += (i - 1) * stride
        stride *= n
    return offset


def _check_perm(perm: Sequence[int], d: int) -> tuple[int, ...]:
    perm = tuple(int(p) for p in perm)
    if sorted(perm) != list(range(1, d + 1)):
        raise ShapeError(f"{perm} is not a permutation of 1..{d}")
    return perm


def permute(X: DenseTensor, perm: Sequence[int]) -> DenseTensor:
    """Reorder modes: output mode ``n`` is input mode ``perm[n]``.

    ``permute(X, [2, 3, 1])`` maps a 5x10x3 tensor to 10x3x5 with
    ``y[i2, i3, i1] == x[i1, i2, i3]``.
    """
    perm = _check_perm(perm, X.order)
    out = np.transpose(X.to_array(), [p - 1 for p in perm])
    return DenseTensor(out.shape, out.ravel(order="F"), X.fmt)


def inverse_permutation(perm: Sequence[int]) -> tuple[int, ...]:
    inv = [0] * len(perm)
    for n, p in enumerate(perm, start=1):
        inv[p - 1] = n
    return tuple(inv)


def unfold(X: DenseTensor, k: int) -> np.ndarray:
    """Mode-k unfolding: an ``I_k x prod(I_m, m != k)`` matrix.

    Column ordering follows the mode-1-major rule restricted to the modes
    other than ``k`` (the smallest remaining mode varies fastest).
    """
    check_mode(k, X.order)
    arr = np.moveaxis(X.to_array(), k - 1, 0)
    return arr.reshape(X.shape[k - 1], -1, order="F")


def fold(M: np.ndarray, k: int, shape: Sequence[int], fmt: Optional[FxFormat] = None) -> DenseTensor:
    """Inverse of :func:`unfold`."""
    shape = check_shape(shape)
    check_mode(k, len(shape))
    M = np.asarray(M)
    rest = math.prod(shape) // shape[k - 1]
    if M.shape != (shape[k - 1], rest):
        raise ShapeError(f"matrix of shape {M.shape} cannot fold into mode {k} of {shape}")
    moved = (shape[k - 1],) + shape[: k - 1] + shape[k:]
    arr = np.moveaxis(M.reshape(moved, order="F"), 0, k - 1)
    return DenseTensor(shape, arr.ravel(order="F"), fmt)


def unfold_column(index: Sequence[int], shape: Sequence[int], k: int) -> tuple[int, int]:
    """(row, column) of element ``index`` in the mode-k unfolding, both 1-based."""
    shape = tuple(shape)
    check_mode(k, len(shape))
    linear_offset(index, shape)
    j, stride = 1, 1
    for m, (i, n) in enumerate(zip(index, shape), start=1):
        if m == k:
            continue
        j += (i - 1) * stride
        stride *= n
    return index[k - 1], j


def frobenius_norm(X: DenseTensor) -> float:
    v = X.values().ravel()
    return float(np.sqrt(np.dot(v, v)))


def reconstruct(core: DenseTensor, factors: Sequence[np.ndarray]) -> DenseTensor:
    """Evaluate ``core x_1 A_1 x_2 ... x_d A_d`` in real arithmetic."""
    from tuckerfx.ttm import ttm

    Y = core if core.fmt is None else DenseTensor.from_array(core.values())
    for k, A in enumerate(factors, start=1):
        Y = ttm(Y, k, np.asarray(A, dtype=float))
    return Y


def relative_error(X: DenseTensor, model) -> float:
    """Reconstruction error of a Tucker model, in percent of ``||X||_F``."""
    norm = frobenius_norm(X)
    if norm == 0.0:
        raise ValueError("relative error is undefined for a zero tensor")
    Xhat = reconstruct(model.core, model.factors)
    if Xhat.shape != X.shape:
        raise ShapeError(f"model reconstructs shape {Xhat.shape}, tensor is {X.shape}")
    diff = X.values().ravel(order="F") - Xhat.data
    return float(np.sqrt(np.dot(diff, diff)) / norm * 100.0)
