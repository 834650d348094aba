"""Tensor-times-matrix kernels and the HOOI TTM-chain planner.

Both kernels contract mode ``k`` in place: a mode-1-major tensor is viewed as
``(prod of modes after k, I_k, prod of modes before k)`` in C order, which is
a reshape of the same buffer, so no permuted copy is ever made.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from tuckerfx.fxp import (
    FxProfile,
    QuantStats,
    accumulate_raw,
    requantize_raw,
    round_shift,
    saturate_raw,
    tree_reduce_raw,
)
from tuckerfx.perf import HwConfig
from tuckerfx.tensor import DenseTensor, ShapeError, check_mode

Matrix = Union[np.ndarray, DenseTensor]

# cap on int64 product terms held at once by the tiled kernel
_BLOCK_ELEMS = 1 << 22


def _matrix(A: Matrix):
    if isinstance(A, DenseTensor):
        if A.order != 2:
            raise ShapeError(f"factor must be a matrix, got order {A.order}")
        return A.to_array(), A.fmt
    A = np.asarray(A)
    if A.ndim != 2:
        raise ShapeError(f"factor must be a matrix, got {A.ndim} dims")
    return A, None


def _operand(X: DenseTensor, k: int, A: Matrix, transposed: bool):
    check_mode(k, X.order)
    M, afmt = _matrix(A)
    if transposed:
        M = M.T
    n = X.shape[k - 1]
    if M.shape[1] != n:
        raise ShapeError(
            f"mode-{k} extent {n} does not match contraction dimension {M.shape[1]}"
        )
    lead = math.prod(X.shape[: k - 1])
    tail = math.prod(X.shape[k:])
    out_shape = X.shape[: k - 1] + (M.shape[0],) + X.shape[k:]
    return M, afmt, lead, tail, out_shape


def ttm(X: DenseTensor, k: int, A: Matrix, transposed: bool = False,
        out_fmt=None, stats: Optional[QuantStats] = None) -> DenseTensor:
    """Mode-k product ``X x_k A`` (or ``X x_k A^T`` when ``transposed``).

    Real tensors use float64. When ``X`` and ``A`` are both fixed-point the
    sum of exact integer products is rounded once into ``out_fmt`` (default:
    the format of ``X``), which is the order-free reference for
    :func:`ttm_tiled`.
    """
    M, afmt, lead, tail, out_shape = _operand(X, k, A, transposed)
    Xc = X.data.reshape(tail, X.shape[k - 1], lead)
    if X.fmt is None:
        if afmt is not None:
            M = M * afmt.lsb
        Y = np.matmul(M.astype(np.float64, copy=False), Xc)
        return DenseTensor(out_shape, Y.reshape(-1))
    if afmt is None:
        raise TypeError("fixed-point tensor needs a fixed-point factor")
    out_fmt = out_fmt or X.fmt
    Y = np.matmul(M.astype(np.int64), Xc)
    Y = requantize_raw(Y.reshape(-1), X.fmt.frac_bits + afmt.frac_bits, out_fmt, stats, "ttm_out")
    return DenseTensor(out_shape, Y, out_fmt)


def ttm_tiled(X: DenseTensor, k: int, A: DenseTensor, cfg: HwConfig, profile: FxProfile,
              transposed: bool = False, out_fmt=None,
              stats: Optional[QuantStats] = None) -> DenseTensor:
    """Fixed-point mode-k product in the PE array's accumulation order.

    Each product ``x * a`` is rounded into ``profile.product_fmt``. For
    ``k == 1`` PE column ``l`` accumulates the terms ``i_1 = l + n*q`` in
    increasing ``n`` and the ``q`` column sums are combined by the in-place
    adder tree. For ``k > 1`` each output accumulates over ``i_k`` in
    increasing order. Accumulators saturate in ``product_fmt``; the result is
    rounded into ``out_fmt`` (default ``profile.tensor_fmt``).
    """
    if X.fmt is None or not isinstance(A, DenseTensor) or A.fmt is None:
        raise TypeError("ttm_tiled needs fixed-point operands")
    M, afmt, lead, tail, out_shape = _operand(X, k, A, transposed)
    M = np.ascontiguousarray(M, dtype=np.int64)
    out_fmt = out_fmt or profile.tensor_fmt
    pfmt = profile.product_fmt
    align = X.fmt.frac_bits + afmt.frac_bits - pfmt.frac_bits
    n, J = X.shape[k - 1], M.shape[0]
    Xc = X.data.reshape(tail, n, lead)

    def products(x_block, m_block):
        t = round_shift(x_block * m_block, align)
        return saturate_raw(t, pfmt, stats, "ttm_product")

    if k == 1:
        q = cfg.q
        width = -(-n // q) * q
        Y = np.empty((tail, J), dtype=np.int64)
        chunk = max(1, _BLOCK_ELEMS // (J * width))
        Mp = np.zeros((J, width), dtype=np.int64)
        Mp[:, :n] = M
        for s in range(0, tail, chunk):
            xb = np.zeros((min(chunk, tail - s), width), dtype=np.int64)
            xb[:, :n] = Xc[s:s + chunk, :, 0]
            t = products(xb[:, None, :], Mp[None, :, :])            # (b, J, width)
            t = t.reshape(t.shape[0], J, width // q, q)              # i_1 = n*q + l
            per_pe = accumulate_raw(t, 2, pfmt, stats, "ttm_acc")    # (b, J, q)
            Y[s:s + chunk] = tree_reduce_raw(per_pe, 2, pfmt, stats, "ttm_tree")
        Y = Y.reshape(tail, J, 1)
    else:
        Y = np.empty((tail, J, lead), dtype=np.int64)
        m = cfg.m
        # whole sub-tensors of m leading indices per block
        per = max(1, _BLOCK_ELEMS // (J * n * m))
        step = m * per
        rows = max(1, _BLOCK_ELEMS // (J * n * min(step, lead)))
        for s in range(0, lead, step):
            for u in range(0, tail, rows):
                xb = Xc[u:u + rows, :, s:s + step]                   # (tail, n, b)
                t = products(xb[:, None, :, :], M[None, :, :, None])  # (tail, J, n, b)
                Y[u:u + rows, :, s:s + step] = accumulate_raw(t, 2, pfmt, stats, "ttm_acc")
    Y = requantize_raw(Y.reshape(-1), pfmt.frac_bits, out_fmt, stats, "ttm_out")
    return DenseTensor(out_shape, Y, out_fmt)


# --- chain planning ------------------------------------------------------------


@dataclass(frozen=True)
class TtmStep:
    """One product in a power-iteration chain.

    ``mode`` is the contracted mode, ``operand`` names the matrix,
    ``source``/``output`` name intermediates by the modes already applied.
    ``reused`` marks a step whose output was produced by an earlier chain of
    the same HOOI iteration.
    """

    mode: int
    operand: str
    transposed: bool
    source: str
    output: str
    reused: bool = False
    warm: bool = False


@dataclass
class TtmPlan:
    order: int
    skip: Optional[int]
    steps: list = field(default_factory=list)

    @property
    def computed_steps(self) -> list:
        return [s for s in self.steps if not s.reused]

    def count(self, include_warm: bool = True) -> int:
        return sum(1 for s in self.computed_steps if include_warm or not s.warm)


def _node(modes) -> str:
    return "X" if not modes else "X|" + ",".join(str(j) for j in modes)


def plan_ttm_chain(d: int, skip: int, warm_start: bool = False) -> TtmPlan:
    """TTM chain for updating mode ``skip``: modes ``d..1`` except ``skip``.

    Products over modes above ``skip`` are shared with the chain for mode 1
    of the same iteration (those factors are not updated before ``skip``), so
    for ``skip > 1`` they are flagged ``reused``.
    """
    if d < 1:
        raise ValueError("order must be >= 1")
    check_mode(skip, d)
    plan = TtmPlan(d, skip)
    applied: list[int] = []
    for j in range(d, 0, -1):
        if j == skip:
            continue
        src = _node(applied)
        applied.append(j)
        plan.steps.append(TtmStep(j, f"A{j}", True, src, _node(applied), reused=(skip > 1 and j > skip)))
    if warm_start:
        src = _node(applied)
        plan.steps.append(TtmStep(skip, f"U{skip}", False, src, src + f"|U{skip}", warm=True))
    return plan


def plan_iteration(d: int, warm_start: bool = False) -> list:
    """The ``d`` chains of one HOOI iteration, in update order."""
    return [plan_ttm_chain(d, k, warm_start) for k in range(1, d + 1)]


def iteration_ttm_count(d: int, warm_start: bool = False) -> int:
    return sum(p.count() for p in plan_iteration(d, warm_start))
