"""One-sided Jacobi SVD on matrix rows.

Rows ``i < j`` of ``B`` are made orthogonal by plane rotations; the same
rotations are applied to the rows of ``W`` so that ``W @ B0 == B`` holds
throughout. When every pair is orthogonal, the rows of ``W`` are the left
singular vectors of ``B0`` and the row norms of ``B`` its singular values.

Rounds of the tournament schedule touch disjoint rows, so each round is
evaluated as one vectorized step; the result is identical to visiting its
pairs one after another.

The rotation angle is ``theta = atan2(2*gamma, beta - alpha) / 2`` folded
into ``[-pi/4, pi/4]``; it zeroes the pair's inner product. Both rows are
rotated from their pre-update values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from tuckerfx.fxp import (
    FxFormat,
    FxProfile,
    QuantStats,
    accumulate_raw,
    bit_length_raw,
    cordic_atan2_raw,
    cordic_sincos_raw,
    quantize_array,
    requantize_raw,
    round_shift,
    round_shift_var,
    saturate_raw,
)

DEFAULT_TOL = 1e-10
# rows below this fraction of ||B||_F are treated as zero
ZERO_ROW_RTOL = 1e-12
COLD_MAX_SWEEPS = 30
WARM_MAX_SWEEPS = 1


def fixed_tol(profile: FxProfile) -> float:
    return 2.0 ** -(profile.matrix_fmt.frac_bits - 4)


# --- schedule ------------------------------------------------------------------


@dataclass
class PairSchedule:
    n: int
    rounds: list = field(default_factory=list)

    def pairs(self):
        for rnd in self.rounds:
            yield from rnd

    def __len__(self):
        return len(self.rounds)


def round_robin_schedule(n: int) -> PairSchedule:
    """Tournament ordering: index 1 stays put, the others rotate each round.

    The first round pairs ``(1,2), (3,4), ...``. Odd ``n`` gets a phantom
    index, and whichever index meets it sits the round out.
    """
    if n < 2:
        raise ValueError(f"need at least 2 rows, got {n}")
    m = n + (n % 2)
    half = m // 2
    top = [2 * t + 1 for t in range(half)]
    bottom = [2 * t + 2 for t in range(half)]
    cycle = [("t", t) for t in range(1, half)] + [("b", t) for t in range(half - 1, -1, -1)]
    sched = PairSchedule(n)
    for _ in range(m - 1):
        rnd = []
        for a, b in zip(top, bottom):
            if a <= n and b <= n:
                rnd.append((min(a, b), max(a, b)))
        sched.rounds.append(rnd)
        # player at cycle[c] moves to cycle[c - 1]
        held = [top[t] if row == "t" else bottom[t] for row, t in cycle]
        moved = held[1:] + held[:1]
        for (row, t), player in zip(cycle, moved):
            if row == "t":
                top[t] = player
            else:
                bottom[t] = player
    return sched


# --- rotations -----------------------------------------------------------------


@dataclass(frozen=True)
class RotationParams:
    alpha: float
    beta: float
    gamma: float
    theta: float
    sin: float
    cos: float


def _fold_angle(phi):
    """Map ``atan2`` output onto ``[-pi/2, pi/2]`` (so theta is in [-pi/4, pi/4])."""
    phi = np.where(phi > np.pi / 2, phi - np.pi, phi)
    return np.where(phi < -np.pi / 2, phi + np.pi, phi)


def rotation_params(b_i, b_j, trig: str = "real", profile: Optional[FxProfile] = None) -> RotationParams:
    """Rotation that orthogonalizes rows ``b_i`` and ``b_j``.

    ``trig="cordic"`` evaluates the angle and its sine/cosine with the
    fixed-point CORDIC kernels of ``profile`` on quantized alpha/beta/gamma.
    """
    b_i, b_j = np.asarray(b_i, dtype=float), np.asarray(b_j, dtype=float)
    if b_i.shape != b_j.shape:
        raise ValueError("rows must have equal length")
    alpha, beta, gamma = float(b_i @ b_i), float(b_j @ b_j), float(b_i @ b_j)
    if gamma == 0.0:
        return RotationParams(alpha, beta, gamma, 0.0, 0.0, 1.0)
    if trig == "real":
        theta = float(_fold_angle(math.atan2(2 * gamma, beta - alpha))) / 2
        return RotationParams(alpha, beta, gamma, theta, math.sin(theta), math.cos(theta))
    if trig != "cordic":
        raise ValueError(f"unknown trig backend {trig!r}")
    profile = profile or FxProfile()
    sf, af, it = profile.scalar_fmt, profile.angle_fmt, profile.cordic_iterations
    # alpha, beta, gamma share a power-of-two scale that leaves theta unchanged
    scale = 2.0 ** (sf.int_bits - 2 - math.ceil(math.log2(max(alpha, beta))))
    y = quantize_array([2 * gamma * scale], sf)
    x = quantize_array([(beta - alpha) * scale], sf)
    y, x = np.where(x < 0, -y, y), np.abs(x)
    th = round_shift(cordic_atan2_raw(y, x, it, af), 1)
    s, c = cordic_sincos_raw(th, af.frac_bits, it, af)
    return RotationParams(alpha, beta, gamma, float(th[0]) * af.lsb,
                          float(s[0]) * af.lsb, float(c[0]) * af.lsb)


@dataclass
class JacobiState:
    B: np.ndarray
    W: np.ndarray
    sweeps: int = 0
    off: float = math.inf

    @classmethod
    def create(cls, B0, W0=None) -> "JacobiState":
        B = np.array(B0, dtype=float)
        W = np.eye(B.shape[0]) if W0 is None else np.array(W0, dtype=float)
        if W.shape != (B.shape[0], B.shape[0]):
            raise ValueError(f"W0 must be {B.shape[0]}x{B.shape[0]}, got {W.shape}")
        return cls(B, W)


def apply_rotation(state: JacobiState, pair: tuple[int, int], params: RotationParams) -> JacobiState:
    """Rotate rows ``pair`` (1-based) of B and W simultaneously, in place."""
    i, j = pair[0] - 1, pair[1] - 1
    if params.theta == 0.0:
        return state
    c, s = params.cos, params.sin
    for M in (state.B, state.W):
        ri, rj = M[i].copy(), M[j].copy()
        M[i] = ri * c - rj * s
        M[j] = ri * s + rj * c
    return state


def off_measure(B: np.ndarray, floor: float = 0.0) -> float:
    """``max_{i<j} |gamma_ij| / sqrt(alpha_i alpha_j)`` over rows with norm > ``floor``."""
    B = np.asarray(B, dtype=float)
    G = B @ B.T
    d = np.sqrt(np.diag(G))
    nz = d > floor
    if nz.sum() < 2:
        return 0.0
    G = G[np.ix_(nz, nz)] / np.outer(d[nz], d[nz])
    np.fill_diagonal(G, 0.0)
    return float(np.max(np.abs(G)))


class JacobiResult(NamedTuple):
    W: np.ndarray
    B: np.ndarray
    sweeps: int
    converged: bool
    off: float


def _round_arrays(sched: PairSchedule):
    out = []
    for rnd in sched.rounds:
        ii = np.array([p[0] - 1 for p in rnd], dtype=np.intp)
        jj = np.array([p[1] - 1 for p in rnd], dtype=np.intp)
        out.append((ii, jj))
    return out


def _sweep_real(B, W, rounds, tol, floor):
    for ii, jj in rounds:
        Bi, Bj = B[ii], B[jj]
        alpha = np.einsum("pc,pc->p", Bi, Bi)
        beta = np.einsum("pc,pc->p", Bj, Bj)
        gamma = np.einsum("pc,pc->p", Bi, Bj)
        denom = np.sqrt(alpha * beta)
        live = np.minimum(alpha, beta) > floor * floor
        off = np.divide(np.abs(gamma), denom, out=np.zeros_like(gamma), where=live)
        act = off > tol
        if not act.any():
            continue
        theta = _fold_angle(np.arctan2(2 * gamma[act], beta[act] - alpha[act])) / 2
        c, s = np.cos(theta)[:, None], np.sin(theta)[:, None]
        ia, ja = ii[act], jj[act]
        for M in (B, W):
            ri, rj = M[ia], M[ja]
            M[ia] = ri * c - rj * s
            M[ja] = ri * s + rj * c


def jacobi_sweeps(B0, W0=None, max_sweeps: int = COLD_MAX_SWEEPS, tol: Optional[float] = None,
                  profile: Optional[FxProfile] = None, stats: Optional[QuantStats] = None,
                  debug: bool = False) -> JacobiResult:
    """Run full round-robin sweeps until ``off(B) <= tol`` or ``max_sweeps``.

    ``W0`` defaults to the identity (cold start). For a warm start pass the
    previous basis as ``W0`` and ``W0 @ B`` as ``B0``.

    With ``profile`` set, ``B0`` and ``W0`` are int64 raws in
    ``profile.matrix_fmt`` and the returned ``W``/``B`` are raws too. Callers
    should scale ``B0`` so that ``||B0||_F <= 1``.
    """
    if max_sweeps < 1:
        raise ValueError("max_sweeps must be >= 1")
    if profile is not None:
        return _jacobi_fixed(B0, W0, max_sweeps, tol, profile, stats)
    tol = DEFAULT_TOL if tol is None else tol
    state = JacobiState.create(B0, W0)
    B, W = state.B, state.W
    n = B.shape[0]
    if n < 2:
        return JacobiResult(W, B, 1, True, 0.0)
    rounds = _round_arrays(round_robin_schedule(n))
    floor = ZERO_ROW_RTOL * float(np.linalg.norm(B))
    off = math.inf
    sweeps = 0
    while sweeps < max_sweeps:
        _sweep_real(B, W, rounds, tol, floor)
        sweeps += 1
        if debug:
            err = np.max(np.abs(W @ W.T - np.eye(n)))
            assert err <= 1e-10, f"W lost orthogonality: {err:g}"
        off = off_measure(B, floor)
        if off <= tol:
            break
    return JacobiResult(W, B, sweeps, off <= tol, off)


# --- fixed-point path ----------------------------------------------------------


def load_matrix(raw: np.ndarray, src_fmt: FxFormat, profile: FxProfile,
                stats: Optional[QuantStats] = None) -> tuple[np.ndarray, int]:
    """Move tensor raws into matrix memory scaled by ``2**-shift`` so ``||B||_F <= 1``.

    The left singular basis is unchanged by the scale.
    """
    mf = profile.matrix_fmt
    r = np.asarray(raw, dtype=np.int64)
    sumsq = int(np.sum((r.astype(object) ** 2).ravel())) if r.size else 0
    # ||B||_F < 2**(bits/2 - frac)
    shift = max(0, (sumsq.bit_length() + 1) // 2 - src_fmt.frac_bits)
    return requantize_raw(r, src_fmt.frac_bits + shift, mf, stats, "svd_load"), shift


def _pair_scale_shift(amax: np.ndarray, mfrac: int, sf: FxFormat) -> np.ndarray:
    """Per-pair exponent ``s`` putting ``max(alpha, beta) * 4**s`` under a quarter of range."""
    L = bit_length_raw(amax)
    s = (sf.int_bits - 2 - L + 2 * mfrac) // 2
    return np.where(amax == 0, 0, s)


def _sweep_fixed(B, W, rounds, tol, floor, profile, stats):
    mf, pf, sf, af = profile.matrix_fmt, profile.product_fmt, profile.scalar_fmt, profile.angle_fmt
    it = profile.cordic_iterations
    fm = mf.frac_bits
    for ii, jj in rounds:
        Bi, Bj = B[ii], B[jj]
        pii, pjj, pij = Bi * Bi, Bj * Bj, Bi * Bj
        amax = np.maximum(pii.sum(axis=1), pjj.sum(axis=1))
        s = _pair_scale_shift(amax, fm, sf)
        shift = (2 * fm - pf.frac_bits - 2 * s)[:, None]
        sums = []
        for prod in (pii, pjj, pij):
            t = saturate_raw(round_shift_var(prod, shift), pf, stats, "svd_product")
            acc = accumulate_raw(t, 1, pf, stats, "svd_acc")
            sums.append(requantize_raw(acc, pf.frac_bits, sf, stats, "svd_scalar"))
        alpha, beta, gamma = sums
        denom = np.sqrt(alpha.astype(float) * beta.astype(float))
        off = np.divide(np.abs(gamma).astype(float), denom, out=np.zeros(len(ii)), where=denom > 0)
        live = np.minimum(pii.sum(axis=1), pjj.sum(axis=1)) > floor
        act = (off > tol) & (gamma != 0) & live
        if not act.any():
            continue
        y = saturate_raw(2 * gamma[act], sf, stats, "svd_scalar")
        x = saturate_raw(beta[act] - alpha[act], sf, stats, "svd_scalar")
        y, x = np.where(x < 0, -y, y), np.abs(x)
        theta2 = cordic_atan2_raw(y, x, it, af, stats, "svd_theta")
        theta = round_shift(theta2, 1)
        sn, cs = cordic_sincos_raw(theta, af.frac_bits, it, af, stats, "svd_trig")
        sn, cs = sn[:, None], cs[:, None]
        ia, ja = ii[act], jj[act]
        align = fm + af.frac_bits - pf.frac_bits
        for M, stage in ((B, "svd_rotate"), (W, "svd_basis")):
            ri, rj = M[ia], M[ja]
            ti = round_shift(ri * cs, align) - round_shift(rj * sn, align)
            tj = round_shift(ri * sn, align) + round_shift(rj * cs, align)
            M[ia] = requantize_raw(saturate_raw(ti, pf, stats, stage), pf.frac_bits, mf, stats, stage)
            M[ja] = requantize_raw(saturate_raw(tj, pf, stats, stage), pf.frac_bits, mf, stats, stage)


def _jacobi_fixed(B0, W0, max_sweeps, tol, profile, stats):
    mf = profile.matrix_fmt
    B = np.array(B0, dtype=np.int64)
    n = B.shape[0]
    if W0 is None:
        W = np.eye(n, dtype=np.int64) << mf.frac_bits
    else:
        W = np.array(W0, dtype=np.int64)
    tol = fixed_tol(profile) if tol is None else tol
    if n < 2:
        return JacobiResult(W, B, 1, True, 0.0)
    rounds = _round_arrays(round_robin_schedule(n))
    # rows within a few LSBs per column of zero carry only rounding noise
    floor_raw = 16 * 16 * B.shape[1]
    off = math.inf
    sweeps = 0
    while sweeps < max_sweeps:
        _sweep_fixed(B, W, rounds, tol, floor_raw, profile, stats)
        sweeps += 1
        # convergence monitor only; the datapath above is integer
        off = off_measure(B.astype(float), math.sqrt(floor_raw))
        if off <= tol:
            break
    return JacobiResult(W, B, sweeps, off <= tol, off)


def leading_factors(W: np.ndarray, B_final: np.ndarray, rank: int) -> np.ndarray:
    """Rows of ``W`` for the ``rank`` largest row norms of ``B_final``, as columns.

    Ties keep the lower row index first.
    """
    W, B = np.asarray(W), np.asarray(B_final)
    n = B.shape[0]
    if not 1 <= rank <= n:
        raise ValueError(f"rank {rank} out of range [1, {n}]")
    if B.dtype.kind in "iu":
        norms = [int(v) for v in (B.astype(object) ** 2).sum(axis=1)]
    else:
        norms = list(np.einsum("ij,ij->i", B, B))
    order = sorted(range(n), key=lambda i: (-norms[i], i))[:rank]
    return W[order].T.copy()
