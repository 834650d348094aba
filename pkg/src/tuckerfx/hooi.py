"""Tucker decomposition drivers: initialization, HOOI and warm-start HOOI."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from tuckerfx import jacobi
from tuckerfx.fxp import FxProfile, QuantStats, quantize_array
from tuckerfx.perf import HwConfig, compression_ratio
from tuckerfx.tensor import DenseTensor, ShapeError, frobenius_norm, relative_error, unfold
from tuckerfx.ttm import plan_ttm_chain, ttm, ttm_tiled

logger = logging.getLogger(__name__)

FROBENIUS_HEADROOM = 1.0 - 2.0 ** -6
# percent; below this the fast error estimate is replaced by a full reconstruction
FAST_ERROR_CUTOFF = 1e-2


def check_rank(shape: Sequence[int], rank: Sequence[int]) -> list[int]:
    rank = [int(r) for r in rank]
    if len(rank) != len(shape):
        raise ShapeError(f"rank {rank} has {len(rank)} entries for an order-{len(shape)} tensor")
    for k, (r, n) in enumerate(zip(rank, shape), start=1):
        if not 1 <= r <= n:
            raise ShapeError(f"rank R_{k}={r} must be in [1, I_{k}={n}]")
    return rank


@dataclass
class TuckerModel:
    core: DenseTensor
    factors: list

    @property
    def rank(self) -> list[int]:
        return list(self.core.shape)

    @property
    def shape(self) -> list[int]:
        return [A.shape[0] for A in self.factors]

    def reconstruct(self) -> DenseTensor:
        from tuckerfx.tensor import reconstruct
        return reconstruct(self.core, self.factors)

    def compression_ratio(self) -> float:
        return compression_ratio(self.shape, self.rank)


@dataclass
class HooiStats:
    errors: list = field(default_factory=list)
    sweeps: list = field(default_factory=list)
    ttm_steps: int = 0
    converged: bool = False
    iterations: int = 0
    input_scale: float = 1.0
    quant: Optional[QuantStats] = None

    @property
    def total_sweeps(self) -> int:
        return sum(sum(s) for s in self.sweeps)

    def to_dict(self) -> dict:
        out = {
            "errors_percent": list(self.errors),
            "sweeps": [list(s) for s in self.sweeps],
            "total_sweeps": self.total_sweeps,
            "ttm_steps": self.ttm_steps,
            "converged": self.converged,
            "iterations": self.iterations,
            "input_scale": self.input_scale,
        }
        if self.quant is not None:
            out["quantization"] = self.quant.to_dict()
        return out


# --- initialization ------------------------------------------------------------


def _mgs(Z: np.ndarray) -> np.ndarray:
    """Modified Gram-Schmidt, two passes."""
    Q = np.array(Z, dtype=float)
    for _ in range(2):
        for j in range(Q.shape[1]):
            v = Q[:, j]
            for i in range(j):
                v -= (Q[:, i] @ v) * Q[:, i]
            nrm = np.linalg.norm(v)
            if nrm == 0.0:
                raise ValueError("rank-deficient draw in Gram-Schmidt")
            Q[:, j] = v / nrm
    return Q


def random_orthonormal_init(shape, rank, seed: int = 0) -> list[np.ndarray]:
    """Orthonormalized standard-normal factors.

    Draws come from numpy's PCG64 generator seeded with ``seed``, one
    ``I_k x R_k`` block per mode in mode order.
    """
    rank = check_rank(shape, rank)
    rng = np.random.Generator(np.random.PCG64(seed))
    return [_mgs(rng.standard_normal((n, r))) for n, r in zip(shape, rank)]


def hosvd_init(X: DenseTensor, rank) -> list[np.ndarray]:
    """Leading left singular vectors of each unfolding, by cold Jacobi."""
    rank = check_rank(X.shape, rank)
    out = []
    for k, r in enumerate(rank, start=1):
        res = jacobi.jacobi_sweeps(unfold(X, k), max_sweeps=jacobi.COLD_MAX_SWEEPS)
        out.append(jacobi.leading_factors(res.W, res.B, r))
    return out


# --- core and error ------------------------------------------------------------


def core_tensor(X: DenseTensor, factors) -> DenseTensor:
    """``X x_1 A_1^T ... x_d A_d^T``."""
    if len(factors) != X.order:
        raise ShapeError(f"{len(factors)} factors for an order-{X.order} tensor")
    G = X
    for k, A in enumerate(factors, start=1):
        G = ttm(G, k, A, transposed=True)
    return G


def fit_error_fast(X_norm_sq: float, G: DenseTensor) -> float:
    """Relative error in percent from ``||X||^2 - ||G||^2`` (orthonormal factors)."""
    if X_norm_sq <= 0.0:
        raise ValueError("relative error is undefined for a zero tensor")
    g = frobenius_norm(G)
    return math.sqrt(max(0.0, X_norm_sq - g * g)) / math.sqrt(X_norm_sq) * 100.0


def make_synthetic(dims, rank, noise_ratio: float = 0.0, seed: int = 0) -> DenseTensor:
    """Gaussian core times Gaussian factors, plus Gaussian noise.

    The noise variance is ``noise_ratio`` times the sample variance of the
    noiseless entries. Draw order from PCG64(seed): core, factors by mode,
    then noise.
    """
    rank = check_rank(dims, rank)
    if noise_ratio < 0:
        raise ValueError("noise_ratio must be non-negative")
    rng = np.random.Generator(np.random.PCG64(seed))
    G = DenseTensor.from_array(rng.standard_normal(rank))
    factors = [rng.standard_normal((n, r)) for n, r in zip(dims, rank)]
    X = G
    for k, A in enumerate(factors, start=1):
        X = ttm(X, k, A)
    if noise_ratio > 0:
        sigma = math.sqrt(noise_ratio * float(np.var(X.data)))
        noise = rng.standard_normal(X.shape).ravel(order="F")
        X = DenseTensor(X.shape, X.data + sigma * noise)
    return X


# --- HOOI ----------------------------------------------------------------------


@dataclass
class HooiOptions:
    init: str = "random"
    max_iters: int = 8
    tol: float = 1e-4
    err_floor: float = 1e-5
    warm_start: bool = False
    numeric: str = "real"
    seed: int = 0
    max_sweeps: Optional[int] = None
    jacobi_tol: Optional[float] = None
    profile: FxProfile = field(default_factory=FxProfile)
    hw: HwConfig = field(default_factory=HwConfig)

    def __post_init__(self):
        if self.init not in ("random", "hosvd"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.numeric not in ("real", "fixed"):
            raise ValueError(f"unknown numeric path {self.numeric!r}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.max_sweeps is not None and self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")

    @property
    def sweeps_limit(self) -> int:
        if self.max_sweeps is not None:
            return self.max_sweeps
        return jacobi.WARM_MAX_SWEEPS if self.warm_start else jacobi.COLD_MAX_SWEEPS


def _converged(errors, tol, floor=0.0) -> bool:
    # below the floor the fit is exact to rounding and the ratio test is noise
    if errors and errors[-1] <= floor:
        return True
    if len(errors) < 2:
        return False
    prev = errors[-2]
    return abs(errors[-1] - prev) / max(prev, 1e-12) < tol


class _RealEngine:
    def __init__(self, X, opts):
        self.X, self.opts = X, opts

    def factor(self, A):
        return A

    def ttm_t(self, T, k, A):
        return ttm(T, k, A, transposed=True)

    def svd_input(self, Bt, k, W_prev):
        Bk = unfold(Bt, k)
        return Bk if W_prev is None else W_prev @ Bk

    def identity(self, n):
        return np.eye(n)

    def jacobi(self, B0, W0):
        return jacobi.jacobi_sweeps(B0, W0, max_sweeps=self.opts.sweeps_limit, tol=self.opts.jacobi_tol)

    def model(self, G, factors):
        return TuckerModel(G, [np.asarray(A, dtype=float) for A in factors])


class _FixedEngine:
    def __init__(self, X, opts, stats):
        self.opts, self.p, self.stats = opts, opts.profile, stats
        tf = self.p.tensor_fmt
        peak = float(np.max(np.abs(X.data)))
        # every TTM output and partial sum is an inner product of X with a
        # unit-norm tensor, so ||X||_F inside the range rules out overflow
        self.scale = min((1.0 - tf.lsb) / peak,
                         FROBENIUS_HEADROOM * tf.max_value / frobenius_norm(X))
        self.X = DenseTensor(X.shape, quantize_array(X.data * self.scale, tf, stats, "input"), tf)

    def factor(self, A):
        mf = self.p.matrix_fmt
        return DenseTensor.from_array(quantize_array(A, mf, self.stats, "factor_init"), mf)

    def ttm_t(self, T, k, A):
        return ttm_tiled(T, k, A, self.opts.hw, self.p, transposed=True, stats=self.stats)

    def svd_input(self, Bt, k, W_prev):
        tf = self.p.tensor_fmt
        Bk = unfold(Bt, k)
        if W_prev is not None:
            # pre-multiply runs on the TTM unit as a mode-1 product
            Wm = DenseTensor.from_array(W_prev, self.p.matrix_fmt)
            B2 = DenseTensor.from_array(Bk, tf)
            Bk = ttm_tiled(B2, 1, Wm, self.opts.hw, self.p, stats=self.stats).to_array()
        raw, _ = jacobi.load_matrix(Bk, tf, self.p, self.stats)
        return raw

    def identity(self, n):
        return np.eye(n, dtype=np.int64) << self.p.matrix_fmt.frac_bits

    def jacobi(self, B0, W0):
        return jacobi.jacobi_sweeps(B0, W0, max_sweeps=self.opts.sweeps_limit,
                                    tol=self.opts.jacobi_tol, profile=self.p, stats=self.stats)

    def model(self, G, factors):
        core = DenseTensor.from_array(G.values() / self.scale)
        return TuckerModel(core, [A.values() for A in factors])


def hooi(X: DenseTensor, rank, opts: Optional[HooiOptions] = None, factors0=None,
         **kwargs) -> tuple[TuckerModel, HooiStats]:
    """Tucker decomposition by higher-order orthogonal iteration.

    Keyword arguments override fields of ``opts``. With ``warm_start`` each
    SVD is seeded with the previous basis for that mode and limited to
    ``max_sweeps`` (default 1); otherwise every SVD is a cold Jacobi run to
    convergence. ``numeric="fixed"`` runs TTM and SVD through the
    fixed-point emulation; the returned model is real-valued in the units
    of ``X``.
    """
    if opts is None:
        opts = HooiOptions(**kwargs)
    elif kwargs:
        opts = HooiOptions(**{**opts.__dict__, **kwargs})
    if X.fmt is not None:
        raise TypeError("hooi expects a real-valued tensor")
    rank = check_rank(X.shape, rank)
    if not np.all(np.isfinite(X.data)):
        raise ValueError("input tensor contains non-finite values")
    d = X.order
    x_norm_sq = frobenius_norm(X) ** 2
    if x_norm_sq == 0.0:
        raise ValueError("input tensor is identically zero")

    if factors0 is not None:
        init = [np.asarray(A, dtype=float) for A in factors0]
    elif opts.init == "hosvd":
        init = hosvd_init(X, rank)
    else:
        init = random_orthonormal_init(X.shape, rank, opts.seed)

    stats = HooiStats()
    if opts.numeric == "fixed":
        stats.quant = QuantStats()
        eng = _FixedEngine(X, opts, stats.quant)
        stats.input_scale = eng.scale
    else:
        eng = _RealEngine(X, opts)
    factors = [eng.factor(A) for A in init]
    bases: list = [None] * d
    model = None

    for it in range(1, opts.max_iters + 1):
        cache = {"X": eng.X}
        sweeps = []
        last = eng.X
        for k in range(1, d + 1):
            plan = plan_ttm_chain(d, k, opts.warm_start)
            last = eng.X
            for step in plan.steps:
                if step.warm:
                    continue
                if not step.reused:
                    cache[step.output] = eng.ttm_t(cache[step.source], step.mode, factors[step.mode - 1])
                    stats.ttm_steps += 1
                last = cache[step.output]
            W_prev = None
            if opts.warm_start:
                W_prev = bases[k - 1] if bases[k - 1] is not None else eng.identity(X.shape[k - 1])
                stats.ttm_steps += 1
            res = eng.jacobi(eng.svd_input(last, k, W_prev), W_prev)
            sweeps.append(res.sweeps)
            bases[k - 1] = res.W
            A = jacobi.leading_factors(res.W, res.B, rank[k - 1])
            factors[k - 1] = A if opts.numeric == "real" else DenseTensor.from_array(A, opts.profile.matrix_fmt)
        # the last chain skipped mode d; finish the core from it
        G = eng.ttm_t(last, d, factors[d - 1])
        model = eng.model(G, factors)
        if opts.numeric == "fixed":
            err = relative_error(X, model)
        else:
            err = fit_error_fast(x_norm_sq, G)
            if err < FAST_ERROR_CUTOFF:
                # the norm difference cancels catastrophically near an exact fit
                err = relative_error(X, model)
        stats.errors.append(err)
        stats.sweeps.append(sweeps)
        stats.iterations = it
        logger.debug("iteration %d: error %.6f%%, sweeps %s", it, err, sweeps)
        if _converged(stats.errors, opts.tol, opts.err_floor):
            stats.converged = True
            break
    return model, stats
