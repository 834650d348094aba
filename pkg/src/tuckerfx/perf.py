"""Analytic cycle and DSP model of the Tucker accelerator.

All counts are exact integers; ceilings use integer arithmetic. Modes are
1-based, ``dims`` are the tensor extents ``I_k`` and ``ranks`` the target
multilinear rank ``R_k``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

SCHEMA_VERSION = "1.0"


def _cdiv(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(frozen=True)
class HwConfig:
    """One design point of the accelerator.

    ``p_buf``/``q_buf`` are the permute buffer dimensions and ``m`` the TTM
    batch size; each defaults to its paired parameter when left ``None``.
    """

    q: int = 32
    r: int = 32
    p: int = 128
    p_buf: Optional[int] = None
    q_buf: Optional[int] = None
    m: Optional[int] = None
    clock_hz: float = 185e6
    permute_constant: int = 5
    jacobi_sweeps_per_svd: int = 1
    overhead_cycles: int = 0

    def __post_init__(self):
        if self.p_buf is None:
            object.__setattr__(self, "p_buf", self.p)
        if self.q_buf is None:
            object.__setattr__(self, "q_buf", self.q)
        if self.m is None:
            object.__setattr__(self, "m", self.q)
        for name in ("q", "r", "p", "p_buf", "q_buf", "m", "permute_constant", "jacobi_sweeps_per_svd"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"HwConfig.{name} must be positive")
        if not self.clock_hz > 0:
            raise ValueError("HwConfig.clock_hz must be positive")
        if self.overhead_cycles < 0:
            raise ValueError("HwConfig.overhead_cycles must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def _check(dims, ranks, k=None):
    dims, ranks = [int(n) for n in dims], [int(n) for n in ranks]
    if len(dims) != len(ranks) or not dims:
        raise ValueError("dims and ranks must be non-empty and of equal length")
    if any(n < 1 for n in dims + ranks):
        raise ValueError("dims and ranks must be positive")
    if k is not None and not 1 <= k <= len(dims):
        raise ValueError(f"mode {k} out of range for order {len(dims)}")
    return dims, ranks


def rank_complement(ranks: Sequence[int], k: int) -> int:
    """``R_/k``: product of all ranks except mode k."""
    return math.prod(r for n, r in enumerate(ranks, start=1) if n != k)


def cycles_ttm(k: int, j: int, dims, ranks, cfg: HwConfig) -> int:
    """Cycles for the mode-j product inside the power iteration for mode k."""
    I, R = _check(dims, ranks, k)
    d = len(I)
    if not 1 <= j <= d or j == k:
        raise ValueError(f"mode j={j} invalid for k={k}, d={d} (use cycles_ttm_warm for j == k)")
    lead = math.prod(I[: j - 1])
    if j > k:
        tail = math.prod(R[j:])
        return I[j - 1] * tail * _cdiv(lead, cfg.q) * _cdiv(R[j - 1], cfg.r)
    if j > 1:
        tail = math.prod(R[n - 1] for n in range(j + 1, d + 1) if n != k)
        return I[j - 1] * I[k - 1] * tail * _cdiv(lead, cfg.q) * _cdiv(R[j - 1], cfg.r)
    tail = math.prod(R[n - 1] for n in range(2, d + 1) if n != k)
    return I[k - 1] * tail * _cdiv(I[0], cfg.q) * _cdiv(R[0], cfg.r)


def cycles_ttm_warm(k: int, dims, ranks, cfg: HwConfig) -> int:
    """Cycles for pre-multiplying the mode-k unfolding by the previous basis."""
    I, R = _check(dims, ranks, k)
    if k == 1:
        return math.prod(R[1:]) * _cdiv(I[0], cfg.q) * _cdiv(I[0], cfg.r)
    return (I[k - 1] * math.prod(R[k:]) * _cdiv(math.prod(R[: k - 1]), cfg.q)
            * _cdiv(I[k - 1], cfg.r))


def cycles_svd(k: int, dims, ranks, cfg: HwConfig) -> int:
    """Jacobi SVD cycles for mode k: per-sweep cost times sweeps per SVD."""
    I, R = _check(dims, ranks, k)
    n = I[k - 1]
    per_sweep = n * (n - 1) * _cdiv(n + rank_complement(R, k), cfg.p)
    return per_sweep * cfg.jacobi_sweeps_per_svd


def cycles_permute(k: int, dims, ranks, cfg: HwConfig) -> tuple[int, int]:
    """(DRAM -> on-chip reshape of B, factor write-back) cycle counts."""
    I, R = _check(dims, ranks, k)
    n, rest, c = I[k - 1], rank_complement(R, k), cfg.permute_constant
    cin = c * (n * _cdiv(rest, cfg.q_buf) + rest * _cdiv(n, cfg.p_buf))
    cout = c * n * (_cdiv(n, cfg.q_buf) + _cdiv(n, cfg.p_buf))
    return cin, cout


def ttm_chain_steps(d: int) -> list[tuple[int, int]]:
    """(k, j) pairs computed per HOOI iteration once shared prefixes are reused.

    Modes above k are applied in decreasing order and the product after mode
    ``j`` is shared by every chain with ``k < j``, so those steps are charged
    to the first chain (k = 1) only.
    """
    steps = [(1, j) for j in range(d, 1, -1)]
    for k in range(2, d + 1):
        steps += [(k, j) for j in range(k - 1, 0, -1)]
    return steps


@dataclass
class ModeCycles:
    iteration: int
    mode: int
    ttm: list
    ttm_warm: int
    svd: int
    permute_in: int
    permute_out: int

    @property
    def total(self) -> int:
        return sum(self.ttm) + self.ttm_warm + self.svd + self.permute_in + self.permute_out


@dataclass
class CycleReport:
    dims: list
    ranks: list
    iterations: int
    warm_start: bool
    config: HwConfig
    modes: list = field(default_factory=list)
    overhead: int = 0

    @property
    def ttm_cycles(self) -> int:
        return sum(sum(m.ttm) + m.ttm_warm for m in self.modes)

    @property
    def svd_cycles(self) -> int:
        return sum(m.svd for m in self.modes)

    @property
    def permute_cycles(self) -> int:
        return sum(m.permute_in + m.permute_out for m in self.modes)

    @property
    def total_cycles(self) -> int:
        return self.ttm_cycles + self.svd_cycles + self.permute_cycles + self.overhead

    @property
    def wall_time_seconds(self) -> float:
        return self.total_cycles / self.config.clock_hz

    @property
    def ttm_steps_per_iteration(self) -> int:
        first = [m for m in self.modes if m.iteration == 1]
        return sum(len(m.ttm) for m in first)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "dims": list(self.dims),
            "ranks": list(self.ranks),
            "iterations": self.iterations,
            "warm_start": self.warm_start,
            "config": self.config.to_dict(),
            "stages": [
                {
                    "iteration": m.iteration,
                    "mode": m.mode,
                    "ttm": list(m.ttm),
                    "ttm_warm": m.ttm_warm,
                    "svd": m.svd,
                    "permute_in": m.permute_in,
                    "permute_out": m.permute_out,
                    "total": m.total,
                }
                for m in self.modes
            ],
            "totals": {
                "ttm": self.ttm_cycles,
                "svd": self.svd_cycles,
                "permute": self.permute_cycles,
                "overhead": self.overhead,
                "total": self.total_cycles,
            },
            "wall_time_seconds": self.wall_time_seconds,
            "dsp": estimate_dsp(self.config),
        }


def total_cycles(dims, ranks, cfg: HwConfig, iters: int = 8, warm_start: bool = True) -> CycleReport:
    """Whole-run cycle report: TTM chains with reuse, SVD sweeps, permutes."""
    I, R = _check(dims, ranks)
    if iters < 1:
        raise ValueError("iters must be >= 1")
    d = len(I)
    steps = ttm_chain_steps(d)
    rep = CycleReport(I, R, iters, warm_start, cfg, overhead=cfg.overhead_cycles)
    for it in range(1, iters + 1):
        for k in range(1, d + 1):
            ttm = [cycles_ttm(kk, j, I, R, cfg) for kk, j in steps if kk == k]
            warm = cycles_ttm_warm(k, I, R, cfg) if warm_start else 0
            cin, cout = cycles_permute(k, I, R, cfg)
            rep.modes.append(ModeCycles(it, k, ttm, warm, cycles_svd(k, I, R, cfg), cin, cout))
    return rep


def estimate_dsp(cfg: HwConfig) -> dict:
    """One DSP per TTM multiplier; four two-DSP multipliers per SVD lane."""
    return {"ttm_dsp": cfg.q * cfg.r, "svd_dsp": 8 * cfg.p}


def compression_ratio(dims, ranks) -> float:
    """Element-count ratio of the dense tensor to its Tucker representation."""
    I, R = _check(dims, ranks)
    return math.prod(I) / (math.prod(R) + sum(i * r for i, r in zip(I, R)))
