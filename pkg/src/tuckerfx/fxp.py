"""Bit-accurate signed fixed-point emulation.

Every value is a two's-complement integer ``raw`` paired with an
:class:`FxFormat`; the real value is ``raw * 2**-frac_bits``. All arithmetic
after quantization is integer-only. Rounding is round-half-to-even and
overflow saturates; saturation events are counted in a :class:`QuantStats`
when one is supplied.

Scalar helpers (:func:`fx_mul`, :func:`fx_add`, ...) operate on
:class:`FxValue`. The ``*_raw`` variants operate elementwise on ``int64``
numpy arrays and are what the TTM and Jacobi kernels use.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class FxFormat:
    total_bits: int
    frac_bits: int

    def __post_init__(self):
        if not 2 <= self.total_bits <= 64:
            raise ValueError(f"total_bits must be in [2, 64], got {self.total_bits}")
        if not 0 <= self.frac_bits <= self.total_bits - 1:
            raise ValueError(
                f"frac_bits must be in [0, {self.total_bits - 1}], got {self.frac_bits}"
            )

    @property
    def int_bits(self) -> int:
        """Integer bits excluding the sign bit."""
        return self.total_bits - self.frac_bits - 1

    @property
    def raw_max(self) -> int:
        return (1 << (self.total_bits - 1)) - 1

    @property
    def raw_min(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def lsb(self) -> float:
        return 2.0 ** -self.frac_bits

    @property
    def max_value(self) -> float:
        return self.raw_max * self.lsb

    @property
    def min_value(self) -> float:
        return self.raw_min * self.lsb

    @classmethod
    def parse(cls, text) -> "FxFormat":
        """Accept ``"16,12"``, ``"16:12"``, ``(16, 12)`` or an existing format."""
        if isinstance(text, FxFormat):
            return text
        if isinstance(text, str):
            parts = text.replace(":", ",").split(",")
        else:
            parts = list(text)
        if len(parts) != 2:
            raise ValueError(f"cannot parse fixed-point format {text!r}")
        return cls(int(parts[0]), int(parts[1]))

    def __str__(self):
        return f"({self.total_bits},{self.frac_bits})"


@dataclass(frozen=True)
class FxValue:
    raw: int
    fmt: FxFormat

    def __post_init__(self):
        if not self.fmt.raw_min <= self.raw <= self.fmt.raw_max:
            raise ValueError(f"raw {self.raw} does not fit in {self.fmt}")

    @property
    def value(self) -> float:
        return self.raw * self.fmt.lsb

    def __float__(self):
        return self.value


@dataclass(frozen=True)
class FxProfile:
    """Number formats used by each datapath of the accelerator."""

    tensor_fmt: FxFormat = FxFormat(16, 12)
    matrix_fmt: FxFormat = FxFormat(27, 24)
    product_fmt: FxFormat = FxFormat(48, 24)
    scalar_fmt: FxFormat = FxFormat(32, 20)
    angle_fmt: FxFormat = FxFormat(32, 29)
    cordic_iterations: int = 24

    def to_dict(self) -> dict:
        out = {}
        for key, val in asdict(self).items():
            if isinstance(val, dict):
                out[key] = [val["total_bits"], val["frac_bits"]]
            else:
                out[key] = val
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "FxProfile":
        kw = {}
        for key, val in d.items():
            if key == "cordic_iterations":
                kw[key] = int(val)
            elif key.endswith("_fmt"):
                kw[key] = FxFormat.parse(val)
            else:
                raise KeyError(f"unknown profile field {key!r}")
        return cls(**kw)


@dataclass
class QuantStats:
    """Per-session counters: saturation events and peak magnitude per stage."""

    saturations: dict = field(default_factory=lambda: defaultdict(int))
    max_abs: dict = field(default_factory=lambda: defaultdict(float))

    def record(self, stage: str, saturated: int, peak: float):
        self.saturations[stage] += int(saturated)
        if peak > self.max_abs[stage]:
            self.max_abs[stage] = float(peak)

    @property
    def total_saturations(self) -> int:
        return sum(self.saturations.values())

    def to_dict(self) -> dict:
        stages = sorted(set(self.saturations) | set(self.max_abs))
        return {
            "total_saturations": self.total_saturations,
            "stages": {
                s: {"saturations": self.saturations.get(s, 0), "max_abs": self.max_abs.get(s, 0.0)}
                for s in stages
            },
        }


# --- raw integer helpers -------------------------------------------------------


def round_shift(v, shift: int):
    """Divide by ``2**shift`` rounding half to even; negative shift multiplies.

    Works on Python ints and int64 arrays.
    """
    if shift <= 0:
        return v << (-shift)
    q = v >> shift
    rem = v - (q << shift)
    half = 1 << (shift - 1)
    up = (rem > half) | ((rem == half) & ((q & 1) == 1))
    if isinstance(up, np.ndarray):
        return q + up.astype(np.int64)
    return q + int(up)


def round_shift_var(v: np.ndarray, shift: np.ndarray) -> np.ndarray:
    """:func:`round_shift` with a per-element shift (broadcast against ``v``)."""
    v = np.asarray(v, dtype=np.int64)
    shift = np.broadcast_to(np.asarray(shift, dtype=np.int64), v.shape)
    right = np.maximum(shift, 0)
    left = np.maximum(-shift, 0)
    q = v >> right
    rem = v - (q << right)
    half = np.where(right > 0, np.int64(1) << np.maximum(right - 1, 0), np.int64(1) << 62)
    up = (rem > half) | ((rem == half) & ((q & 1) == 1))
    return (q + up.astype(np.int64)) << left


def saturate_raw(v, fmt: FxFormat, stats: Optional[QuantStats] = None, stage: str = ""):
    if isinstance(v, np.ndarray):
        over = (v > fmt.raw_max) | (v < fmt.raw_min)
        n_sat = int(np.count_nonzero(over))
        out = np.clip(v, fmt.raw_min, fmt.raw_max) if n_sat else v
        if stats is not None:
            peak = float(np.max(np.abs(v))) * fmt.lsb if v.size else 0.0
            stats.record(stage, n_sat, peak)
        return out
    n_sat = int(v > fmt.raw_max or v < fmt.raw_min)
    if stats is not None:
        stats.record(stage, n_sat, abs(v) * fmt.lsb)
    return min(max(v, fmt.raw_min), fmt.raw_max)


def requantize_raw(v, from_frac: int, fmt: FxFormat, stats=None, stage: str = ""):
    """Move raw integers from ``from_frac`` fraction bits into ``fmt``."""
    return saturate_raw(round_shift(v, from_frac - fmt.frac_bits), fmt, stats, stage)


def quantize_array(x, fmt: FxFormat, stats: Optional[QuantStats] = None, stage: str = "quantize") -> np.ndarray:
    """Round ``x * 2**frac`` to nearest-even, then saturate. Returns int64 raws."""
    scaled = np.ldexp(np.asarray(x, dtype=np.float64), fmt.frac_bits)
    if not np.all(np.isfinite(scaled)):
        raise ValueError("cannot quantize non-finite values")
    lo, hi = float(fmt.raw_min), float(fmt.raw_max)
    r = np.rint(scaled)
    over = (r > hi) | (r < lo)
    n_sat = int(np.count_nonzero(over))
    if stats is not None:
        peak = float(np.max(np.abs(scaled))) * fmt.lsb if scaled.size else 0.0
        stats.record(stage, n_sat, peak)
    r = np.clip(r, lo, hi)
    out = r.astype(np.int64)
    # float64 cannot hold 63-bit extremes exactly
    out = np.where(r >= hi, fmt.raw_max, out)
    out = np.where(r <= lo, fmt.raw_min, out)
    return out


def quantize(x: float, fmt: FxFormat, stats: Optional[QuantStats] = None, stage: str = "quantize") -> FxValue:
    return FxValue(int(quantize_array(np.array([x]), fmt, stats, stage)[0]), fmt)


def fx_mul(a: FxValue, b: FxValue, out_fmt: FxFormat, stats=None, stage: str = "mul") -> FxValue:
    prod = a.raw * b.raw
    return FxValue(requantize_raw(prod, a.fmt.frac_bits + b.fmt.frac_bits, out_fmt, stats, stage), out_fmt)


def fx_add(a: FxValue, b: FxValue, out_fmt: FxFormat, stats=None, stage: str = "add") -> FxValue:
    frac = max(a.fmt.frac_bits, b.fmt.frac_bits)
    total = (a.raw << (frac - a.fmt.frac_bits)) + (b.raw << (frac - b.fmt.frac_bits))
    return FxValue(requantize_raw(total, frac, out_fmt, stats, stage), out_fmt)


def tree_reduce(values: Sequence[FxValue], out_fmt: FxFormat, stats=None, stage: str = "tree") -> FxValue:
    """Staged pairwise sum: pad to a power of two, then halve log2(n) times."""
    a = list(values)
    if not a:
        return FxValue(0, out_fmt)
    if len(a) == 1:
        v = a[0]
        return FxValue(requantize_raw(v.raw, v.fmt.frac_bits, out_fmt, stats, stage), out_fmt)
    n = 1 << (len(a) - 1).bit_length()
    a += [FxValue(0, out_fmt)] * (n - len(a))
    while n > 1:
        n //= 2
        a = [fx_add(a[2 * i], a[2 * i + 1], out_fmt, stats, stage) for i in range(n)]
    return a[0]


def tree_reduce_raw(arr: np.ndarray, axis: int, fmt: FxFormat, stats=None, stage: str = "tree") -> np.ndarray:
    """Vectorized :func:`tree_reduce` along ``axis`` for raws already in ``fmt``."""
    a = np.moveaxis(np.asarray(arr, dtype=np.int64), axis, 0)
    n = a.shape[0]
    if n == 0:
        return np.zeros(a.shape[1:], dtype=np.int64)
    width = 1 << (n - 1).bit_length()
    if width != n:
        pad = np.zeros((width - n,) + a.shape[1:], dtype=np.int64)
        a = np.concatenate([a, pad], axis=0)
    while a.shape[0] > 1:
        a = saturate_raw(a[0::2] + a[1::2], fmt, stats, stage)
    return a[0]


def accumulate_raw(terms: np.ndarray, axis: int, fmt: FxFormat, stats=None, stage: str = "acc") -> np.ndarray:
    """Saturating running sum along ``axis`` in increasing index order.

    When no partial sum leaves the range the result is the plain sum, so the
    cumulative sum is tried first and the step-by-step loop only runs when a
    partial sum would have saturated.
    """
    t = np.moveaxis(np.asarray(terms, dtype=np.int64), axis, 0)
    if t.shape[0] == 0:
        return np.zeros(t.shape[1:], dtype=np.int64)
    run = np.cumsum(t, axis=0)
    peak = int(np.max(np.abs(run))) if run.size else 0
    if peak <= fmt.raw_max:
        if stats is not None:
            stats.record(stage, 0, peak * fmt.lsb)
        return run[-1]
    acc = np.zeros(t.shape[1:], dtype=np.int64)
    for step in t:
        acc = saturate_raw(acc + step, fmt, stats, stage)
    return acc


def bit_length_raw(v: np.ndarray) -> np.ndarray:
    """Elementwise bit length of non-negative int64 values."""
    v = np.asarray(v, dtype=np.int64)
    out = np.zeros(v.shape, dtype=np.int64)
    for b in range(63):
        out += v >= (1 << b)
    return out


# --- CORDIC --------------------------------------------------------------------

_WORK_FRAC = 40        # guard precision of the angle accumulator and vectors
_NORM_BITS = 40        # vectoring inputs are normalized to [2**39, 2**40)
_GAIN_FRAC = 31


def _atan_pow2_raw(i: int, frac: int) -> int:
    """``atan(2**-i) * 2**frac`` rounded, by an integer Taylor/Euler series."""
    guard = frac + 40
    one = 1 << guard
    if i == 0:
        # atan(1) = 4 atan(1/5) - atan(1/239)
        val = 4 * _atan_inv(5, guard) - _atan_inv(239, guard)
    else:
        val = 0
        term = one >> i
        n = 0
        x2_shift = 2 * i
        while term:
            val += term // (2 * n + 1) if n % 2 == 0 else -(term // (2 * n + 1))
            term >>= x2_shift
            n += 1
    return round_shift(val, guard - frac)


def _atan_inv(m: int, guard: int) -> int:
    """``atan(1/m) * 2**guard`` for integer m > 1."""
    one = 1 << guard
    total, term, n, m2 = 0, one // m, 0, m * m
    while term:
        total += term // (2 * n + 1) if n % 2 == 0 else -(term // (2 * n + 1))
        term //= m2
        n += 1
    return total


def _pi_raw(frac: int) -> int:
    guard = frac + 40
    return round_shift(4 * (4 * _atan_inv(5, guard) - _atan_inv(239, guard)), 40)


def _cordic_gain_raw(iters: int, frac: int) -> int:
    """``prod_i 1/sqrt(1 + 2**-2i)`` at ``frac`` fraction bits."""
    guard = frac + 40
    num = 1 << (2 * guard)
    g = 1 << guard
    for i in range(iters):
        # g <- g / sqrt(1 + 4**-i)
        denom = math.isqrt(num + (num >> (2 * i)))
        g = (g << guard) // denom
    return round_shift(g, guard - frac)


class _Tables:
    _cache: dict = {}

    @classmethod
    def get(cls, iters: int):
        if iters not in cls._cache:
            atans = np.array([_atan_pow2_raw(i, _WORK_FRAC) for i in range(iters)], dtype=np.int64)
            cls._cache[iters] = (atans, _cordic_gain_raw(iters, _GAIN_FRAC))
        return cls._cache[iters]


PI_WORK = _pi_raw(_WORK_FRAC)
HALF_PI_WORK = round_shift(PI_WORK, 1)


def cordic_error_bound(iters: int, fmt: FxFormat) -> float:
    """Absolute angle error bound: residual rotation plus one output step."""
    return math.atan(2.0 ** -(iters - 1)) + fmt.lsb


def cordic_atan2_raw(y: np.ndarray, x: np.ndarray, iters: int, out_fmt: FxFormat,
                     stats=None, stage: str = "cordic_atan") -> np.ndarray:
    """Vectoring-mode CORDIC on raws sharing one binary point.

    Returns angle raws in ``out_fmt``. ``(0, 0)`` inputs yield 0; the scalar
    wrapper rejects them.
    """
    atans, _ = _Tables.get(iters)
    x = np.atleast_1d(np.asarray(x, dtype=np.int64)).copy()
    y = np.atleast_1d(np.asarray(y, dtype=np.int64)).copy()
    x, y = np.broadcast_arrays(x, y)
    x, y = x.copy(), y.copy()
    # power-of-two normalization leaves the angle unchanged
    mag = np.maximum(np.abs(x), np.abs(y))
    shift = _NORM_BITS - bit_length_raw(mag)
    shift = np.where(mag == 0, 0, shift)
    up = shift >= 0
    lsh, rsh = np.where(up, shift, 0), np.where(up, 0, -shift)
    x = (x << lsh) >> rsh
    y = (y << lsh) >> rsh

    z = np.zeros_like(x)
    left = x < 0
    upper = y >= 0
    xr = np.where(left & upper, y, np.where(left, -y, x))
    yr = np.where(left & upper, -x, np.where(left, x, y))
    z = np.where(left & upper, HALF_PI_WORK, np.where(left, -HALF_PI_WORK, z))
    x, y = xr, yr
    for i in range(iters):
        d = np.sign(y)
        xs, ys = x >> i, y >> i
        x, y = x + d * ys, y - d * xs
        z = z + d * atans[i]
    return requantize_raw(z, _WORK_FRAC, out_fmt, stats, stage)


def cordic_sincos_raw(theta: np.ndarray, theta_frac: int, iters: int, out_fmt: FxFormat,
                      stats=None, stage: str = "cordic_sincos"):
    """Rotation-mode CORDIC. Returns ``(sin_raw, cos_raw)`` in ``out_fmt``."""
    atans, gain = _Tables.get(iters)
    z = np.atleast_1d(np.asarray(theta, dtype=np.int64))
    z = round_shift(z, theta_frac - _WORK_FRAC)
    # reduce to (-pi, pi]
    z = PI_WORK - np.mod(PI_WORK - z, 2 * PI_WORK)
    one = np.int64(1) << _WORK_FRAC
    hi = z > HALF_PI_WORK
    lo = z < -HALF_PI_WORK
    x = np.where(hi | lo, 0, one).astype(np.int64)
    y = np.where(hi, one, np.where(lo, -one, 0)).astype(np.int64)
    z = np.where(hi, z - HALF_PI_WORK, np.where(lo, z + HALF_PI_WORK, z))
    for i in range(iters):
        d = np.where(z >= 0, 1, -1)
        xs, ys = x >> i, y >> i
        x, y = x - d * ys, y + d * xs
        z = z - d * atans[i]
    # gain compensation: x*K with x at 30 fraction bits and K at 31
    drop = _WORK_FRAC - 30
    cos = round_shift(x, drop) * gain
    sin = round_shift(y, drop) * gain
    frac = 30 + _GAIN_FRAC
    return (requantize_raw(sin, frac, out_fmt, stats, stage),
            requantize_raw(cos, frac, out_fmt, stats, stage))


def _aligned_raws(a: FxValue, b: FxValue):
    frac = max(a.fmt.frac_bits, b.fmt.frac_bits)
    return a.raw << (frac - a.fmt.frac_bits), b.raw << (frac - b.fmt.frac_bits)


def cordic_arctan(y: FxValue, x: FxValue, iters: int = 24, out_fmt: FxFormat = FxFormat(32, 29),
                  stats=None) -> FxValue:
    """Four-quadrant arctangent ``atan2(y, x)`` in radians."""
    yr, xr = _aligned_raws(y, x)
    if xr == 0 and yr == 0:
        raise ValueError("arctangent of (0, 0) is undefined")
    big = max(abs(xr), abs(yr)).bit_length()
    if big > 62:
        # keep the int64 kernel in range; angle is scale invariant
        yr, xr = yr >> (big - 62), xr >> (big - 62)
    raw = cordic_atan2_raw(np.array([yr]), np.array([xr]), iters, out_fmt, stats)
    return FxValue(int(raw[0]), out_fmt)


def cordic_sincos(theta: FxValue, iters: int = 24, out_fmt: FxFormat = FxFormat(32, 29),
                  stats=None) -> tuple[FxValue, FxValue]:
    s, c = cordic_sincos_raw(np.array([theta.raw]), theta.fmt.frac_bits, iters, out_fmt, stats)
    return FxValue(int(s[0]), out_fmt), FxValue(int(c[0]), out_fmt)
