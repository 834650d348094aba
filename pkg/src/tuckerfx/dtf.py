"""Dense tensor file (DTF) reader and writer.

Layout, all integers little-endian::

    b"DTEN"  u16 version  u8 scalar code
    [u8 total bits, u8 fraction bits]      only when code == 2
    u16 order  order x u64 dims
    data in mode-1-major order

Scalar codes: 0 float32, 1 float64, 2 fixed-point. Fixed-point raws are
stored as signed integers of the smallest width in 8/16/32/64 bits that
holds the format.
"""

from __future__ import annotations

import math
import os
import struct
from typing import Union

import numpy as np

from tuckerfx.fxp import FxFormat
from tuckerfx.tensor import DenseTensor, ShapeError, check_shape

MAGIC = b"DTEN"
VERSION = 1
CODE_F32, CODE_F64, CODE_FIXED = 0, 1, 2

PathLike = Union[str, os.PathLike]


class DtfError(ValueError):
    """Malformed or unsupported DTF content."""


def raw_dtype(fmt: FxFormat) -> np.dtype:
    for width in (8, 16, 32, 64):
        if fmt.total_bits <= width:
            return np.dtype(f"<i{width // 8}")
    raise DtfError(f"format {fmt} is wider than 64 bits")


def encode(X: DenseTensor, scalar: str = "f64") -> bytes:
    """Serialize ``X``. Real tensors are written as ``f64`` or ``f32``."""
    if X.fmt is not None:
        head = struct.pack("<4sHBBB", MAGIC, VERSION, CODE_FIXED, X.fmt.total_bits, X.fmt.frac_bits)
        body = X.data.astype(raw_dtype(X.fmt)).tobytes()
    else:
        if scalar not in ("f32", "f64"):
            raise ValueError(f"unknown scalar type {scalar!r}")
        code = CODE_F32 if scalar == "f32" else CODE_F64
        head = struct.pack("<4sHB", MAGIC, VERSION, code)
        body = X.data.astype("<f4" if code == CODE_F32 else "<f8").tobytes()
    dims = struct.pack(f"<H{X.order}Q", X.order, *X.shape)
    return head + dims + body


def decode(buf: bytes) -> DenseTensor:
    view = memoryview(buf)

    def take(fmt: str, pos: int):
        size = struct.calcsize(fmt)
        if pos + size > len(view):
            raise DtfError("truncated header")
        return struct.unpack_from(fmt, view, pos), pos + size

    (magic, version, code), pos = take("<4sHB", 0)
    if magic != MAGIC:
        raise DtfError(f"bad magic {bytes(magic)!r}")
    if version != VERSION:
        raise DtfError(f"unsupported version {version}")
    fmt = None
    if code == CODE_FIXED:
        (total, frac), pos = take("<BB", pos)
        try:
            fmt = FxFormat(total, frac)
        except ValueError as exc:
            raise DtfError(str(exc)) from exc
        dtype = raw_dtype(fmt)
    elif code == CODE_F32:
        dtype = np.dtype("<f4")
    elif code == CODE_F64:
        dtype = np.dtype("<f8")
    else:
        raise DtfError(f"unknown scalar code {code}")
    (order,), pos = take("<H", pos)
    dims, pos = take(f"<{order}Q", pos)
    try:
        shape = check_shape(dims)
    except ShapeError as exc:
        raise DtfError(str(exc)) from exc
    nbytes = math.prod(shape) * dtype.itemsize
    if len(view) - pos != nbytes:
        raise DtfError(f"expected {nbytes} data bytes, found {len(view) - pos}")
    data = np.frombuffer(view, dtype=dtype, offset=pos)
    if fmt is not None:
        data = data.astype(np.int64)
        if data.size and (data.max() > fmt.raw_max or data.min() < fmt.raw_min):
            raise DtfError(f"raw value outside format {fmt}")
    else:
        data = data.astype(np.float64)
    return DenseTensor(shape, data, fmt)


def write(path: PathLike, X: DenseTensor, scalar: str = "f64") -> None:
    with open(path, "wb") as fh:
        fh.write(encode(X, scalar))


def read(path: PathLike) -> DenseTensor:
    with open(path, "rb") as fh:
        return decode(fh.read())
