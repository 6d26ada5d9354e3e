"""Binary tensor serialization.

Format per tensor: magic ``TSR1``, u32 rank, u32 dims (little-endian),
then float32 data little-endian row-major.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DataError

TENSOR_MAGIC = b"TSR1"


def write_array(fh, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    fh.write(TENSOR_MAGIC)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack("<%dI" % arr.ndim, *arr.shape))
    fh.write(arr.tobytes())


def read_array(fh) -> np.ndarray:
    magic = fh.read(4)
    if magic != TENSOR_MAGIC:
        raise DataError("bad tensor magic %r" % magic)
    (rank,) = struct.unpack("<I", fh.read(4))
    shape = struct.unpack("<%dI" % rank, fh.read(4 * rank))
    n = int(np.prod(shape)) if rank else 1
    buf = fh.read(4 * n)
    if len(buf) != 4 * n:
        raise DataError("truncated tensor payload")
    return np.frombuffer(buf, dtype="<f4").reshape(shape).astype(np.float32)


def save_array(path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        write_array(fh, arr)


def load_array(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_array(fh)
