"""Reading and writing of GW01 grid files.

GW01 is the on-disk framing used for every gridded array the workbench
produces (permeability fields, material maps, saturation snapshots, dataset
shards).  Layout:

    bytes 0-3   magic ``GW01``
    byte  4     dtype code (0 = float32, 2 = uint16)
    byte  5     number of dimensions
    next        ndim little-endian uint32 dims
    rest        row-major (C order) payload
"""

from __future__ import annotations

import io
import struct
from typing import BinaryIO

import numpy as np

MAGIC = b"GW01"

DTYPE_CODES = {0: np.dtype("<f4"), 2: np.dtype("<u2")}
CODES_BY_DTYPE = {np.dtype("<f4"): 0, np.dtype("<u2"): 2}


class GW01Error(ValueError):
    """Malformed or unsupported GW01 data."""


def _dtype_code(arr: np.ndarray) -> int:
    if arr.dtype in (np.float32, np.float64):
        return 0
    if arr.dtype in (np.uint16, np.int64, np.int32, np.uint8):
        return 2
    raise GW01Error(f"no GW01 dtype code for array dtype {arr.dtype}")


def encode(arr: np.ndarray) -> bytes:
    """Serialize an array to GW01 bytes (floats as f32, integers as u16)."""
    code = _dtype_code(arr)
    dtype = DTYPE_CODES[code]
    if code == 2 and arr.size and (arr.min() < 0 or arr.max() > np.iinfo("<u2").max):
        raise GW01Error("integer array does not fit in uint16 payload")
    payload = np.ascontiguousarray(arr, dtype=dtype)
    header = MAGIC + struct.pack("<BB", code, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + dims + payload.tobytes()


def decode(data: bytes) -> np.ndarray:
    """Parse GW01 bytes back into an ndarray."""
    if len(data) < 6 or data[:4] != MAGIC:
        raise GW01Error("missing GW01 magic")
    code, ndim = struct.unpack_from("<BB", data, 4)
    if code not in DTYPE_CODES:
        raise GW01Error(f"unknown dtype code {code}")
    offset = 6
    if len(data) < offset + 4 * ndim:
        raise GW01Error("truncated GW01 dimension header")
    shape = struct.unpack_from(f"<{ndim}I", data, offset)
    offset += 4 * ndim
    dtype = DTYPE_CODES[code]
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(data) - offset < expected:
        raise GW01Error(
            f"truncated GW01 payload: expected {expected} bytes, got {len(data) - offset}"
        )
    arr = np.frombuffer(data, dtype=dtype, count=int(np.prod(shape)), offset=offset)
    return arr.reshape(shape).copy()


def write(path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(arr))


def read(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode(fh.read())


def write_stream(fh: BinaryIO, arr: np.ndarray) -> int:
    """Append one GW01 frame to an open stream; returns bytes written."""
    blob = encode(arr)
    fh.write(blob)
    return len(blob)


def read_stream(fh: BinaryIO) -> np.ndarray:
    """Read one GW01 frame from the current stream position."""
    head = fh.read(6)
    if len(head) < 6 or head[:4] != MAGIC:
        raise GW01Error("missing GW01 magic at stream position")
    code, ndim = struct.unpack_from("<BB", head, 4)
    if code not in DTYPE_CODES:
        raise GW01Error(f"unknown dtype code {code}")
    dims_raw = fh.read(4 * ndim)
    if len(dims_raw) < 4 * ndim:
        raise GW01Error("truncated GW01 dimension header")
    shape = struct.unpack(f"<{ndim}I", dims_raw)
    dtype = DTYPE_CODES[code]
    n = int(np.prod(shape))
    payload = fh.read(n * dtype.itemsize)
    if len(payload) < n * dtype.itemsize:
        raise GW01Error("truncated GW01 payload")
    return np.frombuffer(payload, dtype=dtype, count=n).reshape(shape).copy()


def frame_size(arr: np.ndarray) -> int:
    """Size in bytes of the GW01 frame that ``encode`` would produce."""
    code = _dtype_code(arr)
    return 6 + 4 * arr.ndim + arr.size * DTYPE_CODES[code].itemsize


def decode_buffer(buf: io.BytesIO) -> np.ndarray:
    return read_stream(buf)
