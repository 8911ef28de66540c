"""
ICBT binary tensor files.

Layout (all little-endian):
    4 bytes   magic "ICBT"
    1 byte    version (1)
    1 byte    dtype (0 = float32)
    1 byte    ndim
    8 bytes   unsigned dim, repeated ndim times
    ...       row-major float32 payload
"""

import math
import struct
from pathlib import Path

import numpy as np

MAGIC = b"ICBT"
VERSION = 1
DTYPE_FLOAT32 = 0
_HEADER = struct.Struct("<4sBBB")
_DIM = struct.Struct("<Q")


class TensorFormatError(ValueError):
    """Raised for malformed ICBT content (bad magic, version, dtype or size)"""


def encode_tensor(value):
    arr = np.ascontiguousarray(value, dtype="<f4")
    if arr.ndim > 255:
        raise TensorFormatError(f"tensor has {arr.ndim} dims, the format allows 255")
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_FLOAT32, arr.ndim)
    dims = b"".join(_DIM.pack(d) for d in arr.shape)
    return header + dims + arr.tobytes(order="C")


def decode_tensor(payload, source="<bytes>"):
    if len(payload) < _HEADER.size:
        raise TensorFormatError(f"{source}: truncated header ({len(payload)} bytes)")
    magic, version, dtype, ndim = _HEADER.unpack_from(payload, 0)
    if magic != MAGIC:
        raise TensorFormatError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise TensorFormatError(f"{source}: unsupported version {version}")
    if dtype != DTYPE_FLOAT32:
        raise TensorFormatError(f"{source}: unsupported dtype code {dtype}")

    offset = _HEADER.size
    if len(payload) < offset + ndim * _DIM.size:
        raise TensorFormatError(f"{source}: truncated dims ({ndim} declared)")
    shape = tuple(_DIM.unpack_from(payload, offset + i * _DIM.size)[0] for i in range(ndim))
    offset += ndim * _DIM.size

    # exact size, no fixed-width wraparound
    expected = math.prod(shape) * 4
    available = len(payload) - offset
    if available != expected:
        raise TensorFormatError(
            f"{source}: truncated or oversized payload, dims {shape} need {expected} bytes, found {available}"
        )
    data = np.frombuffer(payload, dtype="<f4", offset=offset).astype(np.float32)
    return data.reshape(shape)


def write_tensor(path, value):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_tensor(value))
    return path


def read_tensor(path):
    path = Path(path)
    return decode_tensor(path.read_bytes(), source=str(path))
