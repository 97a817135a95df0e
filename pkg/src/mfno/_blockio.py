"""Low-level binary container helpers.

All multi-byte integers are little-endian. Every container built on these
helpers ends with a CRC32 of all preceding bytes; readers verify it before
trusting any payload they return.
"""

from __future__ import annotations

import io
import os
import struct
import tempfile
import zlib
from contextlib import contextmanager

import numpy as np

from .errors import CrcMismatchError, FormatError, TruncatedError

# dtype codes shared by every tensor block in the on-disk formats
DTYPE_CODES = {
    np.dtype(np.float32): 0,
    np.dtype(np.float64): 1,
    np.dtype(np.complex64): 2,
    np.dtype(np.complex128): 3,
}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}


class CrcWriter:
    """Wraps a binary stream and accumulates a CRC32 of everything written."""

    def __init__(self, stream):
        self._stream = stream
        self.crc = 0

    def write(self, data: bytes):
        self._stream.write(data)
        self.crc = zlib.crc32(data, self.crc)

    def write_u8(self, value: int):
        self.write(struct.pack("<B", value))

    def write_u32(self, value: int):
        self.write(struct.pack("<I", value))

    def write_str(self, text: str):
        raw = text.encode("utf-8")
        self.write_u32(len(raw))
        self.write(raw)

    def write_crc(self):
        self._stream.write(struct.pack("<I", self.crc))


class CrcReader:
    """Wraps a binary stream, tracking a CRC32 of everything read."""

    def __init__(self, stream):
        self._stream = stream
        self.crc = 0

    def read(self, n: int) -> bytes:
        data = self._stream.read(n)
        if len(data) != n:
            raise TruncatedError(
                f"expected {n} more bytes, found {len(data)} (file truncated)"
            )
        self.crc = zlib.crc32(data, self.crc)
        return data

    def read_u8(self) -> int:
        return struct.unpack("<B", self.read(1))[0]

    def read_u32(self) -> int:
        return struct.unpack("<I", self.read(4))[0]

    def read_str(self) -> str:
        n = self.read_u32()
        return self.read(n).decode("utf-8")

    def expect_crc(self):
        """Consume the trailing CRC32 and compare against the running value."""
        expected = self.crc
        raw = self._stream.read(4)
        if len(raw) != 4:
            raise TruncatedError("missing trailing CRC32")
        stored = struct.unpack("<I", raw)[0]
        if stored != expected:
            raise CrcMismatchError(
                f"CRC mismatch: stored {stored:#010x}, computed {expected:#010x}"
            )
        extra = self._stream.read(1)
        if extra:
            raise FormatError("trailing bytes after CRC32")


def write_tensor(w: CrcWriter, array: np.ndarray, allowed_codes=None):
    """Write one tensor block: ndim u32, dims u32 each, dtype u8, payload."""
    arr = np.ascontiguousarray(array)
    code = DTYPE_CODES.get(arr.dtype)
    if code is None:
        raise FormatError(f"unsupported tensor dtype {arr.dtype}")
    if allowed_codes is not None and code not in allowed_codes:
        raise FormatError(f"dtype {arr.dtype} not allowed in this container")
    w.write_u32(arr.ndim)
    for d in arr.shape:
        w.write_u32(d)
    w.write_u8(code)
    if arr.dtype.byteorder == ">":
        arr = arr.astype(arr.dtype.newbyteorder("<"))
    w.write(arr.tobytes())


def read_tensor(r: CrcReader) -> np.ndarray:
    ndim = r.read_u32()
    if ndim > 8:
        raise FormatError(f"implausible tensor rank {ndim}")
    dims = tuple(r.read_u32() for _ in range(ndim))
    code = r.read_u8()
    dtype = CODE_DTYPES.get(code)
    if dtype is None:
        raise FormatError(f"unknown dtype code {code}")
    count = 1
    for d in dims:
        count *= d
    payload = r.read(count * dtype.itemsize)
    arr = np.frombuffer(payload, dtype=dtype.newbyteorder("<")).astype(dtype)
    return arr.reshape(dims)


def write_kv_block(w: CrcWriter, mapping: dict):
    """Write a key=value text blob, length-prefixed."""
    lines = [f"{k} = {v}" for k, v in mapping.items()]
    w.write_str("\n".join(lines))


def read_kv_block(r: CrcReader) -> dict:
    text = r.read_str()
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, value = line.partition(" = ")
        out[key] = value
    return out


@contextmanager
def atomic_write(path):
    """Write to a temp file in the target directory, rename on success."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with io.open(fd, "wb") as f:
            yield f
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise
