"""Binary parameter store.

Layout (all integers little-endian)::

    magic    4 bytes   b"ATRW"
    version  uint16    currently 1
    count    uint32    number of tensors
    then, per tensor, in ascending name order:
      name_len uint16, name (UTF-8, name_len bytes)
      dtype    uint8     1 = float32, 2 = float64, 3 = int64
      ndim     uint8
      dims     ndim x uint32
      data     prod(dims) little-endian values, C order
"""
from __future__ import annotations

import struct
from typing import Dict, Mapping

import numpy as np

MAGIC = b"ATRW"
VERSION = 1
_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8")}
_BY_KIND = {np.dtype("float32"): 1, np.dtype("float64"): 2, np.dtype("int64"): 3}


class StoreFormatError(ValueError):
    pass


def dumps(arrays: Mapping[str, np.ndarray]) -> bytes:
    out = [MAGIC, struct.pack("<HI", VERSION, len(arrays))]
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        code = _BY_KIND.get(arr.dtype)
        if code is None:
            raise StoreFormatError(f"unsupported dtype {arr.dtype} for {name}")
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<BB", code, arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=_CODES[code]).tobytes())
    return b"".join(out)


def loads(buf: bytes) -> Dict[str, np.ndarray]:
    try:
        return _loads(buf)
    except (struct.error, UnicodeDecodeError) as err:
        raise StoreFormatError(f"malformed parameter store: {err}") from None


def _loads(buf: bytes) -> Dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise StoreFormatError("bad magic bytes")
    version, count = struct.unpack_from("<HI", buf, 4)
    if version != VERSION:
        raise StoreFormatError(f"unsupported store version {version}")
    pos = 10
    arrays: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        code, ndim = struct.unpack_from("<BB", buf, pos)
        pos += 2
        dims = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        dt = _CODES.get(code)
        if dt is None:
            raise StoreFormatError(f"unknown dtype code {code}")
        n = int(np.prod(dims, dtype=np.int64))
        if pos + n * np.dtype(dt).itemsize > len(buf):
            raise StoreFormatError(f"truncated data for {name!r}")
        arr = np.frombuffer(buf, dtype=dt, count=n, offset=pos).reshape(dims)
        pos += n * dt.itemsize
        arrays[name] = arr.astype(dt.newbyteorder("="), copy=True)
    if pos != len(buf):
        raise StoreFormatError("trailing bytes after last tensor")
    return arrays


def save(path, arrays: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(arrays))


def load(path) -> Dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return loads(fh.read())
