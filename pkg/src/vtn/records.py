"""Binary named-tensor record files.

Layout (all integers little-endian)::

    magic        8 bytes  b"VTNREC\\x00\\x01"
    version      u32
    meta_len     u32, then meta_len bytes of UTF-8 JSON (sorted keys)
    count        u32
    count x record:
        name_len u16, name (UTF-8)
        dtype    u8   (0 float32, 1 float64, 2 int64)
        rank     u8
        extents  rank x u64
        payload  row-major little-endian values
    crc32        u32 over every preceding byte

The checksum is verified before anything is parsed, so a truncated or
corrupted file never yields a partial result.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"VTNREC\x00\x01"
FORMAT_VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.int64): 2}


class RecordError(ValueError):
    """Malformed record file."""


class ChecksumError(RecordError):
    pass


class VersionError(RecordError):
    pass


def encode(tensors: dict[str, np.ndarray], meta: dict | None = None,
           version: int = FORMAT_VERSION) -> bytes:
    parts = [MAGIC, struct.pack("<I", version)]
    meta_bytes = json.dumps(meta or {}, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts += [struct.pack("<I", len(meta_bytes)), meta_bytes, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in _TAGS:
            raise RecordError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        tag = _TAGS[arr.dtype]
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)) + raw_name)
        parts.append(struct.pack("<BB", tag, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if len(blob) < len(MAGIC) + 8 or not blob.startswith(MAGIC):
        if blob.startswith(MAGIC[:len(blob)]) and len(blob) < len(MAGIC) + 8:
            raise ChecksumError("record file is truncated")
        raise RecordError("not a record file (bad magic)")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError("record checksum mismatch (file corrupt or truncated)")
    pos = len(MAGIC)
    (version,) = struct.unpack_from("<I", body, pos)
    pos += 4
    if version != FORMAT_VERSION:
        raise VersionError(f"record format version {version} is not supported "
                           f"(expected {FORMAT_VERSION})")
    try:
        (meta_len,) = struct.unpack_from("<I", body, pos)
        pos += 4
        meta = json.loads(body[pos:pos + meta_len].decode("utf-8"))
        pos += meta_len
        (count,) = struct.unpack_from("<I", body, pos)
        pos += 4
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos:pos + name_len].decode("utf-8")
            pos += name_len
            tag, rank = struct.unpack_from("<BB", body, pos)
            pos += 2
            shape = struct.unpack_from(f"<{rank}Q", body, pos)
            pos += 8 * rank
            dtype = _DTYPES[tag]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            if pos + nbytes > len(body):
                raise RecordError(f"tensor {name!r} runs past the end of the file")
            arr = np.frombuffer(body, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos)
            tensors[name] = arr.reshape(shape).astype(dtype.newbyteorder("="), copy=True)
            pos += nbytes
    except (struct.error, KeyError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise RecordError(f"malformed record file: {exc}") from None
    if pos != len(body):
        raise RecordError("trailing bytes after the last tensor")
    return tensors, meta


def write(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    Path(path).write_bytes(encode(tensors, meta))


def read(path) -> tuple[dict[str, np.ndarray], dict]:
    return decode(Path(path).read_bytes())
