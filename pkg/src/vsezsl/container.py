"""Sectioned binary container for model checkpoints.

Layout (little-endian)::

    b"VSECK"  u8 version  u32 section_count
    per section:
        u16 name_len  name (utf-8)  u8 type  u64 payload_len  payload

Section types: 0 = JSON (utf-8, sorted keys, compact separators),
1 = float64 array (u8 rank, rank x u32 dims, row-major data),
2 = int64 array (same layout as type 1).

Sections keep insertion order, so equal contents give equal bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatError, TruncatedFileError

MAGIC = b"VSECK"
VERSION = 1

JSON, F64, I64 = 0, 1, 2
_DTYPES = {F64: "<f8", I64: "<i8"}


def _encode_array(a, code):
    a = np.asarray(a, dtype=_DTYPES[code], order="C")
    head = struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + a.tobytes()


def encode_sections(sections) -> bytes:
    """``sections`` is a list of ``(name, value)``; arrays become binary sections."""
    out = [MAGIC, struct.pack("<BI", VERSION, len(sections))]
    for name, value in sections:
        if isinstance(value, np.ndarray):
            code = I64 if np.issubdtype(value.dtype, np.integer) else F64
            payload = _encode_array(value, code)
        else:
            code = JSON
            payload = json.dumps(value, sort_keys=True, separators=(",", ":")).encode("utf-8")
        key = name.encode("utf-8")
        out += [struct.pack("<H", len(key)), key, struct.pack("<BQ", code, len(payload)), payload]
    return b"".join(out)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise TruncatedFileError(f"checkpoint ends at byte {len(self.buf)}, needed {self.pos + n}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def _decode_array(payload, code):
    r = _Reader(payload)
    (rank,) = r.unpack("<B")
    dims = r.unpack(f"<{rank}I")
    size = int(np.prod(dims, dtype=np.int64)) * 8
    data = r.take(size)
    if r.pos != len(payload):
        raise FormatError("array section has trailing bytes")
    return np.frombuffer(data, dtype=_DTYPES[code]).reshape(dims).astype(
        np.float64 if code == F64 else np.int64)


def decode_sections(buf: bytes) -> dict:
    """Inverse of :func:`encode_sections`; returns an ordered dict of sections."""
    r = _Reader(buf)
    if r.take(len(MAGIC)) != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    version, count = r.unpack("<BI")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version} (expected {VERSION})")
    out = {}
    for _ in range(count):
        (n,) = r.unpack("<H")
        name = r.take(n).decode("utf-8")
        code, length = r.unpack("<BQ")
        payload = r.take(length)
        if name in out:
            raise FormatError(f"duplicate section {name!r}")
        if code == JSON:
            try:
                out[name] = json.loads(payload.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as e:
                raise FormatError(f"section {name!r} is not valid JSON") from e
        elif code in _DTYPES:
            out[name] = _decode_array(payload, code)
        else:
            raise FormatError(f"section {name!r} has unknown type {code}")
    if r.pos != len(buf):
        raise FormatError("trailing bytes after last section")
    return out


def write_sections(path, sections):
    with open(path, "wb") as fh:
        fh.write(encode_sections(sections))


def read_sections(path) -> dict:
    with open(path, "rb") as fh:
        return decode_sections(fh.read())
