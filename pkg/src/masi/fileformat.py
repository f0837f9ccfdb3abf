"""``MASI1`` binary container used for datasets, dictionaries and checkpoints.

Layout (all integers little-endian)::

    b"MASI1"
    u16 kind length, kind (utf-8)
    u32 section count
    per section: u16 name length, name, u8 type, u64 payload length, payload
    u64 FNV-1a digest of every preceding byte

Section types: 0 JSON text, 1 raw bytes, 2 array.  An array payload is a u8
dtype code, u8 rank, one u64 per dimension, then the little-endian data.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .errors import CompatibilityError, CorruptionError, DataError
from .qtc import _fnv1a64

MAGIC = b"MASI1"

_JSON, _BYTES, _ARRAY = 0, 1, 2
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i8"), 2: np.dtype("<i1"), 3: np.dtype("u1"),
           4: np.dtype("<i2"), 5: np.dtype("<i4")}
_CODES = {v: k for k, v in _DTYPES.items()}


def _encode_array(a: np.ndarray) -> bytes:
    a = np.asarray(a)
    if a.dtype == bool:
        a = a.astype("u1")
    elif a.dtype.kind == "f":
        a = a.astype(np.float64)
    dt = a.dtype.newbyteorder("<")
    code = _CODES.get(dt)
    if code is None:
        raise DataError(f"unsupported array dtype {a.dtype}")
    head = struct.pack("<BB", code, a.ndim) + b"".join(struct.pack("<Q", d) for d in a.shape)
    return head + np.ascontiguousarray(a, dtype=dt).tobytes()


def _decode_array(buf: bytes) -> np.ndarray:
    code, ndim = struct.unpack_from("<BB", buf, 0)
    if code not in _DTYPES:
        raise CorruptionError(f"unknown array dtype code {code}")
    shape = struct.unpack_from("<" + "Q" * ndim, buf, 2)
    start = 2 + 8 * ndim
    dt = _DTYPES[code]
    count = int(np.prod(shape)) if shape else 1
    if len(buf) - start != count * dt.itemsize:
        raise CorruptionError("array payload has the wrong length")
    return np.frombuffer(buf, dtype=dt, offset=start, count=count).reshape(shape).astype(dt.newbyteorder("="))


def encode(kind: str, sections: dict) -> bytes:
    """Serialize ordered sections: ``dict`` values become JSON, ``bytes`` stay
    raw, anything else is stored as an array."""
    out = bytearray(MAGIC)
    k = kind.encode()
    out += struct.pack("<H", len(k)) + k
    out += struct.pack("<I", len(sections))
    for name, value in sections.items():
        if isinstance(value, dict):
            typ, payload = _JSON, json.dumps(value, sort_keys=True).encode()
        elif isinstance(value, (bytes, bytearray)):
            typ, payload = _BYTES, bytes(value)
        else:
            typ, payload = _ARRAY, _encode_array(value)
        n = name.encode()
        out += struct.pack("<H", len(n)) + n + struct.pack("<BQ", typ, len(payload)) + payload
    out += struct.pack("<Q", _fnv1a64(bytes(out)))
    return bytes(out)


def decode(data: bytes, kind: str | None = None) -> dict:
    """Inverse of :func:`encode`; verifies structure and digest."""
    if len(data) < len(MAGIC) + 8 or not data.startswith(MAGIC):
        raise CorruptionError("not a MASI1 file")
    body, tail = data[:-8], data[-8:]
    if struct.unpack("<Q", tail)[0] != _fnv1a64(body):
        raise CorruptionError("digest mismatch (file truncated or modified)")
    try:
        pos = len(MAGIC)
        (klen,) = struct.unpack_from("<H", body, pos)
        pos += 2
        found = body[pos:pos + klen].decode()
        pos += klen
        (count,) = struct.unpack_from("<I", body, pos)
        pos += 4
        sections = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos:pos + nlen].decode()
            pos += nlen
            typ, plen = struct.unpack_from("<BQ", body, pos)
            pos += 9
            payload = body[pos:pos + plen]
            if len(payload) != plen:
                raise CorruptionError(f"section {name!r} is truncated")
            pos += plen
            if typ == _JSON:
                sections[name] = json.loads(payload)
            elif typ == _BYTES:
                sections[name] = bytes(payload)
            elif typ == _ARRAY:
                sections[name] = _decode_array(payload)
            else:
                raise CorruptionError(f"unknown section type {typ}")
        if pos != len(body):
            raise CorruptionError("trailing bytes after the last section")
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptionError(f"malformed container: {exc}") from exc
    if kind is not None and found != kind:
        raise CompatibilityError(f"expected a {kind} file, found {found}")
    return sections


def write(path, kind: str, sections: dict):
    try:
        with open(path, "wb") as fh:
            fh.write(encode(kind, sections))
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def read(path, kind: str | None = None) -> dict:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return decode(data, kind)


def peek_kind(path) -> str:
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC) + 2 + 256)
    if not head.startswith(MAGIC):
        raise CorruptionError("not a MASI1 file")
    (klen,) = struct.unpack_from("<H", head, len(MAGIC))
    return head[len(MAGIC) + 2:len(MAGIC) + 2 + klen].decode()
