"""Tag-length-value framing for every field the handshake hashes or encrypts.

Layout::

    "TW1" || (tag:1 || length:4 big-endian || payload:length)*

Because every payload carries its own length, two different field lists can
never encode to the same bytes. The integrity checks depend on that property.
"""

from __future__ import annotations

import struct
from enum import IntEnum
from typing import Iterable, Sequence

from .errors import BadMagicError, LengthError, TruncatedError, UnknownTagError

MAGIC = b"TW1"

_HEADER = struct.Struct(">BI")
_U64 = struct.Struct(">Q")
_F64 = struct.Struct(">d")

MAX_RANDOM_SET = 32


class FieldTag(IntEnum):
    NONCE_CIPHERTEXT = 0x01
    AGENCY_ID = 0x02
    RANDOM_SET = 0x03
    REQUEST_PAYLOAD = 0x04
    DIGEST = 0x05
    SIGNED_BLOB = 0x06
    MAPPING_VALUE = 0x07
    RESPONSE_PAYLOAD = 0x08


Field = tuple[FieldTag, bytes]


def encode_fields(fields: Iterable[tuple[int, bytes]]) -> bytes:
    out = bytearray(MAGIC)
    for tag, payload in fields:
        tag = FieldTag(tag)
        payload = bytes(payload)
        if len(payload) >= 1 << 32:
            raise LengthError(f"payload for {tag.name} too large")
        out += _HEADER.pack(tag, len(payload))
        out += payload
    return bytes(out)


def decode_fields(data: bytes) -> list[Field]:
    data = bytes(data)
    if data[:3] != MAGIC:
        raise BadMagicError("missing TW1 magic")
    fields: list[Field] = []
    pos = 3
    end = len(data)
    while pos < end:
        if end - pos < _HEADER.size:
            raise TruncatedError(f"truncated field header at offset {pos}")
        tag, length = _HEADER.unpack_from(data, pos)
        try:
            tag = FieldTag(tag)
        except ValueError:
            raise UnknownTagError(f"unknown tag 0x{tag:02x} at offset {pos}") from None
        pos += _HEADER.size
        if end - pos < length:
            raise TruncatedError(f"{tag.name} payload needs {length} bytes, {end - pos} left")
        fields.append((tag, data[pos:pos + length]))
        pos += length
    return fields


def expect_fields(data: bytes, tags: Sequence[FieldTag]) -> list[bytes]:
    """Decode ``data`` and require exactly ``tags`` in order; return the payloads.

    Raises :class:`LengthError` on a shape mismatch.
    """
    fields = decode_fields(data)
    got = [t for t, _ in fields]
    if got != list(tags):
        raise LengthError(f"expected fields {[t.name for t in tags]}, got {[t.name for t in got]}")
    return [p for _, p in fields]


# -- scalar codecs ---------------------------------------------------------

def encode_f64(value: float) -> bytes:
    return _F64.pack(value)


def decode_f64(data: bytes) -> float:
    if len(data) != 8:
        raise LengthError(f"binary64 needs 8 bytes, got {len(data)}")
    return _F64.unpack(data)[0]


def encode_u64(value: int) -> bytes:
    if not 0 <= value < 1 << 64:
        raise ValueError("value out of u64 range")
    return _U64.pack(value)


def decode_u64(data: bytes) -> int:
    if len(data) != 8:
        raise LengthError(f"u64 needs 8 bytes, got {len(data)}")
    return _U64.unpack(data)[0]


def encode_random_set(values: Sequence[int]) -> bytes:
    if not 1 <= len(values) <= MAX_RANDOM_SET:
        raise LengthError(f"random set size {len(values)} outside [1, {MAX_RANDOM_SET}]")
    return b"".join(encode_u64(v) for v in values)


def decode_random_set(data: bytes) -> tuple[int, ...]:
    if len(data) % 8 or not 1 <= len(data) // 8 <= MAX_RANDOM_SET:
        raise LengthError(f"bad random set length {len(data)}")
    return tuple(v for (v,) in _U64.iter_unpack(data))

