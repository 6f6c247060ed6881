"""RFC 1321 MD5, implemented from the RFC rather than hashlib.

MD5 has published collision attacks. It is used here because the sharing
protocol is defined in terms of it; do not reuse this module for anything
that needs collision resistance.
"""

from __future__ import annotations

import hmac
import math
import struct
from dataclasses import dataclass

__all__ = ["Digest", "md5_digest"]

_MASK = 0xFFFFFFFF

# T[i] = floor(2^32 * |sin(i + 1)|)
_T = tuple(int(abs(math.sin(i + 1)) * 2**32) & _MASK for i in range(64))

_SHIFTS = (
    (7, 12, 17, 22) * 4
    + (5, 9, 14, 20) * 4
    + (4, 11, 16, 23) * 4
    + (6, 10, 15, 21) * 4
)

_INIT = (0x67452301, 0xEFCDAB89, 0x98BADCFE, 0x10325476)


def _rotl(x: int, c: int) -> int:
    return ((x << c) | (x >> (32 - c))) & _MASK


def _pad(message: bytes) -> bytes:
    bit_len = (8 * len(message)) & 0xFFFFFFFFFFFFFFFF
    pad_len = (55 - len(message)) % 64
    return message + b"\x80" + b"\x00" * pad_len + struct.pack("<Q", bit_len)


def _compress(state: tuple[int, int, int, int], block: bytes) -> tuple[int, int, int, int]:
    x = struct.unpack("<16I", block)
    a, b, c, d = state
    for i in range(64):
        if i < 16:
            f = (b & c) | (~b & d)
            g = i
        elif i < 32:
            f = (d & b) | (~d & c)
            g = (5 * i + 1) % 16
        elif i < 48:
            f = b ^ c ^ d
            g = (3 * i + 5) % 16
        else:
            f = c ^ (b | (~d & _MASK))
            g = (7 * i) % 16
        f = (f + a + _T[i] + x[g]) & _MASK
        a, d, c = d, c, b
        b = (b + _rotl(f, _SHIFTS[i])) & _MASK
    return (
        (state[0] + a) & _MASK,
        (state[1] + b) & _MASK,
        (state[2] + c) & _MASK,
        (state[3] + d) & _MASK,
    )


@dataclass(frozen=True)
class Digest:
    """A 16-byte MD5 value."""

    value: bytes

    def __post_init__(self):
        if not isinstance(self.value, (bytes, bytearray)) or len(self.value) != 16:
            raise ValueError("digest must be exactly 16 bytes")
        object.__setattr__(self, "value", bytes(self.value))

    def __eq__(self, other):
        if not isinstance(other, Digest):
            return NotImplemented
        return hmac.compare_digest(self.value, other.value)

    def __hash__(self):
        return hash(self.value)

    def __bytes__(self):
        return self.value

    def hex(self) -> str:
        return self.value.hex()

    def __str__(self):
        return self.hex()

    @classmethod
    def fromhex(cls, text: str) -> "Digest":
        return cls(bytes.fromhex(text))


def md5_digest(message: bytes) -> Digest:
    """Return the MD5 digest of ``message`` (empty input allowed)."""
    data = _pad(bytes(message))
    state = _INIT
    for off in range(0, len(data), 64):
        state = _compress(state, data[off:off + 64])
    return Digest(struct.pack("<4I", *state))
