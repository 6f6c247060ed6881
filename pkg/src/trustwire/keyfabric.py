"""Textbook RSA key pairs, byte-level block transforms and the CA key registry.

The protocol signs by "encrypting with the private key" and verifies by
"decrypting with the public key", so the transforms here are raw modular
exponentiation with no padding scheme. Either key can drive either direction:

* :func:`pk_encrypt` frames bytes into blocks and exponentiates each one.
* :func:`pk_decrypt` undoes the framing after exponentiating with the
  complementary key.

Block framing: a modulus of ``k`` bytes carries ``k - 2`` payload bytes per
block (at most 255). Each plaintext block is ``len || payload || zero pad``,
``k - 1`` bytes long, so its integer value is always below the modulus.
Ciphertext blocks are exactly ``k`` bytes. Decoding is strict: every
non-final block must be full and pad bytes must be zero, so any altered
ciphertext block is rejected rather than silently accepted.
"""

from __future__ import annotations

import math
import random
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

from .errors import DecodeError, DuplicateAgencyError, KeyFormatError, UnknownAgencyError

DEFAULT_BITS = 512
DEFAULT_EXPONENT = 65537
MR_ROUNDS = 40
KEY_HEADER = "TRUSTWIRE-KEY v1"

_SMALL_PRIMES = (3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97)
_AGENCY_CHARS = frozenset(string.ascii_letters + string.digits + "-_.")


@dataclass(frozen=True)
class PublicKey:
    n: int
    e: int

    @property
    def exponent(self) -> int:
        return self.e

    @property
    def size_bytes(self) -> int:
        return (self.n.bit_length() + 7) // 8


@dataclass(frozen=True)
class PrivateKey:
    n: int
    d: int
    # CRT factors are an in-memory speedup only; key files carry n and d.
    p: int | None = field(default=None, repr=False, compare=False)
    q: int | None = field(default=None, repr=False, compare=False)

    @property
    def exponent(self) -> int:
        return self.d

    @property
    def size_bytes(self) -> int:
        return (self.n.bit_length() + 7) // 8


Key = Union[PublicKey, PrivateKey]


@dataclass(frozen=True)
class KeyPair:
    public: PublicKey
    private: PrivateKey

    @property
    def n(self) -> int:
        return self.public.n


# -- number theory ---------------------------------------------------------

def is_probable_prime(n: int, rng: random.Random, rounds: int = MR_ROUNDS) -> bool:
    """Miller-Rabin with witnesses drawn from ``rng``."""
    if n < 2:
        return False
    if n in (2, 3):
        return True
    if n % 2 == 0:
        return False
    for p in _SMALL_PRIMES:
        if n == p:
            return True
        if n % p == 0:
            return False
    d, r = n - 1, 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for _ in range(rounds):
        a = rng.randrange(2, n - 1)
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def _random_prime(bits: int, rng: random.Random) -> int:
    while True:
        # Top two bits set so the product of two such primes has exactly 2*bits bits.
        cand = rng.getrandbits(bits) | (0b11 << (bits - 2)) | 1
        if is_probable_prime(cand, rng):
            return cand


def keypair_from_primes(p: int, q: int, e: int = DEFAULT_EXPONENT) -> KeyPair:
    """Build a key pair with ``d = e^-1 mod (p - 1)(q - 1)``."""
    if p == q:
        raise ValueError("p and q must differ")
    phi = (p - 1) * (q - 1)
    if math.gcd(e, phi) != 1:
        raise ValueError("e is not invertible modulo (p-1)(q-1)")
    d = pow(e, -1, phi)
    n = p * q
    return KeyPair(PublicKey(n, e), PrivateKey(n, d, p, q))


def generate_keypair(bit_length: int = DEFAULT_BITS, seed: int = 0) -> KeyPair:
    """Deterministically generate a key pair whose modulus has ``bit_length`` bits."""
    if bit_length < 32 or bit_length % 2:
        raise ValueError("bit_length must be even and at least 32")
    rng = random.Random(seed)
    half = bit_length // 2
    while True:
        p = _random_prime(half, rng)
        q = _random_prime(half, rng)
        if p == q:
            continue
        try:
            return keypair_from_primes(p, q)
        except ValueError:
            continue


def apply(key: Key, m: int) -> int:
    """Raw block transform ``m^exp mod n``."""
    if not 0 <= m < key.n:
        raise DecodeError("block value out of range for modulus")
    if isinstance(key, PrivateKey) and key.p is not None:
        p, q = key.p, key.q
        mp = pow(m % p, key.d % (p - 1), p)
        mq = pow(m % q, key.d % (q - 1), q)
        h = (pow(q, -1, p) * (mp - mq)) % p
        return mq + h * q
    return pow(m, key.exponent, key.n)


# -- byte transforms -------------------------------------------------------

def _block_capacity(key: Key) -> int:
    cap = min(key.size_bytes - 2, 255)
    if cap < 1:
        raise ValueError("modulus too small for byte transforms (need at least 24 bits)")
    return cap


def pk_encrypt(key: Key, data: bytes) -> bytes:
    """Frame ``data`` into blocks and exponentiate each with ``key``."""
    k = key.size_bytes
    cap = _block_capacity(key)
    out = bytearray()
    for off in range(0, len(data), cap):
        chunk = data[off:off + cap]
        block = bytes([len(chunk)]) + chunk + bytes(cap - len(chunk))
        out += apply(key, int.from_bytes(block, "big")).to_bytes(k, "big")
    return bytes(out)


def pk_decrypt(key: Key, data: bytes) -> bytes:
    """Invert :func:`pk_encrypt` performed with the complementary key."""
    k = key.size_bytes
    cap = _block_capacity(key)
    if len(data) % k:
        raise DecodeError(f"ciphertext length {len(data)} is not a multiple of {k}")
    nblocks = len(data) // k
    out = bytearray()
    for i in range(nblocks):
        c = int.from_bytes(data[i * k:(i + 1) * k], "big")
        if c >= key.n:
            raise DecodeError(f"block {i} is not below the modulus")
        m = apply(key, c)
        if m >> (8 * (k - 1)):
            raise DecodeError(f"block {i} decodes out of range")
        block = m.to_bytes(k - 1, "big")
        length = block[0]
        last = i == nblocks - 1
        if not 1 <= length <= cap or (not last and length != cap):
            raise DecodeError(f"block {i} has bad length prefix {length}")
        if any(block[1 + length:]):
            raise DecodeError(f"block {i} has non-zero padding")
        out += block[1:1 + length]
    return bytes(out)


def pk_transform(key: Key, data: bytes, *, inverse: bool = False) -> bytes:
    """Forward (``inverse=False``) or reverse block transform under ``key``."""
    return pk_decrypt(key, data) if inverse else pk_encrypt(key, data)


# -- certificate authority -------------------------------------------------

def check_agency_id(agency: str) -> str:
    if not isinstance(agency, str) or not 1 <= len(agency) <= 16 or not set(agency) <= _AGENCY_CHARS:
        raise ValueError(f"invalid agency id {agency!r}")
    return agency


class KeyRegistry:
    """In-process stand-in for the certificate authority's public key directory.

    Registrations happen during setup; afterwards the registry is only read.
    """

    def __init__(self):
        self._keys: dict[str, PublicKey] = {}

    def register(self, agency: str, key: PublicKey) -> "KeyRegistry":
        check_agency_id(agency)
        if agency in self._keys:
            raise DuplicateAgencyError(f"agency {agency} already registered")
        self._keys[agency] = key
        return self

    def lookup(self, agency: str) -> PublicKey:
        try:
            return self._keys[agency]
        except KeyError:
            raise UnknownAgencyError(f"agency {agency!r} is not registered") from None

    def __contains__(self, agency: str) -> bool:
        return agency in self._keys

    def __iter__(self):
        return iter(sorted(self._keys))

    def __len__(self):
        return len(self._keys)


def register_agency(registry: KeyRegistry, agency: str, key: PublicKey) -> KeyRegistry:
    return registry.register(agency, key)


# -- key files -------------------------------------------------------------

def dump_key(key: Key) -> str:
    kind = "private" if isinstance(key, PrivateKey) else "public"
    return f"{KEY_HEADER} {kind}\n{key.n:x}\n{key.exponent:x}\n"


def load_key(text: str) -> Key:
    lines = [ln.strip() for ln in text.strip().splitlines()]
    if len(lines) != 3 or not lines[0].startswith(KEY_HEADER + " "):
        raise KeyFormatError("not a TRUSTWIRE-KEY v1 file")
    kind = lines[0][len(KEY_HEADER) + 1:]
    try:
        n, exp = int(lines[1], 16), int(lines[2], 16)
    except ValueError:
        raise KeyFormatError("key numbers must be hexadecimal") from None
    if any(c not in "0123456789abcdef" for c in lines[1] + lines[2]):
        raise KeyFormatError("key numbers must be lowercase hexadecimal")
    if kind == "public":
        return PublicKey(n, exp)
    if kind == "private":
        return PrivateKey(n, exp)
    raise KeyFormatError(f"unknown key kind {kind!r}")


def save_keypair(pair: KeyPair, stem: str | Path) -> tuple[Path, Path]:
    stem = Path(stem)
    pub = stem.with_name(stem.name + ".pub")
    priv = stem.with_name(stem.name + ".key")
    pub.write_text(dump_key(pair.public))
    priv.write_text(dump_key(pair.private))
    return pub, priv
