"""Request/response handshake between a source and a target agency.

Message construction (every ``[...]`` is a :func:`encode_fields` frame)::

    R_V     = Enc_{source.pub}(u64 R)
    SE_Data = [R_V, src_id, S_R, Request]
    H_req   = MD5(SE_Data)
    SA_Data = Enc_{source.priv}([S_R, Request, H_req])
    S_Req   = Enc_{target.pub}([R_V, src_id, SA_Data])

    M'      = sin(M_fn(S_R))
    TE_Data = [R_V, M', Response]
    H_res   = MD5(TE_Data)
    T_Res   = Enc_{source.pub}([R_V, M', Response, H_res])

The target re-derives ``H_req`` from the outer ``R_V``/``src_id`` and the
signed inner fields, so tampering with either half is caught. The source
checks, in order, the response digest, the mapping value and the nonce.
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass
from enum import IntEnum
from fractions import Fraction
from typing import Optional, Protocol, Sequence

from .digest import Digest, md5_digest
from .errors import (
    AgencyVerificationError,
    AuthenticationError,
    CodecError,
    DecodeError,
    IntegrityError,
    ProtocolError,
    RequestCorrelationError,
    UnknownAgencyError,
)
from .keyfabric import KeyPair, KeyRegistry, check_agency_id, pk_decrypt, pk_encrypt
from .trustplane import MappingFunction, SharedInfo, TrustPlane, eval_mapping, trust_filter
from .wirecodec import (
    FieldTag,
    decode_f64,
    decode_random_set,
    decode_u64,
    encode_f64,
    encode_fields,
    encode_random_set,
    encode_u64,
    expect_fields,
)

MAX_CODE_BYTES = 32

_REQUEST_ENVELOPE = (FieldTag.NONCE_CIPHERTEXT, FieldTag.AGENCY_ID, FieldTag.SIGNED_BLOB)
_SIGNED_BODY = (FieldTag.RANDOM_SET, FieldTag.REQUEST_PAYLOAD, FieldTag.DIGEST)
_RESPONSE_BODY = (FieldTag.NONCE_CIPHERTEXT, FieldTag.MAPPING_VALUE, FieldTag.RESPONSE_PAYLOAD, FieldTag.DIGEST)


class QueryKind(IntEnum):
    INFO_ITEMS = 1
    ACTIVITIES = 2

    @classmethod
    def parse(cls, text: str) -> "QueryKind":
        key = text.strip().lower()
        if key in ("items", "info", "info_items"):
            return cls.INFO_ITEMS
        if key in ("activities", "activity"):
            return cls.ACTIVITIES
        raise ValueError(f"unknown query kind {text!r}")


@dataclass(frozen=True)
class QueryPayload:
    terrorist_code: str
    query_kind: QueryKind = QueryKind.INFO_ITEMS

    def __post_init__(self):
        code = self.terrorist_code
        if not (code.isascii() and code.isprintable() and 1 <= len(code) <= MAX_CODE_BYTES):
            raise ValueError(f"invalid terrorist code {self.terrorist_code!r}")
        object.__setattr__(self, "query_kind", QueryKind(self.query_kind))

    def encode(self) -> bytes:
        return bytes([self.query_kind]) + self.terrorist_code.encode("ascii")

    @classmethod
    def decode(cls, data: bytes) -> "QueryPayload":
        if len(data) < 2:
            raise ValueError("query payload too short")
        return cls(data[1:].decode("ascii"), QueryKind(data[0]))


@dataclass(frozen=True)
class PendingState:
    """What the source keeps about an outstanding request."""

    source: str
    target: str
    nonce: int
    nonce_ciphertext: bytes
    random_set: tuple[int, ...]
    payload: QueryPayload


@dataclass(frozen=True)
class ValidatedRequest:
    nonce_ciphertext: bytes
    source: str
    random_set: tuple[int, ...]
    request_payload: QueryPayload


@dataclass(frozen=True)
class OpenedResponse:
    """A decrypted response body, before any check other than framing."""

    nonce_ciphertext: bytes
    mapping_bytes: bytes
    response_payload: bytes
    digest: bytes

    @property
    def mapping_value(self) -> float:
        return decode_f64(self.mapping_bytes)


class InfoSource(Protocol):
    def lookup(self, code: str, kind: QueryKind) -> Optional[Sequence]: ...


# -- response payload --------------------------------------------------------
# status:1 | trust_len:1 | trust (ascii "p/q") | count:4 | item*
# item: 'i' + int64 big-endian | 's' + len:4 + utf-8

_STATUS_FOUND = 0
_STATUS_UNKNOWN = 1


def encode_response_payload(info: SharedInfo) -> bytes:
    trust = f"{info.trust_level_used.numerator}/{info.trust_level_used.denominator}".encode()
    out = bytearray([_STATUS_FOUND if info.subject_known else _STATUS_UNKNOWN, len(trust)])
    out += trust
    out += struct.pack(">I", len(info.items))
    for item in info.items:
        if isinstance(item, bool) or not isinstance(item, (int, str)):
            raise TypeError(f"unsupported item type {type(item).__name__}")
        if isinstance(item, int):
            out += b"i" + struct.pack(">q", item)
        else:
            raw = item.encode("utf-8")
            out += b"s" + struct.pack(">I", len(raw)) + raw
    return bytes(out)


def decode_response_payload(data: bytes) -> SharedInfo:
    try:
        status, tlen = data[0], data[1]
        if status not in (_STATUS_FOUND, _STATUS_UNKNOWN):
            raise ValueError("bad status")
        trust = Fraction(data[2:2 + tlen].decode("ascii"))
        pos = 2 + tlen
        (count,) = struct.unpack_from(">I", data, pos)
        pos += 4
        items = []
        for _ in range(count):
            kind = data[pos:pos + 1]
            pos += 1
            if kind == b"i":
                (v,) = struct.unpack_from(">q", data, pos)
                pos += 8
            elif kind == b"s":
                (n,) = struct.unpack_from(">I", data, pos)
                pos += 4
                if pos + n > len(data):
                    raise ValueError("truncated string item")
                v = data[pos:pos + n].decode("utf-8")
                pos += n
            else:
                raise ValueError("bad item kind")
            items.append(v)
        if pos != len(data):
            raise ValueError("trailing bytes")
    except (IndexError, ValueError, struct.error, ZeroDivisionError) as exc:
        raise DecodeError(f"malformed response payload: {exc}") from None
    return SharedInfo(tuple(items), trust, status == _STATUS_FOUND)


# -- source side -------------------------------------------------------------

def build_source_request(
    source: str,
    target: str,
    payload: QueryPayload,
    source_keys: KeyPair,
    registry: KeyRegistry,
    seed: int,
    set_size: int = 1,
) -> tuple[bytes, PendingState]:
    """Build ``S_Req`` for ``target`` and the state needed to check its answer.

    ``set_size`` must equal the arity of the pair's mapping function.
    """
    check_agency_id(source)
    target_key = registry.lookup(target)
    rng = random.Random(seed)
    nonce = rng.getrandbits(64)
    random_set = tuple(rng.getrandbits(64) for _ in range(set_size))

    nonce_ct = pk_encrypt(source_keys.public, encode_u64(nonce))
    src = source.encode("ascii")
    rs = encode_random_set(random_set)
    req = payload.encode()

    se_data = encode_fields([
        (FieldTag.NONCE_CIPHERTEXT, nonce_ct),
        (FieldTag.AGENCY_ID, src),
        (FieldTag.RANDOM_SET, rs),
        (FieldTag.REQUEST_PAYLOAD, req),
    ])
    h_val = md5_digest(se_data)
    s_data = encode_fields([
        (FieldTag.RANDOM_SET, rs),
        (FieldTag.REQUEST_PAYLOAD, req),
        (FieldTag.DIGEST, h_val.value),
    ])
    sa_data = pk_encrypt(source_keys.private, s_data)
    envelope = encode_fields([
        (FieldTag.NONCE_CIPHERTEXT, nonce_ct),
        (FieldTag.AGENCY_ID, src),
        (FieldTag.SIGNED_BLOB, sa_data),
    ])
    s_req = pk_encrypt(target_key, envelope)
    pending = PendingState(source, target, nonce, nonce_ct, random_set, payload)
    return s_req, pending


# -- target side -------------------------------------------------------------

def open_request_envelope(req: bytes, target_keys: KeyPair) -> tuple[bytes, str, bytes]:
    """Decrypt ``S_Req`` into (R_V, src_id, SA_Data)."""
    try:
        nonce_ct, src, sa_data = expect_fields(pk_decrypt(target_keys.private, req), _REQUEST_ENVELOPE)
        source = check_agency_id(src.decode("ascii"))
    except (CodecError, UnicodeDecodeError, ValueError) as exc:
        raise DecodeError(f"request envelope: {exc}") from None
    return nonce_ct, source, sa_data


def validate_source_request(req: bytes, target_keys: KeyPair, registry: KeyRegistry) -> ValidatedRequest:
    nonce_ct, source, sa_data = open_request_envelope(req, target_keys)

    try:
        source_key = registry.lookup(source)
    except UnknownAgencyError as exc:
        exc.source = source
        raise
    try:
        rs, req_payload, h_bytes = expect_fields(pk_decrypt(source_key, sa_data), _SIGNED_BODY)
        random_set = decode_random_set(rs)
        payload = QueryPayload.decode(req_payload)
        h_val = Digest(h_bytes)
    except (DecodeError, CodecError, ValueError, UnicodeDecodeError) as exc:
        raise AuthenticationError(f"signed block from {source} did not verify: {exc}", source=source) from None

    se_data = encode_fields([
        (FieldTag.NONCE_CIPHERTEXT, nonce_ct),
        (FieldTag.AGENCY_ID, source.encode("ascii")),
        (FieldTag.RANDOM_SET, rs),
        (FieldTag.REQUEST_PAYLOAD, req_payload),
    ])
    if md5_digest(se_data) != h_val:
        raise IntegrityError("request digest mismatch", source=source)
    return ValidatedRequest(nonce_ct, source, random_set, payload)


def build_target_response(
    vreq: ValidatedRequest,
    trustdb: TrustPlane,
    store: InfoSource,
    target_keys: KeyPair,
    registry: KeyRegistry,
    target: str,
) -> bytes:
    code = vreq.request_payload.terrorist_code
    try:
        level, mapping = trustdb.lookup_trust(vreq.source, target, code)
        m_prime = eval_mapping(mapping, vreq.random_set)
    except ProtocolError as exc:
        exc.source = vreq.source
        raise

    items = store.lookup(code, vreq.request_payload.query_kind)
    if items is None:
        info = SharedInfo((), level, subject_known=False)
    else:
        info = trust_filter(items, level, (vreq.source, target, code))

    te_fields = [
        (FieldTag.NONCE_CIPHERTEXT, vreq.nonce_ciphertext),
        (FieldTag.MAPPING_VALUE, encode_f64(m_prime)),
        (FieldTag.RESPONSE_PAYLOAD, encode_response_payload(info)),
    ]
    h_val = md5_digest(encode_fields(te_fields))
    body = encode_fields(te_fields + [(FieldTag.DIGEST, h_val.value)])
    return pk_encrypt(registry.lookup(vreq.source), body)


# -- source side, again ------------------------------------------------------

def open_target_response(resp: bytes, source_keys: KeyPair) -> OpenedResponse:
    try:
        return OpenedResponse(*expect_fields(pk_decrypt(source_keys.private, resp), _RESPONSE_BODY))
    except CodecError as exc:
        raise DecodeError(f"response body: {exc}") from None


def validate_target_response(
    resp: bytes,
    pending: PendingState,
    source_keys: KeyPair,
    mapping: MappingFunction,
) -> SharedInfo:
    opened = open_target_response(resp, source_keys)

    te_data = encode_fields([
        (FieldTag.NONCE_CIPHERTEXT, opened.nonce_ciphertext),
        (FieldTag.MAPPING_VALUE, opened.mapping_bytes),
        (FieldTag.RESPONSE_PAYLOAD, opened.response_payload),
    ])
    if len(opened.digest) != 16 or md5_digest(te_data) != Digest(opened.digest):
        raise IntegrityError("response digest mismatch", source=pending.target)

    expected = encode_f64(eval_mapping(mapping, pending.random_set))
    if opened.mapping_bytes != expected:
        raise AgencyVerificationError("mapping value does not match the pair's mapping function", source=pending.target)

    try:
        nonce = decode_u64(pk_decrypt(source_keys.private, opened.nonce_ciphertext))
    except (DecodeError, CodecError):
        nonce = None
    if nonce != pending.nonce:
        raise RequestCorrelationError("response does not answer this request", source=pending.target)

    return decode_response_payload(opened.response_payload)
