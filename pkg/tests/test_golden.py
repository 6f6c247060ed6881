"""Golden exchange replay, cross-checked by rebuilding it step by step.

The rebuild below deliberately avoids trustwire's codec, digest and transform
code: TLV framing is done with struct, hashing with hashlib, block transforms
with bare pow(), sine with mpmath at generous precision.
"""

import hashlib
import random
import struct
from fractions import Fraction

import mpmath
import pytest

from conftest import GOLDEN
from trustwire.handshake import QueryPayload, build_source_request, validate_source_request

SEED = 7
CODE = b"98LetT1"
MAPPING = "+*-/+"  # CIA->FBI in the reference scenario


def tlv(*fields):
    return b"TW1" + b"".join(struct.pack(">BI", tag, len(p)) + p for tag, p in fields)


def parse_tlv(data):
    assert data[:3] == b"TW1"
    out, pos = [], 3
    while pos < len(data):
        tag, n = struct.unpack_from(">BI", data, pos)
        pos += 5
        out.append((tag, data[pos:pos + n]))
        pos += n
    return out


def raw_encrypt(n, exp, data):
    k = (n.bit_length() + 7) // 8
    cap = min(k - 2, 255)
    out = b""
    for off in range(0, len(data), cap):
        chunk = data[off:off + cap]
        m = int.from_bytes(bytes([len(chunk)]) + chunk.ljust(cap, b"\0"), "big")
        out += pow(m, exp, n).to_bytes(k, "big")
    return out


def raw_decrypt(n, exp, data):
    k = (n.bit_length() + 7) // 8
    out = b""
    for off in range(0, len(data), k):
        block = pow(int.from_bytes(data[off:off + k], "big"), exp, n).to_bytes(k - 1, "big")
        out += block[1:1 + block[0]]
    return out


def fold(ops, values):
    acc = Fraction(values[0])
    for op, v in zip(ops, values[1:]):
        if op == "+":
            acc += v
        elif op == "-":
            acc -= v
        elif op == "*":
            acc *= v
        elif v:
            acc /= v
    return acc


def reference_sine(x):
    with mpmath.workprec(abs(x.numerator).bit_length() + x.denominator.bit_length() + 400):
        return float(mpmath.sin(mpmath.mpf(x.numerator) / x.denominator))


@pytest.fixture(scope="module")
def parts(table1_net):
    cia, fbi = table1_net.keys["CIA"], table1_net.keys["FBI"]
    rng = random.Random(SEED)
    nonce = rng.getrandbits(64)
    s_r = [rng.getrandbits(64) for _ in range(len(MAPPING) + 1)]
    return cia, fbi, nonce, s_r


def test_hex_sidecars_match():
    for name in ("request_cia_fbi_seed7", "response_fbi_cia_seed7"):
        raw = (GOLDEN / f"{name}.bin").read_bytes()
        assert (GOLDEN / f"{name}.hex").read_text().strip() == raw.hex()


def test_golden_request_is_reproduced(table1_net, golden_request):
    cia = table1_net.node("CIA")
    req, _ = build_source_request("CIA", "FBI", QueryPayload("98LetT1"), cia.keys, table1_net.registry, SEED, 6)
    assert req == golden_request


def test_golden_request_step_by_step(parts, golden_request):
    cia, fbi, nonce, s_r = parts
    r_v = raw_encrypt(cia.public.n, cia.public.e, struct.pack(">Q", nonce))
    rs = b"".join(struct.pack(">Q", v) for v in s_r)
    request = b"\x01" + CODE
    se_data = tlv((1, r_v), (2, b"CIA"), (3, rs), (4, request))
    h_val = hashlib.md5(se_data).digest()
    sa_data = raw_encrypt(cia.private.n, cia.private.d, tlv((3, rs), (4, request), (5, h_val)))
    s_req = raw_encrypt(fbi.public.n, fbi.public.e, tlv((1, r_v), (2, b"CIA"), (6, sa_data)))
    assert s_req == golden_request


def test_golden_request_validates(table1_net, golden_request):
    v = validate_source_request(golden_request, table1_net.keys["FBI"], table1_net.registry)
    assert v.source == "CIA"
    assert v.request_payload == QueryPayload("98LetT1")
    assert len(v.random_set) == 6


def test_golden_response_is_reproduced(fresh_net, golden_request, golden_response):
    assert fresh_net.node("FBI").handle_incoming(golden_request) == golden_response


def test_golden_response_step_by_step(parts, golden_response):
    cia, _, nonce, s_r = parts
    fields = parse_tlv(raw_decrypt(cia.private.n, cia.private.d, golden_response))
    assert [t for t, _ in fields] == [1, 7, 8, 5]
    (_, r_v), (_, m_bytes), (_, payload), (_, h_val) = fields
    # digest check
    assert hashlib.md5(tlv((1, r_v), (7, m_bytes), (8, payload))).digest() == h_val
    # mapping value check
    assert m_bytes == struct.pack(">d", reference_sine(fold(MAPPING, s_r)))
    # nonce check
    assert raw_decrypt(cia.private.n, cia.private.d, r_v) == struct.pack(">Q", nonce)
    # payload: status 0, trust "9/10", nine int items drawn from {11..20}
    assert payload[0] == 0
    tlen = payload[1]
    assert payload[2:2 + tlen] == b"9/10"
    pos = 2 + tlen
    (count,) = struct.unpack_from(">I", payload, pos)
    pos += 4
    items = []
    for _ in range(count):
        assert payload[pos:pos + 1] == b"i"
        items.append(struct.unpack_from(">q", payload, pos + 1)[0])
        pos += 9
    assert pos == len(payload)
    assert len(items) == 9 and set(items) <= set(range(11, 21))


def test_golden_exchange_completes(fresh_net, golden_response):
    cia = fresh_net.node("CIA")
    rid, _ = cia.start_request("FBI", "98LetT1", seed=SEED)
    info = cia.complete_request(rid, golden_response)
    assert len(info.items) == 9
    assert set(info.items) <= set(range(11, 21))
