"""Acceptance suite: one test per criterion, each reported as a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py`` and read the "acceptance criteria"
section at the end of the terminal output.
"""

import dataclasses
import hashlib
import random
import struct
from fractions import Fraction

import mpmath
import pytest

from conftest import criterion
from trustwire.agencynode import InfoRecord, InfoStore
from trustwire.cli import main
from trustwire.digest import md5_digest
from trustwire.errors import (
    AgencyVerificationError,
    AuthError,
    DecodeError,
    ProtocolError,
    RequestCorrelationError,
    TrustwireError,
)
from trustwire.handshake import (
    QueryKind,
    QueryPayload,
    build_source_request,
    build_target_response,
    open_target_response,
    validate_source_request,
    validate_target_response,
)
from trustwire.keyfabric import KeyRegistry, generate_keypair, pk_transform
from trustwire.simharness import Network, table1_scenario
from trustwire.trustplane import MappingFunction, TrustPlane, TrustRecord, eval_mapping, trust_filter
from trustwire.wirecodec import encode_f64

# RFC 1321 appendix A.5, checked against hashlib below before use.
RFC1321 = [
    (b"", "d41d8cd98f00b204e9800998ecf8427e"),
    (b"a", "0cc175b9c0f1b6a831c399e269772661"),
    (b"abc", "900150983cd24fb0d6963f7d28e17f72"),
    (b"message digest", "f96b697d7cb7938d525a2f31aaf161d0"),
    (b"abcdefghijklmnopqrstuvwxyz", "c3fcd3d76192e4007dfb496cca67e13b"),
    (b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789", "d174ab98d277d9f5a5611c2c9f419d9f"),
    (b"1234567890" * 8, "57edf4a22be3c955ac49da2e2107b67a"),
]

# Reference results for the built-in scenario: (source, target, code, available, shared)
TABLE1 = [
    ("CIA", "FBI", "98LetT1", range(11, 21), {16, 13, 15, 18, 12, 11, 19, 20, 14}),
    ("ISI", "CIA", "98LetT2", range(21, 31), {26, 23, 25, 28, 22, 21, 29, 20, 24}),
    ("RAW", "CIA", "03AlqT3", range(31, 41), {37, 34, 38, 35}),
    ("RAW", "FBI", "06TalT4", range(41, 51), {49, 42, 46, 44, 48}),
    ("CIA", "RAW", "98LetT5", range(51, 61), {56, 53, 55, 58, 52, 51, 59, 60}),
    ("RAW", "CIA", "06TalT6", range(61, 71), {69, 62, 66}),
    ("FBI", "RAW", "98LetT7", range(71, 81), {76, 73, 75, 78, 72, 71}),
    ("ISI", "FBI", "03AlqT8", range(81, 91), {87, 84, 88, 85, 89}),
    ("CIA", "FBI", "06TalT9", range(91, 101), {99, 92, 96, 94}),
    ("ISI", "FBI", "98LetT8", range(81, 91), {86, 83, 85, 88, 82, 81, 89, 90}),
]
# Row 2 lists item 20, which is not in its available set; membership is not checked there.
MEMBERSHIP_SKIPPED = {2}

AGENCIES = ("CIA", "FBI", "RAW", "ISI")
N_EXCHANGES = 1000


# -- shared random-exchange corpus (criteria 3 and 6) ---------------------------

@dataclasses.dataclass
class HonestExchange:
    pending: object
    response: bytes
    source_keys: object
    mapping: MappingFunction


_corpus: list[HonestExchange] = []


def _random_store(rng: random.Random) -> tuple[InfoStore, list[str]]:
    codes = [f"{rng.randint(90, 99):02d}X{rng.randrange(10**4):04d}" for _ in range(rng.randint(1, 4))]
    records = {}
    for code in codes:
        items = rng.sample(range(10**6), rng.randint(0, 32))
        items = [str(i) if rng.random() < 0.3 else i for i in items]
        acts = [f"activity {rng.randrange(1000)}" for _ in range(rng.randint(0, 6))]
        records[code] = InfoRecord(items, acts)
    return InfoStore(records), codes


def run_random_exchanges() -> list[HonestExchange]:
    """Build, validate and answer N_EXCHANGES random requests; cached per session."""
    if _corpus:
        return _corpus
    rng = random.Random(20110311)
    keys = {a: generate_keypair(512, 7000 + i) for i, a in enumerate(AGENCIES)}
    registry = KeyRegistry()
    for a, k in keys.items():
        registry.register(a, k.public)
    for _ in range(N_EXCHANGES):
        source, target = rng.sample(AGENCIES, 2)
        store, codes = _random_store(rng)
        code = rng.choice(codes) if rng.random() < 0.9 else "UNKNOWN"
        kind = rng.choice(list(QueryKind))
        level = Fraction(rng.randint(0, 100), 100)
        overrides = {code: Fraction(rng.randint(0, 10), 10)} if rng.random() < 0.2 else {}
        mapping = MappingFunction.random(rng, rng.randint(0, 31))
        plane = TrustPlane([TrustRecord(source, target, level, mapping, overrides)])

        req, pending = build_source_request(
            source, target, QueryPayload(code, kind), keys[source], registry, rng.getrandbits(64), mapping.arity
        )
        vreq = validate_source_request(req, keys[target], registry)
        resp = build_target_response(vreq, plane, store, keys[target], registry, target)
        info = validate_target_response(resp, pending, keys[source], mapping)

        held = store.lookup(code, kind)
        if held is None:
            assert info.items == () and not info.subject_known
        else:
            used = overrides.get(code, level)
            assert info.trust_level_used == used
            assert len(info.items) == -(-used.numerator * len(held) // used.denominator)
            assert all(item in held for item in info.items)
            assert len(set(info.items)) == len(info.items)
        _corpus.append(HonestExchange(pending, resp, keys[source], mapping))
    return _corpus


def reference_sine(fold: Fraction) -> float:
    # generous fixed margin, independent of the library's own precision rule
    bits = abs(fold.numerator).bit_length() + fold.denominator.bit_length() + 400
    with mpmath.workprec(bits):
        return float(mpmath.sin(mpmath.mpf(fold.numerator) / fold.denominator))


def reference_fold(ops, values) -> Fraction:
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


# -- criteria -------------------------------------------------------------------

def test_criterion_1_md5_vectors():
    with criterion(1, "MD5 matches all RFC 1321 appendix vectors", max_seconds=1.0):
        for message, expected in RFC1321:
            assert hashlib.md5(message).hexdigest() == expected
            assert md5_digest(message).hex() == expected


def test_criterion_2_table1(capsys):
    with criterion(2, "table1 reproduces cardinalities (9,9,4,5,8,3,6,5,4,8) and subsets", max_seconds=5.0):
        assert main(["table1", "--lines"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 10
        for line, (src, tgt, code, available, shared) in zip(lines, TABLE1):
            row, s, t, c, status, count, items, verdict = line.split("\t")
            assert (s, t, c, status, verdict) == (src, tgt, code, "ok", "met")
            assert int(count) == len(shared), f"row {row}"
            got = {int(i) for i in items.split(",")}
            if int(row) not in MEMBERSHIP_SKIPPED:
                assert got <= set(available), f"row {row}"
            # the reference shared set itself is a subset wherever it is consistent
            assert shared <= set(available) or int(row) in MEMBERSHIP_SKIPPED


def test_criterion_3_random_exchanges():
    with criterion(3, f"{N_EXCHANGES} random exchanges validate with SharedInfo within the store", max_seconds=60.0):
        corpus = run_random_exchanges()
        assert len(corpus) == N_EXCHANGES
        assert {len(x.pending.random_set) for x in corpus} == set(range(1, 33))


def test_criterion_4_tamper_totality(golden_request, golden_response):
    with criterion(4, "every single-byte flip of golden request and response is rejected"):
        net = Network(table1_scenario())
        fbi, cia = net.node("FBI"), net.node("CIA")
        assert fbi.handle_incoming(golden_request) == golden_response
        accepted = []
        for pos in range(len(golden_request)):
            bad = bytearray(golden_request)
            bad[pos] ^= 0xFF
            if fbi.handle_incoming(bytes(bad)) is not None:
                accepted.append(("request", pos))
        assert len(fbi.audit) == len(golden_request) - len(accepted)

        for pos in range(len(golden_response)):
            bad = bytearray(golden_response)
            bad[pos] ^= 0xFF
            rid, _ = cia.start_request("FBI", "98LetT1", seed=7)
            try:
                cia.complete_request(rid, bytes(bad))
                accepted.append(("response", pos))
            except TrustwireError:
                pass
        assert accepted == []


def test_criterion_5_swap_and_replay():
    with criterion(5, "response swap and replay rejected in 100/100 trials each"):
        net = Network(table1_scenario())
        rng = random.Random(55)
        pairs = [(r.source, r.target) for r in net.scenario.trust]
        codes = {a: net.node(a).store.codes() for a in AGENCIES}
        rejected = {RequestCorrelationError, AgencyVerificationError}
        swap_ok = replay_ok = 0
        for _ in range(100):
            src = rng.choice(sorted({s for s, _ in pairs}))
            targets = [t for s, t in pairs if s == src]
            t1, t2 = rng.choice(targets), rng.choice(targets)
            node = net.node(src)
            r1, q1 = node.start_request(t1, rng.choice(codes[t1]), seed=rng.getrandbits(64))
            r2, q2 = node.start_request(t2, rng.choice(codes[t2]), seed=rng.getrandbits(64))
            a1, a2 = net.node(t1).handle_incoming(q1), net.node(t2).handle_incoming(q2)
            outcomes = []
            for rid, answer in ((r1, a2), (r2, a1)):
                try:
                    node.complete_request(rid, answer)
                    outcomes.append(None)
                except ProtocolError as exc:
                    outcomes.append(type(exc))
            swap_ok += all(o in rejected for o in outcomes)

            src, tgt = rng.choice(pairs)
            node, code = net.node(src), rng.choice(codes[tgt])
            rid, req = node.start_request(tgt, code, seed=rng.getrandbits(64))
            old = net.node(tgt).handle_incoming(req)
            node.complete_request(rid, old)
            fresh, _ = node.start_request(tgt, code, seed=rng.getrandbits(64))
            try:
                node.complete_request(fresh, old)
            except ProtocolError as exc:
                replay_ok += type(exc) in rejected
        assert (swap_ok, replay_ok) == (100, 100)


def test_criterion_6a_mapping_bit_equality():
    with criterion(6, "received mapping value is bit-identical to the recomputed one"):
        for x in run_random_exchanges():
            opened = open_target_response(x.response, x.source_keys)
            values = x.pending.random_set
            assert opened.mapping_bytes == encode_f64(eval_mapping(x.mapping, values))
            assert opened.mapping_bytes == struct.pack(">d", reference_sine(reference_fold(x.mapping.ops, values)))


@pytest.mark.xfail(
    strict=True,
    raises=AssertionError,
    reason="a binary64 sine cannot carry every bit of up to 32 64-bit operands; see the decisions ledger",
)
def test_criterion_6b_single_bit_perturbation():
    with criterion(6, "single-bit S_R perturbation always raises AgencyVerificationError"):
        rng = random.Random(66)
        corpus = run_random_exchanges()
        trials = undetected = 0
        for x in corpus:
            values = list(x.pending.random_set)
            j, bit = rng.randrange(len(values)), rng.randrange(64)
            values[j] ^= 1 << bit
            perturbed = dataclasses.replace(x.pending, random_set=tuple(values))
            trials += 1
            try:
                validate_target_response(x.response, perturbed, x.source_keys, x.mapping)
                undetected += 1
            except AgencyVerificationError:
                pass
        assert undetected == 0, f"{undetected}/{trials} perturbations went undetected"


def test_criterion_7_trapdoor_inverse():
    with criterion(7, "pk_transform inverts in both orders; wrong key never recovers plaintext"):
        rng = random.Random(77)
        right, wrong = generate_keypair(512, 7701), generate_keypair(512, 7702)
        for _ in range(500):
            data = rng.randbytes(rng.randint(1, 4096))
            sealed = pk_transform(right.public, data)
            signed = pk_transform(right.private, data)
            assert pk_transform(right.private, sealed, inverse=True) == data
            assert pk_transform(right.public, signed, inverse=True) == data
            for key, blob in ((wrong.private, sealed), (wrong.public, signed)):
                try:
                    assert pk_transform(key, blob, inverse=True) != data
                except DecodeError:
                    pass


def test_criterion_8_trust_filter_laws():
    with criterion(8, "trust filter cardinality, subset and prefix monotonicity"):
        levels = [Fraction(i, 10) for i in range(11)]
        for n in range(33):
            items = [f"item-{n}-{k}" for k in range(n)]
            seed = ("SRC", "TGT", f"code{n}")
            previous = ()
            for i, level in enumerate(levels):
                shared = trust_filter(items, level, seed).items
                assert len(shared) == -(-i * n // 10)
                assert set(shared) <= set(items) and len(set(shared)) == len(shared)
                assert shared[:len(previous)] == previous
                previous = shared
            # float spellings select the same items as the exact fractions
            for i in range(11):
                assert trust_filter(items, i / 10, seed).items == trust_filter(items, levels[i], seed).items


def test_criterion_9_general_user_flow():
    with criterion(9, "general-user registration, login and 10,000 read-only queries"):
        net = Network(table1_scenario())
        fbi = net.node("FBI")
        password = fbi.register_user("journalist1")
        assert fbi.verify_password("journalist1", password)
        assert not fbi.verify_password("journalist1", password[::-1] + "x")
        assert not fbi.verify_password("nobody", password)

        before = fbi.store.fingerprint()
        snapshot = fbi.store.to_dict()
        rng = random.Random(99)
        codes = fbi.store.codes() + ["UNKNOWN", "", "98LetT1 ", "x" * 40]
        refused = served = 0
        for _ in range(10_000):
            user = rng.choice(["journalist1", "journalist1", "nobody"])
            pw = password if rng.random() < 0.7 else rng.choice(["", password[:-1], "wrong"])
            try:
                result = fbi.user_query(user, pw, rng.choice(codes), rng.choice(list(QueryKind)))
                served += 1
                if result:
                    result.clear()
            except AuthError:
                refused += 1
        assert served and refused
        assert fbi.store.fingerprint() == before
        assert fbi.store.to_dict() == snapshot
