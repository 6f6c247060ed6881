"""Deterministic in-memory multi-agency network and scenario runner.

Every script row is one request/response exchange. Rows run in two passes:
first all requests are built and answered, then all responses are delivered
and validated. That keeps every row's request outstanding at the same time,
which is what lets a fault swap responses between rows.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from .agencynode import DEFAULT_USER_TIER, AgencyNode, InfoStore, UserAccount
from .errors import ConfigError, ProtocolError
from .handshake import QueryKind
from .keyfabric import DEFAULT_BITS, KeyPair, KeyRegistry, check_agency_id, generate_keypair, pk_decrypt, pk_encrypt
from .trustplane import MappingFunction, SharedInfo, TrustPlane, TrustRecord, as_trust
from .wirecodec import decode_fields, encode_fields

SCENARIO_VERSION = 1


# -- scenario model ------------------------------------------------------------

@dataclass
class AgencySpec:
    id: str
    key_seed: int
    store: InfoStore = field(default_factory=InfoStore)
    users: list[UserAccount] = field(default_factory=list)


@dataclass
class ScriptRow:
    source: str
    target: str
    code: str
    kind: QueryKind = QueryKind.INFO_ITEMS
    expect_count: Optional[int] = None


@dataclass
class Scenario:
    agencies: list[AgencySpec]
    trust: list[TrustRecord]
    script: list[ScriptRow]
    key_bits: int = DEFAULT_BITS
    seed: int = 0
    user_tier: Fraction = DEFAULT_USER_TIER
    name: str = ""

    def agency(self, agency_id: str) -> AgencySpec:
        for a in self.agencies:
            if a.id == agency_id:
                return a
        raise ConfigError(f"unknown agency {agency_id!r}")

    def problems(self) -> list[str]:
        out = []
        ids = [a.id for a in self.agencies]
        for a in ids:
            try:
                check_agency_id(a)
            except ValueError as exc:
                out.append(str(exc))
        dupes = sorted({a for a in ids if ids.count(a) > 1})
        if dupes:
            out.append(f"duplicate agencies: {', '.join(dupes)}")
        if self.key_bits < 32 or self.key_bits % 2:
            out.append(f"key_bits {self.key_bits} must be even and >= 32")
        known = set(ids)
        seen = set()
        for rec in self.trust:
            for end in (rec.source, rec.target):
                if end not in known:
                    out.append(f"trust record {rec.source}->{rec.target} names undefined agency {end}")
            if (rec.source, rec.target) in seen:
                out.append(f"duplicate trust record {rec.source}->{rec.target}")
            seen.add((rec.source, rec.target))
        for i, row in enumerate(self.script, 1):
            for end in (row.source, row.target):
                if end not in known:
                    out.append(f"script row {i} names undefined agency {end}")
            if row.source == row.target:
                out.append(f"script row {i} sends to itself")
            if (row.source, row.target) not in seen:
                out.append(f"script row {i}: no trust record {row.source}->{row.target}")
        return out

    def validate(self) -> None:
        problems = self.problems()
        if problems:
            raise ConfigError("invalid scenario:\n  " + "\n  ".join(problems))


def _trust_text(level: Fraction) -> str:
    """Render a trust level as a short decimal when exact, else as p/q."""
    for digits in range(1, 7):
        text = f"{float(level):.{digits}f}"
        if Fraction(text) == level:
            return text
    return f"{level.numerator}/{level.denominator}"


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "version": SCENARIO_VERSION,
        "name": s.name,
        "key_bits": s.key_bits,
        "seed": s.seed,
        "user_tier": _trust_text(s.user_tier),
        "agencies": [
            {
                "id": a.id,
                "key_seed": a.key_seed,
                "store": a.store.to_dict(),
                "users": [u.to_dict() for u in a.users],
            }
            for a in s.agencies
        ],
        "trust": [
            {
                "source": r.source,
                "target": r.target,
                "level": _trust_text(r.trust_level),
                "mapping": str(r.mapping),
                "overrides": {code: _trust_text(v) for code, v in sorted(r.overrides.items())},
            }
            for r in s.trust
        ],
        "script": [
            {
                "source": row.source,
                "target": row.target,
                "code": row.code,
                "kind": "items" if row.kind == QueryKind.INFO_ITEMS else "activities",
                **({"expect": row.expect_count} if row.expect_count is not None else {}),
            }
            for row in s.script
        ],
    }


def scenario_from_dict(data: dict) -> Scenario:
    try:
        if data.get("version", SCENARIO_VERSION) != SCENARIO_VERSION:
            raise ConfigError(f"unsupported scenario version {data.get('version')}")
        agencies = [
            AgencySpec(
                a["id"],
                int(a.get("key_seed", 0)),
                InfoStore.from_dict(a.get("store", {})),
                [UserAccount.from_dict(u) for u in a.get("users", [])],
            )
            for a in data.get("agencies", [])
        ]
        trust = [
            TrustRecord(
                r["source"], r["target"], as_trust(r["level"]),
                MappingFunction.parse(r.get("mapping", "")),
                {code: as_trust(v) for code, v in r.get("overrides", {}).items()},
            )
            for r in data.get("trust", [])
        ]
        script = [
            ScriptRow(
                row["source"], row["target"], row["code"],
                QueryKind.parse(row.get("kind", "items")),
                row.get("expect"),
            )
            for row in data.get("script", [])
        ]
        return Scenario(
            agencies, trust, script,
            key_bits=int(data.get("key_bits", DEFAULT_BITS)),
            seed=int(data.get("seed", 0)),
            user_tier=as_trust(data.get("user_tier", "0.2")),
            name=data.get("name", ""),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed scenario: {exc!r}") from None


def load_scenario(path: str | Path) -> Scenario:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return scenario_from_dict(data)


def save_scenario(s: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(s), indent=2) + "\n")


def canonical_table1_text() -> str:
    return resources.files("trustwire").joinpath("data/table1.scenario").read_text()


def table1_scenario() -> Scenario:
    return scenario_from_dict(json.loads(canonical_table1_text()))


# -- network -------------------------------------------------------------------

class Network:
    """All agencies of a scenario wired to one CA registry."""

    def __init__(self, scenario: Scenario):
        scenario.validate()
        self.scenario = scenario
        self.registry = KeyRegistry()
        self.keys: dict[str, KeyPair] = {}
        for a in scenario.agencies:
            self.keys[a.id] = generate_keypair(scenario.key_bits, a.key_seed)
            self.registry.register(a.id, self.keys[a.id].public)
        plane = TrustPlane(scenario.trust)
        self.nodes: dict[str, AgencyNode] = {
            a.id: AgencyNode(
                a.id, self.keys[a.id], self.registry, plane, a.store,
                seed=a.key_seed, user_tier=scenario.user_tier, accounts=a.users,
            )
            for a in scenario.agencies
        }

    def node(self, agency_id: str) -> AgencyNode:
        try:
            return self.nodes[agency_id]
        except KeyError:
            raise ConfigError(f"unknown agency {agency_id!r}") from None


# -- faults --------------------------------------------------------------------

class FaultKind(str, Enum):
    FLIP_BYTE = "flip-byte"
    SWAP_RESPONSES = "swap"
    REPLAY_RESPONSE = "replay"
    WRONG_TARGET_KEY = "wrong-target-key"
    TAMPER_ENVELOPE = "tamper-envelope"


@dataclass(frozen=True)
class Fault:
    """A fault applied to one script row (1-based).

    FLIP_BYTE xors ``byte_index`` of ``message`` ("request" or "response") with
    0xFF. SWAP_RESPONSES exchanges this row's response with ``other_row``'s.
    REPLAY_RESPONSE delivers this row's response to a fresh retry of the row.
    WRONG_TARGET_KEY encrypts the request to a key the target does not hold.
    TAMPER_ENVELOPE rewrites one byte of the cleartext R_V inside the request
    envelope and re-encrypts it, as an insider on the target's side could.
    """

    kind: FaultKind
    row: int
    byte_index: int = 0
    message: str = "request"
    other_row: Optional[int] = None

    @property
    def expected_errors(self) -> frozenset[str]:
        if self.kind is FaultKind.FLIP_BYTE:
            if self.message == "request":
                return frozenset({"DecodeError", "AuthenticationError", "IntegrityError"})
            return frozenset({"DecodeError", "IntegrityError"})
        if self.kind in (FaultKind.SWAP_RESPONSES, FaultKind.REPLAY_RESPONSE):
            return frozenset({"RequestCorrelationError", "AgencyVerificationError"})
        if self.kind is FaultKind.WRONG_TARGET_KEY:
            return frozenset({"DecodeError"})
        return frozenset({"IntegrityError"})

    def rows(self) -> set[int]:
        return {self.row} | ({self.other_row} if self.other_row is not None else set())


def parse_fault(spec: str, row: int) -> Fault:
    """Parse a CLI fault spec.

    Forms: ``flip-byte:<index>[:request|response]``, ``swap:<other row>``,
    ``replay``, ``wrong-target-key``, ``tamper-envelope``.
    """
    parts = spec.split(":")
    try:
        kind = FaultKind(parts[0])
    except ValueError:
        raise ConfigError(f"unknown fault {parts[0]!r}") from None
    try:
        if kind is FaultKind.FLIP_BYTE:
            message = parts[2] if len(parts) > 2 else "request"
            return Fault(kind, row, byte_index=int(parts[1]), message=message)
        if kind is FaultKind.SWAP_RESPONSES:
            return Fault(kind, row, other_row=int(parts[1]))
    except (IndexError, ValueError):
        raise ConfigError(f"bad fault spec {spec!r}") from None
    if len(parts) > 1:
        raise ConfigError(f"fault {kind.value} takes no arguments")
    return Fault(kind, row)


def check_faults(s: Scenario, faults: Sequence[Fault]) -> None:
    claimed: set[int] = set()
    for f in faults:
        for r in f.rows():
            if not 1 <= r <= len(s.script):
                raise ConfigError(f"fault row {r} outside script rows 1..{len(s.script)}")
            if r in claimed:
                raise ConfigError(f"row {r} has more than one fault")
            claimed.add(r)
        if f.kind is FaultKind.FLIP_BYTE:
            if f.message not in ("request", "response"):
                raise ConfigError(f"flip-byte message must be request or response, not {f.message!r}")
            if f.byte_index < 0:
                raise ConfigError("byte index must be non-negative")
        if f.kind is FaultKind.SWAP_RESPONSES:
            if f.other_row is None or f.other_row == f.row:
                raise ConfigError("swap needs a distinct other row")
            if s.script[f.row - 1].source != s.script[f.other_row - 1].source:
                raise ConfigError("swapped rows must share a source agency")


def _flip(data: bytes, index: int) -> bytes:
    if index >= len(data):
        raise ConfigError(f"byte index {index} outside {len(data)}-byte message")
    buf = bytearray(data)
    buf[index] ^= 0xFF
    return bytes(buf)


# -- outcomes ------------------------------------------------------------------

@dataclass(frozen=True)
class ExchangeOutcome:
    row: int
    source: str
    target: str
    code: str
    available: tuple
    items: tuple = ()
    trust_level: Optional[Fraction] = None
    error_class: Optional[str] = None
    expected_errors: frozenset[str] = frozenset()
    expect_count: Optional[int] = None

    @property
    def ok(self) -> bool:
        return self.error_class is None

    @property
    def count(self) -> int:
        return len(self.items)

    @property
    def met_expectation(self) -> bool:
        if self.expected_errors:
            return self.error_class in self.expected_errors
        if not self.ok or not set(self.items) <= set(self.available):
            return False
        return self.expect_count is None or self.count == self.expect_count

    def to_line(self) -> str:
        items = ",".join(str(i) for i in self.items)
        status = "ok" if self.ok else self.error_class
        verdict = "met" if self.met_expectation else "UNMET"
        return "\t".join([str(self.row), self.source, self.target, self.code, status, str(self.count), items, verdict])


# -- runner --------------------------------------------------------------------

def _row_seed(scenario_seed: int, row: int, purpose: str = "request") -> int:
    return random.Random(f"{scenario_seed}:{row}:{purpose}").getrandbits(64)


@dataclass
class _Flight:
    row: int
    spec: ScriptRow
    request_id: int
    response: Optional[bytes] = None
    error: Optional[str] = None


def run_scenario(s: Scenario, faults: Sequence[Fault] = (), net: Optional[Network] = None) -> list[ExchangeOutcome]:
    """Run every script row and return outcomes in script order."""
    s.validate()
    check_faults(s, faults)
    net = net or Network(s)
    by_row = {r: f for f in faults for r in f.rows()}
    flights: list[_Flight] = []

    for i, spec in enumerate(s.script, 1):
        src, tgt = net.node(spec.source), net.node(spec.target)
        fault = by_row.get(i)
        registry = None
        if fault is not None and fault.kind is FaultKind.WRONG_TARGET_KEY:
            registry = _rogue_registry(net, spec.target, _row_seed(s.seed, i, "rogue"))
        rid, req = src.start_request(spec.target, spec.code, spec.kind, seed=_row_seed(s.seed, i), registry=registry)
        if fault is not None and fault.kind is FaultKind.FLIP_BYTE and fault.message == "request":
            req = _flip(req, fault.byte_index)
        if fault is not None and fault.kind is FaultKind.TAMPER_ENVELOPE:
            req = _tamper_envelope(req, net.keys[spec.target])
        flight = _Flight(i, spec, rid)
        flight.response = tgt.handle_incoming(req)
        if flight.response is None:
            flight.error = tgt.last_error()
        flights.append(flight)

    deliveries = {f.row: f.response for f in flights}
    for f in faults:
        if f.kind is FaultKind.SWAP_RESPONSES:
            deliveries[f.row], deliveries[f.other_row] = deliveries[f.other_row], deliveries[f.row]

    outcomes = []
    for flight in flights:
        spec = flight.spec
        src = net.node(spec.source)
        fault = by_row.get(flight.row)
        available = net.node(spec.target).store.lookup(spec.code, spec.kind) or ()
        expected = fault.expected_errors if fault is not None else frozenset()
        common = dict(
            row=flight.row, source=spec.source, target=spec.target, code=spec.code,
            available=tuple(available), expected_errors=expected, expect_count=spec.expect_count,
        )
        response = deliveries[flight.row]
        request_id = flight.request_id
        if flight.error is not None or response is None:
            src.pending.pop(request_id, None)
            outcomes.append(ExchangeOutcome(**common, error_class=flight.error or "NoResponse"))
            continue
        if fault is not None and fault.kind is FaultKind.FLIP_BYTE and fault.message == "response":
            response = _flip(response, fault.byte_index)
        if fault is not None and fault.kind is FaultKind.REPLAY_RESPONSE:
            # The original answer is captured and replayed against the source's retry.
            src.pending.pop(request_id, None)
            request_id, _ = src.start_request(spec.target, spec.code, spec.kind, seed=_row_seed(s.seed, flight.row, "retry"))
        try:
            info: SharedInfo = src.complete_request(request_id, response)
        except ProtocolError as exc:
            outcomes.append(ExchangeOutcome(**common, error_class=exc.error_class))
            continue
        outcomes.append(ExchangeOutcome(**common, items=info.items, trust_level=info.trust_level_used))
    return outcomes


def inject_fault(s: Scenario, fault: Fault, net: Optional[Network] = None) -> list[ExchangeOutcome]:
    return run_scenario(s, [fault], net=net)


def _rogue_registry(net: Network, target: str, seed: int) -> KeyRegistry:
    rogue = generate_keypair(net.scenario.key_bits, seed)
    reg = KeyRegistry()
    for agency in net.registry:
        reg.register(agency, rogue.public if agency == target else net.registry.lookup(agency))
    return reg


def _tamper_envelope(req: bytes, target_keys: KeyPair) -> bytes:
    fields = decode_fields(pk_decrypt(target_keys.private, req))
    tag, nonce_ct = fields[0]  # the envelope leads with R_V
    fields[0] = (tag, bytes([nonce_ct[0] ^ 0x01]) + nonce_ct[1:])
    return pk_encrypt(target_keys.public, encode_fields(fields))


# -- reports -------------------------------------------------------------------

def _set_text(values) -> str:
    return "{" + ",".join(str(v) for v in values) + "}"


def format_table(outcomes: Sequence[ExchangeOutcome]) -> str:
    header = (
        "Source Agency", "Target Agency", "Terrorist Code",
        "Information available with the Target agency", "Trust-based Shared Information",
    )
    rows = [
        (o.source, o.target, o.code, _set_text(o.available), _set_text(o.items) if o.ok else f"<{o.error_class}>")
        for o in outcomes
    ]
    widths = [max(len(r[c]) for r in [header, *rows]) for c in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in [header, *rows]]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def format_lines(outcomes: Sequence[ExchangeOutcome]) -> str:
    return "\n".join(o.to_line() for o in outcomes)


def all_met(outcomes: Sequence[ExchangeOutcome]) -> bool:
    return all(o.met_expectation for o in outcomes)
