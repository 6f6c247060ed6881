"""Per-agency runtime: information store, duplicates, pending requests, users, audit log."""

from __future__ import annotations

import hmac
import json
import logging
import random
import string
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Optional, Sequence

from .digest import Digest, md5_digest
from .errors import AuthError, DuplicateUserError, ProtocolError, TrustwireError
from .handshake import (
    PendingState,
    QueryKind,
    QueryPayload,
    build_source_request,
    build_target_response,
    validate_source_request,
    validate_target_response,
)
from .keyfabric import KeyPair, KeyRegistry
from .trustplane import SharedInfo, TrustPlane, as_trust, trust_filter

log = logging.getLogger(__name__)

PASSWORD_ALPHABET = string.ascii_letters + string.digits
PASSWORD_LENGTH = 12
DEFAULT_USER_TIER = Fraction(1, 5)
# Selection-seed stand-in for the source agency when general users query.
PUBLIC_PEER = "public"


@dataclass
class InfoRecord:
    items: list = field(default_factory=list)
    activities: list[str] = field(default_factory=list)


class InfoStore:
    """Terrorist code -> InfoRecord. The master copy an agency holds."""

    def __init__(self, records: dict[str, InfoRecord] | None = None):
        self.records: dict[str, InfoRecord] = dict(records or {})

    def lookup(self, code: str, kind: QueryKind = QueryKind.INFO_ITEMS) -> Optional[tuple]:
        rec = self.records.get(code)
        if rec is None:
            return None
        return tuple(rec.items if kind == QueryKind.INFO_ITEMS else rec.activities)

    def codes(self) -> list[str]:
        return sorted(self.records)

    def to_dict(self) -> dict:
        return {
            code: {"items": list(rec.items), "activities": list(rec.activities)}
            for code, rec in sorted(self.records.items())
        }

    @classmethod
    def from_dict(cls, data: dict) -> "InfoStore":
        return cls({
            code: InfoRecord(list(body.get("items", [])), list(body.get("activities", [])))
            for code, body in data.items()
        })

    def fingerprint(self) -> Digest:
        """Digest of the canonical store contents; changes iff the contents change."""
        return md5_digest(json.dumps(self.to_dict(), sort_keys=True).encode())


class DuplicateStore:
    """Pre-filtered snapshot of the master store for one peer at its trust level."""

    def __init__(self, owner: str, peer: str, snapshot: dict[str, SharedInfo]):
        self.owner = owner
        self.peer = peer
        self.snapshot = snapshot

    @classmethod
    def build(cls, owner: str, peer: str, store: InfoStore, level_for) -> "DuplicateStore":
        snap = {}
        for code in store.codes():
            items = store.lookup(code)
            snap[code] = trust_filter(items, level_for(code), (peer, owner, code))
        return cls(owner, peer, snap)

    def lookup(self, code: str) -> Optional[tuple]:
        info = self.snapshot.get(code)
        return None if info is None else info.items


class AccountStatus(str, Enum):
    PENDING = "PENDING"
    ACTIVE = "ACTIVE"


@dataclass
class UserAccount:
    user_id: str
    salt: bytes = b""
    credential: Optional[Digest] = None
    status: AccountStatus = AccountStatus.PENDING

    def to_dict(self) -> dict:
        return {
            "user": self.user_id,
            "salt": self.salt.hex(),
            "credential": self.credential.hex() if self.credential else "",
            "status": self.status.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "UserAccount":
        cred = data.get("credential") or ""
        return cls(
            data["user"],
            bytes.fromhex(data.get("salt", "")),
            Digest.fromhex(cred) if cred else None,
            AccountStatus(data.get("status", "PENDING")),
        )


def credential_digest(salt: bytes, password: str) -> Digest:
    return md5_digest(salt + password.encode("utf-8"))


@dataclass(frozen=True)
class AuditEntry:
    tick: int
    peer: str
    error_class: str
    request_digest: str

    def __str__(self):
        return f"{self.tick:06d} | {self.peer} | {self.error_class} | {self.request_digest}"


class AgencyNode:
    """One agency: answers peers' requests, issues its own, serves general users.

    A node owns its mutable state (pending table, accounts, audit log) and
    expects to be driven by one caller at a time.
    """

    def __init__(
        self,
        agency_id: str,
        keys: KeyPair,
        registry: KeyRegistry,
        trust: TrustPlane,
        store: InfoStore | None = None,
        seed: int = 0,
        user_tier=DEFAULT_USER_TIER,
        accounts: Iterable[UserAccount] = (),
    ):
        self.id = agency_id
        self.keys = keys
        self.registry = registry
        self.trust = trust.view_for(agency_id)
        self.store = store or InfoStore()
        self.seed = seed
        self.user_tier = as_trust(user_tier)
        self.accounts: dict[str, UserAccount] = {a.user_id: a for a in accounts}
        self.pending: dict[int, PendingState] = {}
        self.audit: list[AuditEntry] = []
        self._next_request = 1
        self._tick = 0
        self.duplicates: dict[str, DuplicateStore] = {}
        self.refresh_duplicates()

    # -- duplicates ----------------------------------------------------------

    def refresh_duplicates(self) -> None:
        """Rebuild every peer's snapshot plus the general-user tier snapshot."""
        self.duplicates = {}
        for rec in self.trust:
            if rec.target == self.id:
                self.duplicates[rec.source] = DuplicateStore.build(self.id, rec.source, self.store, rec.level_for)
        self.duplicates[PUBLIC_PEER] = DuplicateStore.build(
            self.id, PUBLIC_PEER, self.store, lambda _code: self.user_tier
        )

    # -- audit ---------------------------------------------------------------

    def _record(self, peer: Optional[str], exc: TrustwireError, message: bytes) -> AuditEntry:
        self._tick += 1
        entry = AuditEntry(self._tick, peer or "-", exc.error_class, md5_digest(message).hex())
        self.audit.append(entry)
        log.info("audit %s", entry)
        return entry

    def audit_lines(self) -> list[str]:
        return [str(e) for e in self.audit]

    # -- as source -----------------------------------------------------------

    def start_request(
        self,
        target: str,
        code: str,
        kind: QueryKind = QueryKind.INFO_ITEMS,
        seed: Optional[int] = None,
        registry: Optional[KeyRegistry] = None,
    ) -> tuple[int, bytes]:
        """Build a request to ``target``; returns (request id, wire bytes).

        ``seed`` defaults to one derived from the node seed and request counter.
        ``registry`` overrides the CA directory used to find the target key.
        """
        request_id = self._next_request
        self._next_request += 1
        if seed is None:
            seed = random.Random(f"{self.seed}:req:{request_id}").getrandbits(64)
        mapping = self.trust.mapping(self.id, target)
        req, pending = build_source_request(
            self.id, target, QueryPayload(code, kind), self.keys,
            registry or self.registry, seed, mapping.arity,
        )
        self.pending[request_id] = pending
        return request_id, req

    def complete_request(self, request_id: int, response: bytes) -> SharedInfo:
        """Validate the response to an outstanding request and retire it."""
        pending = self.pending.pop(request_id)
        mapping = self.trust.mapping(self.id, pending.target)
        try:
            return validate_target_response(response, pending, self.keys, mapping)
        except ProtocolError as exc:
            self._record(pending.target, exc, response)
            raise

    # -- as target -----------------------------------------------------------

    def handle_incoming(self, request: bytes) -> Optional[bytes]:
        """Validate a peer request and answer it; invalid requests are dropped and audited."""
        try:
            vreq = validate_source_request(request, self.keys, self.registry)
            return build_target_response(vreq, self.trust, self.store, self.keys, self.registry, self.id)
        except TrustwireError as exc:
            self._record(getattr(exc, "source", None), exc, request)
            return None

    def last_error(self) -> Optional[str]:
        return self.audit[-1].error_class if self.audit else None

    # -- general users -------------------------------------------------------

    def request_registration(self, user_id: str) -> UserAccount:
        if not user_id or not user_id.isprintable():
            raise ValueError(f"invalid user id {user_id!r}")
        if user_id in self.accounts:
            raise DuplicateUserError(f"user {user_id!r} already exists at {self.id}")
        acct = UserAccount(user_id)
        self.accounts[user_id] = acct
        return acct

    def approve_registration(self, user_id: str) -> str:
        """Issue the one-time password for a pending account and activate it."""
        acct = self.accounts[user_id]
        if acct.status is AccountStatus.ACTIVE:
            raise DuplicateUserError(f"user {user_id!r} already has a password")
        # Keyed by issuance count so reloading from a scenario never repeats a password.
        issued = sum(a.status is AccountStatus.ACTIVE for a in self.accounts.values())
        rng = random.Random(f"{self.seed}:user:{issued}:{user_id}")
        password = "".join(rng.choice(PASSWORD_ALPHABET) for _ in range(PASSWORD_LENGTH))
        acct.salt = rng.randbytes(16)
        acct.credential = credential_digest(acct.salt, password)
        acct.status = AccountStatus.ACTIVE
        return password

    def register_user(self, user_id: str) -> str:
        self.request_registration(user_id)
        return self.approve_registration(user_id)

    def verify_password(self, user_id: str, password: str) -> bool:
        acct = self.accounts.get(user_id)
        if acct is None or acct.status is not AccountStatus.ACTIVE or acct.credential is None:
            # Same work as a real check so unknown users look like wrong passwords.
            credential_digest(bytes(16), password)
            return False
        candidate = credential_digest(acct.salt, password)
        return hmac.compare_digest(candidate.value, acct.credential.value)

    def user_query(self, user_id: str, password: str, code: str, kind: QueryKind = QueryKind.INFO_ITEMS) -> list:
        """Read-only lookup at the general-user trust tier."""
        if not self.verify_password(user_id, password):
            raise AuthError("bad credentials")
        items = self.store.lookup(code, kind)
        if items is None:
            return []
        if kind == QueryKind.INFO_ITEMS:
            return list(self.duplicates[PUBLIC_PEER].lookup(code))
        return list(trust_filter(items, self.user_tier, (PUBLIC_PEER, self.id, code)).items)


def served_items(node: AgencyNode) -> Sequence[tuple[str, str, tuple]]:
    """Every (peer, code, items) a node's duplicates would serve."""
    return [
        (peer, code, info.items)
        for peer, dup in sorted(node.duplicates.items())
        for code, info in sorted(dup.snapshot.items())
    ]
