"""Trust-graded information sharing between agencies.

A source agency sends an encrypted, signed, digest-protected request; the
target answers with a share of its records sized by the trust it holds for
the source, proves its identity through a pairwise secret mapping function,
and echoes the source's encrypted nonce so the answer can be tied to the
request.
"""

from .agencynode import AgencyNode, InfoRecord, InfoStore
from .digest import Digest, md5_digest
from .handshake import (
    PendingState,
    QueryKind,
    QueryPayload,
    ValidatedRequest,
    build_source_request,
    build_target_response,
    validate_source_request,
    validate_target_response,
)
from .keyfabric import KeyPair, KeyRegistry, PrivateKey, PublicKey, generate_keypair, pk_transform, register_agency
from .simharness import Fault, FaultKind, Network, Scenario, inject_fault, load_scenario, run_scenario, table1_scenario
from .trustplane import MappingFunction, SharedInfo, TrustPlane, TrustRecord, eval_mapping, lookup_trust, trust_filter
from .wirecodec import FieldTag, decode_f64, decode_fields, encode_f64, encode_fields

__version__ = "0.1.0"
