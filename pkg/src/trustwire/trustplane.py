"""Trust records, per-pair mapping functions and trust-graded disclosure."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from mpmath.libmp import from_rational, mpf_sin, round_nearest, to_float

from .digest import md5_digest
from .errors import ArityError, ConfigError, NoTrustRecordError
from .wirecodec import FieldTag, encode_fields

OPERATORS = "+-*/"
_OP_ALIASES = {"×": "*", "÷": "/", "−": "-"}

# Guard bits kept beyond the integer part of the fold when reducing for sine.
_SINE_GUARD_BITS = 192


def as_trust(level) -> Fraction:
    """Normalise a trust level to an exact fraction in [0, 1].

    Floats go through their shortest repr, so ``0.1`` means one tenth and
    ``ceil(0.1 * 10)`` is 1, not 2.
    """
    if isinstance(level, Fraction):
        t = level
    elif isinstance(level, float):
        if not math.isfinite(level):
            raise ValueError("trust level must be finite")
        t = Fraction(repr(level))
    else:
        t = Fraction(str(level).strip())
    if not 0 <= t <= 1:
        raise ValueError(f"trust level {level} outside [0, 1]")
    return t


@dataclass(frozen=True)
class MappingFunction:
    """Left fold of binary operators over the request's random set.

    The fold runs in exact rational arithmetic; only the final sine is
    rounded to binary64. Division by zero leaves the accumulator unchanged.
    """

    ops: tuple[str, ...] = ()

    def __post_init__(self):
        ops = tuple(_OP_ALIASES.get(o, o) for o in self.ops)
        bad = [o for o in ops if o not in OPERATORS]
        if bad:
            raise ValueError(f"unknown mapping operators {bad}")
        object.__setattr__(self, "ops", ops)

    @classmethod
    def parse(cls, text: str) -> "MappingFunction":
        return cls(tuple(text))

    @classmethod
    def random(cls, rng: random.Random, n_ops: int) -> "MappingFunction":
        return cls(tuple(rng.choice(OPERATORS) for _ in range(n_ops)))

    @property
    def arity(self) -> int:
        """Size of the random set this function consumes."""
        return len(self.ops) + 1

    def __str__(self):
        return "".join(self.ops)

    def fold(self, values: Sequence[int]) -> Fraction:
        if len(values) != self.arity:
            raise ArityError(f"mapping with {len(self.ops)} operators needs {self.arity} values, got {len(values)}")
        acc = Fraction(values[0])
        for op, v in zip(self.ops, values[1:]):
            if op == "+":
                acc += v
            elif op == "-":
                acc -= v
            elif op == "*":
                acc *= v
            elif v != 0:
                acc /= v
        return acc


def exact_sine(x: Fraction) -> float:
    """sin(x) in radians for an exact rational, rounded to the nearest binary64."""
    if x == 0:
        return 0.0
    magnitude = max(0, x.numerator.bit_length() - x.denominator.bit_length() + 1)
    prec = magnitude + _SINE_GUARD_BITS
    v = from_rational(x.numerator, x.denominator, prec, round_nearest)
    return to_float(mpf_sin(v, prec, round_nearest), rnd=round_nearest)


def eval_mapping(fn: MappingFunction, values: Sequence[int]) -> float:
    """Return the mapping value sent on the wire: sine of the fold over ``values``."""
    return exact_sine(fn.fold(values))


@dataclass(frozen=True)
class SharedInfo:
    items: tuple = ()
    trust_level_used: Fraction = Fraction(0)
    # False when the target holds nothing under the requested code.
    subject_known: bool = True


def selection_seed(source: str, target: str, code: str) -> int:
    material = encode_fields([
        (FieldTag.AGENCY_ID, source.encode()),
        (FieldTag.AGENCY_ID, target.encode()),
        (FieldTag.REQUEST_PAYLOAD, code.encode()),
    ])
    return int.from_bytes(md5_digest(material).value, "big")


def shared_count(trust_level, n: int) -> int:
    return math.ceil(as_trust(trust_level) * n)


def trust_filter(items: Sequence, trust_level, seed: tuple[str, str, str]) -> SharedInfo:
    """Disclose the first ceil(trust * n) items of a seeded permutation of ``items``.

    The permutation depends only on ``seed`` (source, target, subject code),
    so a higher trust level always discloses a superset of a lower one.
    """
    t = as_trust(trust_level)
    order = list(items)
    random.Random(selection_seed(*seed)).shuffle(order)
    return SharedInfo(tuple(order[:shared_count(t, len(order))]), t)


@dataclass
class TrustRecord:
    source: str
    target: str
    trust_level: Fraction
    mapping: MappingFunction
    overrides: dict[str, Fraction] = field(default_factory=dict)

    def __post_init__(self):
        self.trust_level = as_trust(self.trust_level)
        self.overrides = {code: as_trust(v) for code, v in self.overrides.items()}
        if isinstance(self.mapping, str):
            self.mapping = MappingFunction.parse(self.mapping)

    def level_for(self, code: str) -> Fraction:
        return self.overrides.get(code, self.trust_level)


class TrustPlane:
    """Directional (source, target) -> TrustRecord table.

    Loaded once at scenario setup and read-only afterwards. A missing pair is
    an error, never a default trust level.
    """

    def __init__(self, records: Iterable[TrustRecord] = ()):
        self.records: dict[tuple[str, str], TrustRecord] = {}
        for rec in records:
            self.add(rec)

    def add(self, record: TrustRecord) -> None:
        key = (record.source, record.target)
        if key in self.records:
            raise ConfigError(f"duplicate trust record {record.source}->{record.target}")
        self.records[key] = record

    def record(self, source: str, target: str) -> TrustRecord:
        try:
            return self.records[(source, target)]
        except KeyError:
            raise NoTrustRecordError(f"no trust record for {source}->{target}", source=source) from None

    def lookup_trust(self, source: str, target: str, code: str) -> tuple[Fraction, MappingFunction]:
        rec = self.record(source, target)
        return rec.level_for(code), rec.mapping

    def mapping(self, source: str, target: str) -> MappingFunction:
        return self.record(source, target).mapping

    def view_for(self, agency: str) -> "TrustPlane":
        """The slice of the plane an agency holds: pairs where it is either end."""
        return TrustPlane(r for r in self.records.values() if agency in (r.source, r.target))

    def __iter__(self):
        return iter(self.records.values())

    def __len__(self):
        return len(self.records)


def lookup_trust(plane: TrustPlane, source: str, target: str, code: str) -> tuple[Fraction, MappingFunction]:
    return plane.lookup_trust(source, target, code)
