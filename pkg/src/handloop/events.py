"""Per-hand interaction event model: fields, statuses, locks, provenance.

An event is a per-hand record (hand, t_s, t_o, t_e, v, n): span start,
functional-contact onset, span end, verb, noun.  The runtime object is an
:class:`EventState` holding partial values, a per-field status, and per-field
provenance with a lock flag.  States are immutable snapshots: every operation
returns a new state, so rollback is structural and concurrent reads are safe.

The noun-existence indicator b is never stored; it is derived from the noun
field, with :data:`NO_NOUN` marking "resolved as no noun" as opposed to
"still unresolved".
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Iterable, Mapping, Optional

FIELDS = ("t_s", "t_o", "t_e", "v", "n")
TEMPORAL_FIELDS = ("t_s", "t_o", "t_e")
SEMANTIC_FIELDS = ("v", "n")
COMPLETION_FIELDS = ("t_o", "v", "n")

PHASE_FAMILIES = ("boundary", "early", "mid", "late")

HANDS = ("Left", "Right")

#: Distinguished noun value meaning "this event has no target noun" (b = 0).
#: Distinct from an empty field, which means the noun is still unresolved.
NO_NOUN = "__none__"


class HandloopError(Exception):
    """Base class for all domain errors."""


class UnknownField(HandloopError):
    pass


class InvalidSpan(HandloopError):
    pass


class LockViolation(HandloopError):
    pass


class OntologyViolation(HandloopError):
    pass


class TemporalViolation(HandloopError):
    pass


class MissingValue(HandloopError):
    pass


class FieldStatus(Enum):
    EMPTY = "empty"
    SUGGESTED = "suggested"
    CONFIRMED = "confirmed"


class Origin(Enum):
    HUMAN = "human"
    MACHINE = "machine"
    ORACLE = "oracle"


#: Origins allowed to confirm fields or rewrite locked ones.
_AUTHORITATIVE_ORIGINS = (Origin.HUMAN, Origin.ORACLE)


@dataclass(frozen=True)
class Ontology:
    """Closed label space: verbs, nouns, valid pairs, and verb phase families."""

    verbs: tuple[str, ...]
    nouns: tuple[str, ...]
    valid_pairs: Mapping[str, frozenset[str]]
    noun_required: Mapping[str, bool]
    phase_family: Mapping[str, str]
    family_template_ratio: Mapping[str, float]

    def __post_init__(self) -> None:
        known_nouns = set(self.nouns)
        for v in self.verbs:
            if v not in self.phase_family:
                raise OntologyViolation(f"verb {v!r} has no phase family")
            fam = self.phase_family[v]
            if fam not in PHASE_FAMILIES:
                raise OntologyViolation(f"verb {v!r} has unknown phase family {fam!r}")
            if self.noun_required.get(v) and not self.valid_pairs.get(v):
                raise OntologyViolation(f"noun-required verb {v!r} has no valid nouns")
        for v, ns in self.valid_pairs.items():
            if v not in self.phase_family:
                raise OntologyViolation(f"valid_pairs references unknown verb {v!r}")
            bad = set(ns) - known_nouns
            if bad:
                raise OntologyViolation(f"valid_pairs for {v!r} references unknown nouns {sorted(bad)}")
        for fam in PHASE_FAMILIES:
            ratio = self.family_template_ratio.get(fam)
            if ratio is None or not (0.0 <= ratio <= 1.0):
                raise OntologyViolation(f"family {fam!r} needs a template ratio in [0, 1]")

    def verb_index(self, v: str) -> int:
        return self.verbs.index(v)

    def noun_index(self, n: str) -> int:
        return self.nouns.index(n)

    def pair_valid(self, v: str, n: str) -> bool:
        return n in self.valid_pairs.get(v, frozenset())

    def allows_no_noun(self, v: str) -> bool:
        return not self.noun_required.get(v, False)


@dataclass(frozen=True)
class FieldProvenance:
    """Who wrote the field last, at which loop step, through which intervention."""

    origin: Origin
    step: int = 0
    intervention_id: Optional[str] = None
    locked: bool = False


@dataclass(frozen=True)
class EventState:
    """Immutable snapshot of one per-hand event under construction.

    ``values`` holds only set fields, ``status`` always carries all five
    fields, ``provenance`` carries fields that were written at least once.
    The lock flag lives in provenance and is kept in bijection with
    CONFIRMED status.
    """

    hand: str
    values: Mapping[str, Any]
    status: Mapping[str, FieldStatus]
    provenance: Mapping[str, FieldProvenance]

    def field_value(self, f: str) -> Any:
        _require_known(f)
        return self.values.get(f)

    def field_status(self, f: str) -> FieldStatus:
        _require_known(f)
        return self.status[f]

    def is_locked(self, f: str) -> bool:
        _require_known(f)
        prov = self.provenance.get(f)
        return prov.locked if prov is not None else False

    @property
    def window(self) -> tuple[int, int]:
        if "t_s" not in self.values or "t_e" not in self.values:
            raise MissingValue("event state has no t_s/t_e window")
        return (self.values["t_s"], self.values["t_e"])

    @property
    def noun_presence(self) -> Optional[int]:
        """Derived noun-existence indicator b: None while unresolved."""
        n = self.values.get("n")
        if n is None:
            return None
        return 0 if n == NO_NOUN else 1

    def open_fields(self, universe: Iterable[str] = COMPLETION_FIELDS) -> tuple[str, ...]:
        return tuple(f for f in universe if self.status[f] is not FieldStatus.CONFIRMED)

    def is_complete(self) -> bool:
        return all(self.status[f] is FieldStatus.CONFIRMED for f in FIELDS)

    def to_dict(self) -> dict:
        return {
            "hand": self.hand,
            "values": dict(self.values),
            "status": {f: s.value for f, s in self.status.items()},
            "provenance": {
                f: {
                    "origin": p.origin.value,
                    "step": p.step,
                    "intervention_id": p.intervention_id,
                    "locked": p.locked,
                }
                for f, p in self.provenance.items()
            },
        }

    @staticmethod
    def from_dict(d: Mapping[str, Any]) -> "EventState":
        return EventState(
            hand=d["hand"],
            values=dict(d["values"]),
            status={f: FieldStatus(s) for f, s in d["status"].items()},
            provenance={
                f: FieldProvenance(
                    origin=Origin(p["origin"]),
                    step=p["step"],
                    intervention_id=p.get("intervention_id"),
                    locked=p["locked"],
                )
                for f, p in d["provenance"].items()
            },
        )


@dataclass(frozen=True)
class LockSet:
    """Decoder-facing view of the locked variables, including derived b.

    ``locked`` may name any of {t_s, t_o, t_e, v, b, n}; a locked noun
    implies a locked presence indicator.
    """

    locked: frozenset[str] = frozenset()
    confirmed_values: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        allowed = set(FIELDS) | {"b"}
        bad = set(self.locked) - allowed
        if bad:
            raise UnknownField(f"unknown locked fields {sorted(bad)}")
        missing = set(self.locked) - set(self.confirmed_values)
        if missing:
            raise MissingValue(f"locked fields without confirmed values: {sorted(missing)}")

    def is_locked(self, f: str) -> bool:
        return f in self.locked

    def value(self, f: str) -> Any:
        return self.confirmed_values[f]

    @staticmethod
    def from_state(state: EventState) -> "LockSet":
        locked = set()
        values: dict[str, Any] = {}
        for f in FIELDS:
            if state.is_locked(f):
                locked.add(f)
                values[f] = state.values[f]
        if "n" in locked and "b" not in locked:
            locked.add("b")
            values["b"] = 0 if values["n"] == NO_NOUN else 1
        return LockSet(frozenset(locked), values)


@dataclass(frozen=True)
class ValidityReport:
    """Report-only validity check result; never raised."""

    violations: tuple[str, ...] = ()

    @property
    def valid(self) -> bool:
        return not self.violations


def _require_known(f: str) -> None:
    if f not in FIELDS:
        raise UnknownField(f"unknown field {f!r}")


def new_event_state(hand: str, t_s: int, t_e: int) -> EventState:
    """Create the state for a freshly drawn timeline span.

    The span endpoints are human-drawn, so they carry human origin, but they
    start as SUGGESTED: confirmation stays an explicit act.
    """
    if hand not in HANDS:
        raise UnknownField(f"unknown hand {hand!r}")
    if t_s > t_e:
        raise InvalidSpan(f"t_s={t_s} exceeds t_e={t_e}")
    if t_s < 0:
        raise InvalidSpan(f"negative frame index t_s={t_s}")
    span_prov = FieldProvenance(origin=Origin.HUMAN, step=0, intervention_id=None, locked=False)
    return EventState(
        hand=hand,
        values={"t_s": int(t_s), "t_e": int(t_e)},
        status={
            "t_s": FieldStatus.SUGGESTED,
            "t_e": FieldStatus.SUGGESTED,
            "t_o": FieldStatus.EMPTY,
            "v": FieldStatus.EMPTY,
            "n": FieldStatus.EMPTY,
        },
        provenance={"t_s": span_prov, "t_e": span_prov},
    )


def _check_write(state: EventState, f: str, value: Any, ontology: Optional[Ontology]) -> None:
    """Validate a candidate value against the currently set fields."""
    if f in TEMPORAL_FIELDS:
        if not isinstance(value, int) or isinstance(value, bool) or value < 0:
            raise TemporalViolation(f"{f} must be a non-negative frame index, got {value!r}")
        probe = dict(state.values)
        probe[f] = value
        _check_ordering(probe)
        return

    if ontology is None:
        raise OntologyViolation(f"writing {f!r} requires an ontology")

    if f == "v":
        if value not in ontology.phase_family:
            raise OntologyViolation(f"unknown verb {value!r}")
        n = state.values.get("n")
        if n is not None:
            if n == NO_NOUN:
                if not ontology.allows_no_noun(value):
                    raise OntologyViolation(f"verb {value!r} requires a noun but n is resolved as none")
            elif not ontology.pair_valid(value, n):
                raise OntologyViolation(f"pair ({value!r}, {n!r}) is not valid")
        return

    if f == "n":
        v = state.values.get("v")
        if value == NO_NOUN:
            if v is not None and not ontology.allows_no_noun(v):
                raise OntologyViolation(f"verb {v!r} requires a noun")
            return
        if value not in ontology.nouns:
            raise OntologyViolation(f"unknown noun {value!r}")
        if v is not None and not ontology.pair_valid(v, value):
            raise OntologyViolation(f"pair ({v!r}, {value!r}) is not valid")
        return

    raise UnknownField(f"unknown field {f!r}")


def _check_ordering(values: Mapping[str, Any]) -> None:
    t_s, t_o, t_e = values.get("t_s"), values.get("t_o"), values.get("t_e")
    if t_s is not None and t_o is not None and t_s > t_o:
        raise TemporalViolation(f"t_s={t_s} exceeds t_o={t_o}")
    if t_o is not None and t_e is not None and t_o > t_e:
        raise TemporalViolation(f"t_o={t_o} exceeds t_e={t_e}")
    if t_s is not None and t_e is not None and t_s > t_e:
        raise TemporalViolation(f"t_s={t_s} exceeds t_e={t_e}")


def _check_merged(merged: Mapping[str, Any], ontology: Optional[Ontology]) -> None:
    """Pairwise constraint check of a merged value view."""
    for f in TEMPORAL_FIELDS:
        val = merged.get(f)
        if val is None:
            continue
        if not isinstance(val, int) or isinstance(val, bool) or val < 0:
            raise TemporalViolation(f"{f} must be a non-negative frame index, got {val!r}")
    _check_ordering(merged)
    v, n = merged.get("v"), merged.get("n")
    if v is None and n is None:
        return
    if ontology is None:
        raise OntologyViolation("writing semantic fields requires an ontology")
    if v is not None and v not in ontology.phase_family:
        raise OntologyViolation(f"unknown verb {v!r}")
    if n is not None and n != NO_NOUN and n not in ontology.nouns:
        raise OntologyViolation(f"unknown noun {n!r}")
    if v is not None and n is not None:
        if n == NO_NOUN:
            if not ontology.allows_no_noun(v):
                raise OntologyViolation(f"verb {v!r} requires a noun")
        elif not ontology.pair_valid(v, n):
            raise OntologyViolation(f"pair ({v!r}, {n!r}) is not valid")


def set_fields(
    state: EventState,
    writes: Mapping[str, Any],
    origin: Origin,
    ontology: Optional[Ontology] = None,
    *,
    step: int = 0,
    intervention_id: Optional[str] = None,
) -> EventState:
    """Write several fields as one atomic unit.

    Validity is checked against the merged result, so a bundle may rewrite
    verb and noun together even when each write alone would conflict with
    the stale value of the other.  All writes land or none do.
    """
    if not writes:
        return state
    for f in writes:
        _require_known(f)
        if state.is_locked(f) and origin not in _AUTHORITATIVE_ORIGINS:
            raise LockViolation(f"machine write to locked field {f!r}")
    merged = dict(state.values)
    merged.update(writes)
    _check_merged(merged, ontology)

    confirmed = origin in _AUTHORITATIVE_ORIGINS
    status = dict(state.status)
    values = dict(state.values)
    provenance = dict(state.provenance)
    for f, value in writes.items():
        status[f] = FieldStatus.CONFIRMED if confirmed else FieldStatus.SUGGESTED
        values[f] = value
        provenance[f] = FieldProvenance(
            origin=origin, step=step, intervention_id=intervention_id, locked=confirmed
        )
    return replace(state, values=values, status=status, provenance=provenance)


def set_field(
    state: EventState,
    f: str,
    value: Any,
    origin: Origin,
    ontology: Optional[Ontology] = None,
    *,
    step: int = 0,
    intervention_id: Optional[str] = None,
) -> EventState:
    """Write one field, honoring locks and pairwise validity.

    Machine writes land as SUGGESTED and may never touch a locked field.
    Human and oracle writes land as CONFIRMED and re-lock the field.
    """
    _require_known(f)
    if state.is_locked(f) and origin not in _AUTHORITATIVE_ORIGINS:
        raise LockViolation(f"machine write to locked field {f!r}")
    _check_write(state, f, value, ontology)

    confirmed = origin in _AUTHORITATIVE_ORIGINS
    status = dict(state.status)
    status[f] = FieldStatus.CONFIRMED if confirmed else FieldStatus.SUGGESTED
    values = dict(state.values)
    values[f] = value
    provenance = dict(state.provenance)
    provenance[f] = FieldProvenance(
        origin=origin, step=step, intervention_id=intervention_id, locked=confirmed
    )
    return replace(state, values=values, status=status, provenance=provenance)


def confirm_field(
    state: EventState,
    f: str,
    *,
    origin: Origin = Origin.HUMAN,
    step: int = 0,
    intervention_id: Optional[str] = None,
) -> EventState:
    """Promote an existing value to CONFIRMED and lock it. Idempotent."""
    _require_known(f)
    if origin not in _AUTHORITATIVE_ORIGINS:
        raise LockViolation("machines never confirm fields")
    if f not in state.values:
        raise MissingValue(f"cannot confirm empty field {f!r}")
    if state.status[f] is FieldStatus.CONFIRMED:
        return state
    status = dict(state.status)
    status[f] = FieldStatus.CONFIRMED
    provenance = dict(state.provenance)
    provenance[f] = FieldProvenance(
        origin=origin, step=step, intervention_id=intervention_id, locked=True
    )
    return replace(state, status=status, provenance=provenance)


def check_validity(values: Mapping[str, Any], ontology: Ontology) -> ValidityReport:
    """Report every violated constraint of a partial event. Never raises.

    An unresolved noun under a noun-required verb counts as a violation:
    this is the save-readiness check, so open obligations are reported.
    A fully empty partial event is vacuously valid.
    """
    violations: list[str] = []
    try:
        _check_ordering(values)
    except TemporalViolation as exc:
        violations.append(f"ordering: {exc}")

    v = values.get("v")
    n = values.get("n")
    if v is not None and v not in ontology.phase_family:
        violations.append(f"unknown verb: {v!r}")
        v = None
    if n is not None and n != NO_NOUN and n not in ontology.nouns:
        violations.append(f"unknown noun: {n!r}")
        n = None
    if v is not None:
        if ontology.noun_required.get(v, False) and (n is None or n == NO_NOUN):
            violations.append(f"noun requirement: verb {v!r} requires a noun")
        if n is not None and n != NO_NOUN and not ontology.pair_valid(v, n):
            violations.append(f"invalid pair: ({v!r}, {n!r})")
    return ValidityReport(tuple(violations))
