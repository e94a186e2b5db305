"""Closed supervisory loop: atomic execution, provenance log, and replay.

Each step selects an intervention, presents it to a responder (live human,
oracle, or script), applies the response as an all-or-nothing transaction,
and appends one trace record.  Machine-initiated writes that would touch a
confirmed field are rolled back and logged instead of surfacing as errors.
The trace log carries full field diffs, so any session can be replayed
bit-for-bit and any tampering is detected at the first divergent step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping, Optional, Sequence

import numpy as np

from .completion import (
    DecodedHypothesis,
    InfeasibleLocks,
    assemble_representation,
    decode,
    feedback_redecode,
    refine_scores,
)
from .config import EngineConfig
from .controller import (
    CalibrationStore,
    Intervention,
    NoExecutableCandidate,
    build_control_state,
    enumerate_candidates,
    select_intervention,
    update_calibration,
)
from .events import (
    FIELDS,
    EventState,
    FieldProvenance,
    FieldStatus,
    HandloopError,
    LockSet,
    LockViolation,
    Ontology,
    OntologyViolation,
    Origin,
    TemporalViolation,
    new_event_state,
    set_fields,
)
from .ingest import FeatureTable, HandTrack, StatisticsBundle
from .onset import OnsetPrior, hand_onset_prior

RESPONSE_KINDS = ("accept", "reject", "edit", "manual_entry", "timeout")


class ResponseMissing(HandloopError):
    pass


class ReplayDivergence(HandloopError):
    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass(frozen=True)
class AnnotatorResponse:
    """One annotator reaction to a presented intervention."""

    kind: str
    values: Mapping[str, Any] = field(default_factory=dict)
    latency: Optional[float] = None
    origin: str = "human"

    def __post_init__(self) -> None:
        if self.kind not in RESPONSE_KINDS:
            raise HandloopError(f"unknown response kind {self.kind!r}")
        if self.kind in ("edit", "manual_entry") and not self.values:
            raise HandloopError(f"{self.kind} responses must carry values")
        if self.kind in ("accept", "reject", "timeout") and self.values:
            raise HandloopError(f"{self.kind} responses carry no values")
        if self.origin not in ("human", "oracle"):
            raise HandloopError(f"unknown response origin {self.origin!r}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "values": dict(self.values),
            "latency": self.latency,
            "origin": self.origin,
        }

    @staticmethod
    def from_dict(d: Mapping[str, Any]) -> "AnnotatorResponse":
        return AnnotatorResponse(
            kind=d["kind"],
            values=dict(d.get("values", {})),
            latency=d.get("latency"),
            origin=d.get("origin", "human"),
        )


@dataclass(frozen=True)
class FieldDiff:
    field: str
    old: Any
    new: Any
    old_status: str
    new_status: str
    origin: str

    def to_dict(self) -> dict:
        return {
            "field": self.field,
            "old": self.old,
            "new": self.new,
            "old_status": self.old_status,
            "new_status": self.new_status,
            "origin": self.origin,
        }

    @staticmethod
    def from_dict(d: Mapping[str, Any]) -> "FieldDiff":
        return FieldDiff(
            field=d["field"],
            old=d["old"],
            new=d["new"],
            old_status=d["old_status"],
            new_status=d["new_status"],
            origin=d["origin"],
        )


@dataclass(frozen=True)
class TraceRecord:
    """Append-only record of one executed step, with full provenance."""

    step: int
    session_id: str
    event_index: int
    intervention_id: str
    intervention: Intervention
    response: Optional[AnnotatorResponse]
    diffs: tuple[FieldDiff, ...]
    config_hash: str
    at: float
    rollback: bool = False

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "session_id": self.session_id,
            "event_index": self.event_index,
            "intervention_id": self.intervention_id,
            "intervention": self.intervention.to_dict(),
            "response": self.response.to_dict() if self.response else None,
            "diffs": [d.to_dict() for d in self.diffs],
            "config_hash": self.config_hash,
            "at": self.at,
            "rollback": self.rollback,
        }

    @staticmethod
    def from_dict(d: Mapping[str, Any]) -> "TraceRecord":
        return TraceRecord(
            step=d["step"],
            session_id=d["session_id"],
            event_index=d["event_index"],
            intervention_id=d["intervention_id"],
            intervention=Intervention.from_dict(d["intervention"]),
            response=AnnotatorResponse.from_dict(d["response"]) if d.get("response") else None,
            diffs=tuple(FieldDiff.from_dict(x) for x in d["diffs"]),
            config_hash=d["config_hash"],
            at=d["at"],
            rollback=d.get("rollback", False),
        )


@dataclass(frozen=True)
class Transaction:
    """Staged multi-field write against an immutable pre-state snapshot."""

    pre_state: EventState
    writes: Mapping[str, Any]
    origin: Origin

    def commit(
        self, ontology: Ontology, *, step: int, intervention_id: Optional[str]
    ) -> EventState:
        """Apply all writes or raise; the pre-state is never mutated."""
        return set_fields(
            self.pre_state,
            self.writes,
            self.origin,
            ontology,
            step=step,
            intervention_id=intervention_id,
        )


def _diffs_between(before: EventState, after: EventState) -> tuple[FieldDiff, ...]:
    out = []
    for f in FIELDS:
        old, new = before.values.get(f), after.values.get(f)
        old_status, new_status = before.status[f], after.status[f]
        if old == new and old_status == new_status:
            continue
        origin = after.provenance[f].origin.value if f in after.provenance else "human"
        out.append(
            FieldDiff(
                field=f,
                old=old,
                new=new,
                old_status=old_status.value,
                new_status=new_status.value,
                origin=origin,
            )
        )
    return tuple(out)


_ORIGIN_BY_NAME = {"human": Origin.HUMAN, "oracle": Origin.ORACLE}


def execute(
    intervention: Intervention,
    state: EventState,
    response: Optional[AnnotatorResponse],
    ontology: Ontology,
    *,
    step: int = 0,
    session_id: str = "session",
    event_index: int = 0,
    intervention_id: str = "i-0",
    config_hash: str = "",
    clock: Callable[[], float] = time.time,
) -> tuple[EventState, TraceRecord]:
    """Apply one annotator response (or silent machine action) atomically.

    safe_local payloads are staged as a transaction with machine origin;
    any staged violation (lock, ontology, ordering) or post-commit change
    to a confirmed field rolls the whole step back and logs it, leaving the
    state untouched.  Responses to interactive interventions confirm and
    lock their fields; invalid human edits surface as errors without any
    state change.
    """

    def trace(after: EventState, rollback: bool = False) -> TraceRecord:
        return TraceRecord(
            step=step,
            session_id=session_id,
            event_index=event_index,
            intervention_id=intervention_id,
            intervention=intervention,
            response=response,
            diffs=() if rollback else _diffs_between(state, after),
            config_hash=config_hash,
            at=clock(),
            rollback=rollback,
        )

    if intervention.authority == "safe_local":
        if response is not None:
            raise HandloopError("safe_local interventions execute without a response")
        txn = Transaction(pre_state=state, writes=dict(intervention.payload), origin=Origin.MACHINE)
        try:
            staged = txn.commit(ontology, step=step, intervention_id=intervention_id)
        except (LockViolation, OntologyViolation, TemporalViolation):
            return state, trace(state, rollback=True)
        for f in FIELDS:
            if state.status[f] is FieldStatus.CONFIRMED and staged.values.get(f) != state.values.get(f):
                return state, trace(state, rollback=True)
        return staged, trace(staged)

    if response is None:
        raise ResponseMissing(f"{intervention.authority} intervention needs a response")
    origin = _ORIGIN_BY_NAME[response.origin]

    if response.kind in ("reject", "timeout"):
        return state, trace(state)

    if response.kind == "accept":
        if not intervention.payload:
            raise HandloopError("accept response to an intervention without payload")
        writes = dict(intervention.payload)
    elif response.kind in ("edit", "manual_entry"):
        writes = dict(response.values)
    else:  # pragma: no cover - closed enum
        raise HandloopError(f"unhandled response kind {response.kind}")

    after = set_fields(state, writes, origin, ontology, step=step, intervention_id=intervention_id)
    return after, trace(after)


# ---------------------------------------------------------------------------
# Session loop


@dataclass(frozen=True)
class ClipInputs:
    """Everything needed to annotate one clip."""

    clip_id: str
    ontology: Ontology
    tracks: Mapping[str, HandTrack]
    features: FeatureTable
    #: spans drawn on the timeline: (hand, t_s, t_e) per intended event
    spans: Sequence[tuple[str, int, int]]
    statistics: StatisticsBundle


@dataclass(frozen=True)
class StepContext:
    """What the responder can see when reacting to an intervention."""

    event_index: int
    state: EventState
    hypothesis: Optional[DecodedHypothesis]
    prior: Optional[OnsetPrior]


Responder = Callable[[Intervention, StepContext], Optional[AnnotatorResponse]]


@dataclass(frozen=True)
class EventOutcome:
    state: EventState
    #: completed, needs_manual, save_requested, or not_reached
    status: str


@dataclass(frozen=True)
class SessionResult:
    outcomes: tuple[EventOutcome, ...]
    traces: tuple[TraceRecord, ...]
    store: CalibrationStore

    @property
    def states(self) -> tuple[EventState, ...]:
        return tuple(o.state for o in self.outcomes)


def _verb_cues(prior: Optional[OnsetPrior], ontology: Ontology) -> Optional[np.ndarray]:
    if prior is None or prior.semantic is None:
        return None
    cues = np.zeros(len(ontology.verbs))
    cues[ontology.verb_index(prior.semantic.verb)] = prior.semantic.confidence
    return cues


def decode_event(
    state: EventState,
    clip: ClipInputs,
    adapter,
    cfg: EngineConfig,
    prior: Optional[OnsetPrior],
) -> DecodedHypothesis:
    """One full scoring pass: assemble, forward, refine, decode, feedback."""
    locks = LockSet.from_state(state)
    rep = assemble_representation(
        state, prior, clip.features, clip.ontology, verb_cues=_verb_cues(prior, clip.ontology)
    )
    bundle = adapter.forward(rep)
    refined = refine_scores(bundle, clip.statistics, clip.ontology, cfg.refine)
    first = decode(refined, locks, clip.ontology, clip.statistics)
    if cfg.loop.feedback_passes <= 0:
        return first
    return feedback_redecode(
        rep,
        adapter,
        first,
        locks,
        clip.ontology,
        clip.statistics,
        cfg.refine,
        passes=cfg.loop.feedback_passes,
    )


def compute_prior(
    state: EventState, clip: ClipInputs, adapter, cfg: EngineConfig
) -> Optional[OnsetPrior]:
    track = clip.tracks.get(state.hand)
    if track is None:
        return None
    others = [t for h, t in clip.tracks.items() if h != state.hand]
    return hand_onset_prior(
        track,
        state.window,
        clip.features,
        adapter,
        clip.ontology,
        cfg.onset,
        other_track=others[0] if others else None,
        state=state,
    )


def run_session(
    clip: ClipInputs,
    adapter,
    store: CalibrationStore,
    responder: Responder,
    cfg: EngineConfig = EngineConfig(),
    session_id: str = "session",
    clock: Callable[[], float] = time.time,
) -> SessionResult:
    """Run the closed loop over every drawn span until fields are confirmed,
    the responder signals save (returns None), or manual completion is
    required.  The locked set never shrinks across steps."""
    outcomes: list[EventOutcome] = []
    traces: list[TraceRecord] = []
    config_hash = cfg.config_hash()
    step = 0
    save_requested = False

    for event_index, (hand, t_s, t_e) in enumerate(clip.spans):
        if save_requested:
            outcomes.append(EventOutcome(new_event_state(hand, t_s, t_e), "not_reached"))
            continue
        state = new_event_state(hand, t_s, t_e)
        status = "completed"
        window = state.window
        prior = compute_prior(state, clip, adapter, cfg)

        for _ in range(cfg.loop.max_steps_per_event):
            if state.window != window:  # span edited: onset evidence changed
                window = state.window
                prior = compute_prior(state, clip, adapter, cfg)
            try:
                hypothesis = decode_event(state, clip, adapter, cfg, prior)
            except InfeasibleLocks:
                status = "needs_manual"
                break
            control = build_control_state(
                state, hypothesis, prior, hand_track_present=state.hand in clip.tracks
            )
            if not control.open_fields():
                break
            try:
                selected = select_intervention(
                    enumerate_candidates(control),
                    control,
                    LockSet.from_state(state),
                    store,
                    cfg.controller,
                )
            except NoExecutableCandidate:
                status = "needs_manual"
                break

            context = StepContext(event_index, state, hypothesis, prior)
            if selected.authority == "safe_local":
                response = None
            else:
                response = responder(selected, context)
                if response is None:
                    status = "save_requested"
                    save_requested = True
                    break
            state, record = execute(
                selected,
                state,
                response,
                clip.ontology,
                step=step,
                session_id=session_id,
                event_index=event_index,
                intervention_id=f"{session_id}-{step}",
                config_hash=config_hash,
                clock=clock,
            )
            traces.append(record)
            store = update_calibration(store, record, cfg.controller)
            step += 1
        else:
            status = "needs_manual"

        if status == "completed":
            state, extra_traces, store, step, status = _confirm_span(
                state, clip, responder, store, cfg,
                session_id=session_id, event_index=event_index, step=step, clock=clock,
                config_hash=config_hash,
            )
            traces.extend(extra_traces)
            if status == "save_requested":
                save_requested = True
        outcomes.append(EventOutcome(state, status))

    return SessionResult(tuple(outcomes), tuple(traces), store)


def _confirm_span(
    state: EventState,
    clip: ClipInputs,
    responder: Responder,
    store: CalibrationStore,
    cfg: EngineConfig,
    *,
    session_id: str,
    event_index: int,
    step: int,
    clock: Callable[[], float],
    config_hash: str,
) -> tuple[EventState, list[TraceRecord], CalibrationStore, int, str]:
    """Final span sign-off: the drawn t_s/t_e are confirmed (or edited) by
    the annotator once all completion fields are resolved."""
    open_span = [f for f in ("t_s", "t_e") if state.status[f] is not FieldStatus.CONFIRMED]
    if not open_span:
        return state, [], store, step, "completed"
    intervention = Intervention(
        targets=tuple(open_span),
        surface="timeline_query",
        authority="human_confirm",
        payload={f: state.values[f] for f in open_span},
    )
    response = responder(intervention, StepContext(event_index, state, None, None))
    if response is None:
        return state, [], store, step, "save_requested"
    state, record = execute(
        intervention,
        state,
        response,
        clip.ontology,
        step=step,
        session_id=session_id,
        event_index=event_index,
        intervention_id=f"{session_id}-{step}",
        config_hash=config_hash,
        clock=clock,
    )
    store = update_calibration(store, record, cfg.controller)
    confirmed = all(state.status[f] is FieldStatus.CONFIRMED for f in open_span)
    return state, [record], store, step + 1, "completed" if confirmed else "needs_manual"


# ---------------------------------------------------------------------------
# Replay


def replay(
    traces: Sequence[TraceRecord],
    initial_states: Sequence[EventState],
    config_hash: Optional[str] = None,
) -> list[EventState]:
    """Reapply logged diffs to the initial states.

    Every diff's old value and status must match the current state, which
    both orders the log and detects tampering; the result reproduces the
    recorded final states exactly.
    """
    states = list(initial_states)
    for record in traces:
        if config_hash is not None and record.config_hash != config_hash:
            raise ReplayDivergence(record.step, "config hash mismatch")
        if record.rollback:
            continue
        if record.event_index >= len(states):
            raise ReplayDivergence(record.step, f"unknown event index {record.event_index}")
        state = states[record.event_index]
        values = dict(state.values)
        status = dict(state.status)
        provenance = dict(state.provenance)
        for diff in record.diffs:
            current = values.get(diff.field)
            if current != diff.old or status[diff.field].value != diff.old_status:
                raise ReplayDivergence(
                    record.step,
                    f"diff for {diff.field} expected ({diff.old!r}, {diff.old_status}), "
                    f"found ({current!r}, {status[diff.field].value})",
                )
            if diff.new is None:
                values.pop(diff.field, None)
            else:
                values[diff.field] = diff.new
            status[diff.field] = FieldStatus(diff.new_status)
            provenance[diff.field] = FieldProvenance(
                origin=Origin(diff.origin),
                step=record.step,
                intervention_id=record.intervention_id,
                locked=diff.new_status == FieldStatus.CONFIRMED.value,
            )
        states[record.event_index] = replace(
            state, values=values, status=status, provenance=provenance
        )
    return states


def write_log(traces: Sequence[TraceRecord], path) -> None:
    import json
    from pathlib import Path

    lines = [json.dumps(t.to_dict()) for t in traces]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_log(path) -> list[TraceRecord]:
    import json
    from pathlib import Path

    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(TraceRecord.from_dict(json.loads(line)))
    return out
