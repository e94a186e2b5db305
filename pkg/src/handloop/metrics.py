"""Evaluation: event matching, quality and behavioral metrics, and the
sequential oracle-correction protocol.

Quality metrics compare final annotations to references (onset error,
temporal IoU, label accuracy, complete-match rate).  Behavioral metrics
are computed from trace logs alone (acceptance, rework, authority mix,
rollbacks, confirmed-field violations).  The oracle protocol checks onset,
verb, and noun in sequence, accepting in-tolerance predictions and
correcting the rest with locks, re-decoding after every resolution.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

from .config import EngineConfig
from .controller import Intervention
from .events import FIELDS, EventState, FieldStatus, new_event_state
from .ingest import EventRecord
from .loop import (
    AnnotatorResponse,
    ClipInputs,
    StepContext,
    TraceRecord,
    compute_prior,
    decode_event,
    execute,
)


@dataclass(frozen=True)
class MatchConfig:
    """Tolerances of the complete-match rule."""

    delta_o: int = 5
    tau: float = 0.5

    def __post_init__(self) -> None:
        if self.delta_o < 0:
            raise ValueError("delta_o must be non-negative")
        if not (0.0 <= self.tau <= 1.0):
            raise ValueError("tau must be in [0, 1]")


def tiou(a: tuple[int, int], b: tuple[int, int]) -> float:
    """Temporal IoU of two [start, end] intervals on the continuous axis."""
    (a_s, a_e), (b_s, b_e) = a, b
    if a_s > a_e or b_s > b_e:
        raise ValueError("intervals must satisfy start <= end")
    inter = max(0, min(a_e, b_e) - max(a_s, b_s))
    union = (a_e - a_s) + (b_e - b_s) - inter
    if union == 0:
        return 1.0 if (a_s, a_e) == (b_s, b_e) else 0.0
    return inter / union


def onset_error(predicted: int, reference: int) -> int:
    return abs(predicted - reference)


@dataclass(frozen=True)
class MatchedPair:
    annotation: EventRecord
    reference: EventRecord
    tiou: float
    onset_err: int
    verb_correct: bool
    noun_correct: bool
    complete: bool


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple[MatchedPair, ...]
    unmatched_annotations: tuple[EventRecord, ...]
    unmatched_references: tuple[EventRecord, ...]


def match_events(
    annotations: Sequence[EventRecord],
    references: Sequence[EventRecord],
    cfg: MatchConfig = MatchConfig(),
) -> MatchResult:
    """Greedy per-hand matching by descending temporal IoU.

    Pairs under the tau threshold stay unmatched.  Ties break on earlier
    annotation start, then on the full event tuples, so the result does not
    depend on input order.
    """
    pairs: list[MatchedPair] = []
    used_a: set[int] = set()
    used_r: set[int] = set()
    candidates = []
    for ai, a in enumerate(annotations):
        for ri, r in enumerate(references):
            if a.hand != r.hand:
                continue
            overlap = tiou((a.t_s, a.t_e), (r.t_s, r.t_e))
            if overlap >= cfg.tau:
                candidates.append((overlap, a, r, ai, ri))
    candidates.sort(
        key=lambda row: (
            -row[0],
            row[1].t_s,
            row[2].t_s,
            (row[1].t_e, row[1].v, row[1].n),
            (row[2].t_e, row[2].v, row[2].n),
        )
    )
    for overlap, a, r, ai, ri in candidates:
        if ai in used_a or ri in used_r:
            continue
        used_a.add(ai)
        used_r.add(ri)
        err = onset_error(a.t_o, r.t_o)
        verb_ok = a.v == r.v
        noun_ok = a.n == r.n
        pairs.append(
            MatchedPair(
                annotation=a,
                reference=r,
                tiou=overlap,
                onset_err=err,
                verb_correct=verb_ok,
                noun_correct=noun_ok,
                complete=err <= cfg.delta_o and overlap >= cfg.tau and verb_ok and noun_ok,
            )
        )
    return MatchResult(
        pairs=tuple(pairs),
        unmatched_annotations=tuple(a for i, a in enumerate(annotations) if i not in used_a),
        unmatched_references=tuple(r for i, r in enumerate(references) if i not in used_r),
    )


def events_from_states(states: Sequence[EventState]) -> list[EventRecord]:
    """Extract complete event records; incomplete states are skipped."""
    out = []
    for s in states:
        vals = s.values
        if all(f in vals for f in FIELDS):
            out.append(
                EventRecord(
                    hand=s.hand,
                    t_s=vals["t_s"],
                    t_o=vals["t_o"],
                    t_e=vals["t_e"],
                    v=vals["v"],
                    n=vals["n"],
                )
            )
    return out


# ---------------------------------------------------------------------------
# Behavioral metrics from trace logs


def _is_suggestion(record: TraceRecord) -> bool:
    return (
        bool(record.intervention.payload)
        and record.intervention.authority == "human_confirm"
        and record.intervention.surface == "suggestion_card"
    )


def _is_executed_operation(record: TraceRecord) -> bool:
    if record.rollback:
        return False
    if record.intervention.authority == "safe_local":
        return True
    return record.response is not None and record.response.kind in (
        "accept",
        "edit",
        "manual_entry",
    )


@dataclass(frozen=True)
class BehavioralMetrics:
    suggestions: int
    accepted: int
    rework: int
    accept_rate: Optional[float]
    rework_rate_all: Optional[float]
    correction_rate_accepted: Optional[float]
    operations: int
    authority_distribution: Mapping[str, float]
    rollback_count: int
    violation_count: int


def behavioral_metrics(traces: Sequence[TraceRecord]) -> BehavioralMetrics:
    """Acceptance, rework, authority mix, and safety counters from a log.

    Rates with empty denominators are reported as absent (None), never as
    fabricated zeros.
    """
    suggestion_traces = [t for t in traces if _is_suggestion(t)]
    suggestions = len(suggestion_traces)
    accepted_traces = [t for t in suggestion_traces if t.response and t.response.kind == "accept"]
    accepted = len(accepted_traces)
    rework = sum(1 for t in suggestion_traces if t.response and t.response.kind == "edit")

    # accepted-then-edited: an accepted suggestion whose field is later
    # rewritten by a human or oracle action; indexed by (event, field) so
    # the scan stays linear in the log size
    last_edit_step: dict[tuple[int, str], int] = {}
    for t in traces:
        if t.rollback:
            continue
        for diff in t.diffs:
            if diff.origin in ("human", "oracle") and diff.old != diff.new:
                key = (t.event_index, diff.field)
                last_edit_step[key] = max(last_edit_step.get(key, t.step), t.step)
    edited_later = 0
    for t in accepted_traces:
        if any(
            last_edit_step.get((t.event_index, f), t.step) > t.step
            for f in t.intervention.targets
        ):
            edited_later += 1

    ops = [t for t in traces if _is_executed_operation(t)]
    counts: dict[str, int] = {}
    for t in ops:
        counts[t.intervention.authority] = counts.get(t.intervention.authority, 0) + 1
    total_ops = len(ops)
    distribution = {a: c / total_ops for a, c in sorted(counts.items())} if total_ops else {}

    violation_count = 0
    for t in traces:
        for diff in t.diffs:
            if (
                diff.origin == "machine"
                and diff.old_status == FieldStatus.CONFIRMED.value
                and diff.old != diff.new
            ):
                violation_count += 1

    return BehavioralMetrics(
        suggestions=suggestions,
        accepted=accepted,
        rework=rework,
        accept_rate=accepted / suggestions if suggestions else None,
        rework_rate_all=rework / suggestions if suggestions else None,
        correction_rate_accepted=edited_later / accepted if accepted else None,
        operations=total_ops,
        authority_distribution=distribution,
        rollback_count=sum(1 for t in traces if t.rollback),
        violation_count=violation_count,
    )


# ---------------------------------------------------------------------------
# Operational metrics and the manual-baseline action model


@dataclass(frozen=True)
class ManualBaseline:
    """Explicit manual-effort model: actions needed per field resolution."""

    actions_per_field: float = 1.0
    fields: tuple[str, ...] = FIELDS

    def actions_for(self, n_events: int) -> float:
        return n_events * self.actions_per_field * len(self.fields)


@dataclass(frozen=True)
class OperationalMetrics:
    assisted_actions: int
    baseline_actions: float
    action_reduction: Optional[float]
    zero_edit_rate: Optional[float]
    edits_per_event: tuple[int, ...]


def operational_metrics(
    traces: Sequence[TraceRecord],
    n_events: int,
    baseline: ManualBaseline = ManualBaseline(),
) -> OperationalMetrics:
    """Action reduction against the manual baseline plus zero-edit rate."""
    actions = 0
    edits = [0] * n_events
    for t in traces:
        if t.response is None:
            continue
        if t.response.kind in ("accept", "reject", "edit", "manual_entry"):
            actions += 1
        if t.response.kind in ("edit", "manual_entry") and t.event_index < n_events:
            edits[t.event_index] += 1
    baseline_actions = baseline.actions_for(n_events)
    return OperationalMetrics(
        assisted_actions=actions,
        baseline_actions=baseline_actions,
        action_reduction=1.0 - actions / baseline_actions if baseline_actions else None,
        zero_edit_rate=(sum(1 for e in edits if e == 0) / n_events) if n_events else None,
        edits_per_event=tuple(edits),
    )


# ---------------------------------------------------------------------------
# Sequential oracle-correction protocol


ORACLE_FIELD_ORDER = ("t_o", "v", "n")


def oracle_responder(references: Sequence[EventRecord], cfg: MatchConfig = MatchConfig()):
    """Responder that accepts in-tolerance proposals and corrects the rest
    to ground truth, locking either way.  Onset tolerance is delta_o
    frames; semantics must match exactly."""

    def within(field: str, value, ref: EventRecord) -> bool:
        if field == "t_o":
            return abs(int(value) - ref.t_o) <= cfg.delta_o
        return value == getattr(ref, field)

    def respond(intervention: Intervention, context: StepContext) -> AnnotatorResponse:
        ref = references[context.event_index]
        if intervention.payload:
            if all(within(f, v, ref) for f, v in intervention.payload.items()):
                return AnnotatorResponse("accept", latency=0.5, origin="oracle")
            gold = {f: getattr(ref, f) for f in intervention.targets}
            return AnnotatorResponse("edit", values=gold, latency=1.0, origin="oracle")
        gold = {f: getattr(ref, f) for f in intervention.targets}
        return AnnotatorResponse("manual_entry", values=gold, latency=1.0, origin="oracle")

    return respond


@dataclass(frozen=True)
class OracleProtocolResult:
    states: tuple[EventState, ...]
    traces: tuple[TraceRecord, ...]
    edits_per_event: tuple[int, ...]
    accepts_per_event: tuple[int, ...]
    fields_checked_per_event: int = len(ORACLE_FIELD_ORDER)

    def zero_edit_rate(self) -> Optional[float]:
        if not self.edits_per_event:
            return None
        return sum(1 for e in self.edits_per_event if e == 0) / len(self.edits_per_event)

    def total_edits(self) -> int:
        return sum(self.edits_per_event)


def run_oracle_protocol(
    clip: ClipInputs,
    adapter,
    references: Sequence[EventRecord],
    cfg: EngineConfig = EngineConfig(),
    match_cfg: MatchConfig = MatchConfig(),
    session_id: str = "oracle",
    clock: Callable[[], float] = time.time,
) -> OracleProtocolResult:
    """Check onset, verb, noun in sequence against the references.

    In-tolerance predictions are accepted and locked as proposed;
    out-of-tolerance fields are corrected to ground truth and locked; the
    event is re-decoded after every resolution so later fields benefit
    from earlier locks.
    """
    if len(references) != len(clip.spans):
        raise ValueError("one reference per drawn span is required")
    states: list[EventState] = []
    traces: list[TraceRecord] = []
    edits: list[int] = []
    accepts: list[int] = []
    config_hash = cfg.config_hash()
    step = 0

    for event_index, (hand, t_s, t_e) in enumerate(clip.spans):
        ref = references[event_index]
        state = new_event_state(hand, t_s, t_e)
        prior = compute_prior(state, clip, adapter, cfg)
        n_edits = n_accepts = 0
        for field_name in ORACLE_FIELD_ORDER:
            hypothesis = decode_event(state, clip, adapter, cfg, prior)
            predicted = {"t_o": hypothesis.t_o, "v": hypothesis.v, "n": hypothesis.n}[field_name]
            if field_name == "t_o":
                ok = abs(predicted - ref.t_o) <= match_cfg.delta_o
            else:
                ok = predicted == getattr(ref, field_name)
            intervention = Intervention(
                targets=(field_name,),
                surface="suggestion_card",
                authority="human_confirm",
                payload={field_name: predicted},
            )
            if ok:
                response = AnnotatorResponse("accept", latency=0.5, origin="oracle")
                n_accepts += 1
            else:
                response = AnnotatorResponse(
                    "edit", values={field_name: getattr(ref, field_name)}, latency=1.0, origin="oracle"
                )
                n_edits += 1
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
            traces.append(record)
            step += 1
        states.append(state)
        edits.append(n_edits)
        accepts.append(n_accepts)

    return OracleProtocolResult(
        states=tuple(states),
        traces=tuple(traces),
        edits_per_event=tuple(edits),
        accepts_per_event=tuple(accepts),
    )


# ---------------------------------------------------------------------------
# Session report


@dataclass(frozen=True)
class SessionMetrics:
    total_time: Optional[float]
    n_events: int
    actions_per_event: Optional[float]
    mean_onset_error: Optional[float]
    mean_tiou: Optional[float]
    verb_accuracy: Optional[float]
    noun_accuracy: Optional[float]
    complete_match_rate: Optional[float]
    matched: int
    behavioral: BehavioralMetrics
    operational: OperationalMetrics

    def to_dict(self) -> dict:
        return {
            "total_time": self.total_time,
            "n_events": self.n_events,
            "actions_per_event": self.actions_per_event,
            "mean_onset_error": self.mean_onset_error,
            "mean_tiou": self.mean_tiou,
            "verb_accuracy": self.verb_accuracy,
            "noun_accuracy": self.noun_accuracy,
            "complete_match_rate": self.complete_match_rate,
            "matched": self.matched,
            "behavioral": asdict(self.behavioral),
            "operational": asdict(self.operational),
        }


def session_metrics(
    traces: Sequence[TraceRecord],
    annotations: Sequence[EventRecord],
    references: Optional[Sequence[EventRecord]] = None,
    match_cfg: MatchConfig = MatchConfig(),
    baseline: ManualBaseline = ManualBaseline(),
    n_events: Optional[int] = None,
) -> SessionMetrics:
    behavioral = behavioral_metrics(traces)
    count = n_events if n_events is not None else len(annotations)
    operational = operational_metrics(traces, count, baseline)

    total_time = None
    if traces:
        total_time = max(t.at for t in traces) - min(t.at for t in traces)
    actions_per_event = operational.assisted_actions / count if count else None

    mean_err = mean_ti = verb_acc = noun_acc = complete_rate = None
    matched = 0
    if references:
        result = match_events(annotations, references, match_cfg)
        matched = len(result.pairs)
        if result.pairs:
            mean_err = sum(p.onset_err for p in result.pairs) / matched
            mean_ti = sum(p.tiou for p in result.pairs) / matched
            verb_acc = sum(p.verb_correct for p in result.pairs) / matched
            noun_acc = sum(p.noun_correct for p in result.pairs) / matched
        complete_rate = sum(p.complete for p in result.pairs) / len(references)

    return SessionMetrics(
        total_time=total_time,
        n_events=count,
        actions_per_event=actions_per_event,
        mean_onset_error=mean_err,
        mean_tiou=mean_ti,
        verb_accuracy=verb_acc,
        noun_accuracy=noun_acc,
        complete_match_rate=complete_rate,
        matched=matched,
        behavioral=behavioral,
        operational=operational,
    )


def write_report(metrics: SessionMetrics, json_path: str | Path, csv_path: str | Path) -> None:
    """Emit the structured report and a flat key/value CSV for tabulation."""
    doc = metrics.to_dict()
    Path(json_path).write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")

    def flatten(prefix: str, node, rows: list):
        if isinstance(node, Mapping):
            for k, v in node.items():
                flatten(f"{prefix}.{k}" if prefix else str(k), v, rows)
        elif isinstance(node, (list, tuple)):
            rows.append((prefix, json.dumps(list(node))))
        else:
            rows.append((prefix, node))

    rows: list = []
    flatten("", doc, rows)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for key, value in rows:
            writer.writerow([key, "" if value is None else value])
