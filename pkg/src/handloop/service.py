"""Session-oriented HTTP+JSON service exposing the annotation loop.

One process serves many sessions; each session's mutations run under a
single lock (single writer), reads serve immutable snapshots, and every
state change lands in an append-only JSONL log plus a push buffer that
clients consume via SSE or polling.  Crash recovery is replay: the initial
per-event states live in the session snapshot, and the current state is
always snapshot + log.

Clip assets are read from ``<data_root>/clips/<clip_id>/``: tracks.jsonl,
features.lfho, ontology.json, statistics.json, optional theta.lfad or
scores.jsonl (adapter), optional references.jsonl (metrics).
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from fastapi import FastAPI, HTTPException
from fastapi.responses import PlainTextResponse, StreamingResponse
from pydantic import BaseModel

from .completion import AdapterParams, AffineAdapter, InfeasibleLocks, ScoreFileAdapter
from .config import ConfigError, EngineConfig, config_from_dict
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
    FieldStatus,
    HandloopError,
    LockSet,
    check_validity,
    new_event_state,
)
from .ingest import (
    load_events,
    load_features,
    load_hand_tracks,
    load_ontology,
    load_statistics,
)
from .loop import (
    AnnotatorResponse,
    ClipInputs,
    TraceRecord,
    compute_prior,
    decode_event,
    execute,
    read_log,
    replay,
)
from .metrics import MatchConfig, events_from_states, session_metrics

DATA_ROOT_ENV = "HANDLOOP_DATA_ROOT"


class MissingAsset(HandloopError):
    pass


class StaleIntervention(HandloopError):
    pass


def load_clip_assets(clip_dir: Path, clip_id: str) -> tuple[ClipInputs, Any]:
    """Load a clip's files into ClipInputs plus its adapter."""
    required = {
        "tracks": clip_dir / "tracks.jsonl",
        "features": clip_dir / "features.lfho",
        "ontology": clip_dir / "ontology.json",
        "statistics": clip_dir / "statistics.json",
    }
    for name, path in required.items():
        if not path.exists():
            raise MissingAsset(f"clip {clip_id!r} is missing {name} ({path.name})")
    tracks = {t.hand: t for t in load_hand_tracks(required["tracks"])}
    features = load_features(required["features"])
    ontology = load_ontology(required["ontology"])
    statistics = load_statistics(required["statistics"])
    clip = ClipInputs(
        clip_id=clip_id,
        ontology=ontology,
        tracks=tracks,
        features=features,
        spans=(),
        statistics=statistics,
    )
    theta = clip_dir / "theta.lfad"
    scores = clip_dir / "scores.jsonl"
    if theta.exists():
        adapter = AffineAdapter(AdapterParams.load(theta))
    elif scores.exists():
        adapter = ScoreFileAdapter.load(scores)
    else:
        # neutral affine adapter: decoding is then driven by the statistics
        from .completion import RepresentationLayout

        layout = RepresentationLayout(
            n_verbs=len(ontology.verbs), n_nouns=len(ontology.nouns), feature_dim=features.dim
        )
        adapter = AffineAdapter(AdapterParams.zeros(layout.size, 16, len(ontology.verbs), len(ontology.nouns)))
    return clip, adapter


@dataclass
class ActiveIntervention:
    intervention_id: str
    intervention: Intervention
    event_index: int


@dataclass
class Session:
    """Server-side session state; all mutation under ``lock``."""

    session_id: str
    clip: ClipInputs
    adapter: Any
    cfg: EngineConfig
    directory: Path
    events: list[EventState] = field(default_factory=list)
    initial_events: list[EventState] = field(default_factory=list)
    store: CalibrationStore = field(default_factory=CalibrationStore)
    traces: list[TraceRecord] = field(default_factory=list)
    active: dict[str, ActiveIntervention] = field(default_factory=dict)
    push_buffer: list[dict] = field(default_factory=list)
    step: int = 0
    intervention_counter: int = 0
    saved: bool = False
    lock: threading.Lock = field(default_factory=threading.Lock)

    # -- persistence ------------------------------------------------------

    def persist_snapshot(self) -> None:
        doc = {
            "session_id": self.session_id,
            "clip_id": self.clip.clip_id,
            "config": self.cfg.to_dict(),
            "config_hash": self.cfg.config_hash(),
            "initial_events": [s.to_dict() for s in self.initial_events],
            "saved": self.saved,
        }
        (self.directory / "snapshot.json").write_text(json.dumps(doc, indent=2), encoding="utf-8")

    def append_trace(self, record: TraceRecord) -> None:
        self.traces.append(record)
        with open(self.directory / "log.jsonl", "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record.to_dict()) + "\n")
        self.store.save(self.directory / "calibration.json")

    def push(self, kind: str, payload: dict) -> None:
        self.push_buffer.append({"seq": len(self.push_buffer), "type": kind, "payload": payload})

    # -- views ------------------------------------------------------------

    def event_doc(self, index: int) -> dict:
        state = self.events[index]
        doc = state.to_dict()
        doc["index"] = index
        prior = compute_prior(state, self.clip, self.adapter, self.cfg)
        doc["onset_prior"] = (
            None
            if prior is None
            else {"onset": prior.onset, "band": list(prior.band), "reliability": prior.reliability}
        )
        return doc

    def state_doc(self) -> dict:
        return {
            "session_id": self.session_id,
            "clip_id": self.clip.clip_id,
            "config_hash": self.cfg.config_hash(),
            "saved": self.saved,
            "frame_count": self.clip.features.frame_count,
            "events": [self.event_doc(i) for i in range(len(self.events))],
            "active_interventions": {
                hand: {
                    "intervention_id": a.intervention_id,
                    "event_index": a.event_index,
                    **a.intervention.to_dict(),
                }
                for hand, a in self.active.items()
            },
            "push_seq": len(self.push_buffer),
        }

    def delta_doc(self, event_index: int, record: Optional[TraceRecord]) -> dict:
        state = self.events[event_index]
        fields = {}
        diff_fields = [d.field for d in record.diffs] if record else list(FIELDS)
        for f in diff_fields:
            fields[f] = {
                "value": state.values.get(f),
                "status": state.status[f].value,
                "locked": state.is_locked(f),
            }
        return {
            "event_index": event_index,
            "fields": fields,
            "rollback": bool(record.rollback) if record else False,
        }


class SessionRegistry:
    def __init__(self, data_root: Path, cfg: EngineConfig):
        self.data_root = data_root
        self.cfg = cfg
        self.sessions: dict[str, Session] = {}
        self.counter = 0
        self.lock = threading.Lock()

    def clip_dir(self, clip_id: str) -> Path:
        return self.data_root / "clips" / clip_id

    def session_dir(self, session_id: str) -> Path:
        return self.data_root / "sessions" / session_id

    def create(self, clip_id: str, config_doc: Optional[dict]) -> Session:
        cfg = self.cfg if not config_doc else config_from_dict(config_doc)
        clip, adapter = load_clip_assets(self.clip_dir(clip_id), clip_id)
        with self.lock:
            self.counter += 1
            session_id = f"s{self.counter:04d}-{clip_id}"
        directory = self.session_dir(session_id)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "log.jsonl").write_text("", encoding="utf-8")
        session = Session(
            session_id=session_id,
            clip=clip,
            adapter=adapter,
            cfg=cfg,
            directory=directory,
        )
        session.persist_snapshot()
        self.sessions[session_id] = session
        return session

    def restore(self, session_id: str) -> Session:
        """Crash recovery: snapshot + log replay reproduce the state."""
        directory = self.session_dir(session_id)
        snap_path = directory / "snapshot.json"
        if not snap_path.exists():
            raise MissingAsset(f"no snapshot for session {session_id!r}")
        doc = json.loads(snap_path.read_text(encoding="utf-8"))
        cfg = config_from_dict(doc["config"])
        clip, adapter = load_clip_assets(self.clip_dir(doc["clip_id"]), doc["clip_id"])
        initial = [EventState.from_dict(e) for e in doc["initial_events"]]
        traces = read_log(directory / "log.jsonl")
        events = replay(traces, initial, config_hash=doc["config_hash"])
        store = CalibrationStore()
        calib = directory / "calibration.json"
        if calib.exists():
            store = CalibrationStore.load(calib)
        session = Session(
            session_id=session_id,
            clip=clip,
            adapter=adapter,
            cfg=cfg,
            directory=directory,
            events=events,
            initial_events=initial,
            store=store,
            traces=traces,
            step=(max(t.step for t in traces) + 1) if traces else 0,
            saved=doc.get("saved", False),
        )
        self.sessions[session_id] = session
        return session

    def get(self, session_id: str) -> Session:
        if session_id in self.sessions:
            return self.sessions[session_id]
        return self.restore(session_id)


# ---------------------------------------------------------------------------
# Request bodies


class CreateSessionBody(BaseModel):
    clip_id: str
    config: Optional[dict] = None


class CreateEventBody(BaseModel):
    hand: str
    t_s: int
    t_e: int


class NextInterventionBody(BaseModel):
    hand: str


class RespondBody(BaseModel):
    intervention_id: str
    kind: str
    values: Optional[dict] = None
    latency: Optional[float] = None


class ConfirmFieldBody(BaseModel):
    hand: str
    field: str


class EditFieldBody(BaseModel):
    hand: str
    values: dict


def _http_error(exc: Exception) -> HTTPException:
    if isinstance(exc, (MissingAsset,)):
        return HTTPException(status_code=404, detail=str(exc))
    if isinstance(exc, StaleIntervention):
        return HTTPException(status_code=409, detail=str(exc))
    if isinstance(exc, ConfigError):
        return HTTPException(status_code=400, detail=str(exc))
    return HTTPException(status_code=422, detail=str(exc))


def _active_event_index(session: Session, hand: str) -> Optional[int]:
    for i in range(len(session.events) - 1, -1, -1):
        if session.events[i].hand == hand:
            return i
    return None


def create_app(data_root: Optional[str | Path] = None, cfg: Optional[EngineConfig] = None) -> FastAPI:
    root = Path(data_root or os.environ.get(DATA_ROOT_ENV, "./handloop-data"))
    registry = SessionRegistry(root, cfg or EngineConfig())
    app = FastAPI(title="handloop", version="0.1.0")
    app.state.registry = registry

    def get_session(session_id: str) -> Session:
        try:
            return registry.get(session_id)
        except HandloopError as exc:
            raise _http_error(exc)

    @app.get("/clips")
    def list_clips() -> dict:
        clips_dir = registry.data_root / "clips"
        clips = sorted(p.name for p in clips_dir.iterdir() if p.is_dir()) if clips_dir.exists() else []
        return {"clips": clips}

    @app.post("/sessions")
    def create_session(body: CreateSessionBody) -> dict:
        try:
            session = registry.create(body.clip_id, body.config)
        except (HandloopError, ConfigError) as exc:
            raise _http_error(exc)
        return {"session_id": session.session_id, "clip_id": body.clip_id}

    @app.get("/sessions/{session_id}")
    def get_session_info(session_id: str) -> dict:
        session = get_session(session_id)
        return {
            "session_id": session.session_id,
            "clip_id": session.clip.clip_id,
            "events": len(session.events),
            "saved": session.saved,
            "config_hash": session.cfg.config_hash(),
        }

    @app.get("/sessions/{session_id}/state")
    def full_state(session_id: str) -> dict:
        session = get_session(session_id)
        with session.lock:
            return session.state_doc()

    @app.get("/sessions/{session_id}/ontology")
    def ontology_doc(session_id: str) -> dict:
        onto = get_session(session_id).clip.ontology
        return {
            "verbs": [
                {
                    "id": v,
                    "noun_required": bool(onto.noun_required.get(v, False)),
                    "phase_family": onto.phase_family[v],
                }
                for v in onto.verbs
            ],
            "nouns": list(onto.nouns),
            "valid_pairs": sorted([v, n] for v, ns in onto.valid_pairs.items() for n in ns),
        }

    @app.post("/sessions/{session_id}/events")
    def create_event(session_id: str, body: CreateEventBody) -> dict:
        session = get_session(session_id)
        with session.lock:
            try:
                state = new_event_state(body.hand, body.t_s, body.t_e)
            except HandloopError as exc:
                raise _http_error(exc)
            session.events.append(state)
            session.initial_events.append(state)
            session.persist_snapshot()
            index = len(session.events) - 1
            doc = session.event_doc(index)
            session.push("event_created", doc)
            return doc

    @app.post("/sessions/{session_id}/next-intervention")
    def next_intervention(session_id: str, body: NextInterventionBody) -> dict:
        session = get_session(session_id)
        with session.lock:
            index = _active_event_index(session, body.hand)
            if index is None:
                return {"status": "no_active_event"}
            for _ in range(session.cfg.loop.max_steps_per_event):
                state = session.events[index]
                prior = compute_prior(state, session.clip, session.adapter, session.cfg)
                try:
                    hypothesis = decode_event(state, session.clip, session.adapter, session.cfg, prior)
                except InfeasibleLocks as exc:
                    return {"status": "needs_manual", "detail": str(exc)}
                control = build_control_state(
                    state, hypothesis, prior, hand_track_present=state.hand in session.clip.tracks
                )
                if not control.open_fields():
                    session.active.pop(body.hand, None)
                    return {"status": "done", "event_index": index}
                try:
                    selected = select_intervention(
                        enumerate_candidates(control),
                        control,
                        LockSet.from_state(state),
                        session.store,
                        session.cfg.controller,
                    )
                except NoExecutableCandidate:
                    return {"status": "needs_manual", "event_index": index}

                if selected.authority == "safe_local":
                    after, record = execute(
                        selected,
                        state,
                        None,
                        session.clip.ontology,
                        step=session.step,
                        session_id=session.session_id,
                        event_index=index,
                        intervention_id=f"{session.session_id}-i{session.intervention_counter}",
                        config_hash=session.cfg.config_hash(),
                    )
                    session.intervention_counter += 1
                    session.step += 1
                    session.events[index] = after
                    session.append_trace(record)
                    session.store = update_calibration(session.store, record, session.cfg.controller)
                    session.push("delta", session.delta_doc(index, record))
                    continue

                intervention_id = f"{session.session_id}-i{session.intervention_counter}"
                session.intervention_counter += 1
                session.active[body.hand] = ActiveIntervention(intervention_id, selected, index)
                doc = {
                    "status": "intervention",
                    "intervention_id": intervention_id,
                    "event_index": index,
                    "hand": body.hand,
                    **selected.to_dict(),
                }
                session.push("intervention", doc)
                return doc
            return {"status": "needs_manual", "event_index": index}

    @app.post("/sessions/{session_id}/respond")
    def respond(session_id: str, body: RespondBody) -> dict:
        session = get_session(session_id)
        with session.lock:
            match = None
            for hand, active in session.active.items():
                if active.intervention_id == body.intervention_id:
                    match = (hand, active)
            if match is None:
                raise _http_error(StaleIntervention(f"intervention {body.intervention_id!r} is not current"))
            hand, active = match
            try:
                response = AnnotatorResponse(
                    kind=body.kind, values=body.values or {}, latency=body.latency
                )
                after, record = execute(
                    active.intervention,
                    session.events[active.event_index],
                    response,
                    session.clip.ontology,
                    step=session.step,
                    session_id=session.session_id,
                    event_index=active.event_index,
                    intervention_id=active.intervention_id,
                    config_hash=session.cfg.config_hash(),
                )
            except HandloopError as exc:
                raise _http_error(exc)
            session.step += 1
            session.events[active.event_index] = after
            session.append_trace(record)
            session.store = update_calibration(session.store, record, session.cfg.controller)
            session.active.pop(hand, None)
            delta = session.delta_doc(active.event_index, record)
            session.push("delta", delta)
            return delta

    @app.post("/sessions/{session_id}/confirm-field")
    def confirm(session_id: str, body: ConfirmFieldBody) -> dict:
        session = get_session(session_id)
        with session.lock:
            index = _active_event_index(session, body.hand)
            if index is None:
                raise _http_error(MissingAsset(f"no event for hand {body.hand!r}"))
            state = session.events[index]
            if body.field not in FIELDS:
                raise _http_error(HandloopError(f"unknown field {body.field!r}"))
            if body.field not in state.values:
                raise _http_error(HandloopError(f"field {body.field!r} has no value to confirm"))
            surface = "timeline_query" if body.field in ("t_s", "t_o", "t_e") else "choice_prompt"
            intervention = Intervention(
                targets=(body.field,),
                surface=surface,
                authority="human_confirm",
                payload={body.field: state.values[body.field]},
            )
            after, record = execute(
                intervention,
                state,
                AnnotatorResponse("accept"),
                session.clip.ontology,
                step=session.step,
                session_id=session.session_id,
                event_index=index,
                intervention_id=f"{session.session_id}-i{session.intervention_counter}",
                config_hash=session.cfg.config_hash(),
            )
            session.intervention_counter += 1
            session.step += 1
            session.events[index] = after
            session.append_trace(record)
            delta = session.delta_doc(index, record)
            session.push("delta", delta)
            return delta

    @app.post("/sessions/{session_id}/edit-field")
    def edit_field(session_id: str, body: EditFieldBody) -> dict:
        """Explicit human edit affordance: direct field writes (timeline
        drags, dropdown edits, safe_local reverts) land as confirmed human
        values through a logged manual entry."""
        session = get_session(session_id)
        with session.lock:
            index = _active_event_index(session, body.hand)
            if index is None:
                raise _http_error(MissingAsset(f"no event for hand {body.hand!r}"))
            bad = set(body.values) - set(FIELDS)
            if bad:
                raise _http_error(HandloopError(f"unknown fields {sorted(bad)}"))
            targets = tuple(f for f in FIELDS if f in body.values)
            surface = "timeline_query" if all(f in ("t_s", "t_o", "t_e") for f in targets) else "choice_prompt"
            intervention = Intervention(targets=targets, surface=surface, authority="human_only")
            try:
                after, record = execute(
                    intervention,
                    session.events[index],
                    AnnotatorResponse("manual_entry", values=dict(body.values)),
                    session.clip.ontology,
                    step=session.step,
                    session_id=session.session_id,
                    event_index=index,
                    intervention_id=f"{session.session_id}-i{session.intervention_counter}",
                    config_hash=session.cfg.config_hash(),
                )
            except HandloopError as exc:
                raise _http_error(exc)
            session.intervention_counter += 1
            session.step += 1
            session.events[index] = after
            session.append_trace(record)
            delta = session.delta_doc(index, record)
            session.push("delta", delta)
            return delta

    @app.post("/sessions/{session_id}/save")
    def save(session_id: str) -> dict:
        session = get_session(session_id)
        with session.lock:
            failures = []
            for i, state in enumerate(session.events):
                report = check_validity(dict(state.values), session.clip.ontology)
                if not report.valid:
                    failures.append({"event_index": i, "violations": list(report.violations)})
            if failures:
                raise HTTPException(status_code=422, detail={"validation_failed": failures})
            # the save is the annotator's sign-off on the drawn spans; it
            # goes through the executor so the log stays replay-complete
            for i, state in enumerate(session.events):
                open_span = tuple(
                    f for f in ("t_s", "t_e") if state.status[f] is not FieldStatus.CONFIRMED
                )
                if not open_span:
                    continue
                intervention = Intervention(
                    targets=open_span,
                    surface="timeline_query",
                    authority="human_confirm",
                    payload={f: state.values[f] for f in open_span},
                )
                after, record = execute(
                    intervention,
                    state,
                    AnnotatorResponse("accept"),
                    session.clip.ontology,
                    step=session.step,
                    session_id=session.session_id,
                    event_index=i,
                    intervention_id=f"{session.session_id}-i{session.intervention_counter}",
                    config_hash=session.cfg.config_hash(),
                )
                session.intervention_counter += 1
                session.step += 1
                session.events[i] = after
                session.append_trace(record)
                session.push("delta", session.delta_doc(i, record))
            session.saved = True
            session.persist_snapshot()
            annotations = events_from_states(session.events)
            references = _load_references(registry, session)
            metrics = session_metrics(
                session.traces,
                annotations,
                references,
                MatchConfig(),
                n_events=len(session.events),
            )
            doc = metrics.to_dict()
            (session.directory / "metrics.json").write_text(
                json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8"
            )
            session.push("saved", {"metrics": doc})
            return {"session_id": session.session_id, "saved": True, "metrics": doc}

    @app.get("/sessions/{session_id}/log")
    def export_log(session_id: str) -> PlainTextResponse:
        session = get_session(session_id)
        with session.lock:
            text = "\n".join(json.dumps(t.to_dict()) for t in session.traces)
        return PlainTextResponse(content=text, media_type="application/x-ndjson")

    @app.get("/sessions/{session_id}/metrics")
    def metrics_endpoint(session_id: str) -> dict:
        session = get_session(session_id)
        with session.lock:
            annotations = events_from_states(session.events)
            references = _load_references(registry, session)
            metrics = session_metrics(
                session.traces,
                annotations,
                references,
                MatchConfig(),
                n_events=len(session.events),
            )
            return metrics.to_dict()

    @app.get("/sessions/{session_id}/updates")
    def updates(session_id: str, since: int = 0) -> dict:
        session = get_session(session_id)
        with session.lock:
            events = session.push_buffer[since:]
            return {"events": events, "next": len(session.push_buffer)}

    @app.get("/sessions/{session_id}/events-stream")
    def events_stream(session_id: str, since: int = 0, idle_timeout: float = 30.0):
        session = get_session(session_id)
        max_idle = min(max(idle_timeout, 0.2), 300.0)

        def generate():
            cursor = since
            idle = 0.0
            while idle < max_idle:
                with session.lock:
                    chunk = session.push_buffer[cursor:]
                    cursor = len(session.push_buffer)
                if chunk:
                    idle = 0.0
                    for event in chunk:
                        yield f"id: {event['seq']}\nevent: {event['type']}\ndata: {json.dumps(event)}\n\n"
                else:
                    idle += 0.2
                    time.sleep(0.2)
                    # keep-alive beat; also the yield point where a client
                    # disconnect can cancel the stream
                    yield ": keep-alive\n\n"

        return StreamingResponse(generate(), media_type="text/event-stream")

    return app


def _load_references(registry: SessionRegistry, session: Session):
    path = registry.clip_dir(session.clip.clip_id) / "references.jsonl"
    if not path.exists():
        return None
    return load_events(path, session.clip.ontology)
