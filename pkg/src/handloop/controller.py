"""Trust-calibrated selection of the next supervisory intervention.

For every open completion field the controller can ask outright
(human_only), propose for confirmation (human_confirm), or apply silently
under rollback protection (safe_local).  Candidates are scored by
utility + calibrated propagation gain - calibrated cost - calibrated risk,
where calibration folds logged acceptance, override, and latency statistics
into the raw heuristic estimates.  Lock and authority-policy filtering
happens before ranking, so nothing that writes a locked field can ever win.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np

from .completion import DecodedHypothesis
from .config import ControllerConfig
from .events import (
    COMPLETION_FIELDS,
    FIELDS,
    EventState,
    FieldStatus,
    HandloopError,
    LockSet,
    Origin,
)

AUTHORITIES = ("human_only", "human_confirm", "safe_local")
SURFACES = ("timeline_query", "choice_prompt", "suggestion_card", "silent_apply")

#: which open fields get sharper once a target field is resolved, via the
#: statistics links (verb-noun cooccurrence, verb-conditioned onset priors)
PROPAGATION_LINKS = {"v": ("n", "t_o"), "n": ("v",), "t_o": ("v",)}


class NoExecutableCandidate(HandloopError):
    pass


@dataclass(frozen=True)
class Intervention:
    """One candidate supervisory action."""

    targets: tuple[str, ...]
    surface: str
    authority: str
    payload: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.authority not in AUTHORITIES:
            raise HandloopError(f"unknown authority {self.authority!r}")
        if self.surface not in SURFACES:
            raise HandloopError(f"unknown surface {self.surface!r}")
        if (self.surface == "silent_apply") != (self.authority == "safe_local"):
            raise HandloopError("silent_apply and safe_local imply each other")
        if self.authority == "human_only" and self.payload:
            raise HandloopError("human_only interventions never carry machine payload")

    def to_dict(self) -> dict:
        return {
            "targets": list(self.targets),
            "surface": self.surface,
            "authority": self.authority,
            "payload": dict(self.payload),
        }

    @staticmethod
    def from_dict(d: Mapping[str, Any]) -> "Intervention":
        return Intervention(
            targets=tuple(d["targets"]),
            surface=d["surface"],
            authority=d["authority"],
            payload=dict(d.get("payload", {})),
        )


@dataclass(frozen=True)
class ControlState:
    """Deterministic aggregation of event state and decoder evidence."""

    field_status: Mapping[str, str]
    locked: Mapping[str, bool]
    hand_track_present: bool
    prior_emitted: bool
    prior_reliability: float
    provenance_origin: Mapping[str, Optional[str]]
    #: decoded (top probability, top-minus-second margin) per field
    confidence: Mapping[str, tuple[float, float]]
    #: proposal values from the decoded hypothesis
    proposal: Mapping[str, Any]
    #: current field values (set fields only)
    values: Mapping[str, Any]
    #: prior authoritative (human/oracle) edits per field, from provenance
    human_edits: Mapping[str, int]

    def open_fields(self) -> tuple[str, ...]:
        return tuple(
            f for f in COMPLETION_FIELDS if self.field_status[f] != FieldStatus.CONFIRMED.value
        )


def _top_and_margin(probs: np.ndarray) -> tuple[float, float]:
    if len(probs) == 1:
        return float(probs[0]), float(probs[0])
    ranked = np.sort(probs)[::-1]
    return float(ranked[0]), float(ranked[0] - ranked[1])


def build_control_state(
    state: EventState,
    hypothesis: DecodedHypothesis,
    prior=None,
    hand_track_present: bool = True,
) -> ControlState:
    confidence = {
        "t_o": _top_and_margin(hypothesis.marginals.onset),
        "v": _top_and_margin(hypothesis.marginals.verb),
        "n": _top_and_margin(hypothesis.marginals.noun_slots),
    }
    provenance = {
        f: (state.provenance[f].origin.value if f in state.provenance else None) for f in FIELDS
    }
    human_edits = {
        f: (
            1
            if f in state.provenance
            and state.provenance[f].origin in (Origin.HUMAN, Origin.ORACLE)
            else 0
        )
        for f in FIELDS
    }
    return ControlState(
        field_status={f: state.status[f].value for f in FIELDS},
        locked={f: state.is_locked(f) for f in FIELDS},
        hand_track_present=hand_track_present,
        prior_emitted=prior is not None,
        prior_reliability=float(prior.reliability) if prior is not None else 0.0,
        provenance_origin=provenance,
        confidence=confidence,
        proposal={"t_o": hypothesis.t_o, "v": hypothesis.v, "n": hypothesis.n},
        values=dict(state.values),
        human_edits=human_edits,
    )


def enumerate_candidates(control: ControlState) -> list[Intervention]:
    """All candidate interventions for the open fields, in fixed order.

    Per open field: a direct query, a confirmation suggestion, and a silent
    apply.  When both semantic fields are open, one bundled suggestion
    covers them jointly.
    """
    out: list[Intervention] = []
    open_fields = control.open_fields()
    for f in open_fields:
        query_surface = "timeline_query" if f == "t_o" else "choice_prompt"
        out.append(Intervention(targets=(f,), surface=query_surface, authority="human_only"))
        payload = {f: control.proposal[f]}
        out.append(
            Intervention(
                targets=(f,), surface="suggestion_card", authority="human_confirm", payload=payload
            )
        )
        # a silent re-apply of the value already suggested would be a no-op;
        # only offer safe_local when it changes something
        if control.values.get(f) != control.proposal[f]:
            out.append(
                Intervention(
                    targets=(f,), surface="silent_apply", authority="safe_local", payload=payload
                )
            )
    semantic_open = tuple(f for f in ("v", "n") if f in open_fields)
    if len(semantic_open) >= 2:
        out.append(
            Intervention(
                targets=semantic_open,
                surface="suggestion_card",
                authority="human_confirm",
                payload={f: control.proposal[f] for f in semantic_open},
            )
        )
    return out


@dataclass(frozen=True)
class Estimates:
    utility: float
    gain: float
    cost: float
    risk: float


def estimate(
    intervention: Intervention,
    control: ControlState,
    cfg: ControllerConfig = ControllerConfig(),
) -> Estimates:
    """Raw heuristic utility, propagation gain, cost, and overwrite risk."""
    utility = 0.0
    for f in intervention.targets:
        status_w = cfg.status_weight[control.field_status[f]]
        utility += (1.0 - status_w) * control.confidence[f][0]

    open_fields = set(control.open_fields())
    linked = set()
    for f in intervention.targets:
        linked.update(PROPAGATION_LINKS.get(f, ()))
    sharpened = (linked & open_fields) - set(intervention.targets)
    gain = len(sharpened) / max(len(COMPLETION_FIELDS) - 1, 1)

    cost = cfg.base_cost[intervention.surface]

    mult = cfg.risk_multiplier[intervention.authority]
    uncertainty = float(
        np.mean([1.0 - control.confidence[f][0] for f in intervention.targets])
    )
    risk = uncertainty * mult

    return Estimates(utility=utility, gain=gain, cost=cost, risk=risk)


# ---------------------------------------------------------------------------
# Calibration from logged behavior


@dataclass(frozen=True)
class CalibrationEntry:
    accepts: int = 0
    rejects: int = 0
    overrides: int = 0
    non_overrides: int = 0
    cost_ema: Optional[float] = None

    def accept_rate(self) -> float:
        return (self.accepts + 1) / (self.accepts + self.rejects + 2)

    def override_rate(self) -> float:
        return (self.overrides + 1) / (self.overrides + self.non_overrides + 2)


@dataclass(frozen=True)
class CalibrationStore:
    entries: Mapping[tuple[str, str, str], CalibrationEntry] = field(default_factory=dict)

    def key_for(self, intervention: Intervention) -> tuple[str, str, str]:
        return ("+".join(intervention.targets), intervention.authority, intervention.surface)

    def entry(self, intervention: Intervention) -> CalibrationEntry:
        return self.entries.get(self.key_for(intervention), CalibrationEntry())

    def save(self, path: str | Path) -> None:
        doc = [
            {
                "field": k[0],
                "authority": k[1],
                "surface": k[2],
                "accepts": e.accepts,
                "rejects": e.rejects,
                "overrides": e.overrides,
                "non_overrides": e.non_overrides,
                "cost_ema": e.cost_ema,
            }
            for k, e in sorted(self.entries.items())
        ]
        Path(path).write_text(json.dumps(doc, indent=2), encoding="utf-8")

    @staticmethod
    def load(path: str | Path) -> "CalibrationStore":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        entries = {}
        for row in doc:
            key = (row["field"], row["authority"], row["surface"])
            entries[key] = CalibrationEntry(
                accepts=row["accepts"],
                rejects=row["rejects"],
                overrides=row["overrides"],
                non_overrides=row["non_overrides"],
                cost_ema=row["cost_ema"],
            )
        return CalibrationStore(entries)


@dataclass(frozen=True)
class Calibrated:
    gain: float
    cost: float
    risk: float


def calibrate(
    intervention: Intervention,
    raw: Estimates,
    store: CalibrationStore,
    cfg: ControllerConfig = ControllerConfig(),
) -> Calibrated:
    """Adjust raw estimates with smoothed acceptance, cost, and override
    statistics for this intervention's (field, authority, surface) key."""
    entry = store.entry(intervention)
    gain = raw.gain * entry.accept_rate()
    if entry.cost_ema is None:
        cost = raw.cost
    else:
        cost = 0.5 * raw.cost + 0.5 * (entry.cost_ema / cfg.seconds_per_cost_unit)
    risk = raw.risk * (1.0 + entry.override_rate())
    return Calibrated(gain=gain, cost=cost, risk=risk)


def score_intervention(
    intervention: Intervention,
    control: ControlState,
    store: CalibrationStore,
    cfg: ControllerConfig = ControllerConfig(),
) -> float:
    raw = estimate(intervention, control, cfg)
    cal = calibrate(intervention, raw, store, cfg)
    return (
        cfg.lambda_utility * raw.utility
        + cfg.lambda_gain * cal.gain
        - cfg.lambda_cost * cal.cost
        - cfg.lambda_risk * cal.risk
    )


def _sort_key(intervention: Intervention, score: float) -> tuple:
    return (
        -score,
        AUTHORITIES.index(intervention.authority),
        tuple(FIELDS.index(f) for f in intervention.targets),
        SURFACES.index(intervention.surface),
    )


def select_intervention(
    candidates: list[Intervention],
    control: ControlState,
    locks: LockSet,
    store: CalibrationStore,
    cfg: ControllerConfig = ControllerConfig(),
) -> Intervention:
    """Filter the safe set, rank, and return the winner.

    Anything targeting a locked field is out regardless of score, as is any
    authority beyond the policy cap.  Ties break toward lower authority,
    then field order, then surface order.
    """
    max_rank = AUTHORITIES.index(cfg.max_authority)
    safe = [
        c
        for c in candidates
        if AUTHORITIES.index(c.authority) <= max_rank
        and not any(locks.is_locked(f) or control.locked.get(f, False) for f in c.targets)
    ]
    if not safe:
        raise NoExecutableCandidate("no intervention passes lock and policy filters")
    ranked = sorted(safe, key=lambda c: _sort_key(c, score_intervention(c, control, store, cfg)))
    return ranked[0]


def update_calibration(
    store: CalibrationStore, trace, cfg: ControllerConfig = ControllerConfig()
) -> CalibrationStore:
    """Fold one executed trace into the store.

    Accepts bump the accept and non-override counts, edits of a machine
    proposal count as accepted-then-overridden, rejects and timeouts count
    against acceptance.  Any observed latency feeds the cost EMA.
    """
    intervention = trace.intervention
    key = store.key_for(intervention)
    entry = store.entries.get(key, CalibrationEntry())

    accepts, rejects = entry.accepts, entry.rejects
    overrides, non_overrides = entry.overrides, entry.non_overrides
    kind = trace.response.kind if trace.response is not None else None
    if intervention.payload:
        if kind == "accept":
            accepts += 1
            non_overrides += 1
        elif kind == "edit":
            accepts += 1
            overrides += 1
        elif kind in ("reject", "timeout"):
            rejects += 1

    cost_ema = entry.cost_ema
    latency = trace.response.latency if trace.response is not None else None
    if latency is not None:
        decay = cfg.cost_ema_decay
        cost_ema = latency if cost_ema is None else decay * cost_ema + (1.0 - decay) * latency

    entries = dict(store.entries)
    entries[key] = CalibrationEntry(
        accepts=accepts,
        rejects=rejects,
        overrides=overrides,
        non_overrides=non_overrides,
        cost_ema=cost_ema,
    )
    return CalibrationStore(entries)
