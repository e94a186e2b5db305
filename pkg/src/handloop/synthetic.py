"""Synthetic clips, corpora, adapter substitutes, and scripted responders.

Everything here is deterministic under a seed.  The generated world is
deliberately small: a five-verb assembly ontology, tent-shaped motion
traces peaking at the true onset, and balanced statistics so priors stay
near uniform and cannot overrule a confident adapter.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .completion import ScoreBundle
from .events import NO_NOUN, Ontology
from .ingest import (
    EventRecord,
    FeatureTable,
    HandFrameState,
    HandTrack,
    build_statistics,
    save_events,
    save_features,
    save_hand_tracks,
    save_ontology,
    save_statistics,
)
from .loop import AnnotatorResponse, ClipInputs, Intervention, StepContext


def make_demo_ontology() -> Ontology:
    return Ontology(
        verbs=("grasp", "insert", "hold", "release", "tighten"),
        nouns=("bolt", "screw", "panel", "wrench", "block"),
        valid_pairs={
            "grasp": frozenset({"bolt", "screw", "wrench"}),
            "insert": frozenset({"bolt", "screw"}),
            "hold": frozenset({"panel", "block"}),
            "release": frozenset({"bolt", "panel"}),
            "tighten": frozenset({"screw", "wrench"}),
        },
        noun_required={
            "grasp": True,
            "insert": True,
            "hold": False,
            "release": False,
            "tighten": True,
        },
        phase_family={
            "grasp": "early",
            "insert": "mid",
            "hold": "boundary",
            "release": "late",
            "tighten": "mid",
        },
        family_template_ratio={"boundary": 0.0, "early": 0.25, "mid": 0.5, "late": 0.85},
    )


def balanced_corpus(ontology: Ontology, per_pair: int = 4, bins: int = 10) -> list[EventRecord]:
    """Training corpus with near-uniform pair and onset-bin statistics."""
    events = []
    counter = 0
    for v in ontology.verbs:
        outcomes = sorted(ontology.valid_pairs.get(v, frozenset()))
        if ontology.allows_no_noun(v):
            outcomes = outcomes + [NO_NOUN]
        for n in outcomes:
            for _ in range(per_pair):
                pos = (counter % bins + 0.5) / bins
                t_s, t_e = 0, 100
                t_o = round(t_s + pos * (t_e - t_s))
                events.append(EventRecord("Left", t_s, t_o, t_e, v, n))
                counter += 1
    return events


def _tent_motion(length: int, peak_at: int, base: float = 1.0, height: float = 4.0) -> list[float]:
    """Motion trace rising linearly to a single peak, then falling."""
    span = max(length - 1, 1)
    return [base + height * (1.0 - abs(i - peak_at) / span) for i in range(length)]


@dataclass(frozen=True)
class SyntheticClip:
    clip: ClipInputs
    references: list[EventRecord]


def synth_clip(
    ontology: Optional[Ontology] = None,
    n_events: int = 5,
    seed: int = 0,
    span_len: int = 24,
    gap: int = 6,
    feature_dim: int = 8,
    clip_id: str = "synthetic",
) -> SyntheticClip:
    """A clip with alternating-hand events, onset-peaked motion, and
    balanced statistics; references are the ground truth per span."""
    ontology = ontology or make_demo_ontology()
    rng = np.random.default_rng(seed)
    combos = []
    for v in ontology.verbs:
        for n in sorted(ontology.valid_pairs.get(v, frozenset())):
            combos.append((v, n))
        if ontology.allows_no_noun(v):
            combos.append((v, NO_NOUN))

    references = []
    spans = []
    frames_per_hand: dict[str, list[HandFrameState]] = {"Left": [], "Right": []}
    cursor = 0
    for i in range(n_events):
        hand = "Left" if i % 2 == 0 else "Right"
        t_s = cursor
        t_e = t_s + span_len
        offset = int(rng.integers(6, span_len - 5))
        t_o = t_s + offset
        v, n = combos[int(rng.integers(0, len(combos)))]
        references.append(EventRecord(hand, t_s, t_o, t_e, v, n))
        spans.append((hand, t_s, t_e))
        motion = _tent_motion(span_len + 1, offset)
        for j, m in enumerate(motion):
            t = t_s + j
            frames_per_hand[hand].append(
                HandFrameState(
                    t=t,
                    box=(8.0, 8.0, 24.0, 24.0),
                    center=(20.0, 20.0),
                    area=576.0,
                    motion=float(m),
                    handedness=0.95,
                )
            )
        cursor = t_e + gap

    frame_count = cursor + gap
    tracks = {
        hand: HandTrack(hand=hand, frames=tuple(frames))
        for hand, frames in frames_per_hand.items()
        if frames
    }
    features = FeatureTable(
        clip_id=clip_id,
        vectors=rng.normal(0, 1, size=(frame_count, feature_dim)).astype("float32"),
    )
    statistics = build_statistics(balanced_corpus(ontology), ontology, bins=10)
    clip = ClipInputs(
        clip_id=clip_id,
        ontology=ontology,
        tracks=tracks,
        features=features,
        spans=spans,
        statistics=statistics,
    )
    return SyntheticClip(clip=clip, references=references)


def write_clip_assets(
    directory: str | Path, synthetic: SyntheticClip, include_scores: bool = True
) -> dict[str, Path]:
    """Write every asset file of a synthetic clip; returns the path map.

    With ``include_scores`` a precomputed per-event score file derived from
    the references is written, so sessions on this clip run with a
    confident adapter substitute.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    clip = synthetic.clip
    paths = {
        "tracks": directory / "tracks.jsonl",
        "features": directory / "features.lfho",
        "ontology": directory / "ontology.json",
        "statistics": directory / "statistics.json",
        "references": directory / "references.jsonl",
        "spans": directory / "spans.jsonl",
    }
    save_hand_tracks(clip.tracks.values(), paths["tracks"])
    save_features(clip.features, paths["features"])
    save_ontology(clip.ontology, paths["ontology"])
    save_statistics(clip.statistics, paths["statistics"])
    save_events(synthetic.references, paths["references"])
    import json

    paths["spans"].write_text(
        "\n".join(json.dumps({"hand": h, "t_s": s, "t_e": e}) for h, s, e in clip.spans) + "\n",
        encoding="utf-8",
    )
    if include_scores:
        paths["scores"] = directory / "scores.jsonl"
        write_reference_scores(paths["scores"], synthetic)
    return paths


def write_reference_scores(path: str | Path, synthetic: SyntheticClip) -> None:
    """Precompute one confident score bundle per reference event."""
    from .completion import EventRepresentation, RepresentationLayout, ScoreFileAdapter

    clip = synthetic.clip
    adapter = PerfectAdapter(synthetic.references, clip.ontology)
    layout = RepresentationLayout(
        n_verbs=len(clip.ontology.verbs),
        n_nouns=len(clip.ontology.nouns),
        feature_dim=clip.features.dim,
    )
    bundles, hands = [], []
    for ref in synthetic.references:
        rep = EventRepresentation(
            vector=np.zeros(layout.size),
            layout=layout,
            window=(ref.t_s, ref.t_e),
            hand=ref.hand,
            clip_id=clip.clip_id,
            clip_len=clip.features.frame_count,
        )
        bundles.append(adapter.forward(rep))
        hands.append(ref.hand)
    ScoreFileAdapter.save(bundles, hands, path)


# ---------------------------------------------------------------------------
# Adapter substitutes with known behavior


class _ReferenceKeyedAdapter:
    def __init__(self, references: Sequence[EventRecord], ontology: Ontology):
        self.ontology = ontology
        self.by_key = {(r.hand, r.t_s, r.t_e): r for r in references}

    def _lookup(self, rep) -> EventRecord:
        key = (rep.hand, rep.window[0], rep.window[1])
        if key not in self.by_key:
            raise KeyError(f"no reference for event {key}")
        return self.by_key[key]


class PerfectAdapter(_ReferenceKeyedAdapter):
    """Emits near-one-hot scores on the ground truth of every event."""

    GAP = 60.0

    def forward(self, rep) -> ScoreBundle:
        ref = self._lookup(rep)
        t_s, t_e = rep.window
        w = t_e - t_s + 1
        onset = np.zeros(w)
        onset[ref.t_o - t_s] = self.GAP
        verbs = np.zeros(len(self.ontology.verbs))
        verbs[self.ontology.verb_index(ref.v)] = self.GAP
        b_scores = np.zeros(2)
        b_scores[ref.b] = self.GAP
        nouns = np.zeros(len(self.ontology.nouns))
        if ref.b == 1:
            nouns[self.ontology.noun_index(ref.n)] = self.GAP
        pos = 0.0 if t_e == t_s else (ref.t_o - t_s) / (t_e - t_s)
        return ScoreBundle(
            mu=pos,
            var=0.05,
            onset_scores=onset,
            verb_scores=verbs,
            b_scores=b_scores,
            noun_scores=nouns,
            window=rep.window,
        )


class AdversarialAdapter(_ReferenceKeyedAdapter):
    """Confidently wrong on every checked field, staying ontology-feasible.

    Before the verb is resolved it promotes a jointly consistent wrong
    tuple (shifted onset, wrong verb, a noun valid for that wrong verb),
    so statistics refinement cannot resurrect the truth through the noun's
    cooccurrence column.  Once the representation shows a confirmed verb
    (which the oracle will have corrected to gold), it switches to
    promoting a wrong noun that is valid for the gold verb, keeping the
    noun prediction wrong under the verb lock.
    """

    GAP = 60.0

    def __init__(self, references, ontology, onset_shift: int = 8):
        super().__init__(references, ontology)
        self.onset_shift = onset_shift

    def _verb_confirmed(self, rep) -> bool:
        from .events import FIELDS

        slot = rep.layout.status_offset + 3 * FIELDS.index("v") + 2
        return rep.vector[slot] == 1.0

    def _wrong_verb_and_noun(self, ref: EventRecord) -> tuple[str, str]:
        verbs = self.ontology.verbs
        wrong_v = verbs[(self.ontology.verb_index(ref.v) + 1) % len(verbs)]
        options = sorted(self.ontology.valid_pairs[wrong_v])
        gold_valid = self.ontology.valid_pairs.get(ref.v, frozenset())
        outside = [n for n in options if n not in gold_valid]
        return wrong_v, (outside[0] if outside else options[0])

    def forward(self, rep) -> ScoreBundle:
        ref = self._lookup(rep)
        t_s, t_e = rep.window
        w = t_e - t_s + 1

        wrong_t = ref.t_o + self.onset_shift
        if wrong_t > t_e:
            wrong_t = ref.t_o - self.onset_shift
        onset = np.zeros(w)
        lo = max(ref.t_o - 5, t_s)
        hi = min(ref.t_o + 5, t_e)
        onset[lo - t_s : hi - t_s + 1] = -self.GAP
        onset[wrong_t - t_s] = self.GAP

        verbs = np.zeros(len(self.ontology.verbs))
        nouns = np.zeros(len(self.ontology.nouns))
        b_scores = np.array([-self.GAP, self.GAP])  # always push a real noun

        if self._verb_confirmed(rep):
            # verb is locked to gold by now: promote a wrong noun that is
            # valid for the gold verb
            wrong_nouns = [
                n for n in sorted(self.ontology.valid_pairs[ref.v]) if n != ref.n
            ]
            nouns[self.ontology.noun_index(wrong_nouns[0])] = self.GAP
            if ref.b == 1:
                nouns[self.ontology.noun_index(ref.n)] = -self.GAP
        else:
            wrong_v, wrong_n = self._wrong_verb_and_noun(ref)
            verbs[self.ontology.verb_index(ref.v)] = -self.GAP
            verbs[self.ontology.verb_index(wrong_v)] = self.GAP
            nouns[self.ontology.noun_index(wrong_n)] = self.GAP
            if ref.b == 1:
                nouns[self.ontology.noun_index(ref.n)] = -self.GAP

        pos = 0.0 if t_e == t_s else (wrong_t - t_s) / (t_e - t_s)
        return ScoreBundle(
            mu=pos,
            var=1.0,
            onset_scores=onset,
            verb_scores=verbs,
            b_scores=b_scores,
            noun_scores=nouns,
            window=rep.window,
        )


# ---------------------------------------------------------------------------
# Scripted responders


def make_accept_all(latency: float = 1.0):
    """Accepts every proposal; answers direct queries with the decoded
    hypothesis values (what a trusting annotator reads off the screen)."""

    def respond(intervention: Intervention, context: StepContext) -> AnnotatorResponse:
        if intervention.payload:
            return AnnotatorResponse("accept", latency=latency)
        values = {}
        for f in intervention.targets:
            if context.hypothesis is not None and f in ("t_o", "v", "n"):
                values[f] = getattr(context.hypothesis, f if f != "t_o" else "t_o")
            else:
                values[f] = context.state.values.get(f)
        return AnnotatorResponse("manual_entry", values=values, latency=latency)

    return respond


def make_reject_then_save(max_rejects: int = 10, latency: float = 0.5):
    """Rejects everything and eventually signals save (returns None)."""
    seen = {"count": 0}

    def respond(intervention: Intervention, context: StepContext) -> Optional[AnnotatorResponse]:
        seen["count"] += 1
        if seen["count"] > max_rejects:
            return None
        return AnnotatorResponse("reject", latency=latency)

    return respond


def make_manual_entry_responder(references: Sequence[EventRecord], latency: float = 2.0):
    """Answers every intervention with ground-truth manual entry; rejects
    machine proposals.  Models the all-manual annotator."""

    def respond(intervention: Intervention, context: StepContext) -> AnnotatorResponse:
        ref = references[context.event_index]
        if intervention.authority == "human_confirm" and intervention.surface == "suggestion_card":
            return AnnotatorResponse("reject", latency=latency)
        values = {}
        for f in intervention.targets:
            values[f] = getattr(ref, f) if f != "n" else ref.n
        if intervention.payload and not values:
            return AnnotatorResponse("accept", latency=latency)
        if intervention.authority == "human_confirm":
            # span confirmation or bundled suggestion: correct it outright
            return AnnotatorResponse("edit", values=values, latency=latency)
        return AnnotatorResponse("manual_entry", values=values, latency=latency)

    return respond
