"""File ingestion: hand tracks, features, ontology, statistics, event corpora.

All readers validate into immutable domain objects and are deterministic.
Record-stream files (tracks, events) are line-delimited JSON; the feature
table is a small binary container; ontology and statistics are single JSON
documents.  Schemas:

hand track line   {"hand": str, "t": int, "box": [x, y, w, h],
                   "center": [x, y], "area": float, "motion": float,
                   "handedness": float}
event line        {"hand": str, "t_s": int, "t_o": int, "t_e": int,
                   "v": str, "n": str | null}          (null noun = no noun)
ontology doc      {"verbs": [{"id", "noun_required", "phase_family"}],
                   "nouns": [str], "valid_pairs": [[verb, noun]],
                   "family_template_ratio": {family: ratio}}   (optional key)
statistics doc    mirrors StatisticsBundle, see save_statistics
feature container magic "LFHO", u16 version, u16 dim, u32 frame count,
                  then frame-major float32 rows; all little-endian
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .events import NO_NOUN, HANDS, HandloopError, Ontology, check_validity

FEATURE_MAGIC = b"LFHO"
FEATURE_VERSION = 1

#: default template ratios per phase family, used when the ontology document
#: does not carry its own table
DEFAULT_TEMPLATE_RATIOS = {"boundary": 0.0, "early": 0.25, "mid": 0.5, "late": 0.85}


class ParseError(HandloopError):
    pass


class SchemaError(HandloopError):
    pass


class InvariantError(HandloopError):
    pass


class NormalizationError(HandloopError):
    pass


class EmptyCorpus(HandloopError):
    pass


@dataclass(frozen=True)
class HandFrameState:
    """One frame of hand evidence: box, center, area, motion, handedness."""

    t: int
    box: tuple[float, float, float, float]
    center: tuple[float, float]
    area: float
    motion: float
    handedness: float

    def __post_init__(self) -> None:
        if self.area < 0:
            raise InvariantError(f"frame {self.t}: negative area {self.area}")
        if self.motion < 0:
            raise InvariantError(f"frame {self.t}: negative motion {self.motion}")
        if not (0.0 <= self.handedness <= 1.0):
            raise InvariantError(f"frame {self.t}: handedness {self.handedness} outside [0, 1]")
        x, y, w, h = self.box
        cx, cy = self.center
        if not (x <= cx <= x + w and y <= cy <= y + h):
            raise InvariantError(f"frame {self.t}: center {self.center} outside box {self.box}")


@dataclass(frozen=True)
class HandTrack:
    """Ordered per-frame hand evidence for one declared hand."""

    hand: str
    frames: tuple[HandFrameState, ...]

    def __post_init__(self) -> None:
        if self.hand not in HANDS:
            raise SchemaError(f"unknown hand {self.hand!r}")
        ts = [f.t for f in self.frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise InvariantError(f"hand {self.hand}: frame indices not strictly increasing")

    def frames_in(self, window: tuple[int, int]) -> tuple[HandFrameState, ...]:
        lo, hi = window
        return tuple(f for f in self.frames if lo <= f.t <= hi)

    def coverage(self, window: tuple[int, int]) -> float:
        lo, hi = window
        if hi < lo:
            return 0.0
        return len(self.frames_in(window)) / (hi - lo + 1)

    def handedness_purity(self, window: tuple[int, int]) -> float:
        inside = self.frames_in(window)
        if not inside:
            return 0.0
        return float(np.mean([f.handedness for f in inside]))

    def mean_motion(self, window: tuple[int, int]) -> float:
        inside = self.frames_in(window)
        if not inside:
            return 0.0
        return float(np.mean([f.motion for f in inside]))


@dataclass(frozen=True)
class FeatureTable:
    """Frozen per-frame backbone features plus their global mean pool."""

    clip_id: str
    vectors: np.ndarray  # (frame_count, dim) float32

    def __post_init__(self) -> None:
        if self.vectors.ndim != 2:
            raise SchemaError("feature vectors must be a 2-d array")

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    @property
    def frame_count(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def pooled(self) -> np.ndarray:
        return self.vectors.mean(axis=0)

    def pooled_band(self, band: tuple[int, int]) -> np.ndarray:
        lo, hi = band
        lo = max(0, lo)
        hi = min(self.frame_count - 1, hi)
        if hi < lo:
            raise InvariantError(f"band {band} outside feature table of {self.frame_count} frames")
        return self.vectors[lo : hi + 1].mean(axis=0)


@dataclass(frozen=True)
class StatisticsBundle:
    """Laplace-smoothed interaction statistics.

    Onset priors are histograms over ``bins`` equal slices of the normalized
    onset position (t_o - t_s) / (t_e - t_s); a degenerate span maps to bin 0.
    Per verb, no_noun_rate plus the cooccurrence row sums to one.
    """

    bins: int
    verb_onset_prior: Mapping[str, tuple[float, ...]]
    noun_onset_prior: Mapping[str, tuple[float, ...]]
    cooccurrence: Mapping[str, Mapping[str, float]]
    no_noun_rate: Mapping[str, float]

    def onset_bin(self, t_o: int, window: tuple[int, int]) -> int:
        return onset_bin(t_o, window, self.bins)

    def noun_column(self, noun: str) -> dict[str, float]:
        """Across verbs: cooccurrence mass this noun contributes to each."""
        return {v: row.get(noun, 0.0) for v, row in self.cooccurrence.items()}


def normalized_position(t_o: int, window: tuple[int, int]) -> float:
    t_s, t_e = window
    if t_e == t_s:
        return 0.0
    return (t_o - t_s) / (t_e - t_s)


def onset_bin(t_o: int, window: tuple[int, int], bins: int) -> int:
    pos = normalized_position(t_o, window)
    return min(int(pos * bins), bins - 1)


@dataclass(frozen=True)
class EventRecord:
    """A complete reference event; noun uses the NO_NOUN sentinel for b = 0."""

    hand: str
    t_s: int
    t_o: int
    t_e: int
    v: str
    n: str

    def window(self) -> tuple[int, int]:
        return (self.t_s, self.t_e)

    @property
    def b(self) -> int:
        return 0 if self.n == NO_NOUN else 1


def _read_lines(path: Path) -> list[tuple[int, dict]]:
    rows = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        if not isinstance(doc, dict):
            raise SchemaError(f"{path}:{lineno}: expected an object per line")
        rows.append((lineno, doc))
    return rows


def _field(doc: dict, key: str, kind, where: str):
    if key not in doc:
        raise SchemaError(f"{where}: missing field {key!r}")
    val = doc[key]
    if kind is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if not isinstance(val, kind) or isinstance(val, bool):
        raise SchemaError(f"{where}: field {key!r} has wrong type {type(val).__name__}")
    return val


def load_hand_tracks(path: str | Path) -> list[HandTrack]:
    """Load per-frame hand evidence, one validated track per hand."""
    path = Path(path)
    by_hand: dict[str, list[HandFrameState]] = {}
    for lineno, doc in _read_lines(path):
        where = f"{path}:{lineno}"
        hand = _field(doc, "hand", str, where)
        box = _field(doc, "box", list, where)
        center = _field(doc, "center", list, where)
        if len(box) != 4 or len(center) != 2:
            raise SchemaError(f"{where}: box must have 4 entries, center 2")
        frame = HandFrameState(
            t=_field(doc, "t", int, where),
            box=tuple(float(x) for x in box),
            center=tuple(float(x) for x in center),
            area=_field(doc, "area", float, where),
            motion=_field(doc, "motion", float, where),
            handedness=_field(doc, "handedness", float, where),
        )
        by_hand.setdefault(hand, []).append(frame)
    return [HandTrack(hand=h, frames=tuple(frames)) for h, frames in by_hand.items()]


def save_hand_tracks(tracks: Iterable[HandTrack], path: str | Path) -> None:
    lines = []
    for track in tracks:
        for f in track.frames:
            lines.append(
                json.dumps(
                    {
                        "hand": track.hand,
                        "t": f.t,
                        "box": list(f.box),
                        "center": list(f.center),
                        "area": f.area,
                        "motion": f.motion,
                        "handedness": f.handedness,
                    }
                )
            )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_ontology(path: str | Path) -> Ontology:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    for key in ("verbs", "nouns", "valid_pairs"):
        if key not in doc:
            raise SchemaError(f"{path}: missing key {key!r}")
    verbs, noun_required, phase_family = [], {}, {}
    for entry in doc["verbs"]:
        vid = _field(entry, "id", str, str(path))
        verbs.append(vid)
        nr = entry.get("noun_required")
        if not isinstance(nr, bool):
            raise SchemaError(f"{path}: verb {vid!r} needs boolean noun_required")
        noun_required[vid] = nr
        phase_family[vid] = _field(entry, "phase_family", str, str(path))
    pairs: dict[str, set[str]] = {}
    for pair in doc["valid_pairs"]:
        if not isinstance(pair, list) or len(pair) != 2:
            raise SchemaError(f"{path}: valid_pairs entries must be [verb, noun]")
        pairs.setdefault(pair[0], set()).add(pair[1])
    ratios = dict(DEFAULT_TEMPLATE_RATIOS)
    ratios.update(doc.get("family_template_ratio", {}))
    return Ontology(
        verbs=tuple(verbs),
        nouns=tuple(doc["nouns"]),
        valid_pairs={v: frozenset(ns) for v, ns in pairs.items()},
        noun_required=noun_required,
        phase_family=phase_family,
        family_template_ratio=ratios,
    )


def save_ontology(ontology: Ontology, path: str | Path) -> None:
    doc = {
        "verbs": [
            {
                "id": v,
                "noun_required": bool(ontology.noun_required.get(v, False)),
                "phase_family": ontology.phase_family[v],
            }
            for v in ontology.verbs
        ],
        "nouns": list(ontology.nouns),
        "valid_pairs": sorted([v, n] for v, ns in ontology.valid_pairs.items() for n in ns),
        "family_template_ratio": dict(ontology.family_template_ratio),
    }
    Path(path).write_text(json.dumps(doc, indent=2), encoding="utf-8")


def load_events(path: str | Path, ontology: Optional[Ontology] = None) -> list[EventRecord]:
    """Load complete event records; validates against the ontology if given."""
    path = Path(path)
    events = []
    for lineno, doc in _read_lines(path):
        where = f"{path}:{lineno}"
        n = doc.get("n")
        record = EventRecord(
            hand=_field(doc, "hand", str, where),
            t_s=_field(doc, "t_s", int, where),
            t_o=_field(doc, "t_o", int, where),
            t_e=_field(doc, "t_e", int, where),
            v=_field(doc, "v", str, where),
            n=NO_NOUN if n is None else str(n),
        )
        if not (record.t_s <= record.t_o <= record.t_e):
            raise InvariantError(f"{where}: onset outside span")
        if ontology is not None:
            report = check_validity(
                {"t_s": record.t_s, "t_o": record.t_o, "t_e": record.t_e, "v": record.v, "n": record.n},
                ontology,
            )
            if not report.valid:
                raise InvariantError(f"{where}: {'; '.join(report.violations)}")
        events.append(record)
    return events


def save_events(events: Iterable[EventRecord], path: str | Path) -> None:
    lines = [
        json.dumps(
            {
                "hand": e.hand,
                "t_s": e.t_s,
                "t_o": e.t_o,
                "t_e": e.t_e,
                "v": e.v,
                "n": None if e.n == NO_NOUN else e.n,
            }
        )
        for e in events
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_features(path: str | Path) -> FeatureTable:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != FEATURE_MAGIC:
        raise ParseError(f"{path}: not a feature container (bad magic)")
    version, dim = struct.unpack_from("<HH", raw, 4)
    (frame_count,) = struct.unpack_from("<I", raw, 8)
    if version != FEATURE_VERSION:
        raise SchemaError(f"{path}: unsupported feature container version {version}")
    expected = 12 + 4 * dim * frame_count
    if len(raw) != expected:
        raise ParseError(f"{path}: size {len(raw)} does not match header ({expected} expected)")
    vectors = np.frombuffer(raw, dtype="<f4", offset=12).reshape(frame_count, dim).copy()
    return FeatureTable(clip_id=path.stem, vectors=vectors)


def save_features(table: FeatureTable, path: str | Path) -> None:
    header = FEATURE_MAGIC + struct.pack("<HHI", FEATURE_VERSION, table.dim, table.frame_count)
    body = np.ascontiguousarray(table.vectors, dtype="<f4").tobytes()
    Path(path).write_bytes(header + body)


def _check_histogram(name: str, hist: Sequence[float]) -> tuple[float, ...]:
    total = float(sum(hist))
    if abs(total - 1.0) > 1e-6:
        raise NormalizationError(f"{name}: histogram sums to {total}, expected 1")
    if any(x <= 0.0 for x in hist):
        raise NormalizationError(f"{name}: histogram has non-positive mass")
    return tuple(float(x) for x in hist)


def load_statistics(path: str | Path) -> StatisticsBundle:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    for key in ("bins", "verb_onset_prior", "noun_onset_prior", "cooccurrence", "no_noun_rate"):
        if key not in doc:
            raise SchemaError(f"{path}: missing key {key!r}")
    bins = doc["bins"]
    verb_hists = {v: _check_histogram(f"verb {v}", h) for v, h in doc["verb_onset_prior"].items()}
    noun_hists = {n: _check_histogram(f"noun {n}", h) for n, h in doc["noun_onset_prior"].items()}
    for hists in (verb_hists, noun_hists):
        for key, h in hists.items():
            if len(h) != bins:
                raise SchemaError(f"{path}: histogram for {key!r} has {len(h)} bins, expected {bins}")
    coocc = {v: {n: float(p) for n, p in row.items()} for v, row in doc["cooccurrence"].items()}
    no_noun = {v: float(p) for v, p in doc["no_noun_rate"].items()}
    for v, row in coocc.items():
        total = no_noun.get(v, 0.0) + sum(row.values())
        if abs(total - 1.0) > 1e-6:
            raise NormalizationError(f"verb {v}: no_noun_rate + cooccurrence row sums to {total}")
        if no_noun.get(v, 0.0) <= 0.0 or any(p <= 0.0 for p in row.values()):
            raise NormalizationError(f"verb {v}: non-positive smoothed rate")
    return StatisticsBundle(
        bins=bins,
        verb_onset_prior=verb_hists,
        noun_onset_prior=noun_hists,
        cooccurrence=coocc,
        no_noun_rate=no_noun,
    )


def save_statistics(bundle: StatisticsBundle, path: str | Path) -> None:
    doc = {
        "bins": bundle.bins,
        "verb_onset_prior": {v: list(h) for v, h in sorted(bundle.verb_onset_prior.items())},
        "noun_onset_prior": {n: list(h) for n, h in sorted(bundle.noun_onset_prior.items())},
        "cooccurrence": {v: dict(sorted(row.items())) for v, row in sorted(bundle.cooccurrence.items())},
        "no_noun_rate": dict(sorted(bundle.no_noun_rate.items())),
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")


def build_statistics(events: Sequence[EventRecord], ontology: Ontology, bins: int = 10) -> StatisticsBundle:
    """Estimate smoothed onset, cooccurrence, and no-noun statistics.

    Every probability is add-one smoothed so downstream log-scores stay
    finite: histogram bins over (count + 1) / (total + bins), noun outcomes
    over (count + 1) / (total + nouns + 1) with "no noun" as one outcome.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if not events:
        raise EmptyCorpus("cannot build statistics from an empty corpus")
    for e in events:
        report = check_validity(
            {"t_s": e.t_s, "t_o": e.t_o, "t_e": e.t_e, "v": e.v, "n": e.n}, ontology
        )
        if not report.valid:
            raise InvariantError(f"invalid corpus event {e}: {'; '.join(report.violations)}")

    verb_counts = {v: [0] * bins for v in ontology.verbs}
    noun_counts = {n: [0] * bins for n in ontology.nouns}
    pair_counts = {v: {n: 0 for n in ontology.nouns} for v in ontology.verbs}
    no_noun_counts = {v: 0 for v in ontology.verbs}
    totals = {v: 0 for v in ontology.verbs}

    for e in events:
        b = onset_bin(e.t_o, e.window(), bins)
        verb_counts[e.v][b] += 1
        totals[e.v] += 1
        if e.n == NO_NOUN:
            no_noun_counts[e.v] += 1
        else:
            noun_counts[e.n][b] += 1
            pair_counts[e.v][e.n] += 1

    def smooth_hist(counts: list[int]) -> tuple[float, ...]:
        total = sum(counts) + bins
        return tuple((c + 1) / total for c in counts)

    n_outcomes = len(ontology.nouns) + 1
    cooccurrence = {}
    no_noun_rate = {}
    for v in ontology.verbs:
        denom = totals[v] + n_outcomes
        cooccurrence[v] = {n: (pair_counts[v][n] + 1) / denom for n in ontology.nouns}
        no_noun_rate[v] = (no_noun_counts[v] + 1) / denom

    return StatisticsBundle(
        bins=bins,
        verb_onset_prior={v: smooth_hist(c) for v, c in verb_counts.items()},
        noun_onset_prior={n: smooth_hist(c) for n, c in noun_counts.items()},
        cooccurrence=cooccurrence,
        no_noun_rate=no_noun_rate,
    )
