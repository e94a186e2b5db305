"""Phase-aware onset localization from hand-motion evidence.

The pipeline turns a hand track and an event window into a prior over the
functional-contact onset: a coarse verb hypothesis picks a phase family,
the family's template ratio pins a target location, candidate onsets are
harvested from the motion trace (boundary starts, peaks, valleys, stable
runs), scored for phase compatibility, proximity, motion shape, and local
support, and the winner is wrapped in a frame band with a reliability
score.  When coverage, handedness purity, or reliability is too low the
pipeline abstains by returning None; the prior never writes event state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .completion import Adapter, assemble_representation
from .config import OnsetPriorConfig
from .events import EventState, HandloopError, Ontology, new_event_state
from .ingest import FeatureTable, HandTrack

CANDIDATE_FAMILIES = ("boundary", "peak", "valley", "stab")


class WindowEmpty(HandloopError):
    pass


class NoTrackData(HandloopError):
    pass


class NoCandidates(HandloopError):
    pass


@dataclass(frozen=True)
class SemanticPrior:
    """Coarse verb hypothesis driving the phase-aware search."""

    verb: str
    family: str
    template_ratio: float
    confidence: float


@dataclass(frozen=True)
class OnsetCandidate:
    t: int
    family: str
    support: int
    #: frames spanned by the supporting pattern (run, rise/fall flanks)
    run: tuple[int, int]
    score: float = 0.0


@dataclass(frozen=True)
class OnsetPrior:
    onset: int
    band: tuple[int, int]
    reliability: float
    semantic: Optional[SemanticPrior] = None


@dataclass(frozen=True)
class Selection:
    candidate: OnsetCandidate
    #: score gap to the runner-up; 1.0 by convention for a lone candidate
    margin: float
    #: fraction of neighborhood frames with track data
    local_support: float
    #: min-max normalized best score over the candidate set
    score_norm: float
    scored: tuple[OnsetCandidate, ...]


def coarse_semantic_prior(
    features: FeatureTable,
    window: tuple[int, int],
    adapter: Adapter,
    ontology: Ontology,
    state: Optional[EventState] = None,
    hand: str = "Left",
) -> SemanticPrior:
    """Unguided verb hypothesis: adapter run with the onset band zeroed."""
    t_s, t_e = window
    if t_e < t_s or t_s < 0:
        raise WindowEmpty(f"invalid window {window}")
    if state is None:
        state = new_event_state(hand, t_s, t_e)
    rep = assemble_representation(state, None, features, ontology)
    bundle = adapter.forward(rep)
    probs = _softmax(np.asarray(bundle.verb_scores, dtype=float))
    idx = int(np.argmax(probs))  # first max wins: lowest verb index on ties
    verb = ontology.verbs[idx]
    family = ontology.phase_family[verb]
    return SemanticPrior(
        verb=verb,
        family=family,
        template_ratio=float(ontology.family_template_ratio[family]),
        confidence=float(probs[idx]),
    )


def template_target(window: tuple[int, int], ratio: float) -> int:
    """Template location t_s + ratio * (t_e - t_s), clamped into the window."""
    if not (0.0 <= ratio <= 1.0):
        raise ValueError(f"template ratio {ratio} outside [0, 1]")
    t_s, t_e = window
    target = t_s + math.floor(ratio * (t_e - t_s) + 0.5)
    return min(max(target, t_s), t_e)


def generate_candidates(
    track: HandTrack, window: tuple[int, int], cfg: OnsetPriorConfig = OnsetPriorConfig()
) -> list[OnsetCandidate]:
    """Harvest onset candidates from the in-window motion trace.

    Families: window boundaries, strict local motion maxima, strict local
    minima below the window median, and starts of maximal low-variation
    runs of at least ``run_len`` frames.  The variation threshold is
    relative to the window motion range, so candidate sets are invariant
    to positive rescaling of the motion trace.
    """
    frames = track.frames_in(window)
    if not frames:
        raise NoTrackData(f"track has no frames inside window {window}")
    t_s, t_e = window
    ts = [f.t for f in frames]
    ms = [f.motion for f in frames]
    n = len(frames)
    present = set(ts)

    out: dict[tuple[int, str], OnsetCandidate] = {}

    def emit(t: int, family: str, support: int, run: tuple[int, int]) -> None:
        key = (t, family)
        if key not in out:
            out[key] = OnsetCandidate(t=t, family=family, support=support, run=run)

    radius = cfg.neighborhood_radius
    for edge in (t_s, t_e):
        near = sum(1 for t in range(edge - radius, edge + radius + 1) if t in present)
        emit(edge, "boundary", near, (edge, edge))

    median = float(np.median(ms))
    for i in range(1, n - 1):
        if ms[i - 1] < ms[i] > ms[i + 1]:
            left = _flank(ms, i, -1, rising_toward=True)
            right = _flank(ms, i, +1, rising_toward=True)
            emit(ts[i], "peak", left + right, (ts[i - left], ts[i + right]))
        elif ms[i - 1] > ms[i] < ms[i + 1] and ms[i] < median:
            left = _flank(ms, i, -1, rising_toward=False)
            right = _flank(ms, i, +1, rising_toward=False)
            emit(ts[i], "valley", left + right, (ts[i - left], ts[i + right]))

    threshold = cfg.stability_eps * (max(ms) - min(ms))
    j = 0
    while j < n:
        k = j
        while k + 1 < n and abs(ms[k + 1] - ms[k]) <= threshold:
            k += 1
        if k - j + 1 >= cfg.run_len:
            emit(ts[j], "stab", k - j + 1, (ts[j], ts[k]))
        j = k + 1

    return sorted(out.values(), key=lambda c: (c.t, CANDIDATE_FAMILIES.index(c.family)))


def _flank(ms: Sequence[float], i: int, step: int, rising_toward: bool) -> int:
    """Length of the monotone approach to an extremum at index i.

    Walks outward in direction ``step`` while the trace keeps falling away
    from a peak (``rising_toward``) or climbing away from a valley.
    """
    count = 0
    j = i
    while True:
        nxt = j + step
        if nxt < 0 or nxt >= len(ms):
            break
        outward_ok = ms[nxt] < ms[j] if rising_toward else ms[nxt] > ms[j]
        if not outward_ok:
            break
        count += 1
        j = nxt
    return count


def score_candidate(
    c: OnsetCandidate,
    prior: SemanticPrior,
    target: int,
    track: HandTrack,
    window: tuple[int, int],
    cfg: OnsetPriorConfig = OnsetPriorConfig(),
) -> float:
    """Combined candidate score.

    phase-compatibility + Gaussian proximity to the template target +
    family-shaped motion evidence + saturating support count.
    """
    t_s, t_e = window
    if not (t_s <= c.t <= t_e):
        raise ValueError(f"candidate frame {c.t} outside window {window}")
    compat = cfg.compat.get(prior.family, {}).get(c.family, cfg.compat_default)

    width = max(t_e - t_s, 1)
    sigma = cfg.beta * width
    prox = math.exp(-((c.t - target) ** 2) / (2.0 * sigma * sigma))

    motion = _motion_level(track, c.t, window)
    motion_term = motion if c.family == "peak" else 1.0 - motion

    supp = min(c.support, cfg.s_max) / cfg.s_max

    return (
        cfg.w_phase * compat
        + cfg.w_prox * prox
        + cfg.w_motion * motion_term
        + cfg.w_supp * supp
    )


def _motion_level(track: HandTrack, t: int, window: tuple[int, int]) -> float:
    """Min-max normalized motion at the in-window frame nearest to t."""
    frames = track.frames_in(window)
    if not frames:
        return 0.5
    ms = [f.motion for f in frames]
    lo, hi = min(ms), max(ms)
    if hi == lo:
        return 0.5
    nearest = min(frames, key=lambda f: (abs(f.t - t), f.t))
    return (nearest.motion - lo) / (hi - lo)


def select_onset(
    candidates: Sequence[OnsetCandidate],
    prior: SemanticPrior,
    target: int,
    track: HandTrack,
    window: tuple[int, int],
    cfg: OnsetPriorConfig = OnsetPriorConfig(),
) -> Selection:
    """Argmax of the candidate score; ties break to the earlier frame, then
    to the family order boundary < peak < valley < stab."""
    if not candidates:
        raise NoCandidates("no onset candidates to select from")
    scored = tuple(
        OnsetCandidate(c.t, c.family, c.support, c.run, score_candidate(c, prior, target, track, window, cfg))
        for c in candidates
    )
    ranked = sorted(scored, key=lambda c: (-c.score, c.t, CANDIDATE_FAMILIES.index(c.family)))
    best = ranked[0]
    if len(ranked) == 1:
        margin = 1.0
    else:
        margin = best.score - ranked[1].score

    scores = [c.score for c in scored]
    lo, hi = min(scores), max(scores)
    score_norm = 1.0 if hi == lo else (best.score - lo) / (hi - lo)

    t_s, t_e = window
    radius = cfg.neighborhood_radius
    neighborhood = [t for t in range(best.t - radius, best.t + radius + 1) if t_s <= t <= t_e]
    present = {f.t for f in track.frames_in(window)}
    local = sum(1 for t in neighborhood if t in present) / len(neighborhood)

    return Selection(
        candidate=best,
        margin=margin,
        local_support=local,
        score_norm=score_norm,
        scored=scored,
    )


def reliability(
    evidence: float,
    score_norm: float,
    margin: float,
    local_support: float,
    cfg: OnsetPriorConfig = OnsetPriorConfig(),
) -> float:
    """Convex mix of evidence quality, score level, margin, and support."""
    kappa = (
        cfg.u_nu * evidence
        + cfg.u_score * score_norm
        + cfg.u_margin * _clamp01(margin)
        + cfg.u_support * local_support
    )
    return _clamp01(kappa)


def motion_dominance(
    track: HandTrack, other: Optional[HandTrack], window: tuple[int, int]
) -> float:
    """Share of mean motion carried by the selected hand; 0.5 when both idle."""
    own = track.mean_motion(window)
    rival = other.mean_motion(window) if other is not None else 0.0
    total = own + rival
    if total == 0.0:
        return 0.5
    return own / total


def hand_onset_prior(
    track: HandTrack,
    window: tuple[int, int],
    features: FeatureTable,
    adapter: Adapter,
    ontology: Ontology,
    cfg: OnsetPriorConfig = OnsetPriorConfig(),
    other_track: Optional[HandTrack] = None,
    state: Optional[EventState] = None,
) -> Optional[OnsetPrior]:
    """Full onset-prior pipeline; returns None when it abstains.

    Abstention happens exactly when coverage < c_min, handedness purity
    < h_min, or reliability < kappa_min.
    """
    coverage = track.coverage(window)
    if coverage < cfg.c_min:
        return None
    purity = track.handedness_purity(window)
    if purity < cfg.h_min:
        return None

    semantic = coarse_semantic_prior(features, window, adapter, ontology, state=state, hand=track.hand)
    target = template_target(window, semantic.template_ratio)
    candidates = generate_candidates(track, window, cfg)
    sel = select_onset(candidates, semantic, target, track, window, cfg)

    evidence = float(
        np.mean([coverage, motion_dominance(track, other_track, window), semantic.confidence, purity])
    )
    kappa = reliability(evidence, sel.score_norm, sel.margin, sel.local_support, cfg)
    if kappa < cfg.kappa_min:
        return None

    t_s, t_e = window
    best = sel.candidate
    lo = min(best.t - cfg.band_radius, best.run[0])
    hi = max(best.t + cfg.band_radius, best.run[1])
    band = (max(lo, t_s), min(hi, t_e))
    return OnsetPrior(onset=best.t, band=band, reliability=kappa, semantic=semantic)


def _softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - np.max(x)
    e = np.exp(shifted)
    return e / e.sum()


def _clamp01(x: float) -> float:
    return min(max(x, 0.0), 1.0)
