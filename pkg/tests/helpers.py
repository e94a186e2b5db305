"""Shared randomized-instance builders and independent oracles.

The decode oracle re-derives probabilities and joint scores from first
principles with plain Python loops, so the tensorized implementation is
checked against an independent route.
"""

import math

import numpy as np

from handloop.completion import ScoreBundle
from handloop.events import NO_NOUN, LockSet, Ontology
from handloop.ingest import EventRecord, StatisticsBundle, build_statistics

PHASES = ("boundary", "early", "mid", "late")


def random_small_ontology(rng: np.random.Generator, max_verbs: int = 5, max_nouns: int = 5) -> Ontology:
    n_verbs = int(rng.integers(1, max_verbs + 1))
    n_nouns = int(rng.integers(1, max_nouns + 1))
    verbs = tuple(f"v{i}" for i in range(n_verbs))
    nouns = tuple(f"n{i}" for i in range(n_nouns))
    valid_pairs = {}
    noun_required = {}
    phase_family = {}
    for v in verbs:
        k = int(rng.integers(0, n_nouns + 1))
        chosen = frozenset(rng.choice(nouns, size=k, replace=False).tolist()) if k else frozenset()
        valid_pairs[v] = chosen
        noun_required[v] = bool(rng.random() < 0.5) and bool(chosen)
        phase_family[v] = PHASES[int(rng.integers(0, 4))]
    return Ontology(
        verbs=verbs,
        nouns=nouns,
        valid_pairs=valid_pairs,
        noun_required=noun_required,
        phase_family=phase_family,
        family_template_ratio={"boundary": 0.0, "early": 0.25, "mid": 0.5, "late": 0.85},
    )


def random_feasible_events(rng: np.random.Generator, ontology: Ontology, count: int = 6) -> list[EventRecord]:
    events = []
    attempts = 0
    while len(events) < count and attempts < count * 40:
        attempts += 1
        v = str(rng.choice(ontology.verbs))
        options = sorted(ontology.valid_pairs.get(v, frozenset()))
        if ontology.noun_required.get(v, False):
            n = str(rng.choice(options))
        elif options and rng.random() < 0.5:
            n = str(rng.choice(options))
        else:
            n = NO_NOUN
        t_s = int(rng.integers(0, 30))
        t_e = t_s + int(rng.integers(0, 40))
        t_o = int(rng.integers(t_s, t_e + 1))
        events.append(EventRecord("Left", t_s, t_o, t_e, v, n))
    return events


def random_stats(rng: np.random.Generator, ontology: Ontology, bins: int = 10) -> StatisticsBundle:
    events = random_feasible_events(rng, ontology)
    if not events:
        # pathological ontology (all verbs nounless and rng unlucky); force one
        v = ontology.verbs[0]
        events = [EventRecord("Left", 0, 0, 5, v, NO_NOUN if ontology.allows_no_noun(v) else sorted(ontology.valid_pairs[v])[0])]
    return build_statistics(events, ontology, bins=bins)


def random_bundle(rng: np.random.Generator, window: tuple[int, int], n_verbs: int, n_nouns: int) -> ScoreBundle:
    w = window[1] - window[0] + 1
    return ScoreBundle(
        mu=float(rng.uniform(0, 1)),
        var=float(rng.uniform(0.05, 2.0)),
        onset_scores=rng.normal(0, 3, size=w),
        verb_scores=rng.normal(0, 3, size=n_verbs),
        b_scores=rng.normal(0, 3, size=2),
        noun_scores=rng.normal(0, 3, size=n_nouns),
        window=window,
    )


def feasible_assignments(ontology: Ontology, window: tuple[int, int]):
    """All (t, v, b, n) tuples allowed by the ontology, lock-free."""
    out = []
    for t in range(window[0], window[1] + 1):
        for v in ontology.verbs:
            for n in ontology.nouns:
                if ontology.pair_valid(v, n):
                    out.append((t, v, 1, n))
            if ontology.allows_no_noun(v):
                out.append((t, v, 0, NO_NOUN))
    return out


def random_locks(rng: np.random.Generator, ontology: Ontology, window: tuple[int, int]) -> LockSet:
    """Random lock subset guaranteed feasible: lock parts of a feasible pick."""
    choices = feasible_assignments(ontology, window)
    t, v, b, n = choices[int(rng.integers(0, len(choices)))]
    locked = set()
    values = {}
    if rng.random() < 0.4:
        locked.add("t_o")
        values["t_o"] = t
    if rng.random() < 0.4:
        locked.add("v")
        values["v"] = v
    if rng.random() < 0.3:
        locked.add("b")
        values["b"] = b
    if rng.random() < 0.3:
        locked.add("n")
        values["n"] = n
        locked.add("b")
        values["b"] = b
    return LockSet(frozenset(locked), values)


def make_behavior_log(
    accepts: int = 95,
    reworks: int = 172,
    rejects: int = 248,
    confirm_ops: int = 169,
    manual_ops: int = 180,
):
    """Synthetic trace log with prescribed behavioral counts.

    Suggestions are machine-payload suggestion cards (accepted, reworked,
    or rejected); confirm_ops are human-confirm promotions of existing
    values (no new machine proposal); manual_ops are direct human_only
    entries.  Each trace gets its own event index so no cross-trace
    correction coupling appears.
    """
    from handloop.controller import Intervention
    from handloop.loop import AnnotatorResponse, TraceRecord

    traces = []
    step = 0

    def add(intervention, response):
        nonlocal step
        traces.append(
            TraceRecord(
                step=step,
                session_id="tableii",
                event_index=step,
                intervention_id=f"tableii-{step}",
                intervention=intervention,
                response=response,
                diffs=(),
                config_hash="cfg",
                at=float(step),
            )
        )
        step += 1

    card = lambda: Intervention(
        targets=("v",), surface="suggestion_card", authority="human_confirm", payload={"v": "grasp"}
    )
    confirm = lambda: Intervention(
        targets=("t_s", "t_e"),
        surface="timeline_query",
        authority="human_confirm",
        payload={"t_s": 0, "t_e": 10},
    )
    query = lambda: Intervention(targets=("n",), surface="choice_prompt", authority="human_only")

    for _ in range(accepts):
        add(card(), AnnotatorResponse("accept", latency=1.0))
    for _ in range(reworks):
        add(card(), AnnotatorResponse("edit", values={"v": "insert"}, latency=2.0))
    for _ in range(rejects):
        add(card(), AnnotatorResponse("reject", latency=0.5))
    for _ in range(confirm_ops):
        add(confirm(), AnnotatorResponse("accept", latency=0.5))
    for _ in range(manual_ops):
        add(query(), AnnotatorResponse("manual_entry", values={"n": "bolt"}, latency=3.0))
    return traces


def _softmax_list(xs):
    m = max(xs)
    es = [math.exp(x - m) for x in xs]
    z = sum(es)
    return [e / z for e in es]


def oracle_decode(bundle: ScoreBundle, locks: LockSet, ontology: Ontology, stats: StatisticsBundle):
    """Exhaustive enumeration of the joint score; returns (t, v, b, n, score)
    or None when no assignment is feasible.  First strict maximum in
    (t, verb, noun-slot, then no-noun) order wins, mirroring the documented
    tie-break."""
    t_s, t_e = bundle.window
    p_o = _softmax_list(list(bundle.onset_scores))
    if not bundle.refined:
        tilted = []
        for i, t in enumerate(range(t_s, t_e + 1)):
            pos = 0.0 if t_e == t_s else (t - t_s) / (t_e - t_s)
            tilted.append(p_o[i] * math.exp(-((pos - bundle.mu) ** 2) / (2 * bundle.var)))
        z = sum(tilted)
        p_o = [x / z for x in tilted]
    p_v = _softmax_list(list(bundle.verb_scores))
    p_b = _softmax_list(list(bundle.b_scores))
    p_n = _softmax_list(list(bundle.noun_scores))

    best = None
    for i, t in enumerate(range(t_s, t_e + 1)):
        if locks.is_locked("t_o") and locks.value("t_o") != t:
            continue
        pos = 0.0 if t_e == t_s else (t - t_s) / (t_e - t_s)
        bin_i = min(int(pos * stats.bins), stats.bins - 1)
        for vi, v in enumerate(ontology.verbs):
            if locks.is_locked("v") and locks.value("v") != v:
                continue
            head = math.log(p_o[i]) + math.log(p_v[vi]) + math.log(stats.verb_onset_prior[v][bin_i])
            options = []
            for ni, n in enumerate(ontology.nouns):
                if not ontology.pair_valid(v, n):
                    continue
                options.append(
                    (1, n, math.log(p_b[1]) + math.log(p_n[ni]) + math.log(stats.cooccurrence[v][n]))
                )
            if ontology.allows_no_noun(v):
                options.append((0, NO_NOUN, math.log(p_b[0]) + math.log(stats.no_noun_rate[v])))
            for b, n, tail in options:
                if locks.is_locked("b") and locks.value("b") != b:
                    continue
                if locks.is_locked("n") and locks.value("n") != n:
                    continue
                score = head + tail
                if best is None or score > best[4]:
                    best = (t, v, b, n, score)
    return best
