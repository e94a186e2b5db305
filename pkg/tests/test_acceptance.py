"""Acceptance suite: every exit criterion at its stated tolerance.

Run with `pytest -s tests/test_acceptance.py` to see one PASS/FAIL line
per criterion.  Each criterion is a separate test; the printed line names
the criterion, the measured quantity, and the bound it was held to.
"""

import itertools
import time
from contextlib import contextmanager

import numpy as np
import pytest

from handloop.completion import (
    AdapterParams,
    InfeasibleLocks,
    adapter_loss_and_grads,
    assemble_representation,
    bundle_probabilities,
    decode,
    feedback_redecode,
    refine_scores,
)
from handloop.config import AdapterConfig, EngineConfig, RefineConfig
from handloop.controller import CalibrationStore, Intervention
from handloop.events import (
    FIELDS,
    NO_NOUN,
    FieldStatus,
    LockSet,
    Origin,
    new_event_state,
    set_field,
)
from handloop.loop import (
    AnnotatorResponse,
    execute,
    new_event_state as fresh_state,
    replay,
    run_session,
)
from handloop.metrics import (
    MatchConfig,
    behavioral_metrics,
    match_events,
    run_oracle_protocol,
    tiou,
)
from handloop.onset import generate_candidates, select_onset, template_target
from handloop.synthetic import (
    AdversarialAdapter,
    PerfectAdapter,
    make_accept_all,
    synth_clip,
)
from tests.conftest import make_track, toy_ontology
from tests.helpers import (
    make_behavior_log,
    oracle_decode,
    random_bundle,
    random_locks,
    random_small_ontology,
    random_stats,
)
from tests.test_completion import _random_batch, finite_difference_grads
from tests.test_onset import MID_PRIOR, oracle_candidates, oracle_select

CFG = EngineConfig()


@contextmanager
def criterion(name: str):
    started = time.time()
    try:
        yield
    except BaseException:
        print(f"\nACCEPTANCE {name}: FAIL ({time.time() - started:.1f}s)")
        raise
    print(f"\nACCEPTANCE {name}: PASS ({time.time() - started:.1f}s)")


# ---------------------------------------------------------------------------
# 1. Lock safety


def test_lock_safety_fuzz():
    """>= 1e5 adversarial loop steps: zero confirmed-field violations and a
    rollback trace for every staged violation."""
    with criterion("lock-safety fuzz (1e5 steps, 0 violations, <=2min)"):
        rng = np.random.default_rng(1234)
        onto = toy_ontology()
        verbs, nouns = onto.verbs, onto.nouns
        steps = 100_000
        started = time.time()

        state = fresh_state("Left", 0, 40)
        traces = []
        violations = 0
        staged_violations = 0
        clock = lambda: 0.0

        def random_value(f):
            if f in ("t_s", "t_o", "t_e"):
                return int(rng.integers(0, 41))
            if f == "v":
                return str(rng.choice(verbs))
            return NO_NOUN if rng.random() < 0.2 else str(rng.choice(nouns))

        for k in range(steps):
            if rng.random() < 0.01:  # periodically restart with a fresh event
                state = fresh_state("Left", 0, 40)
            confirmed_before = {
                f: state.values[f]
                for f in FIELDS
                if state.status[f] is FieldStatus.CONFIRMED
            }
            roll = rng.random()
            if roll < 0.55:
                # adversarial silent apply: deliberately target any field,
                # locked or not, with arbitrary values
                n_fields = int(rng.integers(1, 3))
                targets = tuple(rng.choice(FIELDS, size=n_fields, replace=False).tolist())
                payload = {f: random_value(f) for f in targets}
                intervention = Intervention(
                    targets=targets, surface="silent_apply", authority="safe_local", payload=payload
                )
                touches_locked = any(f in confirmed_before for f in targets)
                after, record = execute(
                    intervention, state, None, onto, step=k, clock=clock
                )
                if touches_locked:
                    staged_violations += 1
                    assert record.rollback, "staged lock violation must roll back"
                    assert after == state
            elif roll < 0.8:
                # human ops keep the lock set moving
                f = str(rng.choice(FIELDS))
                intervention = Intervention(
                    targets=(f,),
                    surface="suggestion_card",
                    authority="human_confirm",
                    payload={f: random_value(f)},
                )
                kind = str(rng.choice(["accept", "edit", "reject", "timeout"]))
                values = {f: random_value(f)} if kind == "edit" else {}
                try:
                    after, record = execute(
                        intervention,
                        state,
                        AnnotatorResponse(kind, values=values, latency=0.1),
                        onto,
                        step=k,
                        clock=clock,
                    )
                except Exception:
                    after, record = state, None  # invalid human input rejected whole
            else:
                f = str(rng.choice(FIELDS))
                intervention = Intervention(
                    targets=(f,), surface="choice_prompt", authority="human_only"
                )
                try:
                    after, record = execute(
                        intervention,
                        state,
                        AnnotatorResponse("manual_entry", values={f: random_value(f)}, latency=0.1),
                        onto,
                        step=k,
                        clock=clock,
                    )
                except Exception:
                    after, record = state, None

            machine_step = roll < 0.55
            if machine_step:
                for f, val in confirmed_before.items():
                    if after.values.get(f) != val:
                        violations += 1
            if record is not None:
                traces.append(record)
            state = after

        elapsed = time.time() - started
        log_violations = behavioral_metrics(traces).violation_count
        print(
            f"  steps={steps} staged_violations={staged_violations} "
            f"violations={violations} log_scan={log_violations} elapsed={elapsed:.1f}s"
        )
        assert violations == 0
        assert log_violations == 0
        assert staged_violations > 10_000  # the fuzz actually attacked locks
        assert elapsed <= 120.0


# ---------------------------------------------------------------------------
# 2. Decode optimality


def test_decode_optimality():
    """1000 random instances: exact agreement with exhaustive enumeration."""
    with criterion("decode optimality (1000 instances, exact, <=1min)"):
        rng = np.random.default_rng(42)
        started = time.time()
        checked = infeasible = 0
        for _ in range(1000):
            onto = random_small_ontology(rng)
            stats = random_stats(rng, onto)
            t_s = int(rng.integers(0, 12))
            width = int(rng.integers(1, 51))
            window = (t_s, t_s + width - 1)
            bundle = random_bundle(rng, window, len(onto.verbs), len(onto.nouns))
            if rng.random() < 0.9:
                locks = random_locks(rng, onto, window)
            else:
                # deliberately contradictory locks
                locks = LockSet(frozenset({"b", "n"}), {"b": 1, "n": NO_NOUN})
            expected = oracle_decode(bundle, locks, onto, stats)
            if expected is None:
                with pytest.raises(InfeasibleLocks):
                    decode(bundle, locks, onto, stats)
                infeasible += 1
                continue
            got = decode(bundle, locks, onto, stats)
            assert (got.t_o, got.v, got.b, got.n) == expected[:4]
            assert got.joint_score == pytest.approx(expected[4], abs=1e-9)
            checked += 1
        elapsed = time.time() - started
        print(f"  agreements={checked} infeasible={infeasible} elapsed={elapsed:.1f}s")
        assert checked + infeasible == 1000
        assert elapsed <= 60.0


# ---------------------------------------------------------------------------
# 3. Onset selection oracle


def test_onset_selection_oracle():
    """1000 synthetic traces: selection equals brute force; translation
    equivariance and motion-scale candidate invariance hold throughout."""
    with criterion("onset selection oracle (1000 traces, 100% agreement)"):
        rng = np.random.default_rng(7)
        cfg = CFG.onset
        agreements = 0
        for _ in range(1000):
            n = int(rng.integers(4, 80))
            shape = rng.random()
            if shape < 0.3:
                motion = rng.random(n) * float(rng.integers(1, 30))
            elif shape < 0.6:  # smooth random walk
                motion = np.abs(np.cumsum(rng.normal(0, 1, size=n))) + 0.1
            else:  # tent with noise
                peak = int(rng.integers(0, n))
                motion = 5 - np.abs(np.arange(n) - peak) / max(n, 1) + rng.random(n) * 0.3
            track = make_track(motion.tolist())
            window = (0, n - 1)
            candidates = generate_candidates(track, window, cfg)
            assert {(c.t, c.family) for c in candidates} == oracle_candidates(track, window, cfg)
            target = template_target(window, MID_PRIOR.template_ratio)
            sel = select_onset(candidates, MID_PRIOR, target, track, window, cfg)
            want, _ = oracle_select(candidates, MID_PRIOR, target, track, window, cfg)
            assert (sel.candidate.t, sel.candidate.family) == (want.t, want.family)

            # translation equivariance
            delta = int(rng.integers(1, 200))
            shifted_track = make_track(motion.tolist(), start=delta)
            shifted_window = (delta, delta + n - 1)
            shifted_candidates = generate_candidates(shifted_track, shifted_window, cfg)
            shifted_sel = select_onset(
                shifted_candidates, MID_PRIOR, target + delta, shifted_track, shifted_window, cfg
            )
            assert shifted_sel.candidate.t == sel.candidate.t + delta
            assert shifted_sel.candidate.family == sel.candidate.family

            # motion-scale candidate-set invariance (exact under pow2 scales)
            scale = float(2.0 ** rng.integers(-3, 5))
            scaled = make_track((motion * scale).tolist())
            assert {(c.t, c.family) for c in generate_candidates(scaled, window, cfg)} == {
                (c.t, c.family) for c in candidates
            }
            agreements += 1
        print(f"  agreements={agreements}/1000")
        assert agreements == 1000


# ---------------------------------------------------------------------------
# 4. Refinement conservation and identity


def test_refinement_conservation_and_identity():
    """1000 random bundles: refined heads sum to 1 +/- 1e-9; zero blend
    weights reproduce the input probabilities to 1e-12."""
    with criterion("refinement conservation (1e-9) + zero-weight identity (1e-12)"):
        rng = np.random.default_rng(11)
        onto = toy_ontology()
        worst_sum = 0.0
        worst_identity = 0.0
        for _ in range(1000):
            stats = random_stats(rng, onto)
            width = int(rng.integers(1, 40))
            bundle = random_bundle(rng, (0, width - 1), len(onto.verbs), len(onto.nouns))
            weights = RefineConfig(
                w_b=float(rng.uniform(0, 1)),
                w_n=float(rng.uniform(0, 1)),
                w_v=float(rng.uniform(0, 1)),
                w_o=float(rng.uniform(0, 1)),
            )
            refined = refine_scores(bundle, stats, onto, weights)
            for scores in (
                refined.onset_scores,
                refined.verb_scores,
                refined.b_scores,
                refined.noun_scores,
            ):
                worst_sum = max(worst_sum, abs(float(np.exp(scores).sum()) - 1.0))

            identity = refine_scores(bundle, stats, onto, RefineConfig(0.0, 0.0, 0.0, 0.0))
            got = bundle_probabilities(identity)
            want = bundle_probabilities(bundle)
            for g, w in zip(got, want):
                worst_identity = max(worst_identity, float(np.max(np.abs(g - w))))
        print(f"  worst sum error={worst_sum:.2e} worst identity error={worst_identity:.2e}")
        assert worst_sum <= 1e-9
        assert worst_identity <= 1e-12


# ---------------------------------------------------------------------------
# 5. Feedback monotonicity


def test_feedback_monotonicity():
    """1000 random cases: the returned joint score never regresses."""
    with criterion("feedback monotonicity (1000 cases)"):
        rng = np.random.default_rng(13)
        from tests.conftest import make_features

        features = make_features(dim=3)
        checked = 0
        while checked < 1000:
            onto = random_small_ontology(rng)
            stats = random_stats(rng, onto)
            width = int(rng.integers(1, 25))
            state = new_event_state("Left", 0, width - 1)
            rep = assemble_representation(state, None, features, onto)

            class _RandomAdapter:
                def forward(self, inner, _rng=rng, _onto=onto):
                    return random_bundle(_rng, inner.window, len(_onto.verbs), len(_onto.nouns))

            adapter = _RandomAdapter()
            try:
                first = decode(refine_scores(adapter.forward(rep), stats, onto), LockSet(), onto, stats)
            except InfeasibleLocks:
                continue
            passes = int(rng.integers(1, 4))
            result = feedback_redecode(
                rep, adapter, first, LockSet(), onto, stats, passes=passes
            )
            assert result.joint_score >= first.joint_score
            checked += 1
        print(f"  cases={checked}")


# ---------------------------------------------------------------------------
# 6. Adapter gradients


def test_adapter_gradient_check():
    """100 random parameter/batch draws: analytic vs central differences.

    Relative error is the max-norm of the difference over the max-norm of
    the gradients; per-component ratios on near-zero entries would only
    measure finite-difference roundoff.
    """
    with criterion("adapter gradient check (rel err < 1e-5, 100 draws)"):
        rng = np.random.default_rng(17)
        cfg = AdapterConfig(onset_grid=4)
        worst = 0.0
        for _ in range(100):
            dims = int(rng.integers(4, 10))
            n_verbs = int(rng.integers(1, 4))
            n_nouns = int(rng.integers(1, 4))
            params = AdapterParams.random(rng, dims, 4, n_verbs, n_nouns, scale=0.4)
            batch = _random_batch(rng, params, size=int(rng.integers(1, 4)))
            _, analytic = adapter_loss_and_grads(params, batch, cfg)
            numeric = finite_difference_grads(params, batch, cfg)
            a = analytic.flatten()
            scale = max(float(np.abs(a).max()), float(np.abs(numeric).max()), 1e-8)
            rel = float(np.abs(a - numeric).max()) / scale
            worst = max(worst, rel)
        print(f"  worst relative error={worst:.2e}")
        assert worst < 1e-5


# ---------------------------------------------------------------------------
# 7. Published-count metric arithmetic


def test_published_metric_arithmetic():
    """515 suggestions / 95 accepts / 172 rework / 436 confirm / 180 manual
    reproduce 18.4 / 33.4 / 70.8 / 29.2 percent within 0.05 points."""
    with criterion("behavioral metric arithmetic vs published counts (0.05pp)"):
        m = behavioral_metrics(make_behavior_log())
        values = {
            "accept_rate": (m.accept_rate * 100, 18.4),
            "rework_rate_all": (m.rework_rate_all * 100, 33.4),
            "human_confirm": (m.authority_distribution["human_confirm"] * 100, 70.8),
            "human_only": (m.authority_distribution["human_only"] * 100, 29.2),
        }
        for name, (got, want) in values.items():
            print(f"  {name}: {got:.3f}% (target {want}%)")
            assert abs(got - want) <= 0.05
        assert m.suggestions == 515 and m.operations == 616


# ---------------------------------------------------------------------------
# 8. Complete-match rule


def test_complete_match_rule_boundaries():
    """Classification flips exactly at the documented tolerances; golden
    temporal-IoU cases are exact."""
    with criterion("complete-match boundaries + tIoU goldens (exact)"):
        from handloop.ingest import EventRecord

        assert tiou((0, 10), (0, 10)) == 1.0
        assert tiou((0, 4), (10, 14)) == 0.0
        assert tiou((0, 10), (5, 15)) == 5 / 15

        reference = EventRecord("Left", 0, 20, 40, "grasp", "bolt")
        cfg = MatchConfig(delta_o=5, tau=0.5)

        def flag(annotation):
            result = match_events([annotation], [reference], cfg)
            return result.pairs[0].complete if result.pairs else None

        base = EventRecord("Left", 0, 20, 40, "grasp", "bolt")
        assert flag(base) is True
        # onset tolerance boundary: err 5 in, err 6 out
        assert flag(EventRecord("Left", 0, 25, 40, "grasp", "bolt")) is True
        assert flag(EventRecord("Left", 0, 26, 40, "grasp", "bolt")) is False
        # tIoU boundary: exactly tau matches, below tau unmatched
        assert flag(EventRecord("Left", 20, 25, 40, "grasp", "bolt")) is True  # 20/40 = 0.5
        assert flag(EventRecord("Left", 21, 25, 40, "grasp", "bolt")) is None  # 19/40 < 0.5
        # label unit flips
        assert flag(EventRecord("Left", 0, 20, 40, "insert", "bolt")) is False
        assert flag(EventRecord("Left", 0, 20, 40, "grasp", "screw")) is False
        print("  onset 5/6, tIoU 0.5 boundary, verb, noun flips all exact")


# ---------------------------------------------------------------------------
# 9. Oracle-protocol limits


def test_oracle_protocol_limits():
    """Perfect substitute: zero-edit 1.0, edits 0.  Adversarial: zero-edit
    0.0, edits = fields checked.  Deterministic under fixed seed."""
    with criterion("oracle-protocol limits (perfect 1.0/0, adversarial 0.0/full)"):
        for seed in (101, 202):
            synthetic = synth_clip(n_events=8, seed=seed)
            perfect = PerfectAdapter(synthetic.references, synthetic.clip.ontology)
            result = run_oracle_protocol(
                synthetic.clip, perfect, synthetic.references, CFG, clock=lambda: 0.0
            )
            assert result.zero_edit_rate() == 1.0
            assert result.total_edits() == 0

            adversarial = AdversarialAdapter(synthetic.references, synthetic.clip.ontology)
            result = run_oracle_protocol(
                synthetic.clip, adversarial, synthetic.references, CFG, clock=lambda: 0.0
            )
            assert result.zero_edit_rate() == 0.0
            assert result.edits_per_event == (result.fields_checked_per_event,) * 8

            again = run_oracle_protocol(
                synthetic.clip, adversarial, synthetic.references, CFG, clock=lambda: 0.0
            )
            assert again.traces == result.traces
        print("  both limits hold on 2 seeds x 8 events; runs deterministic")


# ---------------------------------------------------------------------------
# 10. Replay fidelity and crash recovery


class _FuzzResponder:
    """Random but validity-respecting responder."""

    def __init__(self, rng, ontology, references):
        self.rng = rng
        self.onto = ontology
        self.references = references

    def _valid_values(self, targets, state):
        values = {}
        current_v = state.values.get("v")
        current_n = state.values.get("n")
        if "v" in targets and "n" in targets:
            # bundle edit: pick a jointly valid pair outright
            v = str(self.rng.choice(self.onto.verbs))
            options = sorted(self.onto.valid_pairs.get(v, frozenset()))
            if self.onto.allows_no_noun(v) and (not options or self.rng.random() < 0.3):
                n = NO_NOUN
            else:
                n = str(self.rng.choice(options))
            values["v"], values["n"] = v, n
        for f in targets:
            if f in values:
                continue
            if f in ("t_s", "t_e"):
                values[f] = state.values[f]
            elif f == "t_o":
                t_s, t_e = state.window
                values[f] = int(self.rng.integers(t_s, t_e + 1))
            elif f == "v":
                options = [
                    v
                    for v in self.onto.verbs
                    if current_n is None
                    or (current_n == NO_NOUN and self.onto.allows_no_noun(v))
                    or (current_n != NO_NOUN and self.onto.pair_valid(v, current_n))
                ]
                values[f] = str(self.rng.choice(options)) if options else self.onto.verbs[0]
            elif f == "n":
                if current_v is not None:
                    options = sorted(self.onto.valid_pairs.get(current_v, frozenset()))
                    if self.onto.allows_no_noun(current_v):
                        options.append(NO_NOUN)
                else:
                    options = list(self.onto.nouns)
                values[f] = str(self.rng.choice(options))
        return values

    def __call__(self, intervention, context):
        roll = self.rng.random()
        if intervention.payload:
            if roll < 0.55:
                return AnnotatorResponse("accept", latency=0.2)
            if roll < 0.75:
                values = self._valid_values(intervention.targets, context.state)
                return AnnotatorResponse("edit", values=values, latency=0.4)
            if roll < 0.9:
                return AnnotatorResponse("reject", latency=0.1)
            return AnnotatorResponse("timeout")
        values = self._valid_values(intervention.targets, context.state)
        return AnnotatorResponse("manual_entry", values=values, latency=0.4)


def test_replay_fidelity_and_crash_recovery(tmp_path):
    """100 fuzzed sessions replay bit-for-bit; a service restart reproduces
    the pre-crash state from snapshot plus log."""
    with criterion("replay fidelity (100 fuzzed sessions) + crash recovery"):
        clock_source = itertools.count()
        for i in range(100):
            rng = np.random.default_rng(1000 + i)
            synthetic = synth_clip(n_events=int(rng.integers(2, 6)), seed=2000 + i)
            if rng.random() < 0.5:
                adapter = PerfectAdapter(synthetic.references, synthetic.clip.ontology)
            else:
                adapter = AdversarialAdapter(synthetic.references, synthetic.clip.ontology)
            responder = _FuzzResponder(rng, synthetic.clip.ontology, synthetic.references)
            result = run_session(
                synthetic.clip,
                adapter,
                CalibrationStore(),
                responder,
                CFG,
                session_id=f"fuzz-{i}",
                clock=lambda: float(next(clock_source)),
            )
            initial = [new_event_state(h, s, e) for h, s, e in synthetic.clip.spans]
            replayed = replay(result.traces, initial, config_hash=CFG.config_hash())
            assert [s.to_dict() for s in replayed] == [s.to_dict() for s in result.states]

        # crash recovery through the service: restart + snapshot + log replay
        from fastapi.testclient import TestClient

        from handloop.service import create_app
        from handloop.synthetic import write_clip_assets

        write_clip_assets(tmp_path / "clips" / "demo", synth_clip(n_events=3, seed=77))
        app = create_app(tmp_path)
        with TestClient(app) as client:
            sid = client.post("/sessions", json={"clip_id": "demo"}).json()["session_id"]
            client.post(f"/sessions/{sid}/events", json={"hand": "Left", "t_s": 0, "t_e": 24})
            for _ in range(20):
                nxt = client.post(
                    f"/sessions/{sid}/next-intervention", json={"hand": "Left"}
                ).json()
                if nxt["status"] != "intervention":
                    break
                kind = "accept" if nxt["payload"] else "reject"
                client.post(
                    f"/sessions/{sid}/respond",
                    json={"intervention_id": nxt["intervention_id"], "kind": kind},
                )
            before = client.get(f"/sessions/{sid}/state").json()["events"]

        with TestClient(create_app(tmp_path)) as client:
            after = client.get(f"/sessions/{sid}/state").json()["events"]
        assert after == before
        print("  100 sessions replayed exactly; restart state identical")
