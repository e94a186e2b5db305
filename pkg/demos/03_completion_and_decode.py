"""Event-local completion: scoring, statistics refinement, clamped decoding.

The adapter turns the packed event representation into onset and label
scores; refinement blends them with corpus statistics in dependency order;
the decoder then finds the exact argmax over all feasible completions with
every human-locked variable clamped.
"""

import numpy as np

from handloop.completion import (
    AdapterParams,
    AffineAdapter,
    adapter_train_step,
    assemble_representation,
    bundle_probabilities,
    decode,
    refine_scores,
)
from handloop.completion import GoldTarget, RepresentationLayout
from handloop.events import NO_NOUN, LockSet, Origin, new_event_state, set_field
from handloop.ingest import EventRecord, build_statistics
from handloop.synthetic import balanced_corpus, make_demo_ontology, synth_clip

ontology = make_demo_ontology()
stats = build_statistics(balanced_corpus(ontology), ontology, bins=10)
synthetic = synth_clip(n_events=1, seed=3)
features = synthetic.clip.features

state = new_event_state("Left", 0, 24)
rep = assemble_representation(state, None, features, ontology)
print("representation size:", rep.vector.size, "window:", rep.window)

# train the affine adapter briefly on a handful of gold events
rng = np.random.default_rng(0)
layout = RepresentationLayout(
    n_verbs=len(ontology.verbs), n_nouns=len(ontology.nouns), feature_dim=features.dim
)
params = AdapterParams.random(rng, layout.size, 16, len(ontology.verbs), len(ontology.nouns), scale=0.01)
gold_events = [
    EventRecord("Left", 0, 6, 24, "grasp", "bolt"),
    EventRecord("Left", 0, 12, 24, "insert", "screw"),
    EventRecord("Left", 0, 2, 24, "hold", NO_NOUN),
]
batch = []
for record in gold_events:
    s = new_event_state(record.hand, record.t_s, record.t_e)
    batch.append(
        (
            assemble_representation(s, None, features, ontology),
            GoldTarget(
                t_o=record.t_o,
                verb_index=ontology.verb_index(record.v),
                b=record.b,
                noun_index=None if record.n == NO_NOUN else ontology.noun_index(record.n),
            ),
        )
    )
for epoch in range(40):
    params, loss = adapter_train_step(params, batch, learning_rate=0.3)
print(f"adapter loss after 40 steps: {loss:.3f}")

adapter = AffineAdapter(params)
bundle = adapter.forward(rep)
p_o, p_v, p_b, p_n = bundle_probabilities(bundle)
print("verb distribution before refinement:", np.round(p_v, 3))

refined = refine_scores(bundle, stats, ontology)
_, p_v_ref, _, _ = bundle_probabilities(refined)
print("verb distribution after refinement: ", np.round(p_v_ref, 3))

# decode with no locks
free = decode(refined, LockSet(), ontology, stats)
print("free decode:", (free.t_o, free.v, free.b, free.n), f"J={free.joint_score:.3f}")

# now the human confirms the verb; decoding must clamp it
locked_state = set_field(state, "v", "tighten", Origin.HUMAN, ontology)
locks = LockSet.from_state(locked_state)
clamped = decode(refined, locks, ontology, stats)
print("decode under verb lock:", (clamped.t_o, clamped.v, clamped.b, clamped.n))
assert clamped.v == "tighten"
assert ontology.pair_valid(clamped.v, clamped.n)

# impossible constraints are reported, not silently ignored
from handloop.completion import InfeasibleLocks

try:
    decode(refined, LockSet(frozenset({"v", "b"}), {"v": "grasp", "b": 0}), ontology, stats)
except InfeasibleLocks as exc:
    print("contradictory locks rejected:", exc)
