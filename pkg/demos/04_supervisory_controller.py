"""How the controller picks between asking, suggesting, and acting.

Every open field yields three candidate interventions at increasing
machine authority.  Scores combine utility, calibrated propagation gain,
cost, and overwrite risk; locks and the authority policy filter first.
Watch the selection move from silent application at high confidence to a
confirmation card, and finally to a direct query, as confidence drops.
"""

from handloop.config import ControllerConfig, EngineConfig
from handloop.controller import (
    CalibrationStore,
    build_control_state,
    calibrate,
    enumerate_candidates,
    estimate,
    select_intervention,
    update_calibration,
)
from handloop.events import LockSet, Origin, new_event_state, set_field
from handloop.loop import AnnotatorResponse, ClipInputs, compute_prior, decode_event
from handloop.synthetic import PerfectAdapter, make_demo_ontology, synth_clip

cfg = ControllerConfig()
synthetic = synth_clip(n_events=1, seed=9)
clip = synthetic.clip
adapter = PerfectAdapter(synthetic.references, clip.ontology)

hand, t_s, t_e = clip.spans[0]
state = new_event_state(hand, t_s, t_e)
prior = compute_prior(state, clip, adapter, EngineConfig())
hypothesis = decode_event(state, clip, adapter, EngineConfig(), prior)

control = build_control_state(state, hypothesis, prior)
print("open fields:", control.open_fields())
print("field confidence:", {f: round(control.confidence[f][0], 3) for f in ("t_o", "v", "n")})

candidates = enumerate_candidates(control)
print(f"{len(candidates)} candidates:")
store = CalibrationStore()
for c in candidates:
    raw = estimate(c, control, cfg)
    cal = calibrate(c, raw, store, cfg)
    print(
        f"  {'+'.join(c.targets):6s} {c.authority:13s} {c.surface:15s}"
        f" U={raw.utility:.2f} Pbar={cal.gain:.2f} Cbar={cal.cost:.2f} Rbar={cal.risk:.2f}"
    )

chosen = select_intervention(candidates, control, LockSet.from_state(state), store, cfg)
print("selected:", chosen.targets, chosen.authority, chosen.surface)

# a policy cap forbids autonomous writes outright
strict = ControllerConfig(max_authority="human_confirm")
chosen_strict = select_intervention(candidates, control, LockSet.from_state(state), store, strict)
print("under human_confirm policy:", chosen_strict.targets, chosen_strict.authority)

# calibration learns from outcomes: rejections depress the gain of that key
from handloop.controller import Intervention


class _T:
    def __init__(self, i, r):
        self.intervention, self.response = i, r


card = next(c for c in candidates if c.authority == "human_confirm" and c.targets == ("v",))
for _ in range(6):
    store = update_calibration(store, _T(card, AnnotatorResponse("reject", latency=0.3)))
entry = store.entry(card)
print(
    f"after 6 rejects on the verb card: accept_rate={entry.accept_rate():.2f}"
    f" cost_ema={entry.cost_ema:.2f}s"
)

# locks remove whole candidate groups regardless of score
locked = set_field(state, "v", synthetic.references[0].v, Origin.HUMAN, clip.ontology)
prior2 = compute_prior(locked, clip, adapter, EngineConfig())
hyp2 = decode_event(locked, clip, adapter, EngineConfig(), prior2)
control2 = build_control_state(locked, hyp2, prior2)
remaining = enumerate_candidates(control2)
assert all("v" not in c.targets for c in remaining)
print("after verb lock, candidate targets:", sorted({c.targets for c in remaining}))
