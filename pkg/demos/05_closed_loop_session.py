"""A complete supervisory session, step by step, with full provenance.

The loop decodes, selects an intervention, consults the responder, commits
atomically, and logs a trace record with field diffs.  Afterwards the log
alone is enough to reproduce the final states exactly, and tampering with
any diff is detected at the exact step.
"""

import itertools

from handloop.config import EngineConfig
from handloop.controller import CalibrationStore
from handloop.events import new_event_state
from handloop.loop import ReplayDivergence, replay, run_session
from handloop.synthetic import PerfectAdapter, make_accept_all, synth_clip

cfg = EngineConfig()
synthetic = synth_clip(n_events=4, seed=12)
clip = synthetic.clip
adapter = PerfectAdapter(synthetic.references, clip.ontology)

counter = itertools.count()
result = run_session(
    clip,
    adapter,
    CalibrationStore(),
    make_accept_all(),
    cfg,
    session_id="demo",
    clock=lambda: float(next(counter)),
)

print(f"{len(result.outcomes)} events, {len(result.traces)} trace records")
for outcome, ref in zip(result.outcomes, synthetic.references):
    state = outcome.state
    print(
        f"  {outcome.status:10s} {state.hand:5s} span=({state.values['t_s']},{state.values['t_e']})"
        f" onset={state.values['t_o']} verb={state.values['v']} noun={state.values['n']}"
        f"  (truth: {ref.t_o}/{ref.v}/{ref.n})"
    )

print("\nfirst few trace records:")
for trace in result.traces[:5]:
    response = trace.response.kind if trace.response else "(silent)"
    diffs = ", ".join(f"{d.field}:{d.old}->{d.new}" for d in trace.diffs) or "none"
    print(
        f"  step {trace.step}: {trace.intervention.authority:13s}"
        f" {'+'.join(trace.intervention.targets):6s} {response:12s} diffs: {diffs}"
    )

# replay the log from the initial spans: bit-for-bit identical states
initial = [new_event_state(h, s, e) for h, s, e in clip.spans]
replayed = replay(result.traces, initial, config_hash=cfg.config_hash())
assert [s.to_dict() for s in replayed] == [s.to_dict() for s in result.states]
print("\nreplay reproduces the final states exactly")

# flip one recorded value and the replay refuses at that step
broken = list(result.traces)
victim = next(i for i, t in enumerate(broken) if t.diffs)
diff = broken[victim].diffs[0]
forged = type(diff)(diff.field, "forged", diff.new, diff.old_status, diff.new_status, diff.origin)
broken[victim] = type(broken[victim])(
    **{**broken[victim].__dict__, "diffs": (forged,) + broken[victim].diffs[1:]}
)
try:
    replay(broken, initial)
except ReplayDivergence as exc:
    print("tampering detected:", exc)
