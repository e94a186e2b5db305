"""Event states, field statuses, and the lock discipline.

An event is built up field by field.  Machine writes only ever suggest;
human writes confirm and lock.  Once locked, a field is off limits to the
machine forever, while the human may still rewrite it (which re-locks).
"""

from handloop import NO_NOUN, Origin, check_validity, confirm_field, new_event_state, set_field
from handloop.events import LockViolation
from handloop.synthetic import make_demo_ontology

ontology = make_demo_ontology()

state = new_event_state("Left", t_s=0, t_e=100)
print("fresh state:", {f: s.value for f, s in state.status.items()})

# the machine proposes a verb: status becomes "suggested", no lock
state = set_field(state, "v", "grasp", Origin.MACHINE, ontology)
print("after machine write: v =", state.values["v"], "/", state.status["v"].value)

# the human confirms it: locked from now on
state = confirm_field(state, "v")
print("after human confirm: locked =", state.is_locked("v"))

# machine attempts to overwrite the confirmed verb
try:
    set_field(state, "v", "insert", Origin.MACHINE, ontology)
except LockViolation as exc:
    print("machine overwrite rejected:", exc)

# the human can still change their mind; the rewrite re-locks
state = set_field(state, "v", "insert", Origin.HUMAN, ontology)
print("after human rewrite: v =", state.values["v"], "locked =", state.is_locked("v"))

# validity is ontology-aware: insert requires a noun, and not every pair works
report = check_validity(dict(state.values), ontology)
print("validity before noun:", report.violations)

state = set_field(state, "n", "screw", Origin.HUMAN, ontology)
print("validity after noun:", check_validity(dict(state.values), ontology).valid)

# "no noun" is an explicit resolution, distinct from "not filled in yet"
hold = new_event_state("Right", 10, 30)
hold = set_field(hold, "v", "hold", Origin.HUMAN, ontology)
hold = set_field(hold, "n", NO_NOUN, Origin.HUMAN, ontology)
print("hold event noun presence b =", hold.noun_presence)

# states are immutable snapshots: earlier references never change
first = new_event_state("Left", 0, 10)
second = set_field(first, "t_o", 5, Origin.MACHINE, ontology)
print("snapshot isolation:", first.values.get("t_o"), "vs", second.values.get("t_o"))
