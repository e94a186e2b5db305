import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from handloop.events import (
    COMPLETION_FIELDS,
    FIELDS,
    NO_NOUN,
    EventState,
    FieldStatus,
    InvalidSpan,
    LockSet,
    LockViolation,
    MissingValue,
    OntologyViolation,
    Origin,
    TemporalViolation,
    check_validity,
    confirm_field,
    new_event_state,
    set_field,
)


class TestNewEventState:
    def test_fresh_state_has_empty_targets(self):
        state = new_event_state("Left", 0, 100)
        for f in ("t_o", "v", "n"):
            assert state.status[f] is FieldStatus.EMPTY
        assert state.values["t_s"] == 0 and state.values["t_e"] == 100
        assert state.status["t_s"] is FieldStatus.SUGGESTED
        assert state.provenance["t_s"].origin is Origin.HUMAN

    def test_single_frame_span_accepted(self):
        state = new_event_state("Right", 5, 5)
        assert state.window == (5, 5)

    def test_inverted_span_rejected(self):
        with pytest.raises(InvalidSpan):
            new_event_state("Left", 10, 3)


class TestSetField:
    def test_machine_write_lands_suggested(self, ontology):
        state = new_event_state("Left", 0, 100)
        state = set_field(state, "v", "grasp", Origin.MACHINE, ontology)
        assert state.status["v"] is FieldStatus.SUGGESTED
        assert not state.is_locked("v")

    def test_machine_write_to_locked_field_rejected(self, ontology):
        state = new_event_state("Left", 0, 100)
        state = set_field(state, "v", "grasp", Origin.HUMAN, ontology)
        with pytest.raises(LockViolation):
            set_field(state, "v", "insert", Origin.MACHINE, ontology)

    def test_human_write_confirms_and_locks(self, ontology):
        state = new_event_state("Left", 0, 100)
        state = set_field(state, "v", "grasp", Origin.HUMAN, ontology)
        state = set_field(state, "n", "bolt", Origin.HUMAN, ontology)
        assert state.status["n"] is FieldStatus.CONFIRMED
        assert state.is_locked("n")

    def test_invalid_pair_rejected(self, ontology):
        state = new_event_state("Left", 0, 100)
        state = set_field(state, "v", "hold", Origin.MACHINE, ontology)
        with pytest.raises(OntologyViolation):
            set_field(state, "n", "bolt", Origin.MACHINE, ontology)

    def test_no_noun_under_required_verb_rejected(self, ontology):
        state = new_event_state("Left", 0, 100)
        state = set_field(state, "v", "grasp", Origin.MACHINE, ontology)
        with pytest.raises(OntologyViolation):
            set_field(state, "n", NO_NOUN, Origin.MACHINE, ontology)

    def test_ordering_enforced(self, ontology):
        state = new_event_state("Left", 10, 20)
        with pytest.raises(TemporalViolation):
            set_field(state, "t_o", 25, Origin.MACHINE, ontology)
        with pytest.raises(TemporalViolation):
            set_field(state, "t_o", 5, Origin.MACHINE, ontology)
        state = set_field(state, "t_o", 15, Origin.MACHINE, ontology)
        assert state.values["t_o"] == 15

    def test_human_rewrite_of_locked_field_relocks(self, ontology):
        state = new_event_state("Left", 0, 100)
        state = set_field(state, "v", "grasp", Origin.HUMAN, ontology)
        state = set_field(state, "v", "insert", Origin.HUMAN, ontology)
        assert state.values["v"] == "insert"
        assert state.is_locked("v")

    def test_states_are_snapshots(self, ontology):
        before = new_event_state("Left", 0, 100)
        after = set_field(before, "v", "grasp", Origin.MACHINE, ontology)
        assert "v" not in before.values
        assert after.values["v"] == "grasp"


class TestConfirmField:
    def test_promotes_suggested_value(self, ontology):
        state = new_event_state("Left", 0, 100)
        state = set_field(state, "v", "grasp", Origin.MACHINE, ontology)
        state = confirm_field(state, "v")
        assert state.status["v"] is FieldStatus.CONFIRMED
        assert state.is_locked("v")

    def test_empty_field_rejected(self):
        state = new_event_state("Left", 0, 100)
        with pytest.raises(MissingValue):
            confirm_field(state, "n")

    def test_idempotent(self, ontology):
        state = new_event_state("Left", 0, 100)
        state = set_field(state, "v", "grasp", Origin.HUMAN, ontology)
        again = confirm_field(state, "v")
        assert again == state

    def test_machine_cannot_confirm(self, ontology):
        state = new_event_state("Left", 0, 100)
        state = set_field(state, "v", "grasp", Origin.MACHINE, ontology)
        with pytest.raises(LockViolation):
            confirm_field(state, "v", origin=Origin.MACHINE)


class TestCheckValidity:
    def test_missing_required_noun_flagged(self, ontology):
        report = check_validity({"v": "grasp"}, ontology)
        assert not report.valid
        assert any("noun requirement" in v for v in report.violations)

    def test_invalid_pair_flagged(self, ontology):
        report = check_validity({"v": "hold", "n": "bolt"}, ontology)
        assert any("invalid pair" in v for v in report.violations)

    def test_empty_event_vacuously_valid(self, ontology):
        assert check_validity({}, ontology).valid

    def test_ordering_flagged(self, ontology):
        report = check_validity({"t_s": 10, "t_o": 5, "t_e": 20}, ontology)
        assert any("ordering" in v for v in report.violations)

    def test_complete_valid_event_passes(self, ontology):
        report = check_validity(
            {"t_s": 0, "t_o": 5, "t_e": 10, "v": "grasp", "n": "bolt"}, ontology
        )
        assert report.valid


class TestLockSet:
    def test_from_state_derives_presence_lock(self, ontology):
        state = new_event_state("Left", 0, 100)
        state = set_field(state, "v", "hold", Origin.HUMAN, ontology)
        state = set_field(state, "n", NO_NOUN, Origin.HUMAN, ontology)
        locks = LockSet.from_state(state)
        assert locks.is_locked("n") and locks.is_locked("b")
        assert locks.value("b") == 0

    def test_locked_needs_value(self):
        with pytest.raises(MissingValue):
            LockSet(frozenset({"v"}), {})


# ---------------------------------------------------------------------------
# Property tests over randomized machine/human operation sequences

_ops = st.lists(
    st.tuples(
        st.sampled_from(["set", "confirm"]),
        st.sampled_from(FIELDS),
        st.sampled_from(["machine", "human"]),
        st.integers(min_value=0, max_value=60),
        st.sampled_from(["grasp", "insert", "hold", "bolt", "screw", "panel", NO_NOUN]),
    ),
    max_size=30,
)


def _apply(state, op, ontology):
    kind, field, origin_name, frame, label = op
    origin = Origin.MACHINE if origin_name == "machine" else Origin.HUMAN
    value = frame if field in ("t_s", "t_o", "t_e") else label
    try:
        if kind == "set":
            return set_field(state, field, value, origin, ontology)
        return confirm_field(state, field) if origin is Origin.HUMAN else state
    except (LockViolation, OntologyViolation, TemporalViolation, MissingValue):
        return state


@settings(max_examples=200, deadline=None)
@given(ops=_ops)
def test_status_lock_bijection_under_fuzz(ops):
    from tests.conftest import toy_ontology

    onto = toy_ontology()
    state = new_event_state("Left", 0, 60)
    for op in ops:
        state = _apply(state, op, onto)
        for f in FIELDS:
            assert (state.status[f] is FieldStatus.CONFIRMED) == state.is_locked(f)


@settings(max_examples=200, deadline=None)
@given(ops=_ops)
def test_machine_steps_never_shrink_locks_or_rewrite_confirmed(ops):
    from tests.conftest import toy_ontology

    onto = toy_ontology()
    state = new_event_state("Left", 0, 60)
    for op in ops:
        locked_before = {f for f in FIELDS if state.is_locked(f)}
        confirmed_before = {f: state.values[f] for f in locked_before}
        next_state = _apply(state, op, onto)
        is_machine = op[2] == "machine"
        if is_machine:
            locked_after = {f for f in FIELDS if next_state.is_locked(f)}
            assert locked_after >= locked_before
            for f, val in confirmed_before.items():
                assert next_state.values[f] == val
        state = next_state


@settings(max_examples=200, deadline=None)
@given(ops=_ops)
def test_states_built_by_set_field_have_no_pairwise_violations(ops):
    from tests.conftest import toy_ontology

    onto = toy_ontology()
    state = new_event_state("Left", 0, 60)
    for op in ops:
        state = _apply(state, op, onto)
        report = check_validity(dict(state.values), onto)
        for violation in report.violations:
            # open noun obligations are allowed mid-construction; hard
            # pairwise constraints are not
            assert violation.startswith("noun requirement")


def test_open_fields_tracks_completion_targets(ontology):
    state = new_event_state("Left", 0, 100)
    assert state.open_fields() == COMPLETION_FIELDS
    state = set_field(state, "v", "grasp", Origin.HUMAN, ontology)
    assert state.open_fields() == ("t_o", "n")


def test_state_round_trips_through_dict(ontology):
    state = new_event_state("Left", 0, 100)
    state = set_field(state, "v", "grasp", Origin.HUMAN, ontology, step=3, intervention_id="i-1")
    state = set_field(state, "t_o", 40, Origin.MACHINE, ontology, step=4)
    assert EventState.from_dict(state.to_dict()) == state
