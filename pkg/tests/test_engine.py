import copy
import itertools

import pytest
from hypothesis import given, settings, strategies as st

from oracles import expected_donning_alerts
from ppeseq.accumulator import Transition, TransitionKind
from ppeseq.engine import SessionStatus, start_session
from ppeseq.errors import InvalidSpec, SessionFinished
from ppeseq.types import (
    AlertKind,
    ClassThreshold,
    ClassThresholds,
    EndReason,
    Mode,
    Outcome,
    PpeClass,
    SequenceSpec,
    StepStatus,
    default_sequence,
    make_batch,
)

C, M, G, F, GL = PpeClass.COVERALL, PpeClass.MASK, PpeClass.GOGGLES, PpeClass.FACE_SHIELD, PpeClass.GLOVES
ON, OFF = TransitionKind.BECAME_SATISFIED, TransitionKind.BECAME_ABSENT
DONNING = default_sequence(Mode.DONNING)
DOFFING = default_sequence(Mode.DOFFING)


def tr(cls, frame, kind=ON):
    return Transition(cls, kind, frame, frame * 33)


def kinds(alerts):
    return [(a.kind.value, a.step_index, a.label) for a in alerts]


def donned_doffing_session():
    s = start_session(DOFFING)
    for i, c in enumerate((GL, G, C, M)):
        s.on_transition(tr(c, i))
    assert s.baseline_established
    return s


def test_start_session_has_pending_steps():
    for spec in (DONNING, DOFFING):
        s = start_session(spec)
        assert [r.status for r in s.records] == [StepStatus.PENDING] * 4
        assert s.alerts == [] and s.cursor == 0 and s.status is SessionStatus.RUNNING


def test_start_session_rejects_bad_spec():
    with pytest.raises(InvalidSpec):
        start_session(SequenceSpec(Mode.DONNING, ()))
    with pytest.raises(InvalidSpec):
        start_session(DONNING, Mode.DOFFING)
    with pytest.raises(InvalidSpec):
        start_session(["coverall"])


def test_compliant_donning():
    s = start_session(DONNING)
    alerts = []
    for i, c in enumerate((C, M, G, GL)):
        alerts += s.on_transition(tr(c, 10 * i))
    assert kinds(alerts) == [
        ("step_completed", 0, "Gown"),
        ("step_completed", 1, "Mask"),
        ("step_completed", 2, "Goggles/Face shield"),
        ("step_completed", 3, "Gloves"),
        ("session_complete", None, None),
    ]
    assert s.status is SessionStatus.FINISHED
    assert s.finish_session().outcome is Outcome.COMPLIANT


def test_gloves_right_after_gown_flags_two_missed_steps():
    s = start_session(DONNING)
    s.on_transition(tr(C, 1))
    alerts = s.on_transition(tr(GL, 2))
    assert kinds(alerts) == [
        ("missed_step", 1, "Mask"),
        ("missed_step", 2, "Goggles/Face shield"),
        ("step_completed", 3, "Gloves"),
    ]
    assert all(a.ppe_class is GL for a in alerts)
    assert s.cursor == 1


def test_face_shield_completes_alternative_step():
    s = start_session(DONNING)
    s.on_transition(tr(C, 1))
    s.on_transition(tr(M, 2))
    alerts = s.on_transition(tr(F, 3))
    assert kinds(alerts) == [("step_completed", 2, "Goggles/Face shield")]
    assert s.records[2].completed_class is F
    assert s.on_transition(tr(G, 4)) == []
    assert s.records[2].completed_class is F


def test_redelivery_is_ignored():
    s = start_session(DONNING)
    s.on_transition(tr(C, 1))
    before = (copy.deepcopy(s.records), list(s.alerts))
    assert s.on_transition(tr(C, 1)) == []
    assert s.on_transition(tr(C, 5)) == []
    assert (s.records, s.alerts) == before


def test_finished_session_rejects_events():
    s = start_session(DONNING)
    for i, c in enumerate((C, M, G, GL)):
        s.on_transition(tr(c, i))
    with pytest.raises(SessionFinished):
        s.on_transition(tr(M, 9))
    with pytest.raises(SessionFinished):
        s.observe(make_batch(9, 300))


def test_verdicts():
    s = start_session(DONNING)
    s.on_transition(tr(C, 1))
    s.on_transition(tr(G, 2))
    v = s.finish_session()
    assert v.outcome is Outcome.NON_COMPLIANT
    assert [a.label for a in v.violations] == ["Mask"]
    assert v.pending_steps == (1, 3)

    s = start_session(DONNING)
    s.on_transition(tr(C, 1))
    v = s.finish_session()
    assert v.outcome is Outcome.INCOMPLETE
    assert v.pending_steps == (1, 2, 3)

    s = start_session(DONNING)
    for i, c in enumerate((C, M, F)):
        s.on_transition(tr(c, i))
    v = s.finish_session()
    assert v.outcome is Outcome.INCOMPLETE and v.pending_steps == (3,)


def test_finish_is_idempotent():
    s = start_session(DONNING)
    assert s.finish_session() is s.finish_session(EndReason.TIMEOUT)


def test_late_completion_keeps_violation():
    s = start_session(DONNING)
    for c, f in ((C, 1), (G, 2), (M, 3), (GL, 4)):
        s.on_transition(tr(c, f))
    v = s.finish_session()
    assert all(r.done for r in v.step_records)
    assert v.outcome is Outcome.NON_COMPLIANT
    assert v.step_records[1].completed_at_frame == 3


def test_timeout_emits_alert_when_pending():
    s = start_session(DONNING)
    s.on_transition(tr(C, 3))
    v = s.finish_session(EndReason.TIMEOUT)
    assert s.alerts[-1].kind is AlertKind.SESSION_TIMEOUT
    assert v.outcome is Outcome.INCOMPLETE and v.end_reason is EndReason.TIMEOUT


def test_observe_times_out_on_stream_time():
    s = start_session(DONNING, timeout_ms=1000)
    assert s.observe(make_batch(0, 0)) == []
    alerts = s.observe(make_batch(30, 1000))
    assert [a.kind for a in alerts] == [AlertKind.SESSION_TIMEOUT]
    assert s.verdict.outcome is Outcome.INCOMPLETE


def test_simultaneous_satisfaction_uses_protocol_order():
    th = ClassThresholds.uniform(ClassThreshold(0.5, 1, 1))
    s = start_session(DONNING, thresholds=th)
    alerts = s.observe(make_batch(0, 0, [(GL, 0.9), (M, 0.9), (C, 0.9), (G, 0.9)]))
    assert [a.kind for a in alerts] == [AlertKind.STEP_COMPLETED] * 4 + [AlertKind.SESSION_COMPLETE]
    assert s.finish_session().compliant


def test_doffing_ignores_removals_before_baseline():
    s = start_session(DOFFING)
    s.on_transition(tr(GL, 0))
    assert s.on_transition(tr(GL, 5, OFF)) == []
    assert not s.baseline_established


def test_doffing_baseline_needs_one_alternative_per_step():
    s = start_session(DOFFING)
    for c in (GL, F, C):
        s.on_transition(tr(c, 0))
    assert not s.baseline_established
    s.on_transition(tr(M, 1))
    assert s.baseline_established


def test_compliant_doffing():
    s = donned_doffing_session()
    alerts = []
    for i, c in enumerate((GL, G, C, M)):
        alerts += s.on_transition(tr(c, 100 + i, OFF))
    assert [a.kind for a in alerts] == [AlertKind.STEP_COMPLETED] * 4 + [AlertKind.SESSION_COMPLETE]
    assert s.finish_session().compliant


def test_doffing_mask_before_gown():
    s = donned_doffing_session()
    for c in (GL, G):
        s.on_transition(tr(c, 100, OFF))
    alerts = s.on_transition(tr(M, 101, OFF))
    assert kinds(alerts) == [("missed_step", 2, "Gown"), ("step_completed", 3, "Mask")]
    # re-donning after the baseline does nothing
    assert s.on_transition(tr(GL, 102)) == []


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from([C, M, G, F, GL]), max_size=12))
def test_donning_matches_hand_rule(events):
    s = start_session(DONNING)
    got = []
    order = []
    for i, c in enumerate(events):
        if s.status is SessionStatus.FINISHED:
            break
        order.append(DONNING.step_of(c))
        got += s.on_transition(tr(c, i))
        # count identity
        n_done = sum(r.done for r in s.records)
        assert n_done + len(s.pending_steps) == 4
        assert s.cursor == (s.pending_steps[0] if s.pending_steps else 4)
    labels = [st.label for st in DONNING.steps]
    assert kinds(got) == expected_donning_alerts(order, labels)
    frames = [a.frame_index for a in got]
    assert frames == sorted(frames)
    for a in got:
        if a.kind is AlertKind.MISSED_STEP:
            assert a.step_index < DONNING.step_of(a.ppe_class)


def test_missed_step_alert_comes_with_its_trigger():
    # every MissedStep must come out of the very call that completed a later step
    for perm in itertools.permutations((C, M, G, GL)):
        s = start_session(DONNING)
        for i, c in enumerate(perm):
            out = s.on_transition(tr(c, i))
            missed = [a for a in out if a.kind is AlertKind.MISSED_STEP]
            step = DONNING.step_of(c)
            expected = [j for j in range(step) if j not in {DONNING.step_of(x) for x in perm[:i]}]
            assert [a.step_index for a in missed] == expected


def test_determinism():
    seq = [tr(GL, 1), tr(C, 2), tr(C, 3), tr(M, 4), tr(F, 5)]
    runs = []
    for _ in range(2):
        s = start_session(DONNING)
        alerts = [a for t in seq for a in s.on_transition(t)]
        runs.append((alerts, s.finish_session()))
    assert runs[0] == runs[1]
