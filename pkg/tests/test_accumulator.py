import random

import pytest
from hypothesis import given, settings, strategies as st

from oracles import doffing_trace, satisfied_by_frame
from ppeseq.accumulator import (
    ThresholdAccumulator,
    ThresholdPolicy,
    TransitionKind,
    derive_confidence_threshold,
)
from ppeseq.errors import InvalidPolicy, NonMonotonicFrame
from ppeseq.types import ClassThreshold, ClassThresholds, Mode, PpeClass, make_batch

MASK = PpeClass.MASK


def acc_for(th_confidence=0.5, th_frequency=3, window=10, removal=45, mode=Mode.DONNING):
    th = ClassThreshold(th_confidence, th_frequency, window, removal)
    return ThresholdAccumulator(ClassThresholds.uniform(th), mode)


def feed_confidences(acc, confs, cls=MASK, first_frame=1):
    """One frame per entry; None means no detection of ``cls`` that frame."""
    fired = []
    for i, conf in enumerate(confs):
        f = first_frame + i
        hits = [] if conf is None else [(cls, conf)]
        fired.extend(acc.observe(make_batch(f, f * 33, hits)))
    return fired


@pytest.mark.parametrize(
    "ap, policy, expected",
    [
        (1.0, ThresholdPolicy(), 0.5),
        (0.1, ThresholdPolicy(), 0.25),
        (0.7, ThresholdPolicy(alpha=1.0, floor=0.25, ceil=0.6), 0.6),
        (0.8, ThresholdPolicy(), 0.4),
        (1.0, ThresholdPolicy(alpha=2.0), 0.9),
    ],
)
def test_derive_confidence_threshold(ap, policy, expected):
    assert derive_confidence_threshold(ap, policy) == pytest.approx(expected)


@pytest.mark.parametrize("kwargs", [dict(floor=0.6, ceil=0.5), dict(alpha=0.0), dict(alpha=-1.0), dict(floor=0.0)])
def test_invalid_policy(kwargs):
    with pytest.raises(InvalidPolicy):
        ThresholdPolicy(**kwargs)


def test_oracle_agrees_with_hand_examples():
    # frames 1-4, threshold 0.5: qualifying = 1, 3, 4
    q = [c >= 0.5 for c in [0.6, 0.4, 0.7, 0.55]]
    assert satisfied_by_frame(q, 3, 10) == [False, False, False, True]
    q = [c >= 0.5 for c in [0.6, 0.6, 0.4, 0.6, 0.6, 0.6]]
    assert satisfied_by_frame(q, 3, 3) == [False] * 5 + [True]


def test_satisfied_at_fourth_frame():
    acc = acc_for(0.5, 3, 10)
    fired = feed_confidences(acc, [0.6, 0.4, 0.7])
    assert fired == [] and not acc.is_satisfied(MASK)
    fired = feed_confidences(acc, [0.55], first_frame=4)
    assert [(t.ppe_class, t.kind, t.frame_index) for t in fired] == [(MASK, TransitionKind.BECAME_SATISFIED, 4)]
    assert acc.satisfied_at(MASK) == (4, 132)


def test_window_of_three_fires_only_at_frame_six():
    acc = acc_for(0.5, 3, 3)
    frames = []
    for i, conf in enumerate([0.6, 0.6, 0.4, 0.6, 0.6, 0.6], start=1):
        if acc.observe(make_batch(i, i * 33, [(MASK, conf)])):
            frames.append(i)
    assert frames == [6]


def test_boundary_confidence_qualifies():
    acc = acc_for(0.5, 1, 7)
    fired = acc.observe(make_batch(0, 0, [(MASK, 0.5)]))
    assert len(fired) == 1 and fired[0].frame_index == 0
    assert acc.is_satisfied(MASK)


def test_not_satisfied_initially():
    acc = acc_for()
    assert not any(acc.is_satisfied(c) for c in PpeClass)


def test_multiple_boxes_in_one_frame_count_once():
    acc = acc_for(0.5, 2, 10)
    assert acc.observe(make_batch(0, 0, [(MASK, 0.9), (MASK, 0.8), (MASK, 0.7)])) == []
    assert acc.hit_count(MASK) == 1
    assert len(acc.observe(make_batch(1, 33, [(MASK, 0.9)]))) == 1


def test_gap_frames_count_as_empty():
    acc = acc_for(0.5, 2, 5)
    acc.observe(make_batch(0, 0, [(MASK, 0.9)]))
    # frames 1..5 missing; frame 0 slides out of the window [2, 6]
    assert acc.observe(make_batch(6, 200, [(MASK, 0.9)])) == []
    assert acc.hit_count(MASK) == 1
    assert acc.consecutive_absent_frames(MASK) == 0
    acc.observe(make_batch(10, 333))
    assert acc.consecutive_absent_frames(MASK) == 4


def test_non_monotonic_frame_rejected():
    acc = acc_for()
    acc.observe(make_batch(5, 0))
    with pytest.raises(NonMonotonicFrame):
        acc.observe(make_batch(5, 0))
    with pytest.raises(NonMonotonicFrame):
        acc.observe(make_batch(4, 0))


def test_doffing_removal_after_absence_window():
    acc = acc_for(0.5, 1, 5, removal=3, mode=Mode.DOFFING)
    acc.observe(make_batch(0, 0, [(PpeClass.GLOVES, 0.9)]))
    assert acc.is_satisfied(PpeClass.GLOVES)
    kinds = []
    for f in (1, 2, 3):
        kinds += [t.kind for t in acc.observe(make_batch(f, f))]
    assert kinds == [TransitionKind.BECAME_ABSENT]
    assert not acc.is_satisfied(PpeClass.GLOVES)


def test_donning_never_emits_absent():
    acc = acc_for(0.5, 1, 5, removal=2, mode=Mode.DONNING)
    acc.observe(make_batch(0, 0, [(PpeClass.GLOVES, 0.9)]))
    for f in range(1, 50):
        assert acc.observe(make_batch(f, f)) == []
    assert acc.is_satisfied(PpeClass.GLOVES)


def test_absent_only_for_satisfied_classes():
    acc = acc_for(0.5, 3, 5, removal=2, mode=Mode.DOFFING)
    for f in range(20):
        assert acc.observe(make_batch(f, f)) == []


def test_reset():
    acc = acc_for(0.5, 1, 5)
    acc.observe(make_batch(0, 0, [(MASK, 0.9)]))
    acc.reset(MASK)
    assert not acc.is_satisfied(MASK)
    assert acc.hit_count(MASK) == 0 and acc.consecutive_absent_frames(MASK) == 0
    acc.reset(MASK)
    assert not acc.is_satisfied(MASK) and acc.hit_count(MASK) == 0


def _random_stream(rng, n, classes=(MASK, PpeClass.GLOVES)):
    out = []
    frame = 0
    for _ in range(n):
        frame += rng.choice((1, 1, 1, 2, 4))
        hits = [(c, round(rng.random(), 3)) for c in classes if rng.random() < 0.5]
        out.append(make_batch(frame, frame * 33, hits))
    return out


def test_reset_replays_like_fresh():
    rng = random.Random(4)
    stream = _random_stream(rng, 300)
    acc = acc_for(0.4, 4, 9, removal=6, mode=Mode.DOFFING)
    first = [t for b in stream for t in acc.observe(b)]
    acc.reset()
    again = [t for b in stream for t in acc.observe(b)]
    fresh_acc = acc_for(0.4, 4, 9, removal=6, mode=Mode.DOFFING)
    fresh = [t for b in stream for t in fresh_acc.observe(b)]
    assert first == again == fresh
    assert len(first) > 0


def _timeline(batches, cls, th_conf):
    """Expand batches into a per-frame qualifying list starting at the first batch."""
    start = batches[0].frame_index
    q = [False] * (batches[-1].frame_index - start + 1)
    for b in batches:
        if any(d.ppe_class is cls and d.confidence >= th_conf for d in b.detections):
            q[b.frame_index - start] = True
    return start, q


@settings(max_examples=150, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    n=st.integers(1, 400),
    th_conf=st.floats(0.05, 1.0),
    window=st.integers(1, 20),
    data=st.data(),
)
def test_streaming_matches_brute_force_donning(seed, n, th_conf, window, data):
    freq = data.draw(st.integers(1, window))
    stream = _random_stream(random.Random(seed), n)
    acc = acc_for(th_conf, freq, window)
    start, q = _timeline(stream, MASK, th_conf)
    expected = satisfied_by_frame(q, freq, window)
    max_hits = 0
    for b in stream:
        acc.observe(b)
        k = b.frame_index - start
        assert acc.is_satisfied(MASK) == expected[k]
        # trailing run of non-qualifying frames
        run = 0
        while run <= k and not q[k - run]:
            run += 1
        assert acc.consecutive_absent_frames(MASK) == run
        max_hits = max(max_hits, acc.hit_count(MASK))
    assert max_hits <= window


@settings(max_examples=150, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    n=st.integers(1, 400),
    window=st.integers(1, 15),
    removal=st.integers(1, 20),
    data=st.data(),
)
def test_streaming_matches_brute_force_doffing(seed, n, window, removal, data):
    freq = data.draw(st.integers(1, window))
    stream = _random_stream(random.Random(seed), n)
    acc = acc_for(0.5, freq, window, removal=removal, mode=Mode.DOFFING)
    start, q = _timeline(stream, MASK, 0.5)
    trace = doffing_trace(q, freq, window, removal)
    events = []
    for b in stream:
        for t in acc.observe(b):
            if t.ppe_class is MASK:
                events.append((t.frame_index, "on" if t.kind is TransitionKind.BECAME_SATISFIED else "off"))
        k = b.frame_index - start
        assert acc.is_satisfied(MASK) == trace[k][0]
        assert acc.consecutive_absent_frames(MASK) == trace[k][1]
    # the streaming side can only emit on observed frames; oracle events in gaps
    # surface at the next observed frame
    observed = [b.frame_index - start for b in stream]
    expected_events = []
    for k, (_, _, ev) in enumerate(trace):
        if ev is not None:
            due = next(o for o in observed if o >= k)
            expected_events.append((due + start, ev))
    assert events == expected_events


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 300))
def test_donning_satisfaction_is_monotone_and_deterministic(seed, n):
    stream = _random_stream(random.Random(seed), n, classes=tuple(PpeClass))
    a, b = acc_for(0.3, 3, 8), acc_for(0.3, 3, 8)
    prev = {c: False for c in PpeClass}
    for batch in stream:
        assert a.observe(batch) == b.observe(batch)
        for c in PpeClass:
            now = a.is_satisfied(c)
            assert now or not prev[c]
            prev[c] = now
