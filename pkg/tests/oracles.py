"""Brute-force reference computations, deliberately naive and independent of the package internals."""

from __future__ import annotations

import numpy as np


def satisfied_by_frame(qualifying, th_frequency, window_frames):
    """Monotone satisfaction from a full per-frame list of qualifying flags.

    ``qualifying[k]`` is True when frame k (0-based position in the timeline)
    had a qualifying detection. Recounts the window from scratch per frame.
    """
    out = []
    sat = False
    for k in range(len(qualifying)):
        lo = max(0, k - window_frames + 1)
        count = sum(1 for j in range(lo, k + 1) if qualifying[j])
        sat = sat or count >= th_frequency
        out.append(sat)
    return out


def satisfied_matrix(qualifying: np.ndarray, th_frequency: np.ndarray, window_frames: np.ndarray) -> np.ndarray:
    """Vectorized version of :func:`satisfied_by_frame` for an (n_frames, n_classes) bool matrix."""
    n, m = qualifying.shape
    csum = np.vstack([np.zeros((1, m), dtype=np.int64), np.cumsum(qualifying, axis=0, dtype=np.int64)])
    idx = np.arange(n)
    out = np.empty((n, m), dtype=bool)
    for c in range(m):
        lo = np.maximum(0, idx - window_frames[c] + 1)
        counts = csum[idx + 1, c] - csum[lo, c]
        out[:, c] = np.maximum.accumulate(counts >= th_frequency[c])
    return out


def doffing_trace(qualifying, th_frequency, window_frames, removal_window_frames):
    """Per-frame (satisfied, absent_run, event) for one class under doffing rules.

    After a removal only frames strictly after the removal frame count
    toward re-satisfaction. ``event`` is "on", "off" or None.
    """
    out = []
    sat = False
    window_start = 0  # first frame eligible to count after the last removal
    for k in range(len(qualifying)):
        run = 0
        j = k
        while j >= 0 and not qualifying[j]:
            run += 1
            j -= 1
        lo = max(window_start, k - window_frames + 1)
        count = sum(1 for j in range(lo, k + 1) if qualifying[j])
        event = None
        if not sat and count >= th_frequency:
            sat, event = True, "on"
        elif sat and run >= removal_window_frames:
            sat, event = False, "off"
            window_start = k + 1
        out.append((sat, run, event))
    return out


def expected_donning_alerts(order, labels):
    """Hand rule: each completion flags every earlier step still pending, then completes."""
    done = set()
    alerts = []
    for step in order:
        if step in done:
            continue
        for j in range(step):
            if j not in done:
                alerts.append(("missed_step", j, labels[j]))
        done.add(step)
        alerts.append(("step_completed", step, labels[step]))
    if len(done) == len(labels):
        alerts.append(("session_complete", None, None))
    return alerts
