import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from oneshot_lfd.segmentation import (
    ContactParams, Keypoint, contact_phi, debounce, frame_features, raw_features, roi_ids, segment_bounds,
    segment_demonstration,
)
from oneshot_lfd.trace import (
    DemonstrationTrace, Frame, ObjectRecord, ObjectState, attach_extents, default_database, no_contact_scenario,
    peel_scenario, synthesize_trace,
)

binary = st.lists(st.integers(0, 1), min_size=0, max_size=60)


@settings(max_examples=300)
@given(binary, st.integers(1, 6))
def test_debounce_matches_loop_oracle(values, window):
    assert debounce(values, window).tolist() == oracles.loop_debounce(values, window)


@given(binary)
def test_window_one_is_identity(values):
    assert debounce(values, 1).tolist() == values


def test_short_glitch_is_suppressed():
    assert debounce([0, 0, 1, 1, 0, 0, 0, 1, 1, 1, 1], 3).tolist() == [0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1]


@settings(max_examples=300)
@given(st.integers(1, 80), st.lists(st.integers(0, 90), max_size=12), st.integers(1, 10))
def test_segment_bounds_match_oracle(n, cuts, min_frames):
    kps = [Keypoint(c, "psi", "make") for c in cuts]
    got = segment_bounds(n, kps, min_frames)
    assert got == oracles.merge_short(n, cuts, min_frames)
    # contiguous cover of every frame
    assert got[0][0] == 0 and got[-1][1] == n - 1
    assert all(b[0] == a[1] + 1 for a, b in zip(got, got[1:]))


def scene(objects, hand=(0.0, 0.0, 0.3)):
    """A one-frame view; ``objects`` maps id -> (class, centroid)."""
    recs = tuple(ObjectRecord(i, c, ObjectState(default_database()[k].states[0])) for i, (k, c) in objects.items())
    fr = Frame(0, 0.0, hand, np.add(hand, (0, 0, 0.05)), np.add(hand, (0, 0, -0.02)), recs)
    tr = DemonstrationTrace((fr, Frame(1, 0.1, fr.hand, fr.wrist, fr.hand_tip, recs)), (-1, -1, -1), (1, 1, 1),
                            {i: k for i, (k, _) in objects.items()})
    return fr, attach_extents(tr, default_database())


def test_phi_sees_touching_objects_inside_roi():
    # cucumber 0.2 long ends at x=0.1; peeler 0.15 long starts at x=0.105
    fr, tr = scene({1: ("cucumber", (0, 0, 0)), 2: ("peeler", (0.18, 0, 0)), 3: ("bowl", (0.6, 0.6, 0))},
                   hand=(0.0, 0.0, 0.1))
    p = ContactParams()
    assert roi_ids(fr, p) == frozenset({1, 2})
    phi = contact_phi(fr, roi_ids(fr, p), p, tr.object_extents)
    assert phi == {1: 1, 2: 1}
    feats = frame_features(fr, tr, p)
    _, _, _, raw = raw_features(tr, p)
    assert raw[0].tolist() == [1, 1, 0]
    assert oracles.frame_contacts(fr, tr.object_extents, p.contact_distance, p.roi_radius)[1] == {1: 1, 2: 1, 3: 0}
    assert feats.owner_id == 1


def test_phi_off_when_gap_exceeds_contact_distance():
    fr, tr = scene({1: ("cucumber", (0, 0, 0)), 2: ("peeler", (0.2, 0, 0))}, hand=(0.0, 0.0, 0.1))
    p = ContactParams()
    assert contact_phi(fr, roi_ids(fr, p), p, tr.object_extents) == {1: 0, 2: 0}


def test_objects_outside_roi_get_no_phi():
    fr, tr = scene({1: ("cucumber", (0, 0, 0)), 2: ("peeler", (0.18, 0, 0))}, hand=(0.0, 0.0, 0.3))
    p = ContactParams()
    assert roi_ids(fr, p) == frozenset()
    assert contact_phi(fr, roi_ids(fr, p), p, tr.object_extents) == {}


def test_single_object_has_no_phi_partner():
    fr, tr = scene({1: ("cucumber", (0, 0, 0))})
    assert contact_phi(fr, frozenset({1}), ContactParams(), tr.object_extents) == {}


def test_psi_when_hand_segment_reaches_owner_box():
    p = ContactParams()
    # hand tip 0.02 below the hand; cucumber top at z = 0.0225
    fr, tr = scene({1: ("cucumber", (0, 0, 0))}, hand=(0.0, 0.0, 0.04))
    assert frame_features(fr, tr, p).psi == 1
    fr, tr = scene({1: ("cucumber", (0, 0, 0))}, hand=(0.0, 0.0, 0.06))
    assert frame_features(fr, tr, p).psi == 0


def test_no_contact_trace_is_one_segment():
    trace, truth = synthesize_trace(no_contact_scenario(), 0)
    kps, segs = segment_demonstration(trace)
    assert kps == [] and list(truth.keypoints) == []
    assert [(s.start, s.end) for s in segs] == [(0, len(trace) - 1)]


def test_peel_demo_segments_have_expected_flags():
    trace, _ = synthesize_trace(peel_scenario(), 0)
    _, segs = segment_demonstration(trace)
    # approach, stroke on the cucumber, retract
    assert [s.psi for s in segs] == [0, 1, 0]
    assert [s.uX for s in segs] == [0, 0, 1]
    assert all(s.interacting_object_id == 1 for s in segs)


def test_params_validation():
    with pytest.raises(ValueError):
        ContactParams(contact_distance=-1)
    with pytest.raises(ValueError):
        ContactParams(debounce_window=0)
