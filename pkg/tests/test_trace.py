import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oneshot_lfd.trace import (
    Frame, ObjectRecord, ObjectState, TraceFormatError, TraceInvariantError, DemonstrationTrace,
    default_database, format_trace, parse_trace, peel_scenario, random_scenario, synthesize_trace, validate_trace,
)


def two_frame_text(**override):
    lines = {
        "magic": "# lfd-trace v1",
        "objects": "# objects 1:cucumber",
        "workspace": "# workspace -1 -1 -1 1 1 1",
        "f0": "0 0 0 0 0.3 0 0 0.35 0 0 0.28 | 1 0.1 0 0.02 unpeeled",
        "f1": "1 0.0333 0 0 0.3 0 0 0.35 0 0 0.28 | 1 0.1 0 0.02 unpeeled",
    }
    lines.update(override)
    return "\n".join(v for v in lines.values() if v is not None) + "\n"


def test_minimal_trace_parses():
    tr = parse_trace(two_frame_text())
    assert len(tr) == 2 and tr.object_ids == (1,)
    assert np.allclose(tr.extents[0], default_database()["cucumber"].extent)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_format_parse_roundtrip(seed):
    trace, _ = synthesize_trace(random_scenario(np.random.default_rng(seed), max_frames=120), seed)
    again = parse_trace(format_trace(trace))
    assert format_trace(again) == format_trace(trace)
    # files carry 12 significant digits
    assert np.allclose(again.hand, trace.hand, rtol=1e-11, atol=1e-12)
    assert np.allclose(again.centroids, trace.centroids, rtol=1e-11, atol=1e-12)


def test_peel_fraction_token_roundtrip():
    s = ObjectState("peeled", 0.125)
    assert ObjectState.parse(s.token()) == s
    assert ObjectState.parse("empty") == ObjectState("empty")


@pytest.mark.parametrize("key,line,lineno", [
    ("f1", "1 0.0333 0 0 0.3", 5),
    ("f0", "0 0 0 0 0.3 0 0 0.35 0 0 x | 1 0.1 0 0.02 unpeeled", 4),
    ("f1", "1 0.0333 0 0 0.3 0 0 0.35 0 0 0.28 | 1 0.1 0 unpeeled", 5),
    ("workspace", "# workspace -1 -1 -1 1 1", 3),
])
def test_format_errors_carry_line_numbers(key, line, lineno):
    with pytest.raises(TraceFormatError) as ei:
        parse_trace(two_frame_text(**{key: line}))
    assert ei.value.line == lineno
    assert str(ei.value).startswith(f"line {lineno}:")


def test_missing_header_is_a_format_error():
    with pytest.raises(TraceFormatError):
        parse_trace(two_frame_text(objects=None))


@pytest.mark.parametrize("override,msg", [
    ({"f1": "1 0 0 0 0.3 0 0 0.35 0 0 0.28 | 1 0.1 0 0.02 unpeeled"}, "time not strictly increasing"),
    ({"f1": "1 0.1 0 0 0.3 0 0 0.35 0 0 0.28 | 1 0.1 0 0.02 boiled"}, "not admissible"),
    ({"f1": "1 0.1 0 0 3.0 0 0 0.35 0 0 0.28 | 1 0.1 0 0.02 unpeeled"}, "outside workspace"),
    ({"objects": "# objects 1:turnip"}, "unknown class"),
    ({"f1": "1 0.1 0 0 0.3 0 0 0.35 0 0 0.28 | 2 0.1 0 0.02 unpeeled"}, "object set changed"),
    ({"f1": None}, "at least 2 frames"),
])
def test_invariant_violations(override, msg):
    with pytest.raises(TraceInvariantError, match=msg):
        parse_trace(two_frame_text(**override))


def test_duplicate_object_ids_rejected():
    fr = lambda i: Frame(i, 0.1 * i, (0, 0, 0.3), (0, 0, 0.35), (0, 0, 0.28),
                         (ObjectRecord(1, (0.1, 0, 0), ObjectState("unpeeled")),) * 2)
    tr = DemonstrationTrace((fr(0), fr(1)), (-1, -1, -1), (1, 1, 1), {1: "cucumber"})
    with pytest.raises(TraceInvariantError, match="duplicate"):
        validate_trace(tr)


def test_generator_is_deterministic_per_seed():
    a, ta = synthesize_trace(peel_scenario(), 3)
    b, tb = synthesize_trace(peel_scenario(), 3)
    assert format_trace(a) == format_trace(b) and ta.to_json() == tb.to_json()
