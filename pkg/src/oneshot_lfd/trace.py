"""Demonstration traces, the object database, trace files and a trace generator.

A trace is what perception would hand over after processing a demonstration
video: per-frame hand, wrist and hand-tip positions plus a centroid and a
state label for every object in view.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

FPS = 30.0
PEELED = "peeled"
UNPEELED = "unpeeled"


class TraceFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class TraceInvariantError(ValueError):
    pass


def _vec3(v) -> np.ndarray:
    a = np.array(v, dtype=float).reshape(3)
    a.setflags(write=False)
    return a


# --------------------------------------------------------------------------
# object database


@dataclass(frozen=True)
class ObjectClass:
    name: str
    stiffness: float  # N/m
    states: tuple
    peel_force_threshold: float  # N, simulator ground truth only
    extent: np.ndarray  # full side lengths (x, y, z), m
    mass: float = 0.0  # kg, stored but not used downstream

    def __post_init__(self):
        object.__setattr__(self, "extent", _vec3(self.extent))
        object.__setattr__(self, "states", tuple(self.states))
        if self.stiffness <= 0:
            raise ValueError(f"{self.name}: stiffness must be > 0")
        if self.peel_force_threshold <= 0:
            raise ValueError(f"{self.name}: peel_force_threshold must be > 0")
        if not self.states:
            raise ValueError(f"{self.name}: state labels must be non-empty")
        if np.any(self.extent <= 0):
            raise ValueError(f"{self.name}: extent must be positive")


@dataclass(frozen=True)
class ObjectDatabase:
    entries: Mapping[str, ObjectClass]

    def __getitem__(self, name: str) -> ObjectClass:
        try:
            return self.entries[name]
        except KeyError:
            raise KeyError(f"object class {name!r} not in database") from None

    def __contains__(self, name) -> bool:
        return name in self.entries

    def __iter__(self):
        return iter(self.entries.values())

    @classmethod
    def from_dict(cls, d: Mapping) -> "ObjectDatabase":
        return cls({k: ObjectClass(name=k, **v) for k, v in d.items()})


def default_database() -> ObjectDatabase:
    # peel thresholds are simulation parameters, not measured values
    P = (UNPEELED, PEELED)
    return ObjectDatabase(
        {
            "cucumber": ObjectClass("cucumber", 500.0, P, 1.5, (0.20, 0.045, 0.045), 0.30),
            "zucchini": ObjectClass("zucchini", 450.0, P, 1.3, (0.22, 0.05, 0.05), 0.35),
            "potato": ObjectClass("potato", 2000.0, P, 2.5, (0.10, 0.07, 0.06), 0.20),
            "carrot": ObjectClass("carrot", 2100.0, P, 2.2, (0.18, 0.03, 0.03), 0.10),
            "bowl": ObjectClass("bowl", 3000.0, ("empty", "full"), 50.0, (0.15, 0.15, 0.07), 0.40),
            "peeler": ObjectClass("peeler", 4000.0, ("idle",), 50.0, (0.15, 0.03, 0.02), 0.08),
        }
    )


# --------------------------------------------------------------------------
# trace data model


@dataclass(frozen=True)
class ObjectState:
    name: str
    peel_fraction: float | None = None

    def token(self) -> str:
        if self.peel_fraction is None:
            return self.name
        return f"{self.name}@{self.peel_fraction:.12g}"

    @classmethod
    def parse(cls, tok: str) -> "ObjectState":
        name, sep, frac = tok.partition("@")
        return cls(name, float(frac) if sep else None)


@dataclass(frozen=True, eq=False)
class ObjectRecord:
    object_id: int
    centroid: np.ndarray
    state: ObjectState

    def __post_init__(self):
        object.__setattr__(self, "centroid", _vec3(self.centroid))


@dataclass(frozen=True, eq=False)
class Frame:
    index: int
    time: float
    hand: np.ndarray
    wrist: np.ndarray
    hand_tip: np.ndarray
    objects: tuple

    def __post_init__(self):
        for name in ("hand", "wrist", "hand_tip"):
            object.__setattr__(self, name, _vec3(getattr(self, name)))
        object.__setattr__(self, "objects", tuple(self.objects))

    def object(self, object_id: int) -> ObjectRecord:
        for rec in self.objects:
            if rec.object_id == object_id:
                return rec
        raise KeyError(object_id)


@dataclass(frozen=True, eq=False)
class DemonstrationTrace:
    frames: tuple
    workspace_lo: np.ndarray
    workspace_hi: np.ndarray
    object_classes: Mapping[int, str]
    object_extents: Mapping[int, np.ndarray] = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "workspace_lo", _vec3(self.workspace_lo))
        object.__setattr__(self, "workspace_hi", _vec3(self.workspace_hi))
        object.__setattr__(self, "object_classes", dict(sorted(self.object_classes.items())))

    def __len__(self):
        return len(self.frames)

    @property
    def object_ids(self) -> tuple:
        return tuple(self.object_classes)

    @cached_property
    def times(self) -> np.ndarray:
        return np.array([f.time for f in self.frames])

    @cached_property
    def hand(self) -> np.ndarray:
        return np.stack([f.hand for f in self.frames])

    @cached_property
    def wrist(self) -> np.ndarray:
        return np.stack([f.wrist for f in self.frames])

    @cached_property
    def hand_tip(self) -> np.ndarray:
        return np.stack([f.hand_tip for f in self.frames])

    @cached_property
    def centroids(self) -> np.ndarray:
        """(frames, objects, 3), objects ordered as :attr:`object_ids`."""
        ids = self.object_ids
        return np.stack([np.stack([f.object(i).centroid for i in ids]) for f in self.frames])

    @cached_property
    def extents(self) -> np.ndarray:
        return np.stack([self.object_extents[i] for i in self.object_ids])

    def state(self, frame: int, object_id: int) -> ObjectState:
        return self.frames[frame].object(object_id).state


def validate_trace(trace: DemonstrationTrace, db: ObjectDatabase | None = None) -> DemonstrationTrace:
    """Check the trace invariants; raise :class:`TraceInvariantError` on the first failure."""
    db = db or default_database()
    frames = trace.frames
    if len(frames) < 2:
        raise TraceInvariantError("trace needs at least 2 frames")
    lo, hi = trace.workspace_lo, trace.workspace_hi
    if np.any(hi <= lo):
        raise TraceInvariantError("workspace bounds are empty")
    for oid, cls in trace.object_classes.items():
        if cls not in db:
            raise TraceInvariantError(f"object {oid} has unknown class {cls!r}")
    expected = set(trace.object_classes)
    prev_time = -math.inf
    for i, fr in enumerate(frames):
        if fr.index < 0:
            raise TraceInvariantError(f"negative frame index at frame {i}")
        if not fr.time > prev_time:
            raise TraceInvariantError(f"time not strictly increasing at frame {fr.index}")
        prev_time = fr.time
        if not fr.objects:
            raise TraceInvariantError(f"no objects at frame {fr.index}")
        ids = [r.object_id for r in fr.objects]
        if len(set(ids)) != len(ids):
            raise TraceInvariantError(f"duplicate object_id at frame {fr.index}")
        if set(ids) != expected:
            raise TraceInvariantError(f"object set changed at frame {fr.index}")
        pts = [fr.hand, fr.wrist, fr.hand_tip] + [r.centroid for r in fr.objects]
        for p in pts:
            if not np.all(np.isfinite(p)):
                raise TraceInvariantError(f"non-finite position at frame {fr.index}")
            if np.any(p < lo) or np.any(p > hi):
                raise TraceInvariantError(f"position outside workspace at frame {fr.index}")
        for r in fr.objects:
            cls = trace.object_classes[r.object_id]
            if r.state.name not in db[cls].states:
                raise TraceInvariantError(
                    f"state {r.state.name!r} not admissible for {cls} (object {r.object_id}) at frame {fr.index}"
                )
    return trace


def attach_extents(trace: DemonstrationTrace, db: ObjectDatabase) -> DemonstrationTrace:
    ext = {oid: db[cls].extent for oid, cls in trace.object_classes.items()}
    return DemonstrationTrace(trace.frames, trace.workspace_lo, trace.workspace_hi, trace.object_classes, ext)


# --------------------------------------------------------------------------
# file format

_MAGIC = "# lfd-trace v1"


def _fmt(x: float) -> str:
    return format(float(x), ".12g")


def format_trace(trace: DemonstrationTrace) -> str:
    lines = [
        _MAGIC,
        "# objects " + " ".join(f"{oid}:{cls}" for oid, cls in trace.object_classes.items()),
        "# workspace " + " ".join(_fmt(v) for v in (*trace.workspace_lo, *trace.workspace_hi)),
    ]
    for fr in trace.frames:
        head = [str(fr.index), _fmt(fr.time)]
        head += [_fmt(v) for v in (*fr.hand, *fr.wrist, *fr.hand_tip)]
        parts = [" ".join(head)]
        for rec in sorted(fr.objects, key=lambda r: r.object_id):
            parts.append(" ".join([str(rec.object_id), *(_fmt(v) for v in rec.centroid), rec.state.token()]))
        lines.append(" | ".join(parts))
    return "\n".join(lines) + "\n"


def write_trace(trace: DemonstrationTrace, path) -> None:
    Path(path).write_text(format_trace(trace), encoding="utf-8")


def parse_trace(text: str, db: ObjectDatabase | None = None) -> DemonstrationTrace:
    db = db or default_database()
    classes: dict[int, str] | None = None
    workspace = None
    frames = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].split()
            if body and body[0] == "objects":
                try:
                    classes = {int(k): v for k, v in (tok.split(":", 1) for tok in body[1:])}
                except ValueError:
                    raise TraceFormatError("bad objects header", lineno) from None
            elif body and body[0] == "workspace":
                try:
                    vals = [float(v) for v in body[1:]]
                except ValueError:
                    raise TraceFormatError("bad workspace header", lineno) from None
                if len(vals) != 6:
                    raise TraceFormatError("workspace header needs 6 numbers", lineno)
                workspace = (vals[:3], vals[3:])
            continue
        if classes is None or workspace is None:
            raise TraceFormatError("frame before objects/workspace header", lineno)
        frames.append(_parse_frame(line, lineno))
    if classes is None or workspace is None:
        raise TraceFormatError("missing objects/workspace header")
    trace = DemonstrationTrace(tuple(frames), workspace[0], workspace[1], classes)
    validate_trace(trace, db)
    return attach_extents(trace, db)


def _parse_frame(line: str, lineno: int) -> Frame:
    parts = [p.split() for p in line.split("|")]
    head = parts[0]
    if len(head) != 11:
        raise TraceFormatError(f"expected 11 frame fields, got {len(head)}", lineno)
    try:
        index = int(head[0])
        nums = [float(v) for v in head[1:]]
        objects = []
        for p in parts[1:]:
            if len(p) != 5:
                raise TraceFormatError(f"expected 5 object fields, got {len(p)}", lineno)
            objects.append(ObjectRecord(int(p[0]), [float(v) for v in p[1:4]], ObjectState.parse(p[4])))
    except ValueError as exc:
        if isinstance(exc, TraceFormatError):
            raise
        raise TraceFormatError(f"unparseable number ({exc})", lineno) from None
    return Frame(index, nums[0], nums[1:4], nums[4:7], nums[7:10], tuple(objects))


def load_trace(path, db: ObjectDatabase | None = None) -> DemonstrationTrace:
    return parse_trace(Path(path).read_text(encoding="utf-8"), db)


# --------------------------------------------------------------------------
# synthetic traces


@dataclass(frozen=True)
class ScenarioObject:
    object_id: int
    cls: str
    centroid: tuple
    state: str | None = None


@dataclass(frozen=True)
class Move:
    """Move the hand tip in a straight line to ``to`` over ``frames`` frames."""

    to: tuple
    frames: int


@dataclass(frozen=True)
class Stroke:
    """Drag the hand tip along the top face of ``object_id``.

    ``start``/``end`` are (x, y) offsets from the object centroid; the tip is
    on the surface from the first to the last frame of the stroke. When
    ``peel`` is set the object's peel fraction grows with swept length.
    """

    object_id: int
    start: tuple
    end: tuple
    frames: int
    peel: bool = False


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    objects: tuple
    start: tuple  # initial hand-tip position
    phases: tuple
    noise: float = 0.0  # uniform position noise amplitude, m
    workspace: tuple = ((-0.6, -0.6, -0.1), (1.2, 0.6, 0.6))
    labels: tuple = ()
    strip_fraction: float = 0.12
    peel_detect_fraction: float = 0.10


@dataclass(frozen=True)
class GroundTruth:
    keypoints: tuple
    contacts: tuple  # (make, break) frame pairs; break may equal len(trace)
    segment_labels: tuple

    def to_json(self) -> str:
        return json.dumps(
            {"keypoints": list(self.keypoints), "contacts": [list(c) for c in self.contacts],
             "segment_labels": list(self.segment_labels)},
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        d = json.loads(text)
        return cls(tuple(d["keypoints"]), tuple(tuple(c) for c in d["contacts"]), tuple(d["segment_labels"]))


WRIST_OFFSET = np.array([0.0, 0.0, 0.09])
HAND_OFFSET = np.array([0.0, 0.0, 0.03])


def _check_layout(scenario: ScenarioSpec, db: ObjectDatabase) -> None:
    objs = scenario.objects
    for i, a in enumerate(objs):
        for b in objs[i + 1 :]:
            ea, eb = db[a.cls].extent, db[b.cls].extent
            gap = np.abs(np.subtract(a.centroid, b.centroid)) - 0.5 * (ea + eb)
            if np.all(gap < 0):
                raise ValueError(f"objects {a.object_id} and {b.object_id} overlap")


def synthesize_trace(scenario: ScenarioSpec, seed: int, db: ObjectDatabase | None = None):
    """Render a scripted scenario into a trace plus its ground truth.

    Returns ``(trace, truth)``. The path is a pure function of the scenario;
    ``seed`` only drives the position noise.
    """
    db = db or default_database()
    _check_layout(scenario, db)
    rng = np.random.default_rng(seed)
    objs = {o.object_id: o for o in scenario.objects}
    tops = {oid: o.centroid[2] + 0.5 * db[o.cls].extent[2] for oid, o in objs.items()}

    tips = [np.asarray(scenario.start, dtype=float)]
    in_contact = [False]
    peel_events = []  # (frame, object_id, fraction)
    contacts = []
    for ph in scenario.phases:
        cur = tips[-1]
        if isinstance(ph, Move):
            to = np.asarray(ph.to, dtype=float)
            for k in range(1, ph.frames + 1):
                tips.append(cur + (to - cur) * (k / ph.frames))
                in_contact.append(False)
        else:
            o = objs[ph.object_id]
            c = np.asarray(o.centroid, dtype=float)
            length = db[o.cls].extent[0]
            p0 = np.array([c[0] + ph.start[0], c[1] + ph.start[1], tops[ph.object_id]])
            p1 = np.array([c[0] + ph.end[0], c[1] + ph.end[1], tops[ph.object_id]])
            make = len(tips)
            n = ph.frames
            for k in range(n):
                a = k / (n - 1) if n > 1 else 1.0
                tips.append(p0 + (p1 - p0) * a)
                in_contact.append(True)
                if ph.peel:
                    swept = abs(tips[-1][0] - p0[0]) / length
                    peel_events.append((len(tips) - 1, ph.object_id, scenario.strip_fraction * swept))
            contacts.append((make, len(tips)))

    nf = len(tips)
    tip = np.stack(tips)
    noise = scenario.noise
    jitter = (lambda: rng.uniform(-noise, noise, size=(nf, 3))) if noise > 0 else (lambda: 0.0)
    hand = tip + HAND_OFFSET + jitter()
    wrist = tip + WRIST_OFFSET + jitter()
    tip_n = tip + jitter()

    state = {}
    for oid, o in objs.items():
        state[oid] = ObjectState(o.state or db[o.cls].states[0])
    peel_at = {}
    for fr, oid, frac in peel_events:
        peel_at[(fr, oid)] = frac

    frames = []
    for i in range(nf):
        for oid in objs:
            if (i, oid) in peel_at:
                frac = max(peel_at[(i, oid)], state[oid].peel_fraction or 0.0)
                name = PEELED if frac >= scenario.peel_detect_fraction else UNPEELED
                state[oid] = ObjectState(name, frac)
        recs = tuple(ObjectRecord(oid, objs[oid].centroid, state[oid]) for oid in sorted(objs))
        frames.append(Frame(i, i / FPS, hand[i], wrist[i], tip_n[i], recs))

    lo, hi = scenario.workspace
    trace = DemonstrationTrace(tuple(frames), lo, hi, {oid: o.cls for oid, o in objs.items()})
    validate_trace(trace, db)
    trace = attach_extents(trace, db)

    kps = sorted({f for c in contacts for f in c if 0 < f < nf})
    labels = scenario.labels or _default_labels(in_contact, kps)
    return trace, GroundTruth(tuple(kps), tuple(contacts), tuple(labels))


def _default_labels(in_contact: Sequence[bool], kps: Sequence[int]) -> tuple:
    bounds = [0, *kps, len(in_contact)]
    labels = []
    seen_contact = False
    for a, _ in zip(bounds[:-1], bounds[1:]):
        if in_contact[a]:
            labels.append("MoveWithContact")
            seen_contact = True
        else:
            labels.append("Retract" if seen_contact else "Approach")
    return tuple(labels)


# --------------------------------------------------------------------------
# canned scenarios

HOVER = 0.025
SAFE_Z = 0.2


def _touch(obj_top: float, c, start, end, approach_frames, stroke_frames, oid, peel=False):
    """Phases for: above the stroke start at safe height, descend to hover, stroke."""
    sx, sy = c[0] + start[0], c[1] + start[1]
    a1 = approach_frames - approach_frames // 3
    a2 = approach_frames - a1
    return (
        Move((sx, sy, SAFE_Z), a1),
        Move((sx, sy, obj_top + HOVER), a2),
        Stroke(oid, start, end, stroke_frames, peel),
    )


def _lift(obj_top: float, c, end, home, frames):
    # lift-off is a one-frame jump back to hover height so contact breaks cleanly
    ex, ey = c[0] + end[0], c[1] + end[1]
    f1 = frames // 2
    return (
        Move((ex, ey, obj_top + HOVER), 1),
        Move((ex, ey, obj_top + HOVER + 0.05), f1 - 1),
        Move(home, frames - f1),
    )


def peel_scenario(noise: float = 0.002, retract: bool = True) -> ScenarioSpec:
    """Hand approaches a cucumber, peels one strip along its top and (optionally) retracts.

    Contact starts at frame 120 and, with ``retract``, breaks at frame 250.
    """
    db = default_database()
    cuc = ScenarioObject(1, "cucumber", (0.30, 0.0, 0.0225), UNPEELED)
    bowl = ScenarioObject(2, "bowl", (0.30, 0.40, 0.035), "empty")
    top = cuc.centroid[2] + 0.5 * db["cucumber"].extent[2]
    home = (-0.25, 0.0, 0.30)
    start, end = (-0.095, 0.0), (0.095, 0.0)
    phases = _touch(top, cuc.centroid, start, end, 119, 130, 1, peel=True)
    labels = ("Approach", "MoveWithContact")
    if retract:
        phases += _lift(top, cuc.centroid, end, home, 60)
        labels += ("Retract",)
    return ScenarioSpec(
        name="peel" if retract else "peel-demo",
        objects=(cuc, bowl),
        start=home,
        phases=phases,
        noise=noise,
        labels=labels,
    )


def no_contact_scenario(noise: float = 0.0) -> ScenarioSpec:
    cuc = ScenarioObject(1, "cucumber", (0.30, 0.0, 0.0225), UNPEELED)
    return ScenarioSpec(
        name="no-contact",
        objects=(cuc,),
        start=(-0.25, 0.0, 0.30),
        phases=(Move((0.1, 0.0, 0.25), 60), Move((0.2, 0.0, 0.2), 30)),
        noise=noise,
        labels=("Approach",),
    )


def random_scenario(rng: np.random.Generator, max_objects: int = 5, max_frames: int = 500,
                    db: ObjectDatabase | None = None) -> ScenarioSpec:
    """Random well-separated scene with zero to two scripted strokes."""
    db = db or default_database()
    classes = ["cucumber", "zucchini", "potato", "carrot", "bowl", "peeler"]
    n = int(rng.integers(1, max_objects + 1))
    cells = [(x, y) for x in (-0.3, 0.1, 0.5, 0.9) for y in (-0.35, 0.0, 0.35)]
    picks = rng.choice(len(cells), size=n, replace=False)
    objects = []
    for k, ci in enumerate(sorted(picks)):
        cls = classes[int(rng.integers(len(classes)))]
        ext = db[cls].extent
        cx, cy = cells[ci]
        cx += float(rng.uniform(-0.03, 0.03))
        cy += float(rng.uniform(-0.03, 0.03))
        objects.append(ScenarioObject(k + 1, cls, (cx, cy, 0.5 * ext[2])))

    home = (float(rng.uniform(-0.5, 1.1)), float(rng.uniform(-0.5, 0.5)), 0.4)
    phases = []
    frames = 0
    n_contacts = int(rng.integers(0, 3))
    for _ in range(n_contacts):
        o = objects[int(rng.integers(len(objects)))]
        ext = db[o.cls].extent
        top = o.centroid[2] + 0.5 * ext[2]
        hx, hy = 0.4 * ext[0], 0.4 * ext[1]
        start = (float(rng.uniform(-hx, hx)), float(rng.uniform(-hy, hy)))
        end = (float(rng.uniform(-hx, hx)), float(rng.uniform(-hy, hy)))
        ap, st, lf = int(rng.integers(20, 80)), int(rng.integers(15, 80)), int(rng.integers(15, 60))
        if frames + ap + st + lf + 1 > max_frames:
            break
        phases += _touch(top, o.centroid, start, end, ap, st, o.object_id)
        phases += _lift(top, o.centroid, end, (o.centroid[0] + end[0], o.centroid[1] + end[1], SAFE_Z + 0.1), lf)
        frames += ap + st + lf
    if not phases:
        phases.append(Move((float(rng.uniform(-0.5, 1.1)), float(rng.uniform(-0.5, 0.5)), 0.3), int(rng.integers(10, 200))))
    return ScenarioSpec(
        name="random",
        objects=tuple(objects),
        start=home,
        phases=tuple(phases),
        noise=float(rng.uniform(0.0, 0.002)),
    )


SCENARIOS = {
    "peel": lambda: peel_scenario(retract=True),
    "peel-demo": lambda: peel_scenario(retract=False),
    "no-contact": no_contact_scenario,
}
