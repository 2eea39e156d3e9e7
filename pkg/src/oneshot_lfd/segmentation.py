"""Physical-interaction keypoints and demonstration segmentation.

Per frame the workspace is split into Voronoi cells seeded by the object
centroids. ``psi`` says whether the hand touches the object owning the
hand's cell; ``phi`` says, for each object inside the hand's region of
interest, whether it touches its nearest other object. Keypoints are the
frames where a debounced ``psi`` or ``phi`` value flips, and the trace is cut
into segments at those frames.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .geometry import box_bounds, box_box_distance, segment_box_distance
from .trace import DemonstrationTrace, Frame

MAKE = "make"
BREAK = "break"


@dataclass(frozen=True)
class ContactParams:
    contact_distance: float = 0.01  # d_c, m
    roi_radius: float = 0.25  # m
    debounce_window: int = 3  # frames a flip must persist
    min_segment_frames: int = 5
    min_speed: float = 0.02  # v_min for the hand-moving flag, m/s

    def __post_init__(self):
        if self.contact_distance < 0 or self.roi_radius <= 0:
            raise ValueError("contact_distance must be >= 0 and roi_radius > 0")
        if self.debounce_window < 1 or self.min_segment_frames < 1:
            raise ValueError("debounce_window and min_segment_frames must be >= 1")
        if self.min_speed < 0:
            raise ValueError("min_speed must be >= 0")


def step(v):
    """1 where ``v >= 0`` (zero included), else 0."""
    return np.where(np.asarray(v, dtype=float) >= 0.0, 1, 0)


# --------------------------------------------------------------------------
# Voronoi partition


@dataclass(frozen=True, eq=False)
class VoronoiPartition:
    ids: np.ndarray
    seeds: np.ndarray  # (n, 3)
    lo: np.ndarray
    hi: np.ndarray

    def owners(self, points) -> np.ndarray:
        """Owning object id for each point; equidistant points go to the lower id."""
        p = np.asarray(points, dtype=float)
        single = p.ndim == 1
        p = np.atleast_2d(p)
        if np.any(p < self.lo) or np.any(p > self.hi):
            raise ValueError("query point outside the workspace")
        d2 = np.sum((p[:, None, :] - self.seeds[None, :, :]) ** 2, axis=-1)
        # ids are sorted ascending, so argmin's first-occurrence rule is the tie-break
        out = self.ids[np.argmin(d2, axis=1)]
        return out[0] if single else out

    def owner(self, point) -> int:
        return int(self.owners(point))


def partition_workspace(frame: Frame, workspace) -> VoronoiPartition:
    if not frame.objects:
        raise ValueError("partition needs at least one object")
    recs = sorted(frame.objects, key=lambda r: r.object_id)
    lo, hi = workspace
    return VoronoiPartition(
        np.array([r.object_id for r in recs]),
        np.stack([r.centroid for r in recs]),
        np.asarray(lo, dtype=float),
        np.asarray(hi, dtype=float),
    )


# --------------------------------------------------------------------------
# per-frame contact conditions


def contact_psi(frame: Frame, partition: VoronoiPartition, params: ContactParams, extents) -> int:
    owner = partition.owner(frame.hand)
    rec = frame.object(owner)
    lo, hi = box_bounds(rec.centroid, extents[owner])
    d = segment_box_distance(frame.wrist, frame.hand_tip, lo, hi)
    return int(d <= params.contact_distance)


def roi_ids(frame: Frame, params: ContactParams) -> frozenset:
    return frozenset(
        r.object_id for r in frame.objects if np.linalg.norm(r.centroid - frame.hand) <= params.roi_radius
    )


def contact_phi(frame: Frame, roi: frozenset, params: ContactParams, extents) -> dict:
    """Object-object contact for each ROI object against its nearest other object.

    Nearest is by surface distance with ties to the lower id. A scene with a
    single object has no partner, so the result is empty.
    """
    if len(frame.objects) < 2:
        return {}
    out = {}
    for oid in sorted(roi):
        me = frame.object(oid)
        best = None
        for other in sorted(frame.objects, key=lambda r: r.object_id):
            if other.object_id == oid:
                continue
            d = float(box_box_distance(me.centroid, extents[oid], other.centroid, extents[other.object_id]))
            if best is None or d < best:
                best = d
        out[oid] = int(best <= params.contact_distance)
    return out


@dataclass(frozen=True)
class ContactFeatureFrame:
    index: int
    psi: int
    phi: dict
    owner_id: int
    roi_ids: frozenset


def frame_features(frame: Frame, trace: DemonstrationTrace, params: ContactParams) -> ContactFeatureFrame:
    part = partition_workspace(frame, (trace.workspace_lo, trace.workspace_hi))
    roi = roi_ids(frame, params)
    ext = trace.object_extents
    return ContactFeatureFrame(
        frame.index,
        contact_psi(frame, part, params, ext),
        contact_phi(frame, roi, params, ext),
        part.owner(frame.hand),
        roi,
    )


@dataclass(frozen=True, eq=False)
class ContactFeatures:
    """Whole-trace raw and debounced features; ``phi`` columns follow ``ids``."""

    ids: np.ndarray
    owner: np.ndarray  # (F,)
    psi_raw: np.ndarray  # (F,)
    phi_raw: np.ndarray  # (F, n), 0 for objects outside the ROI
    psi: np.ndarray
    phi: np.ndarray


def raw_features(trace: DemonstrationTrace, params: ContactParams):
    """Vectorised psi/phi/owner for every frame of ``trace``."""
    ids = np.array(trace.object_ids)
    cents = trace.centroids  # (F, n, 3)
    ext = trace.extents  # (n, 3)
    hand = trace.hand
    nf, n = cents.shape[:2]

    d2 = np.sum((hand[:, None, :] - cents) ** 2, axis=-1)
    col = np.argmin(d2, axis=1)
    owner = ids[col]

    c_own = cents[np.arange(nf), col]
    lo, hi = box_bounds(c_own, ext[col])
    dist = segment_box_distance(trace.wrist, trace.hand_tip, lo, hi)
    psi = (dist <= params.contact_distance).astype(int)

    phi = np.zeros((nf, n), dtype=int)
    if n > 1:
        gap = np.abs(cents[:, :, None, :] - cents[:, None, :, :]) - 0.5 * (ext[:, None, :] + ext[None, :, :])
        pair = np.sqrt(np.sum(np.maximum(gap, 0.0) ** 2, axis=-1))
        pair[:, np.arange(n), np.arange(n)] = np.inf
        touching = (pair.min(axis=2) <= params.contact_distance).astype(int)
        in_roi = np.sqrt(d2) <= params.roi_radius
        phi = np.where(in_roi, touching, 0)
    return ids, owner, psi, phi


def debounce(values, window: int) -> np.ndarray:
    """Suppress flips that do not persist for ``window`` frames.

    The output starts at ``values[0]`` and switches to a new value only at
    the start of a run of that value lasting at least ``window`` frames.
    """
    v = np.asarray(values)
    out = np.empty_like(v)
    if len(v) == 0:
        return out
    change = np.flatnonzero(np.diff(v)) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [len(v)]])
    cur = v[0]
    for a, b in zip(starts, ends):
        if v[a] != cur and b - a >= window:
            cur = v[a]
        out[a:b] = cur
    return out


def contact_features(trace: DemonstrationTrace, params: ContactParams) -> ContactFeatures:
    ids, owner, psi, phi = raw_features(trace, params)
    w = params.debounce_window
    psi_d = debounce(psi, w)
    phi_d = np.stack([debounce(phi[:, j], w) for j in range(phi.shape[1])], axis=1)
    return ContactFeatures(ids, owner, psi, phi, psi_d, phi_d)


@dataclass(frozen=True)
class Keypoint:
    frame: int
    feature: str  # "psi" or "phi:<object_id>"
    direction: str  # MAKE or BREAK


def _flips(series: np.ndarray):
    idx = np.flatnonzero(np.diff(series)) + 1
    return [(int(i), MAKE if series[i] == 1 else BREAK) for i in idx]


def detect_keypoints(trace: DemonstrationTrace, params: ContactParams, features: ContactFeatures | None = None):
    feats = features or contact_features(trace, params)
    kps = [Keypoint(f, "psi", d) for f, d in _flips(feats.psi)]
    for j, oid in enumerate(feats.ids):
        kps += [Keypoint(f, f"phi:{oid}", d) for f, d in _flips(feats.phi[:, j])]
    return sorted(kps, key=lambda k: (k.frame, -1 if k.feature == "psi" else int(k.feature[4:])))


# --------------------------------------------------------------------------
# segments


@dataclass(frozen=True, eq=False)
class Segment:
    start: int  # first frame, inclusive
    end: int  # last frame, inclusive
    psi: int
    phi: int
    uX: int
    uY: int
    interacting_object_id: int
    X: np.ndarray  # hand minus interacting-object centroid, (n, 3) m
    Y: np.ndarray  # hand velocity, (n - 1, 3) m/s
    mean_dX: float  # mean rate of change of |X|, m/s
    mean_speed: float  # m/s

    @property
    def frames(self) -> int:
        return self.end - self.start + 1


def segment_bounds(n_frames: int, keypoints, min_frames: int):
    """Frame ranges cut at keypoints; short pieces merge into the preceding one."""
    cuts = sorted({k.frame for k in keypoints if 0 < k.frame < n_frames})
    starts = [0, *cuts]
    changed = True
    while changed and len(starts) > 1:
        changed = False
        ends = [*starts[1:], n_frames]
        for i, (a, b) in enumerate(zip(starts, ends)):
            if b - a < min_frames:
                # first piece has no predecessor, so it absorbs the next one
                del starts[1 if i == 0 else i]
                changed = True
                break
    ends = [*starts[1:], n_frames]
    return [(a, b - 1) for a, b in zip(starts, ends)]


def _majority(x) -> int:
    return int(np.mean(x) >= 0.5)


def _mode(values) -> int:
    counts = Counter(int(v) for v in values)
    top = max(counts.values())
    return min(v for v, c in counts.items() if c == top)


def segment_trace(trace: DemonstrationTrace, keypoints, params: ContactParams | None = None,
                  features: ContactFeatures | None = None):
    """Cut ``trace`` into segments at ``keypoints`` and compute their features.

    Relative trajectories of contact segments use the touched object. A
    segment without hand contact uses the object touched in the next contact
    segment, or the last touched object when no contact follows; a trace
    with no contact at all uses the hand's most frequent Voronoi owner.
    """
    params = params or ContactParams()
    feats = features or contact_features(trace, params)
    ranges = segment_bounds(len(trace), keypoints, params.min_segment_frames)

    psis = [_majority(feats.psi[a : b + 1]) for a, b in ranges]
    touched = []
    for (a, b), p in zip(ranges, psis):
        if p:
            sel = feats.owner[a : b + 1][feats.psi[a : b + 1] == 1]
            touched.append(_mode(sel if len(sel) else feats.owner[a : b + 1]))
        else:
            touched.append(None)
    targets = []
    for i, (a, b) in enumerate(ranges):
        if touched[i] is not None:
            targets.append(touched[i])
            continue
        nxt = next((t for t in touched[i + 1 :] if t is not None), None)
        prev = next((t for t in reversed(touched[:i]) if t is not None), None)
        targets.append(nxt if nxt is not None else prev if prev is not None else _mode(feats.owner[a : b + 1]))

    col_of = {int(oid): j for j, oid in enumerate(feats.ids)}
    t = trace.times
    segs = []
    for (a, b), p, oid in zip(ranges, psis, targets):
        sl = slice(a, b + 1)
        X = trace.hand[sl] - trace.centroids[sl, col_of[oid]]
        dt = np.diff(t[sl])
        if len(dt):
            mean_dX = float(np.mean(np.diff(np.linalg.norm(X, axis=1)) / dt))
            Y = np.diff(trace.hand[sl], axis=0) / dt[:, None]
            mean_speed = float(np.mean(np.linalg.norm(Y, axis=1)))
        else:
            mean_dX, Y, mean_speed = 0.0, np.zeros((0, 3)), 0.0
        phi_any = feats.phi[sl].max(axis=1) if feats.phi.shape[1] else np.zeros(b - a + 1)
        segs.append(
            Segment(
                start=a,
                end=b,
                psi=p,
                phi=_majority(phi_any),
                uX=int(step(mean_dX)),
                uY=int(mean_speed >= params.min_speed),
                interacting_object_id=int(oid),
                X=X,
                Y=Y,
                mean_dX=mean_dX,
                mean_speed=mean_speed,
            )
        )
    return segs


def segment_demonstration(trace: DemonstrationTrace, params: ContactParams | None = None):
    """Keypoints and segments in one pass over the features."""
    params = params or ContactParams()
    feats = contact_features(trace, params)
    kps = detect_keypoints(trace, params, feats)
    return kps, segment_trace(trace, kps, params, feats)
