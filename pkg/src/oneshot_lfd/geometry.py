"""Axis-aligned box distances used by the contact tests.

Objects are modelled as boxes centred on their centroid with full side
lengths ``extent``. Every function broadcasts over leading axes so a whole
trace can be processed at once.
"""

from __future__ import annotations

import numpy as np


def box_bounds(centroid, extent):
    c = np.asarray(centroid, dtype=float)
    h = 0.5 * np.asarray(extent, dtype=float)
    return c - h, c + h


def point_box_distance(p, lo, hi):
    """Euclidean distance from ``p`` to the box ``[lo, hi]`` (0 inside)."""
    p = np.asarray(p, dtype=float)
    q = np.clip(p, lo, hi)
    return np.sqrt(np.sum((p - q) ** 2, axis=-1))


def box_box_distance(c1, e1, c2, e2):
    """Surface-to-surface distance between two axis-aligned boxes."""
    gap = np.abs(np.asarray(c1, float) - np.asarray(c2, float))
    gap = gap - 0.5 * (np.asarray(e1, float) + np.asarray(e2, float))
    return np.sqrt(np.sum(np.maximum(gap, 0.0) ** 2, axis=-1))


def segment_box_distance(a, b, lo, hi):
    """Exact minimum distance between segment ``a-b`` and box ``[lo, hi]``.

    The squared distance along the segment is a convex piecewise quadratic
    in the segment parameter whose pieces change where a coordinate crosses
    a slab boundary. The minimum is attained at a piece boundary or at the
    clipped stationary point of one piece, so evaluating those candidates
    is exact.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), np.broadcast_shapes(a.shape, np.shape(lo)))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), lo.shape)
    a, b = np.broadcast_arrays(a, b)
    d = b - a
    lead = a.shape[:-1]

    with np.errstate(divide="ignore", invalid="ignore"):
        t_lo = (lo - a) / d
        t_hi = (hi - a) / d
    brk = np.concatenate([t_lo, t_hi], axis=-1)
    brk = np.where(np.isfinite(brk), np.clip(brk, 0.0, 1.0), 0.0)
    ends = np.broadcast_to(np.array([0.0, 1.0]), lead + (2,))
    ts = np.sort(np.concatenate([ends, brk], axis=-1), axis=-1)

    t0 = ts[..., :-1]
    t1 = ts[..., 1:]
    mid = 0.5 * (t0 + t1)
    pm = a[..., None, :] + mid[..., None] * d[..., None, :]
    lo_e = lo[..., None, :]
    hi_e = hi[..., None, :]
    target = np.where(pm < lo_e, lo_e, np.where(pm > hi_e, hi_e, pm))
    active = (pm < lo_e) | (pm > hi_e)
    de = np.where(active, d[..., None, :], 0.0)
    num = np.sum(de * (target - a[..., None, :]), axis=-1)
    den = np.sum(de * de, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_star = np.where(den > 0, num / den, mid)
    t_star = np.clip(t_star, t0, t1)

    cand = np.concatenate([ts, t_star], axis=-1)
    pts = a[..., None, :] + cand[..., None] * d[..., None, :]
    dist = point_box_distance(pts, lo_e, hi_e)
    return dist.min(axis=-1)
