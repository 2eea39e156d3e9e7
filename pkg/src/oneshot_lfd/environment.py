"""Simulated manipulation world: spring contact, peel progress, state detection.

The simulator lives in the vertical plane the planar arm moves in: ``x`` runs
along an object's length and ``y`` is up. Objects are boxes; the end
effector touches them through their top face only, so the contact normal is
always ``+y``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

PEELED = "peeled"
UNPEELED = "unpeeled"
PEEL_CELLS = 100


@dataclass
class SimObject:
    object_id: int
    cls: str
    centroid: np.ndarray  # (x, y) in the arm plane, m
    extent: np.ndarray  # (length, height), m
    stiffness: float  # N/m
    peel_threshold: float  # N, hidden from the learner
    states: tuple = (UNPEELED, PEELED)

    def __post_init__(self):
        self.centroid = np.asarray(self.centroid, dtype=float)
        self.extent = np.asarray(self.extent, dtype=float)
        if self.stiffness <= 0 or self.peel_threshold <= 0:
            raise ValueError(f"object {self.object_id}: stiffness and peel_threshold must be > 0")

    @property
    def peelable(self):
        return PEELED in self.states

    @property
    def top(self):
        return self.centroid[1] + 0.5 * self.extent[1]

    @property
    def x_range(self):
        half = 0.5 * self.extent[0]
        return self.centroid[0] - half, self.centroid[0] + half

    def penetration(self, ee):
        x0, x1 = self.x_range
        bottom = self.centroid[1] - 0.5 * self.extent[1]
        if not (x0 <= ee[0] <= x1) or ee[1] < bottom:
            return 0.0
        return max(0.0, self.top - ee[1])


@dataclass
class Environment:
    """Single-owner mutable world. Use :meth:`clone` for a fresh episode."""

    objects: dict
    noise: bool = False
    noise_amplitude: float = 0.2
    strip_fraction: float = 0.12
    peel_detect_fraction: float = 0.10
    seed: int = 0
    rng: np.random.Generator = field(default=None, repr=False)
    peel_map: dict = field(default_factory=dict)
    coverage: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.rng is None:
            self.rng = np.random.default_rng(self.seed)
        for oid in self.objects:
            self.peel_map.setdefault(oid, 0.0)
            self.coverage.setdefault(oid, np.zeros(PEEL_CELLS, dtype=bool))

    @classmethod
    def from_objects(cls, objects, **kw):
        return cls(objects={o.object_id: o for o in objects}, **kw)

    def clone(self):
        return copy.deepcopy(self)

    def contact(self, ee):
        """Return ``(object_id, penetration)`` for the deepest contact or ``(None, 0.0)``."""
        best, depth = None, 0.0
        for oid in sorted(self.objects):
            pen = self.objects[oid].penetration(ee)
            if pen > depth:
                best, depth = oid, pen
        return best, depth

    def true_force(self, ee):
        oid, pen = self.contact(ee)
        if oid is None:
            return 0.0
        return self.objects[oid].stiffness * pen


def contact_force(env, ee_pose):
    """Measured normal force at the end effector, N.

    Linear spring on penetration plus, when the environment has noise
    enabled, uniform sensor noise bounded by ``env.noise_amplitude``.
    """
    f = env.true_force(np.asarray(ee_pose, dtype=float))
    if env.noise and f > 0.0:
        f = max(0.0, f + env.rng.uniform(-env.noise_amplitude, env.noise_amplitude))
    return f


def apply_peel(env, object_id, path, forces):
    """Register one peeling pass over ``object_id``.

    ``path`` holds end-effector positions (N x 2) and ``forces`` the true
    normal force at each of them. Samples off the object's length are not
    part of the strip. The pass peels the length interval it swept only if
    every strip sample reached the object's peel threshold; covered cells
    are unioned with earlier passes so repeated passes never double count.
    """
    obj = env.objects[object_id]
    path = np.asarray(path, dtype=float).reshape(-1, 2)
    forces = np.asarray(forces, dtype=float).ravel()
    if len(path) != len(forces):
        raise ValueError("path and forces differ in length")
    if not obj.peelable:
        return env
    x0, x1 = obj.x_range
    on = (path[:, 0] >= x0) & (path[:, 0] <= x1)
    if not on.any() or np.any(forces[on] < obj.peel_threshold):
        return env
    u = (path[on, 0] - x0) / (x1 - x0)
    lo, hi = u.min(), u.max()
    edges = np.arange(PEEL_CELLS + 1) / PEEL_CELLS
    hit = (edges[1:] > lo) & (edges[:-1] < hi)
    if hi == lo:
        hit |= (edges[:-1] <= lo) & (edges[1:] >= lo)
    env.coverage[object_id] |= hit
    swept = env.strip_fraction * float(env.coverage[object_id].mean())
    env.peel_map[object_id] = max(env.peel_map[object_id], swept)
    return env


def detect_state(env, object_id):
    """Vision-equivalent state label of ``object_id``."""
    obj = env.objects[object_id]
    if not obj.peelable:
        return obj.states[0]
    return PEELED if env.peel_map[object_id] >= env.peel_detect_fraction else UNPEELED
