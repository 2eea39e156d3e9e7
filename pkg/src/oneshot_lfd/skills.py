"""Skill classification and policy assembly.

Each demonstration segment is classified into one of the a priori skills by
a decision tree over ``(phi, psi, uX, previous class, object id)``. The
sequence is then patched with transition skills and paired with goal
states read from the demonstration.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Sequence

import numpy as np


class SkillClass(enum.Enum):
    Approach = "Approach"
    Grasp = "Grasp"
    Transport = "Transport"
    Retract = "Retract"
    Scoop = "Scoop"
    Unscoop = "Unscoop"
    GuardedMove = "GuardedMove"
    VisualServoing = "VisualServoing"
    MoveWithContact = "MoveWithContact"
    MoveToContact = "MoveToContact"

    @property
    def index(self) -> int:
        return _ORDER.index(self)

    @property
    def force_based(self) -> bool:
        return self in FORCE_BASED

    @property
    def tunable(self) -> bool:
        """Skills whose contact force is tuned by self-evaluation."""
        return self is SkillClass.MoveWithContact


_ORDER = list(SkillClass)
FORCE_BASED = frozenset(
    {SkillClass.MoveToContact, SkillClass.MoveWithContact, SkillClass.GuardedMove, SkillClass.Grasp}
)


def parse_skill(name: str | None) -> SkillClass | None:
    if name in (None, "", "-", "None"):
        return None
    return SkillClass(name)


# --------------------------------------------------------------------------
# features and decision tree

FEATURES = ("phi", "psi", "uX", "prev_class", "object_id")


@dataclass(frozen=True)
class SegmentFeatureVector:
    phi: int
    psi: int
    uX: int
    prev_class: SkillClass | None
    object_id: int

    def values(self) -> tuple:
        prev = -1 if self.prev_class is None else self.prev_class.index
        return (self.phi, self.psi, self.uX, prev, self.object_id)


class ContradictoryLabels(ValueError):
    pass


@dataclass
class Node:
    label: SkillClass | None = None
    feature: int | None = None
    value: int | None = None
    left: "Node | None" = None  # feature == value
    right: "Node | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.label is not None


@dataclass
class DecisionTree:
    root: Node
    train_accuracy: float = float("nan")
    n_train: int = 0

    def predict(self, x: SegmentFeatureVector) -> SkillClass:
        v = x.values()
        node = self.root
        while not node.is_leaf:
            node = node.left if v[node.feature] == node.value else node.right
        return node.label

    def leaves(self):
        stack, out = [self.root], []
        while stack:
            n = stack.pop()
            if n.is_leaf:
                out.append(n)
            else:
                stack += [n.right, n.left]
        return out

    def depth(self) -> int:
        def d(n):
            return 0 if n.is_leaf else 1 + max(d(n.left), d(n.right))

        return d(self.root)


def _entropy(labels) -> float:
    n = len(labels)
    return -sum(c / n * math.log2(c / n) for c in Counter(labels).values())


def _majority(labels) -> SkillClass:
    counts = Counter(labels)
    top = max(counts.values())
    return min((c for c, k in counts.items() if k == top), key=lambda c: c.index)


def _grow(rows: list, labels: list) -> Node:
    if len(set(labels)) == 1:
        return Node(label=labels[0])
    base = _entropy(labels)
    n = len(rows)
    best = None
    for f in range(len(FEATURES)):
        for v in sorted({r[f] for r in rows}):
            left = [y for r, y in zip(rows, labels) if r[f] == v]
            if not left or len(left) == n:
                continue
            right = [y for r, y in zip(rows, labels) if r[f] != v]
            gain = base - (len(left) * _entropy(left) + len(right) * _entropy(right)) / n
            # strict comparison keeps the lowest feature index, then lowest value, on ties
            if best is None or gain > best[0] + 1e-12:
                best = (gain, f, v)
    if best is None:
        return Node(label=_majority(labels))
    _, f, v = best
    li = [i for i, r in enumerate(rows) if r[f] == v]
    ri = [i for i, r in enumerate(rows) if r[f] != v]
    return Node(
        feature=f,
        value=v,
        left=_grow([rows[i] for i in li], [labels[i] for i in li]),
        right=_grow([rows[i] for i in ri], [labels[i] for i in ri]),
    )


def train_tree(dataset: Sequence[tuple]) -> DecisionTree:
    """Top-down induction with information-gain equality splits.

    ``dataset`` is a sequence of ``(SegmentFeatureVector, SkillClass)``.
    """
    if not dataset:
        raise ValueError("empty training set")
    seen: dict[tuple, SkillClass] = {}
    clashes = []
    for x, y in dataset:
        key = x.values()
        if key in seen and seen[key] != y:
            clashes.append(f"{x} -> {seen[key].value} / {y.value}")
        seen.setdefault(key, y)
    if clashes:
        raise ContradictoryLabels("contradictory labels: " + "; ".join(clashes))
    rows = [x.values() for x, _ in dataset]
    labels = [y for _, y in dataset]
    tree = DecisionTree(_grow(rows, labels), n_train=len(rows))
    hits = sum(tree.predict(x) == y for x, y in dataset)
    tree.train_accuracy = hits / len(dataset)
    return tree


def classify(tree: DecisionTree, features: SegmentFeatureVector) -> SkillClass:
    return tree.predict(features)


def load_label_table(text: str | None = None) -> list:
    """Rows of ``(SkillClass, phi, psi, uX, prev)`` from the labeling table."""
    if text is None:
        text = resources.files("oneshot_lfd.data").joinpath("skill_labels.csv").read_text(encoding="utf-8")
    body = "\n".join(ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#"))
    rows = []
    for rec in csv.DictReader(io.StringIO(body)):
        rows.append(
            (SkillClass(rec["class"]), int(rec["phi"]), int(rec["psi"]), int(rec["uX"]), parse_skill(rec["prev"]))
        )
    return rows


def canonical_vectors(table=None) -> dict:
    out = {}
    for cls, phi, psi, ux, prev in table or load_label_table():
        out.setdefault(cls, SegmentFeatureVector(phi, psi, ux, prev, 1))
    return out


def training_set(table=None, object_ids: Sequence[int] = (1, 2, 3, 4, 5)) -> list:
    return [
        (SegmentFeatureVector(phi, psi, ux, prev, oid), cls)
        for cls, phi, psi, ux, prev in (table or load_label_table())
        for oid in object_ids
    ]


def default_tree() -> DecisionTree:
    return train_tree(training_set())


# --------------------------------------------------------------------------
# transitions


class UnknownTransition(KeyError):
    def __str__(self):
        a, b = self.args[0]
        return f"no transition rule for {a.value} -> {b.value}"


@dataclass(frozen=True)
class TransitionTable:
    """Bridging skills to insert between consecutive classes."""

    bridges: dict

    def between(self, a: SkillClass, b: SkillClass) -> tuple:
        try:
            return self.bridges[(a, b)]
        except KeyError:
            raise UnknownTransition((a, b)) from None


CONTACT_MAKERS = frozenset({SkillClass.MoveToContact, SkillClass.GuardedMove})


def default_transitions() -> TransitionTable:
    """Positional -> force-based skill needs a MoveToContact first.

    Targets that establish contact themselves (MoveToContact, GuardedMove)
    need no bridge; every other pair chains directly.
    """
    bridges = {}
    for a in SkillClass:
        for b in SkillClass:
            need = not a.force_based and b.force_based and b not in CONTACT_MAKERS
            bridges[(a, b)] = (SkillClass.MoveToContact,) if need else ()
    return TransitionTable(bridges)


# --------------------------------------------------------------------------
# policy


@dataclass(frozen=True, eq=False)
class PolicyStep:
    cls: SkillClass
    goal_state: str
    start_state: str
    object_id: int
    object_class: str
    start_frame: int
    end_frame: int
    path: np.ndarray  # hand relative to the object, (n, 3) m
    bridge: bool = False
    segment: object = field(default=None, repr=False)

    def describe(self) -> str:
        return f"{self.cls.value} {self.goal_state} {self.start_frame} {self.end_frame}"

    def to_dict(self) -> dict:
        return {
            "class": self.cls.value,
            "goal_state": self.goal_state,
            "start_state": self.start_state,
            "object_id": self.object_id,
            "object_class": self.object_class,
            "start_frame": self.start_frame,
            "end_frame": self.end_frame,
            "bridge": self.bridge,
            "path": np.round(self.path, 12).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyStep":
        return cls(
            SkillClass(d["class"]),
            d["goal_state"],
            d["start_state"],
            int(d["object_id"]),
            d["object_class"],
            int(d["start_frame"]),
            int(d["end_frame"]),
            np.asarray(d["path"], dtype=float).reshape(-1, 3),
            bool(d.get("bridge", False)),
        )


@dataclass(frozen=True)
class Policy:
    steps: tuple

    @property
    def m(self) -> int:
        return len(self.steps)

    @property
    def classes(self) -> list:
        return [s.cls for s in self.steps]

    @property
    def goal_states(self) -> list:
        return [s.goal_state for s in self.steps]

    def to_text(self) -> str:
        return "".join(s.describe() + "\n" for s in self.steps)

    def to_dict(self) -> dict:
        return {"version": 1, "steps": [s.to_dict() for s in self.steps]}

    @classmethod
    def from_dict(cls, d: dict) -> "Policy":
        return cls(tuple(PolicyStep.from_dict(s) for s in d["steps"]))


def insert_transitions(steps: Sequence[PolicyStep], transitions: TransitionTable | None = None) -> Policy:
    """Insert bridging skills between consecutive steps.

    A bridge takes the goal state the next step starts from, and its path
    joins the end of the previous step to the start of the next.
    """
    if not steps:
        raise ValueError("nothing to patch: empty skill sequence")
    table = transitions or default_transitions()
    out = [steps[0]]
    for nxt in steps[1:]:
        prev = out[-1]
        for b in table.between(prev.cls, nxt.cls):
            out.append(
                PolicyStep(
                    cls=b,
                    goal_state=nxt.start_state,
                    start_state=nxt.start_state,
                    object_id=nxt.object_id,
                    object_class=nxt.object_class,
                    start_frame=prev.end_frame,
                    end_frame=nxt.start_frame,
                    path=np.stack([prev.path[-1], nxt.path[0]]),
                    bridge=True,
                )
            )
        out.append(nxt)
    return Policy(tuple(out))


def segment_records(trace, segments) -> list:
    """Everything inference needs from a segmented trace, as plain dicts."""
    out = []
    for seg in segments:
        oid = seg.interacting_object_id
        out.append(
            {
                "start": seg.start,
                "end": seg.end,
                "phi": seg.phi,
                "psi": seg.psi,
                "uX": seg.uX,
                "uY": seg.uY,
                "mean_dX": seg.mean_dX,
                "mean_speed": seg.mean_speed,
                "object_id": oid,
                "object_class": trace.object_classes[oid],
                "start_state": trace.state(seg.start, oid).name,
                "end_state": trace.state(seg.end, oid).name,
                "path": np.asarray(seg.X, dtype=float),
            }
        )
    return out


def policy_from_records(records, tree: DecisionTree | None = None,
                        transitions: TransitionTable | None = None) -> Policy:
    """Classify segment records in order and assemble the executable policy."""
    tree = tree or default_tree()
    steps = []
    prev = None
    for rec in records:
        x = SegmentFeatureVector(int(rec["phi"]), int(rec["psi"]), int(rec["uX"]), prev, int(rec["object_id"]))
        cls = classify(tree, x)
        steps.append(
            PolicyStep(
                cls=cls,
                goal_state=rec["end_state"],
                start_state=rec["start_state"],
                object_id=int(rec["object_id"]),
                object_class=rec["object_class"],
                start_frame=int(rec["start"]),
                end_frame=int(rec["end"]),
                path=np.asarray(rec["path"], dtype=float).reshape(-1, 3),
                segment=rec,
            )
        )
        prev = cls
    return insert_transitions(steps, transitions)


def build_policy(trace, segments, tree: DecisionTree | None = None,
                 transitions: TransitionTable | None = None) -> Policy:
    return policy_from_records(segment_records(trace, segments), tree, transitions)


def with_goal(step: PolicyStep, goal: str) -> PolicyStep:
    return replace(step, goal_state=goal)
