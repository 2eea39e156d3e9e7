"""Self-evaluation: rewards, tabular Q-learning and the growing force ladder.

Only contact trajectory skills are tuned. Their actions replay the
demonstrated path at a fixed normal force; a new action, one force
increment above the last, is added when every existing action has failed.
Learning stops at the first action that reaches the goal state.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .control import ExecutionParams, ControllerGains, execute_policy, start_arm, tunable_steps
from .environment import detect_state
from .skills import Policy, SkillClass

QSTORE_VERSION = 1


class ActionSpaceExhausted(RuntimeError):
    pass


@dataclass(frozen=True)
class ContactTrajectoryAction:
    action_id: int
    target_force: float  # N
    base_trajectory: np.ndarray | None = field(default=None, compare=False, repr=False)


@dataclass
class ActionSet:
    """Append-only ladder ``F_base + k * dF``."""

    base_force: float = 0.5
    increment: float = 0.3
    ceiling: float = 10.0
    actions: list = field(default_factory=list)

    def __post_init__(self):
        if self.base_force <= 0 or self.increment <= 0 or self.ceiling < self.base_force:
            raise ValueError("need base_force > 0, increment > 0 and ceiling >= base_force")

    def __len__(self):
        return len(self.actions)

    def __iter__(self):
        return iter(self.actions)

    def __getitem__(self, i) -> ContactTrajectoryAction:
        return self.actions[i]

    def force_of(self, k: int) -> float:
        return round(self.base_force + k * self.increment, 12)

    @property
    def forces(self) -> list:
        return [a.target_force for a in self.actions]


@dataclass(frozen=True)
class GrowRequest:
    """Returned by :func:`select_action` when the action set should grow."""

    reason: str = ""


def grow_action(action_set: ActionSet, baseline=None) -> ContactTrajectoryAction:
    """Append the next rung of the force ladder."""
    k = len(action_set)
    force = action_set.force_of(k)
    if force > action_set.ceiling + 1e-12:
        raise ActionSpaceExhausted(
            f"action space exhausted: next force {force:g} N exceeds ceiling {action_set.ceiling:g} N"
        )
    base = None if baseline is None else np.asarray(baseline, dtype=float)
    a = ContactTrajectoryAction(k, force, base)
    action_set.actions.append(a)
    return a


@dataclass(frozen=True)
class RewardConfig:
    c1: float = 2.0
    c2: float = 5.0

    def __post_init__(self):
        if not (self.c2 > self.c1 > 0):
            raise ValueError(f"reward constants need c2 > c1 > 0, got c1={self.c1}, c2={self.c2}")


def reward(s, s_prime, s_star, cfg: RewardConfig = RewardConfig()) -> float:
    """``+c1`` if the next state is the goal, ``-c2`` otherwise. ``s`` is unused."""
    return cfg.c1 if s_prime == s_star else -cfg.c2


@dataclass
class QTable:
    cluster_id: int
    skill: SkillClass
    actions: ActionSet = field(default_factory=ActionSet)
    alpha: float = 0.5
    gamma: float = 0.3
    eps_grow: float = 0.8
    values: dict = field(default_factory=dict)  # (state, action_id) -> Q

    def __post_init__(self):
        if not 0 <= self.alpha <= 1 or not 0 <= self.gamma < 1 or not 0 <= self.eps_grow <= 1:
            raise ValueError("need alpha in [0, 1], gamma in [0, 1), eps_grow in [0, 1]")

    def q(self, s, a: int) -> float:
        return self.values.get((s, a), 0.0)

    def row(self, s) -> np.ndarray:
        return np.array([self.q(s, a.action_id) for a in self.actions], dtype=float)

    def max_q(self, s) -> float:
        r = self.row(s)
        return float(r.max()) if len(r) else 0.0

    def to_dict(self) -> dict:
        states = sorted({s for s, _ in self.values})
        return {
            "version": QSTORE_VERSION,
            "cluster_id": self.cluster_id,
            "skill": self.skill.value,
            "alpha": self.alpha,
            "gamma": self.gamma,
            "eps_grow": self.eps_grow,
            "action_set": {
                "base_force": self.actions.base_force,
                "increment": self.actions.increment,
                "ceiling": self.actions.ceiling,
            },
            "actions": [
                {
                    "action_id": a.action_id,
                    "target_force": a.target_force,
                    "base_trajectory": None if a.base_trajectory is None else np.round(a.base_trajectory, 12).tolist(),
                }
                for a in self.actions
            ],
            "values": {s: [self.q(s, a.action_id) for a in self.actions] for s in states},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QTable":
        if d.get("version") != QSTORE_VERSION:
            raise ValueError(f"unsupported Q table version {d.get('version')!r}")
        aset = ActionSet(**d["action_set"])
        for rec in d["actions"]:
            base = rec.get("base_trajectory")
            aset.actions.append(
                ContactTrajectoryAction(
                    int(rec["action_id"]), float(rec["target_force"]), None if base is None else np.asarray(base, float)
                )
            )
        values = {}
        for s, row in d["values"].items():
            for a, v in zip(aset, row):
                values[(s, a.action_id)] = float(v)
        return cls(int(d["cluster_id"]), SkillClass(d["skill"]), aset, d["alpha"], d["gamma"], d["eps_grow"], values)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def q_update(table: QTable, s, a: int, r: float, s_next, alpha: float | None = None) -> QTable:
    """``Q(s,a) += alpha (r + gamma max_a' Q(s', a') - Q(s,a))`` in place."""
    if not np.isfinite(r):
        raise ValueError(f"non-finite reward {r}")
    al = table.alpha if alpha is None else alpha
    q = table.q(s, a)
    table.values[(s, a)] = q + al * (r + table.gamma * table.max_q(s_next) - q)
    return table


EXPLOIT = "exploit"
EXPLORE = "explore"


def select_action(table: QTable, s, mode: str, rng: np.random.Generator):
    """Pick an action id, or a :class:`GrowRequest`.

    Exploit takes the argmax (ties to the lowest id). Explore grows with
    probability ``eps_grow`` and otherwise replays a random existing action,
    unless every existing action has already been penalised, in which case
    it grows as well.
    """
    if len(table.actions) == 0:
        return GrowRequest("empty action set")
    row = table.row(s)
    if mode == EXPLOIT:
        return int(np.argmax(row))
    if mode != EXPLORE:
        raise ValueError(f"unknown mode {mode!r}")
    u = rng.random()
    pick = int(rng.integers(len(row)))
    if u < table.eps_grow:
        return GrowRequest("explore: grow")
    if np.all(row < 0):
        return GrowRequest("explore: every existing action penalised")
    return pick


# --------------------------------------------------------------------------
# stiffness clusters


@dataclass
class StiffnessClusterer:
    """1-D k-means (Lloyd) on stiffness with quantile initialisation."""

    k: int = 2
    centers: np.ndarray | None = None
    max_iter: int = 100

    def fit(self, stiffness: Sequence[float]) -> "StiffnessClusterer":
        x = np.sort(np.asarray(stiffness, dtype=float))
        if len(x) < self.k:
            raise ValueError(f"need at least {self.k} values to fit {self.k} clusters")
        c = np.quantile(x, (np.arange(self.k) + 0.5) / self.k)
        for _ in range(self.max_iter):
            lab = self._assign(x, c)
            new = np.array([x[lab == j].mean() if np.any(lab == j) else c[j] for j in range(self.k)])
            if np.allclose(new, c, rtol=0, atol=1e-12):
                break
            c = new
        self.centers = np.sort(new)
        return self

    @staticmethod
    def _assign(x, centers):
        d = np.abs(np.asarray(x, dtype=float)[:, None] - centers[None, :])
        return np.argmin(d, axis=1)  # first minimum, so ties go to the lower center

    def predict(self, stiffness: float) -> int:
        if self.centers is None:
            raise RuntimeError("clusterer is not fitted")
        return int(self._assign([stiffness], self.centers)[0])


def cluster_for(obj, clusterer: StiffnessClusterer) -> int:
    return clusterer.predict(obj.stiffness)


# --------------------------------------------------------------------------
# persistence


class QStore:
    """Q tables keyed by ``(cluster_id, skill)``, optionally backed by a directory."""

    def __init__(self, root: str | Path | None = None, factory: Callable[[int, SkillClass], QTable] | None = None):
        self.root = Path(root) if root is not None else None
        self.factory = factory or (lambda c, s: QTable(c, s))
        self.tables: dict = {}
        if self.root is not None and self.root.exists():
            for p in sorted(self.root.glob("cluster*_*.json")):
                t = QTable.from_dict(json.loads(p.read_text()))
                self.tables[(t.cluster_id, t.skill)] = t

    @staticmethod
    def filename(cluster_id: int, skill: SkillClass) -> str:
        return f"cluster{cluster_id}_{skill.value}.json"

    def get(self, cluster_id: int, skill: SkillClass) -> QTable:
        key = (cluster_id, skill)
        if key not in self.tables:
            self.tables[key] = self.factory(cluster_id, skill)
        return self.tables[key]

    def digests(self) -> dict:
        return {f"{c}:{s.value}": t.digest() for (c, s), t in sorted(self.tables.items(), key=lambda kv: (kv[0][0], kv[0][1].index))}

    def save(self) -> list:
        if self.root is None:
            raise ValueError("in-memory Q store has no directory")
        self.root.mkdir(parents=True, exist_ok=True)
        out = []
        for (c, s), t in self.tables.items():
            p = self.root / self.filename(c, s)
            p.write_text(t.to_json())
            out.append(p)
        return sorted(out)


# --------------------------------------------------------------------------
# learning loop


@dataclass(frozen=True)
class EpisodeRecord:
    episode: int
    action_id: int
    force: float
    reward: float
    outcome: str  # "success" or "failure"
    mode: str
    final_state: str
    reason: str = ""


@dataclass
class LearningReport:
    episodes: list
    success: bool
    action_set_size: int
    cluster_id: int | None
    seed: int
    reason: str = ""

    @property
    def forces(self) -> list:
        return [e.force for e in self.episodes]

    def to_csv(self) -> str:
        lines = ["episode,action_id,force,reward,outcome"]
        for e in self.episodes:
            lines.append(f"{e.episode},{e.action_id},{e.force:.6g},{e.reward:.6g},{e.outcome}")
        return "\n".join(lines) + "\n"


def learn_until_success(policy: Policy, env_factory: Callable, store: QStore, clusterer: StiffnessClusterer,
                        rewards: RewardConfig = RewardConfig(), max_episodes: int = 50, seed: int = 0,
                        gains: ControllerGains | None = None, params: ExecutionParams | None = None,
                        arm_factory: Callable | None = None) -> LearningReport:
    """Run episodes until the policy reaches its final goal state.

    Each episode executes the whole policy in a fresh environment from
    ``env_factory``. The first episode exploits the current table; later
    ones explore. The table is updated after every attempt and the loop
    stops at the first success.
    """
    rng = np.random.default_rng(seed)
    tuned = tunable_steps(policy)
    if len(tuned) > 1:
        raise NotImplementedError("policies with more than one contact trajectory step")
    episodes = []
    if not tuned:
        env = env_factory()
        outs = execute_policy(policy, env, start_arm(policy, env, arm_factory() if arm_factory else None), {}, gains, params)
        ok = bool(outs) and all(o.success for o in outs) and len(outs) == policy.m
        return LearningReport([], ok, 0, None, seed, "" if ok else "policy has no tunable step")

    idx = tuned[0]
    step = policy.steps[idx]
    cluster = cluster_for(env_factory().objects[step.object_id], clusterer)
    table = store.get(cluster, step.cls)
    for ep in range(1, max_episodes + 1):
        mode = EXPLOIT if ep == 1 else EXPLORE
        env = env_factory()
        s = detect_state(env, step.object_id)
        choice = select_action(table, s, mode, rng)
        if isinstance(choice, GrowRequest):
            try:
                action = grow_action(table.actions, step.path)
            except ActionSpaceExhausted as e:
                return LearningReport(episodes, False, len(table.actions), cluster, seed, str(e))
        else:
            action = table.actions[choice]
        arm = start_arm(policy, env, arm_factory() if arm_factory else None)
        outs = execute_policy(policy, env, arm, {idx: action}, gains, params)
        if len(outs) <= idx:
            # a step before the tuned one failed; no force action can change that
            bad = outs[-1]
            why = f"{bad.skill.value} failed before the tuned step: {bad.reason}"
            episodes.append(EpisodeRecord(ep, action.action_id, action.target_force, 0.0, "failure", mode,
                                          bad.final_state, why))
            return LearningReport(episodes, False, len(table.actions), cluster, seed, why)
        res = outs[idx]
        s_next = detect_state(env, step.object_id)
        r = reward(s, s_next, step.goal_state, rewards)
        q_update(table, s, action.action_id, r, s_next)
        done = len(outs) == policy.m and all(o.success for o in outs)
        episodes.append(EpisodeRecord(ep, action.action_id, action.target_force, r,
                                      "success" if done else "failure", mode, s_next, res.reason))
        if done:
            return LearningReport(episodes, True, len(table.actions), cluster, seed)
    return LearningReport(episodes, False, len(table.actions), cluster, seed, "episode budget exhausted")


# --------------------------------------------------------------------------
# small MDP used for fixed-point checks


@dataclass(frozen=True)
class TabularMDP:
    """Deterministic MDP: ``next_state[s, a]`` and ``rewards[s, a]``."""

    next_state: np.ndarray
    rewards: np.ndarray
    gamma: float = 0.3


def default_mdp() -> TabularMDP:
    return TabularMDP(
        np.array([[1, 2, 0], [2, 0, 1], [0, 1, 2]]),
        np.array([[1.0, -1.0, 0.5], [0.0, 2.0, -0.5], [-1.0, 0.3, 1.5]]),
    )


def polynomial_rate(power: float = 0.6) -> Callable[[int], float]:
    return lambda n: n ** -power


def q_learning_sweeps(mdp: TabularMDP, n_updates: int, rate: Callable[[int], float] = polynomial_rate()):
    """Sweep every ``(s, a)`` in order with a per-pair decaying rate.

    Returns the final ``Q`` array and the number of updates applied.
    """
    nS, nA = mdp.rewards.shape
    Q = np.zeros((nS, nA))
    visits = np.zeros((nS, nA), dtype=int)
    u = 0
    while u < n_updates:
        for s in range(nS):
            for a in range(nA):
                if u >= n_updates:
                    return Q, u
                visits[s, a] += 1
                target = mdp.rewards[s, a] + mdp.gamma * Q[mdp.next_state[s, a]].max()
                Q[s, a] += rate(visits[s, a]) * (target - Q[s, a])
                u += 1
    return Q, u
