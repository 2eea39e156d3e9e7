"""Planar arm, the two control laws and the per-skill controller loops.

The arm lives in the simulator's vertical plane (``x`` along the object,
``y`` up) with its base at the origin. Demonstrated hand paths are stored
relative to the interacting object; they are replayed in the simulator
relative to the same object, taking the demonstration's ``(dx, dz)`` as the
plane's ``(x, y)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .environment import Environment, apply_peel, contact_force, detect_state
from .skills import Policy, PolicyStep, SkillClass
from .trace import HAND_OFFSET

log = logging.getLogger(__name__)

NORMAL = np.array([0.0, 1.0])  # outward normal of every contact face
TOOL_DOWN = -math.pi / 2


class IKError(ValueError):
    pass


class ControlError(RuntimeError):
    """Skill aborted: non-finite feedback, unreachable target or missing action."""


@dataclass
class PlanarArm:
    """Serial planar arm. With three links the tool angle is held fixed in IK."""

    lengths: tuple = (0.35, 0.3, 0.1)
    tool_angle: float = TOOL_DOWN
    admittance: float = 1e-3  # rad per N m per step
    theta: np.ndarray = field(default=None)

    def __post_init__(self):
        self.lengths = tuple(float(v) for v in self.lengths)
        if len(self.lengths) not in (2, 3) or min(self.lengths) <= 0:
            raise ValueError("arm needs 2 or 3 positive link lengths")
        if self.theta is None:
            self.theta = np.zeros(len(self.lengths))
        self.theta = np.asarray(self.theta, dtype=float)

    @property
    def dof(self) -> int:
        return len(self.lengths)

    def fk(self, theta=None) -> np.ndarray:
        th = self.theta if theta is None else np.asarray(theta, dtype=float)
        a = np.cumsum(th)
        L = np.asarray(self.lengths)
        return np.array([np.sum(L * np.cos(a)), np.sum(L * np.sin(a))])

    def jacobian(self, theta=None) -> np.ndarray:
        th = self.theta if theta is None else np.asarray(theta, dtype=float)
        a = np.cumsum(th)
        L = np.asarray(self.lengths)
        # column i sums the links distal to joint i
        sx = np.cumsum((L * np.sin(a))[::-1])[::-1]
        cx = np.cumsum((L * np.cos(a))[::-1])[::-1]
        return np.vstack([-sx, cx])

    def ik(self, x) -> np.ndarray:
        """Analytic elbow-up solution (``theta[1] <= 0``)."""
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise IKError(f"non-finite target {x}")
        if self.dof == 3:
            l1, l2, l3 = self.lengths
            w = x - l3 * np.array([math.cos(self.tool_angle), math.sin(self.tool_angle)])
        else:
            l1, l2 = self.lengths
            w = x
        c = (w @ w - l1 * l1 - l2 * l2) / (2 * l1 * l2)
        if c > 1 + 1e-12 or c < -1 - 1e-12:
            raise IKError(f"target {x.tolist()} out of reach")
        t2 = -math.acos(min(1.0, max(-1.0, c)))
        t1 = math.atan2(w[1], w[0]) - math.atan2(l2 * math.sin(t2), l1 + l2 * math.cos(t2))
        if self.dof == 3:
            return np.array([t1, t2, self.tool_angle - t1 - t2])
        return np.array([t1, t2])

    def move_to(self, x) -> np.ndarray:
        self.theta = self.ik(x)
        return self.fk()


@dataclass(frozen=True)
class ControllerGains:
    k1: float = 0.2
    k2: float = 0.1
    K1: float = 5.0
    K2: float = 0.1

    def __post_init__(self):
        for name in ("k1", "k2", "K1", "K2"):
            if np.any(np.asarray(getattr(self, name)) <= 0):
                raise ValueError(f"gain {name} must be strictly positive")


# --------------------------------------------------------------------------
# control laws

FeedbackFn = Callable[..., np.ndarray]


def pose_error(x_t, x_d, s_star=None) -> np.ndarray:
    return np.asarray(x_d, dtype=float) - np.asarray(x_t, dtype=float)


def _checked(f, what):
    f = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(f)):
        raise ControlError(f"non-finite {what} feedback: {f}")
    return f


def positional_step(x_t, x_d, s_star, gains: ControllerGains, feedback: FeedbackFn = pose_error, f_prev=None):
    """One positional update ``x + k1 (f + k2 fdot)``.

    ``fdot`` is the backward difference ``f - f_prev`` (zero on the first
    step). Returns ``(x_next, f)`` so the caller can carry ``f`` forward.
    """
    f = _checked(feedback(x_t, x_d, s_star), "positional")
    fdot = np.zeros_like(f) if f_prev is None else f - f_prev
    return np.asarray(x_t, dtype=float) + gains.k1 * (f + gains.k2 * fdot), f


def joint_error(arm: PlanarArm, theta, x_d, s_star=None) -> np.ndarray:
    """``theta(x_t) - theta(x_d)`` through the arm's inverse kinematics."""
    return np.asarray(theta, dtype=float) - arm.ik(x_d)


def impedance_step(theta, F_d, x_d, s_star, gains: ControllerGains, arm: PlanarArm,
                   feedback: FeedbackFn | None = None, f_prev=None, cond_cap: float = 1e6,
                   tau_max: float = 50.0):
    """Joint torque ``J^T F_d + K1 (f + K2 fdot)``; returns ``(tau, f)``.

    ``F_d`` is the desired end-effector force (N, plane vector). Near a
    singularity (condition number above ``cond_cap``) the torque is clamped
    to ``tau_max`` in norm and a warning is logged.
    """
    theta = np.asarray(theta, dtype=float)
    if feedback is None:
        f = joint_error(arm, theta, x_d, s_star)
    else:
        f = feedback(theta, x_d, s_star)
    f = _checked(f, "impedance")
    fdot = np.zeros_like(f) if f_prev is None else f - f_prev
    J = arm.jacobian(theta)
    tau = J.T @ np.asarray(F_d, dtype=float) + gains.K1 * (f + gains.K2 * fdot)
    if np.linalg.cond(J) > cond_cap:
        n = np.linalg.norm(tau)
        if n > tau_max:
            tau = tau * (tau_max / n)
        log.warning("near-singular Jacobian (cond > %g); torque clamped", cond_cap)
    return tau, f


def feedback_move_to_contact(force_n: float, target: float = 0.5) -> float:
    """Normal-force error ``F_n - F_d`` in N."""
    return float(force_n) - target


# --------------------------------------------------------------------------
# skill execution


@dataclass(frozen=True)
class ExecutionParams:
    budget: int = 2000  # control steps per skill
    rate_hz: float = 100.0
    pos_tol: float = 1e-3  # m
    contact_force: float = 0.5  # N, MoveToContact setpoint
    compliance: float = 1e-3  # m/N, force error to displacement in MoveToContact
    creep: float = 2e-5  # m, least descent per step while short of the setpoint
    press_steps: int = 150
    lookahead: float = 0.05  # m, along the contact path
    edge_margin: float = 0.005  # m, contact targets keep this far inside the face
    cond_cap: float = 1e6
    tau_max: float = 50.0

    def __post_init__(self):
        if self.budget <= 0 or self.rate_hz <= 0 or self.pos_tol <= 0:
            raise ValueError("budget, rate_hz and pos_tol must be positive")
        if self.compliance <= 0 or self.creep < 0 or self.lookahead <= 0:
            raise ValueError("compliance and lookahead must be positive, creep non-negative")


@dataclass
class SkillOutcome:
    skill: SkillClass
    success: bool
    final_state: str
    force_log: np.ndarray
    pose_log: np.ndarray
    steps_used: int
    reason: str = ""
    target_force: float | None = None

    def log_rows(self, dt: float):
        for i, (f, p) in enumerate(zip(self.force_log, self.pose_log)):
            yield i * dt, float(p[0]), float(p[1]), float(f)


def sim_path(step: PolicyStep, env: Environment) -> np.ndarray:
    """Demonstrated hand path of ``step`` as tool positions in the arm plane."""
    return sim_path_from_relative(step.path, env, step.object_id)


def sim_path_from_relative(rel_path, env: Environment, oid: int) -> np.ndarray:
    rel = np.asarray(rel_path, dtype=float).reshape(-1, 3) - HAND_OFFSET
    return env.objects[oid].centroid + rel[:, [0, 2]]


class _Recorder:
    def __init__(self, env: Environment):
        self.env = env
        self.forces: list = []
        self.poses: list = []

    def record(self, x):
        self.poses.append(np.array(x, dtype=float))
        self.forces.append(contact_force(self.env, x))
        return self.forces[-1]

    def arrays(self):
        return np.array(self.forces, dtype=float), np.array(self.poses, dtype=float).reshape(-1, 2)


def _follow(arm, env, waypoints, gains, params, rec):
    """Track ``waypoints`` one per control step, then settle on the last one."""
    x = arm.fk()
    f_prev = None
    goal = waypoints[-1]
    for t in range(params.budget):
        x_d = waypoints[min(t, len(waypoints) - 1)]
        x, f_prev = positional_step(x, x_d, None, gains, pose_error, f_prev)
        x = arm.move_to(x)
        rec.record(x)
        if t >= len(waypoints) - 1 and np.linalg.norm(x - goal) < params.pos_tol:
            return t + 1, ""
    return params.budget, "step budget exhausted before reaching the goal pose"


def _on_face(env, oid, x, margin):
    x0, x1 = env.objects[oid].x_range
    m = min(margin, 0.25 * (x1 - x0))
    return np.clip(x, x0 + m, x1 - m)


def _move_to_contact(arm, env, oid, gains, params, rec, target_force):
    """Slide over the contact face, then close in along ``-n`` until ``F_n >= F_d``.

    Both directions use the positional law. Along the surface the error is
    the offset to the face; along the normal it is the force error scaled by
    ``compliance``, with a small least step so a zero-gain corner cannot stall.
    """
    x = arm.fk()
    lateral = float(_on_face(env, oid, x[0], params.edge_margin))
    f_prev = None
    for t in range(params.budget):
        fn = rec.record(x)
        if fn >= target_force:
            return t, ""
        aligned = abs(lateral - x[0]) < params.pos_tol
        normal = params.compliance * feedback_move_to_contact(fn, target_force) if aligned else 0.0
        err = np.array([lateral - x[0], normal])
        x_next, f_prev = positional_step(x, None, None, gains, lambda *_: err, f_prev)
        if aligned:
            x_next[1] = min(x_next[1], x[1] - params.creep)
        x = arm.move_to(x_next)
    return params.budget, "step budget exhausted before contact"


def _tangential_feedback(tau, J, F_d):
    """Strip the normal component from the position-error part of ``tau``.

    Under admittance the tool settles where ``n^T J A (tau - J^T n F) = 0``,
    so any normal share of the feedback torque would bias the contact force
    away from ``F_d``. Removing it leaves force along ``n`` and position
    tracking along the surface.
    """
    ff = J.T @ F_d
    fb = tau - ff
    g = J.T @ NORMAL
    return ff + fb - g * (NORMAL @ J @ fb) / (g @ g)


def _move_with_contact(arm, env, oid, path, target_force, gains, params, rec):
    """Admittance traverse of ``path`` (plane points) at ``target_force``.

    The arm yields to the residual between commanded and felt torque:
    ``theta <- theta - A (tau - J^T n F)``. The commanded torque pushes
    along ``-n`` with ``target_force`` while the joint-space error term
    pulls toward the lookahead point at the current height.
    """
    xs = path[:, 0]
    F_d = target_force * NORMAL
    f_prev = None
    idx = 0
    strip_x, strip_f = [], []
    for t in range(params.budget):
        x = arm.fk()
        true_f = env.true_force(x)
        rec.record(x)
        if t < params.press_steps:
            x_t = xs[0]
        else:
            strip_x.append(x.copy())
            strip_f.append(true_f)
            while idx < len(xs) - 1 and abs(xs[idx] - x[0]) < params.lookahead:
                idx += 1
            x_t = xs[idx]
            if idx == len(xs) - 1 and abs(xs[-1] - x[0]) < params.pos_tol:
                apply_peel(env, oid, np.array(strip_x), np.array(strip_f))
                return t + 1, ""
        try:
            tau, f_prev = impedance_step(arm.theta, F_d, np.array([x_t, x[1]]), None, gains, arm,
                                         f_prev=f_prev, cond_cap=params.cond_cap, tau_max=params.tau_max)
        except IKError as e:
            raise ControlError(f"MoveWithContact: {e}") from e
        J = arm.jacobian()
        tau = _tangential_feedback(tau, J, F_d)
        arm.theta = arm.theta - arm.admittance * (tau - J.T @ (NORMAL * true_f))
    if strip_x:
        apply_peel(env, oid, np.array(strip_x), np.array(strip_f))
    return params.budget, "step budget exhausted before the end of the contact path"


def execute_skill(step: PolicyStep, action, env: Environment, arm: PlanarArm,
                  gains: ControllerGains | None = None, params: ExecutionParams | None = None) -> SkillOutcome:
    """Run the controller for ``step`` until its goal condition or the step budget."""
    gains = gains or ControllerGains()
    params = params or ExecutionParams()
    rec = _Recorder(env)
    oid = step.object_id
    target = None
    try:
        if step.cls in (SkillClass.MoveToContact, SkillClass.GuardedMove):
            target = params.contact_force
            used, reason = _move_to_contact(arm, env, oid, gains, params, rec, target)
        elif step.cls is SkillClass.MoveWithContact:
            if action is None:
                raise ControlError("MoveWithContact needs a contact trajectory action")
            target = float(action.target_force)
            base = action.base_trajectory if action.base_trajectory is not None else step.path
            path = sim_path_from_relative(base, env, oid)
            # the traverse stays on the contact face even if the demonstrated stroke overhangs it
            path[:, 0] = _on_face(env, oid, path[:, 0], params.edge_margin)
            used, reason = _move_with_contact(arm, env, oid, path, target, gains, params, rec)
        else:
            used, reason = _follow(arm, env, sim_path(step, env), gains, params, rec)
    except IKError as e:
        raise ControlError(f"{step.cls.value}: {e}") from e
    state = detect_state(env, oid)
    ok = not reason and state == step.goal_state
    if not reason and not ok:
        reason = f"goal state {step.goal_state!r} not reached (detected {state!r})"
    forces, poses = rec.arrays()
    return SkillOutcome(step.cls, ok, state, forces, poses, used, reason, target)


def start_arm(policy: Policy, env: Environment, arm: PlanarArm | None = None) -> PlanarArm:
    """Place the arm at the first demonstrated pose of ``policy``."""
    arm = arm or PlanarArm()
    if policy.steps:
        arm.move_to(sim_path(policy.steps[0], env)[0])
    return arm


def execute_policy(policy: Policy, env: Environment, arm: PlanarArm, action_bindings=None,
                   gains: ControllerGains | None = None, params: ExecutionParams | None = None) -> list:
    """Run the steps in order and stop after the first failure.

    ``action_bindings`` maps step index to the action for contact
    trajectory steps.
    """
    bindings = action_bindings or {}
    out = []
    for i, step in enumerate(policy.steps):
        res = execute_skill(step, bindings.get(i), env, arm, gains, params)
        out.append(res)
        if not res.success:
            break
    return out


def tunable_steps(policy: Policy) -> list:
    return [i for i, s in enumerate(policy.steps) if s.cls.tunable]
