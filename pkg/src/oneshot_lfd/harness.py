"""File-based pipeline stages and the run manifest.

Every stage reads only the artifact files written by the stage before it,
so stages can run in separate processes. All artifacts are plain JSON or
CSV written with sorted keys, which makes reruns byte-comparable.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass
from importlib import metadata, resources
from pathlib import Path

import numpy as np

from .config import PipelineConfig, build_environment, fit_clusterer, load_scenario
from .control import ControlError, execute_policy, start_arm, tunable_steps
from .learning import ContactTrajectoryAction, QStore, learn_until_success
from .segmentation import segment_demonstration
from .skills import Policy, policy_from_records, segment_records
from .trace import TraceFormatError, TraceInvariantError, load_trace

MANIFEST_VERSION = 1


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"stage {stage!r} failed: {message}")


def shipped_trace_path() -> Path:
    return Path(str(resources.files("oneshot_lfd.data").joinpath("peel_demo.trace")))


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _dump(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def _plain(x):
    if isinstance(x, np.ndarray):
        return np.round(x, 12).tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


# --------------------------------------------------------------------------
# stages


def stage_segment(trace_path, out_path, cfg: PipelineConfig) -> dict:
    try:
        trace = load_trace(trace_path)
        kps, segs = segment_demonstration(trace, cfg.contact)
    except (OSError, TraceFormatError, TraceInvariantError, ValueError, KeyError) as e:
        raise StageError("segment", str(e)) from e
    doc = {
        "version": 1,
        "trace_sha256": file_digest(trace_path),
        "frames": len(trace),
        "keypoints": [{"frame": k.frame, "feature": k.feature, "direction": k.direction} for k in kps],
        "segments": [{k: _plain(v) for k, v in r.items()} for r in segment_records(trace, segs)],
    }
    _dump(doc, out_path)
    return doc


def stage_infer(segments_path, out_path) -> Policy:
    try:
        doc = json.loads(Path(segments_path).read_text())
        policy = policy_from_records(doc["segments"])
    except (OSError, ValueError, KeyError) as e:
        raise StageError("infer", str(e)) from e
    _dump(policy.to_dict(), out_path)
    return policy


def load_policy(path) -> Policy:
    return Policy.from_dict(json.loads(Path(path).read_text()))


def stage_run(policy_path, scenario_path, cfg: PipelineConfig, log_path=None, force: float | None = None,
              qstore_dir=None) -> list:
    """Execute the policy once.

    The contact trajectory step uses ``force`` if given, else the best
    action in the Q store, else the base force.
    """
    try:
        policy = load_policy(policy_path)
        scen = load_scenario(scenario_path)
        env = build_environment(scen, cfg)
        bindings = {}
        for i in tunable_steps(policy):
            step = policy.steps[i]
            f = force
            if f is None and qstore_dir is not None:
                store = QStore(qstore_dir, cfg.table_factory())
                cluster = fit_clusterer(cfg).predict(env.objects[step.object_id].stiffness)
                table = store.tables.get((cluster, step.cls))
                if table is not None and len(table.actions):
                    f = table.actions[int(np.argmax(table.row(step.start_state)))].target_force
            bindings[i] = ContactTrajectoryAction(0, cfg.force.base if f is None else float(f), step.path)
        arm = start_arm(policy, env, cfg.arm.build())
        outs = execute_policy(policy, env, arm, bindings, cfg.gains, cfg.execution_params())
    except (OSError, ValueError, KeyError, ControlError) as e:
        raise StageError("execute", str(e)) from e
    if log_path is not None:
        dt = 1.0 / cfg.execution.rate_hz
        lines = ["step,skill,t,x,y,force"]
        for i, o in enumerate(outs):
            for t, x, y, f in o.log_rows(dt):
                lines.append(f"{i},{o.skill.value},{t:.4f},{x:.9f},{y:.9f},{f:.9f}")
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        Path(log_path).write_text("\n".join(lines) + "\n")
    return outs


def outcome_summary(outs) -> list:
    return [
        {"skill": o.skill.value, "success": o.success, "final_state": o.final_state, "steps": o.steps_used,
         "target_force": o.target_force, "reason": o.reason}
        for o in outs
    ]


def stage_learn(policy_path, scenario_path, cfg: PipelineConfig, qstore_dir, report_path):
    try:
        policy = load_policy(policy_path)
        scen = load_scenario(scenario_path)
        store = QStore(qstore_dir, cfg.table_factory())
        counter = iter(range(10**9))

        def env_factory():
            return build_environment(scen, cfg, seed=scen.seed + next(counter))

        report = learn_until_success(
            policy, env_factory, store, fit_clusterer(cfg), cfg.reward, cfg.learning.max_episodes,
            seed=cfg.seed, gains=cfg.gains, params=cfg.execution_params(), arm_factory=cfg.arm.build,
        )
        store.save()
    except (OSError, ValueError, KeyError, ControlError, NotImplementedError) as e:
        raise StageError("learn", str(e)) from e
    doc = {
        "version": 1,
        "success": report.success,
        "cluster_id": report.cluster_id,
        "action_set_size": report.action_set_size,
        "seed": report.seed,
        "reason": report.reason,
        "episodes": [
            {"episode": e.episode, "action_id": e.action_id, "force": e.force, "reward": e.reward,
             "outcome": e.outcome, "mode": e.mode, "final_state": e.final_state}
            for e in report.episodes
        ],
    }
    _dump(doc, report_path)
    return report


def render_report(learning_path) -> str:
    doc = json.loads(Path(learning_path).read_text())
    lines = ["episode,action_id,force,reward,outcome"]
    for e in doc["episodes"]:
        lines.append(f"{e['episode']},{e['action_id']},{e['force']:.6g},{e['reward']:.6g},{e['outcome']}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# pipeline


@dataclass
class PipelineResult:
    manifest: dict
    exit_code: int


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def run_pipeline(trace_path, scenario_path, cfg: PipelineConfig, out_dir) -> PipelineResult:
    """segment -> infer -> execute -> learn, each through files in ``out_dir``.

    The Q store starts empty on every call so reruns are reproducible.
    Exit code 0 iff the final goal state is reached, 1 if it is not, 2 if a
    stage fails. Partial artifacts stay in place.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    qdir = out / "qstore"
    if qdir.exists():
        for p in qdir.glob("cluster*_*.json"):
            p.unlink()
    files = {
        "segments": out / "segments.json",
        "policy": out / "policy.json",
        "run_log": out / "run_log.csv",
        "run": out / "run.json",
        "learning": out / "learning.json",
        "report": out / "report.csv",
    }
    scen_file = Path(scenario_path)
    manifest = {
        "version": MANIFEST_VERSION,
        "package_version": _version(),
        "config_sha256": cfg.digest(),
        "trace_sha256": file_digest(trace_path) if Path(trace_path).exists() else None,
        "scenario": scen_file.name,
        "scenario_sha256": file_digest(scen_file) if scen_file.exists() else None,
        "seed": cfg.seed,
        "stages": {},
        "timings": {},
    }
    code = 2
    try:
        t = time.perf_counter()
        seg = stage_segment(trace_path, files["segments"], cfg)
        manifest["timings"]["segment"] = time.perf_counter() - t
        manifest["stages"]["segment"] = {"keypoints": [k["frame"] for k in seg["keypoints"]],
                                         "segments": [[s["start"], s["end"]] for s in seg["segments"]]}

        t = time.perf_counter()
        policy = stage_infer(files["segments"], files["policy"])
        (out / "policy.txt").write_text(policy.to_text())
        manifest["timings"]["infer"] = time.perf_counter() - t
        manifest["stages"]["infer"] = {"policy": [[s.cls.value, s.goal_state] for s in policy.steps]}

        t = time.perf_counter()
        outs = stage_run(files["policy"], scenario_path, cfg, files["run_log"])
        _dump(outcome_summary(outs), files["run"])
        manifest["timings"]["execute"] = time.perf_counter() - t
        done = len(outs) == policy.m and all(o.success for o in outs)
        manifest["stages"]["execute"] = {"success": done, "outcomes": outcome_summary(outs)}

        t = time.perf_counter()
        report = stage_learn(files["policy"], scenario_path, cfg, qdir, files["learning"])
        files["report"].write_text(render_report(files["learning"]))
        manifest["timings"]["learn"] = time.perf_counter() - t
        manifest["stages"]["learn"] = {"success": report.success, "episodes": len(report.episodes),
                                       "forces": report.forces, "action_set_size": report.action_set_size}
        code = 0 if report.success else 1
    except StageError as e:
        manifest["error"] = {"stage": e.stage, "message": str(e)}
    manifest["exit_code"] = code
    manifest["outputs"] = {
        k: {"path": p.name, "sha256": file_digest(p)} for k, p in files.items() if p.exists()
    }
    if qdir.exists():
        manifest["outputs"].update(
            {f"qstore/{p.name}": {"path": f"qstore/{p.name}", "sha256": file_digest(p)} for p in sorted(qdir.glob("*.json"))}
        )
    _dump(manifest, out / "manifest.json")
    return PipelineResult(manifest, code)
