"""Command line entry point: ``oneshot-lfd <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .config import ConfigError, load_config
from .trace import SCENARIOS, random_scenario, synthesize_trace, write_trace

log = logging.getLogger("oneshot_lfd")


def _cmd_gen_trace(args, cfg):
    if args.scenario == "random":
        scen = random_scenario(np.random.default_rng(args.seed))
    elif args.scenario in SCENARIOS:
        scen = SCENARIOS[args.scenario]()
    else:
        raise SystemExit(f"unknown scenario {args.scenario!r}; choose from random, {', '.join(SCENARIOS)}")
    trace, truth = synthesize_trace(scen, args.seed)
    write_trace(trace, args.output)
    if args.truth:
        Path(args.truth).write_text(truth.to_json() + "\n")
    print(f"wrote {len(trace)} frames to {args.output}")
    return 0


def _cmd_segment(args, cfg):
    doc = harness.stage_segment(args.trace, args.output, cfg)
    for k in doc["keypoints"]:
        print(f"keypoint {k['frame']} {k['feature']} {k['direction']}")
    for s in doc["segments"]:
        print(f"segment {s['start']}-{s['end']} psi={s['psi']} phi={s['phi']} uX={s['uX']} object={s['object_id']}")
    return 0


def _cmd_infer(args, cfg):
    policy = harness.stage_infer(args.segments, args.output)
    sys.stdout.write(policy.to_text())
    return 0


def _cmd_run(args, cfg):
    outs = harness.stage_run(args.policy, args.env, cfg, args.log, args.force, args.qstore)
    for o in outs:
        print(f"{o.skill.value} success={o.success} state={o.final_state} steps={o.steps_used} {o.reason}".rstrip())
    return 0 if outs and all(o.success for o in outs) else 1


def _cmd_learn(args, cfg):
    report = harness.stage_learn(args.policy, args.scenario, cfg, args.qstore, args.output)
    sys.stdout.write(harness.render_report(args.output))
    if not report.success:
        print(f"learning stopped without success: {report.reason}", file=sys.stderr)
    return 0 if report.success else 1


def _cmd_report(args, cfg):
    text = harness.render_report(args.learning)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_pipeline(args, cfg):
    trace = args.trace or harness.shipped_trace_path()
    res = harness.run_pipeline(trace, args.scenario, cfg, args.out)
    m = res.manifest
    if "error" in m:
        print(m["error"]["message"], file=sys.stderr)
    else:
        print("policy:", ", ".join(f"{c}({g})" for c, g in m["stages"]["infer"]["policy"]))
        lr = m["stages"]["learn"]
        print(f"learning: {lr['episodes']} episodes, forces {lr['forces']}, success={lr['success']}")
    print(f"manifest: {Path(args.out) / 'manifest.json'}")
    return res.exit_code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oneshot-lfd", description="One-shot skill learning from a demonstration trace.")
    p.add_argument("--config", help="YAML config overriding the shipped defaults (default: $LFD_CONFIG)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-trace", help="synthesize a demonstration trace")
    g.add_argument("scenario", help=f"random or one of: {', '.join(SCENARIOS)}")
    g.add_argument("-o", "--output", required=True)
    g.add_argument("--truth", help="also write generator ground truth (JSON)")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=_cmd_gen_trace)

    s = sub.add_parser("segment", help="find keypoints and segments of a trace")
    s.add_argument("trace")
    s.add_argument("-o", "--output", default="segments.json")
    s.set_defaults(func=_cmd_segment)

    i = sub.add_parser("infer", help="classify segments into a policy")
    i.add_argument("segments")
    i.add_argument("-o", "--output", default="policy.json")
    i.set_defaults(func=_cmd_infer)

    r = sub.add_parser("run", help="execute a policy once in the simulator")
    r.add_argument("policy")
    r.add_argument("--env", required=True, help="scenario YAML (or the name of a shipped scenario)")
    r.add_argument("--force", type=float, help="contact force for the contact trajectory step, N")
    r.add_argument("--qstore", help="use the best learned action from this Q store")
    r.add_argument("--log", help="write the per-step force and pose log (CSV)")
    r.set_defaults(func=_cmd_run)

    le = sub.add_parser("learn", help="self-evaluate and tune the contact force")
    le.add_argument("policy")
    le.add_argument("scenario")
    le.add_argument("--qstore", required=True, help="directory of persisted Q tables")
    le.add_argument("-o", "--output", default="learning.json")
    le.set_defaults(func=_cmd_learn)

    rp = sub.add_parser("report", help="per-episode CSV from a learning result")
    rp.add_argument("learning")
    rp.add_argument("-o", "--output")
    rp.set_defaults(func=_cmd_report)

    pl = sub.add_parser("pipeline", help="segment, infer, execute and learn in one go")
    pl.add_argument("scenario", help="scenario YAML (or the name of a shipped scenario)")
    pl.add_argument("--trace", help="demonstration trace (default: the shipped peel demonstration)")
    pl.add_argument("--out", default="run", help="output directory")
    pl.set_defaults(func=_cmd_pipeline)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except harness.StageError as e:
        print(str(e), file=sys.stderr)
        return 2
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
