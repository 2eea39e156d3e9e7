"""Rewrite the shipped peel demonstration trace and its ground truth."""

import argparse
from pathlib import Path

from oneshot_lfd.trace import SCENARIOS, synthesize_trace, write_trace

DATA = Path(__file__).resolve().parents[1] / "src" / "oneshot_lfd" / "data"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=DATA)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    trace, truth = synthesize_trace(SCENARIOS["peel-demo"](), args.seed)
    write_trace(trace, args.out / "peel_demo.trace")
    (args.out / "peel_demo.truth.json").write_text(truth.to_json() + "\n")
    print(f"{len(trace)} frames, keypoints {list(truth.keypoints)}, labels {list(truth.segment_labels)}")


if __name__ == "__main__":
    main()
