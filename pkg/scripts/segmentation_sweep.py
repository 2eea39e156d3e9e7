"""Keypoint accuracy on random synthetic traces as position noise grows.

For each noise level, synthesizes traces with the generator, segments them
and counts traces whose keypoints all land within the debounce window of
the generator's ground truth.
"""

import argparse
import time
from dataclasses import replace

import numpy as np

from oneshot_lfd.segmentation import ContactParams, segment_demonstration
from oneshot_lfd.trace import random_scenario, synthesize_trace


def matches(found, truth, window):
    return len(found) == len(truth) and all(abs(a - b) <= window for a, b in zip(found, truth))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--traces", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--noise", type=float, nargs="+", default=[0.0, 0.001, 0.002, 0.004, 0.006])
    args = ap.parse_args()
    params = ContactParams()
    print("noise_m,traces,exact,within_window,seconds")
    for amp in args.noise:
        rng = np.random.default_rng(args.seed)
        exact = close = 0
        t = time.perf_counter()
        for i in range(args.traces):
            scen = replace(random_scenario(rng), noise=amp)
            trace, truth = synthesize_trace(scen, seed=args.seed + i)
            kps, _ = segment_demonstration(trace, params)
            found = sorted({k.frame for k in kps})
            exact += found == list(truth.keypoints)
            close += matches(found, list(truth.keypoints), params.debounce_window)
        print(f"{amp:g},{args.traces},{exact},{close},{time.perf_counter() - t:.2f}")


if __name__ == "__main__":
    main()
