"""Learning curve of the contact force for every peelable class.

For each class the learner starts from an empty Q store and climbs the
force ladder until a pass peels. The closed-form expectation is the first
rung ``base + k * increment`` at or above the class's peel threshold.
"""

import argparse
import math
import time

from oneshot_lfd.config import Scenario, ScenarioObjectConfig, build_environment, fit_clusterer, load_config
from oneshot_lfd.harness import shipped_trace_path
from oneshot_lfd.learning import QStore, learn_until_success
from oneshot_lfd.segmentation import segment_demonstration
from oneshot_lfd.skills import build_policy
from oneshot_lfd.trace import default_database, load_trace


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config")
    ap.add_argument("--noise", action="store_true", help="enable force-sensor noise")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = load_config(args.config)
    trace = load_trace(shipped_trace_path())
    _, segs = segment_demonstration(trace, cfg.contact)
    policy = build_policy(trace, segs)
    db = default_database()
    clusterer = fit_clusterer(cfg, db)
    print("class,stiffness,threshold,cluster,episodes,final_force,expected_force,success,seconds")
    for c in db:
        if "peeled" not in c.states:
            continue
        scen = Scenario(c.name, (ScenarioObjectConfig(1, c.name, (0.30, 0.5 * c.extent[2])),), args.noise, args.seed)
        seeds = iter(range(10**6))
        store = QStore(factory=cfg.table_factory())
        t = time.perf_counter()
        rep = learn_until_success(policy, lambda: build_environment(scen, cfg, db, seed=next(seeds)), store, clusterer,
                                  cfg.reward, cfg.learning.max_episodes, args.seed, cfg.gains, cfg.execution_params(),
                                  cfg.arm.build)
        k = max(0, math.ceil((c.peel_force_threshold - cfg.force.base) / cfg.force.increment - 1e-9))
        expected = round(cfg.force.base + k * cfg.force.increment, 12)
        print(f"{c.name},{c.stiffness:g},{c.peel_force_threshold:g},{rep.cluster_id},{len(rep.episodes)},"
              f"{rep.forces[-1]:g},{expected:g},{rep.success},{time.perf_counter() - t:.2f}")


if __name__ == "__main__":
    main()
