"""Acceptance checks, one test per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the terminal summary
prints one PASS/FAIL line per criterion. Running this file directly does
the same.
"""

import json
import time

import numpy as np
import pytest

import oracles
from oneshot_lfd.config import Scenario, ScenarioObjectConfig, build_environment, fit_clusterer, load_config
from oneshot_lfd.control import (
    ControllerGains, ExecutionParams, PlanarArm, execute_skill, pose_error, positional_step,
)
from oneshot_lfd.environment import Environment, SimObject, detect_state
from oneshot_lfd.harness import run_pipeline, shipped_trace_path
from oneshot_lfd.learning import (
    QStore, QTable, StiffnessClusterer, default_mdp, grow_action, learn_until_success, polynomial_rate,
    q_learning_sweeps, q_update, reward,
)
from oneshot_lfd.segmentation import ContactParams, VoronoiPartition, segment_demonstration, step
from oneshot_lfd.skills import PolicyStep, SkillClass, build_policy
from oneshot_lfd.trace import default_database, load_trace, random_scenario, synthesize_trace

acceptance = pytest.mark.acceptance


@pytest.fixture(scope="module")
def peel_policy():
    trace = load_trace(shipped_trace_path())
    _, segs = segment_demonstration(trace)
    return build_policy(trace, segs)


def cucumber_factory(cfg, threshold=1.5, cls="cucumber"):
    scen = Scenario("s", (ScenarioObjectConfig(1, cls, (0.30, 0.5 * default_database()[cls].extent[2]),
                                               peel_threshold=threshold),), False, 0)
    return lambda: build_environment(scen, cfg)


@acceptance(1, "segmentation matches the per-frame oracle and generator truth on 100 random traces")
def test_segmentation_oracle_equivalence():
    params = ContactParams()
    rng = np.random.default_rng(2024)
    runtime = 0.0
    for i in range(100):
        scen = random_scenario(rng, max_objects=5, max_frames=500)
        trace, truth = synthesize_trace(scen, seed=i)
        assert len(trace) <= 500 and len(trace.object_ids) <= 5
        t = time.perf_counter()
        kps, segs = segment_demonstration(trace, params)
        runtime += time.perf_counter() - t
        got_frames = sorted({k.frame for k in kps})
        want_frames, want_ranges = oracles.brute_segmentation(trace, params)
        assert got_frames == want_frames, f"trace {i}"
        assert [(s.start, s.end) for s in segs] == want_ranges, f"trace {i}"
        assert len(got_frames) == len(truth.keypoints), f"trace {i}"
        for a, b in zip(got_frames, truth.keypoints):
            assert abs(a - b) <= params.debounce_window, f"trace {i}: {a} vs {b}"
    assert runtime < 10.0


@acceptance(2, "u(v) = 1 iff v >= 0 over 10^4 values including 0")
def test_step_semantics():
    rng = np.random.default_rng(7)
    v = np.concatenate([
        [0.0, -0.0, 5e-324, -5e-324, 1e-300, -1e-300, np.inf, -np.inf],
        rng.normal(scale=10.0 ** rng.integers(-12, 3, size=9992), size=9992),
    ])
    assert len(v) == 10_000
    got = step(v)
    want = np.array([1 if x >= 0 else 0 for x in v.tolist()])
    assert np.array_equal(got, want)
    assert step(0.0) == 1 and step(-0.0) == 1


@acceptance(3, "Voronoi owners equal the brute-force nearest-centroid scan on 10^4 queries")
def test_voronoi_matches_brute_force():
    rng = np.random.default_rng(11)
    lo, hi = np.array([-1.0, -1.0, -1.0]), np.array([1.0, 1.0, 1.0])
    ties = 0
    for q in range(10_000):
        n = int(rng.integers(1, 6))
        ids = np.sort(rng.choice(np.arange(1, 20), size=n, replace=False))
        if q % 2:
            # grid coordinates keep midpoints exact, so ties really are ties
            seeds = rng.integers(-8, 9, size=(n, 3)) / 8.0
            i, j = (0, min(1, n - 1))
            point = 0.5 * (seeds[i] + seeds[j])
        else:
            seeds = rng.uniform(-1, 1, size=(n, 3))
            point = rng.uniform(-1, 1, size=3)
        part = VoronoiPartition(ids, seeds, lo, hi)
        d = np.sum((seeds - point) ** 2, axis=1)
        ties += int(np.sum(d == d.min()) > 1)
        assert part.owner(point) == oracles.brute_owner(point, list(ids), list(seeds))
    assert ties > 100


@acceptance(4, "shipped peel demonstration infers Approach, MoveToContact, MoveWithContact")
def test_policy_reproduction(peel_policy):
    assert peel_policy.classes == [SkillClass.Approach, SkillClass.MoveToContact, SkillClass.MoveWithContact]
    assert peel_policy.goal_states == ["unpeeled", "unpeeled", "peeled"]


@acceptance(5, "Jacobian, positional convergence and MoveToContact force band")
def test_controller_numerics():
    rng = np.random.default_rng(5)
    for lengths in [(0.35, 0.3, 0.1), (0.4, 0.25)]:
        arm = PlanarArm(lengths)
        for _ in range(100):
            th = rng.uniform(-np.pi, np.pi, size=len(lengths))
            assert np.max(np.abs(arm.jacobian(th) - oracles.fd_jacobian(lengths, th))) < 1e-6

    gains = ControllerGains()
    for _ in range(100):
        x = rng.uniform([-0.4, 0.0], [0.6, 0.5])
        xd = rng.uniform([-0.4, 0.0], [0.6, 0.5])
        f_prev = None
        for t in range(500):
            x, f_prev = positional_step(x, xd, None, gains, pose_error, f_prev)
            if np.linalg.norm(x - xd) < 1e-3:
                break
        assert np.linalg.norm(x - xd) < 1e-3

    db = default_database()
    for c in db:
        obj = SimObject(1, c.name, [0.30, 0.5 * c.extent[2]], [c.extent[0], c.extent[2]], c.stiffness,
                        c.peel_force_threshold, c.states)
        env = Environment.from_objects([obj])
        arm = PlanarArm()
        arm.move_to([0.30, obj.top + 0.025])
        s = PolicyStep(SkillClass.MoveToContact, c.states[0], c.states[0], 1, c.name, 0, 1, np.zeros((2, 3)))
        out = execute_skill(s, None, env, arm, gains, ExecutionParams())
        assert out.success, c.name
        assert 0.5 <= out.force_log[-1] <= 0.7, (c.name, out.force_log[-1])


@acceptance(6, "reward +2/-5, hand-computed Q update -1.4, discount 0.3 from config")
def test_reward_and_update_constants():
    cfg = load_config()
    assert reward("unpeeled", "peeled", "peeled", cfg.reward) == 2
    assert reward("unpeeled", "unpeeled", "peeled", cfg.reward) == -5
    assert cfg.learning.gamma == 0.3
    t = QTable(0, SkillClass.MoveWithContact, alpha=0.5, gamma=0.3)
    t.values[("s", 0)] = 1.0
    t.values[("n", 0)] = 4.0
    grow_action(t.actions)  # one action, so max over the next state's row is 4
    q_update(t, "s", 0, -5.0, "n")
    assert abs(t.q("s", 0) - (-1.4)) < 1e-12


@acceptance(7, "cucumber force ladder 0.5..1.7 N, success on episode 5, rerun succeeds at once")
def test_force_ladder(peel_policy):
    cfg = load_config()
    store = QStore(factory=cfg.table_factory())
    clusterer = fit_clusterer(cfg)
    t = time.perf_counter()
    rep = learn_until_success(peel_policy, cucumber_factory(cfg), store, clusterer, cfg.reward, 50, 0,
                              cfg.gains, cfg.execution_params(), cfg.arm.build)
    k = oracles.first_rung_at_or_above(1.5, cfg.force.base, cfg.force.increment)
    ladder = [round(cfg.force.base + i * cfg.force.increment, 9) for i in range(k + 1)]
    assert ladder == [0.5, 0.8, 1.1, 1.4, 1.7]
    assert [round(f, 9) for f in rep.forces] == ladder
    assert rep.success and len(rep.episodes) == 5 and rep.episodes[-1].outcome == "success"
    assert rep.action_set_size == 5

    again = learn_until_success(peel_policy, cucumber_factory(cfg), store, clusterer, cfg.reward, 50, 1,
                                cfg.gains, cfg.execution_params(), cfg.arm.build)
    assert again.success and len(again.episodes) == 1 and again.forces == [1.7]
    assert time.perf_counter() - t < 5.0


@acceptance(8, "Q-learning with decaying rate reaches the value-iteration fixed point within 1e-6")
def test_q_learning_fixed_point():
    mdp = default_mdp()
    t = time.perf_counter()
    Q, used = q_learning_sweeps(mdp, 100_000, polynomial_rate(0.6))
    elapsed = time.perf_counter() - t
    Q_star = oracles.value_iteration(mdp.next_state.tolist(), mdp.rewards.tolist(), mdp.gamma)
    assert used <= 100_000
    assert np.max(np.abs(Q - Q_star)) < 1e-6
    assert elapsed < 5.0


@acceptance(9, "peel state flips at peel_map = 0.10 inclusive")
def test_peel_threshold():
    obj = SimObject(1, "cucumber", [0.3, 0.02], [0.2, 0.045], 500.0, 1.5)
    env = Environment.from_objects([obj])
    for value, want in [(0.0, "unpeeled"), (0.099, "unpeeled"), (0.0999999, "unpeeled"), (0.10, "peeled"),
                        (0.12, "peeled")]:
        env.peel_map[1] = value
        assert detect_state(env, 1) == want, value


@acceptance(10, "per-cluster Q tables stay isolated; 2-means matches the exhaustive split")
def test_cluster_isolation(peel_policy):
    cfg = load_config()
    store = QStore(factory=cfg.table_factory())
    clusterer = fit_clusterer(cfg)
    cuc = cucumber_factory(cfg, 1.5, "cucumber")
    car = cucumber_factory(cfg, 2.2, "carrot")
    c_cuc = clusterer.predict(cuc().objects[1].stiffness)
    c_car = clusterer.predict(car().objects[1].stiffness)
    assert c_cuc != c_car
    run = dict(store=store, clusterer=clusterer, rewards=cfg.reward, max_episodes=1,
               gains=cfg.gains, params=cfg.execution_params(), arm_factory=cfg.arm.build)
    table = lambda c: store.get(c, SkillClass.MoveWithContact)
    for rnd in range(3):
        own, other = table(c_cuc).digest(), table(c_car).digest()
        learn_until_success(peel_policy, cuc, seed=rnd, **run)
        assert table(c_car).digest() == other
        assert table(c_cuc).digest() != own
        own, other = table(c_car).digest(), table(c_cuc).digest()
        learn_until_success(peel_policy, car, seed=rnd, **run)
        assert table(c_cuc).digest() == other
        assert table(c_car).digest() != own

    points = [450.0, 500.0, 620.0, 1800.0, 2000.0, 2100.0]
    km = StiffnessClusterer(2).fit(points)
    assert np.allclose(km.centers, oracles.exhaustive_two_means(points), rtol=0, atol=1e-9)


@acceptance(11, "pipeline reruns with equal seeds give byte-identical reports")
def test_pipeline_determinism(tmp_path):
    cfg = load_config()
    a = run_pipeline(shipped_trace_path(), "peel_cucumber", cfg, tmp_path / "a")
    b = run_pipeline(shipped_trace_path(), "peel_cucumber", cfg, tmp_path / "b")
    assert a.exit_code == 0 and b.exit_code == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert any(str(f) == "report.csv" for f in files)
    for rel in files:
        if rel.name == "manifest.json":
            ma = json.loads((tmp_path / "a" / rel).read_text())
            mb = json.loads((tmp_path / "b" / rel).read_text())
            ma.pop("timings"), mb.pop("timings")
            assert ma == mb
        else:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel
    assert a.manifest["stages"]["learn"]["forces"] == [0.5, 0.8, 1.1, 1.4, 1.7]


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
