"""Acceptance criteria. Each test records one PASS/FAIL line (see conftest)."""
import filecmp
import math
import time

import numpy as np
import pytest

from conftest import SESSION_START, VERDICTS
from oracles import brute_inside, ray_entry, refine
from errt import bench
from errt.envgen import generate, preset, sample_problem
from errt.episode import GeneratorConfig, HeuristicGenerator, OffsetGoalGenerator, agent_state, bound_limits
from errt.fixtures import wall_with_gap
from errt.geometry import CollisionChecker, Environment, validate_path
from errt.mdp import MdpConfig, RecordingLearner, collect, collide_penalty, env_step, explore
from errt.planners import EpisodeState, PlannerParams, extend_step, plan
from errt.spline import CubicBSpline, build_spline, resample_equidistant
from errt.tree import SearchTree

EPISODIC = ["errt", "errt_star", "errt_connect"]
BUDGET = {"time_limit": None, "max_iterations": 30000}


def verdict(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    VERDICTS.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module", autouse=True)
def _warm():
    bench.warm_up()


# ---------------------------------------------------------------------------
# 1. bisection against a linear scan
# ---------------------------------------------------------------------------

def _ray_paths(n_paths, seed):
    """Straight candidate paths (collinear B-splines) from a free root, with a blocked suffix.

    Validity of knot k from any earlier knot on the ray is decided by whether the
    ray has entered an obstacle before it, so validity is monotone. The first
    blocked knot comes from a closed-form ray cast, independent of the kernels.
    """
    rng = np.random.default_rng(seed)
    d = GeneratorConfig().d_dense
    out = []
    env_id = 0
    while len(out) < n_paths:
        env = generate(preset("desk2d", seed=int(rng.integers(2**31))))
        env_id += 1
        for _ in range(50):
            root = rng.uniform(env.lo, env.hi)
            if brute_inside(env, root)[0]:
                continue
            LEN = int(rng.integers(1, 41))
            u = rng.normal(size=2)
            u /= np.linalg.norm(u)
            action = np.outer(np.arange(1, 9) / 8.0, u * LEN * d)
            path = resample_equidistant(build_spline(root, action), d)
            s_hit = ray_entry(env, root, u)
            if s_hit > path.length:
                continue
            if np.min(np.abs(path.arc - s_hit)) < 1e-6:
                continue  # knot on an obstacle boundary
            first_bad = int(np.searchsorted(path.arc, s_hit))
            out.append((env, root, path, first_bad))
            if len(out) == n_paths:
                break
    return out, env_id


def _step(env, root, path, bisection):
    tree = SearchTree(root)
    st = EpisodeState()
    st.start_step(path)
    chk = CollisionChecker(env, 0.05)
    res = extend_step(tree, st, chk, bisection=bisection)
    return {k for k, _ in res.accepted}, st.k_lower, res.probes


def test_c01_bisection_oracle_equivalence():
    t0 = time.perf_counter()
    paths, n_env = _ray_paths(1000, seed=1)
    mismatches = over_bound = 0
    worst = 0
    for env, root, path, first_bad in paths:
        LEN = len(path) - 1
        valid = set(range(1, first_bad))
        got_b, far_b, probes_b = _step(env, root, path, True)
        got_s, far_s, probes_s = _step(env, root, path, False)
        # the scan adds every valid knot; bisection adds valid knots only and reaches the same furthest one
        if got_s != valid or far_s != first_bad - 1 or far_b != far_s or not got_b <= valid:
            mismatches += 1
        bound = math.ceil(math.log2(LEN)) + 2 if LEN > 1 else 2
        if probes_b > bound:
            over_bound += 1
            worst = max(worst, probes_b - bound)
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and over_bound == 0 and elapsed < 30
    verdict(1, ok, f"{len(paths)} paths over {n_env} maps: {mismatches} node-set mismatches, "
                   f"{over_bound} steps above ceil(log2 LEN)+2 checks (worst +{worst}), {elapsed:.1f} s")


# ---------------------------------------------------------------------------
# 2. path validity
# ---------------------------------------------------------------------------

def test_c02_path_validity():
    runs = violations = failures = 0
    for name in ("desk2d", "desk3d"):
        cfg = bench.BenchConfig(env={"preset": name}, trials=50, variants=EPISODIC, params=BUDGET, master_seed=202)
        for trial in range(cfg.trials):
            problem = bench.make_problem(cfg, trial)
            _, _, seed = bench.trial_seeds(cfg.master_seed, trial)
            for v in EPISODIC:
                p = cfg.params_for(v, seed)
                rep = plan(problem.env, problem.q_start, problem.q_goal, p)
                if not rep.success:
                    failures += 1
                    continue
                runs += 1
                violations += len(validate_path(rep.path, problem.env, p.collision_resolution / 10))
    verdict(2, runs == 300 and violations == 0,
            f"{runs} successful runs ({failures} unsolved), {violations} violations at resolution/10")


# ---------------------------------------------------------------------------
# 3 and 4. collision checks and initial length against RRT on paired seeds
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def paired_desk2d(tmp_path_factory):
    cfg = bench.BenchConfig(env={"preset": "desk2d"}, trials=50, variants=["rrt", "errt"], params=BUDGET,
                            master_seed=303)
    results = {}
    for trial in range(cfg.trials):
        problem = bench.make_problem(cfg, trial)
        _, _, seed = bench.trial_seeds(cfg.master_seed, trial)
        results[trial] = {v: plan(problem.env, problem.q_start, problem.q_goal, cfg.params_for(v, seed))
                          for v in cfg.variants}
    return results


def test_c03_collision_check_reduction(paired_desk2d):
    both = [r for r in paired_desk2d.values() if r["rrt"].success and r["errt"].success]
    med_e = float(np.median([r["errt"].collision_checks for r in both]))
    med_r = float(np.median([r["rrt"].collision_checks for r in both]))
    ratio = med_e / med_r
    verdict(3, len(both) == 50 and ratio <= 0.5,
            f"median checks errt {med_e:.0f} vs rrt {med_r:.0f}, ratio {ratio:.3f} over {len(both)} pairs")


def test_c04_initial_length(paired_desk2d):
    both = [r for r in paired_desk2d.values() if r["rrt"].success and r["errt"].success]
    le = float(np.mean([r["errt"].path_length for r in both]))
    lr = float(np.mean([r["rrt"].path_length for r in both]))
    verdict(4, len(both) == 50 and le / lr <= 0.9,
            f"mean length errt {le:.2f} vs rrt {lr:.2f}, ratio {le / lr:.3f} over {len(both)} pairs")


# ---------------------------------------------------------------------------
# 5. anytime behaviour
# ---------------------------------------------------------------------------

def test_c05_anytime_empty_map():
    env = generate(preset("empty2d", seed=0))
    details, ok = [], True
    for v in ("errt_star", "rrt_star"):
        reached, monotone = 0, True
        for s in range(100):
            q_s, q_g = sample_problem(env, 0.0, np.random.default_rng(s))
            L = float(np.linalg.norm(q_g - q_s))
            p = PlannerParams(variant=v, anytime=True, stop_cost=1.05 * L, time_limit=5.0, seed=s)
            rep = plan(env, q_s, q_g, p)
            costs = [c for *_, c in rep.cost_trace]
            monotone &= all(b <= a for a, b in zip(costs, costs[1:]))
            hit = [t for _, _, t, c in rep.cost_trace if c <= 1.05 * L]
            reached += bool(hit) and hit[0] <= 5.0
        ok &= monotone and reached >= 95
        details.append(f"{v} {reached}/100 within 5% in 5 s, monotone={monotone}")
    verdict(5, ok, "; ".join(details))


# ---------------------------------------------------------------------------
# 6 and 7. ablations
# ---------------------------------------------------------------------------

def test_c06_no_jump_failure(tmp_path):
    cfg = bench.BenchConfig(suite="ablation", fixture="near_goal", trials=20, variants=EPISODIC,
                            ablations=["NoJump"], master_seed=606,
                            params={"generator": "offset", "goal_tolerance": 0.01, "time_limit": None,
                                    "max_iterations": 1500})
    table = bench.run_ablation_suite(cfg, tmp_path)
    drops = {v: 100 * (table[(v, "NoJump")]["SUC_full"] - table[(v, "NoJump")]["SUC_ablation"]) for v in EPISODIC}
    ok = drops["errt"] >= 50 and drops["errt_star"] >= 50 and abs(drops["errt_connect"]) <= 5
    verdict(6, ok, "success drop in points: " + ", ".join(f"{v} {d:+.0f}" for v, d in drops.items()))


def test_c07_half_step_jump(tmp_path):
    cfg = bench.BenchConfig(suite="ablation", env={"preset": "desk2d"}, trials=50, variants=EPISODIC,
                            ablations=["HalfStepJump"], params=BUDGET, master_seed=707)
    table = bench.run_ablation_suite(cfg, tmp_path)
    ok, parts = True, []
    for v in EPISODIC:
        row = table[(v, "HalfStepJump")]
        dsuc = 100 * row["dSUC"]
        rel = row["dTIME_median_rel"]
        ok &= abs(dsuc) <= 5 and rel is not None and abs(rel) <= 0.25
        parts.append(f"{v} dSUC {dsuc:+.0f} pts, median dTIME {100 * rel:+.1f}%")
    verdict(7, ok, "; ".join(parts))


# ---------------------------------------------------------------------------
# 8 to 11. reward, bound and resampling properties
# ---------------------------------------------------------------------------

def test_c08_collide_penalty():
    x = np.sort(np.random.default_rng(8).uniform(1e-3, 10.0, 100))
    vals = np.array([collide_penalty(v) for v in x])
    err = float(np.max(np.abs(vals - (1.0 + 1.0 / x))))
    mono = bool(np.all(np.diff(vals) < 0))
    verdict(8, err <= 1e-9 and mono, f"max error {err:.2e}, strictly decreasing={mono}")


def test_c09_reward_telescoping():
    rng = np.random.default_rng(9)
    cfg = MdpConfig()
    env = Environment(2, [-60, -60], [60, 60])
    gen = HeuristicGenerator()
    worst = 0.0
    for _ in range(1000):
        q0, goal = rng.uniform(-40, 40, 2), rng.uniform(-40, 40, 2)
        q, v, total = q0, np.zeros(2), 0.0
        for _ in range(int(rng.integers(1, 8))):
            a = explore(gen, agent_state(q, goal, env, v, cfg.generator), cfg.generator, 0.3, rng)
            tr = env_step(q, a, env, goal, cfg, v)
            assert not tr.collided
            total += tr.components.r_advance
            q, v = tr.q_next, tr.s_prime.velocity
            if tr.done:
                break
        worst = max(worst, abs(total - (np.linalg.norm(q0 - goal) - np.linalg.norm(q - goal))))
    verdict(9, worst <= 1e-9, f"1000 episodes, max telescoping error {worst:.2e}")


def test_c10_incremental_bound():
    rng = np.random.default_rng(10)
    violations = 0
    envs = {(d, k): generate(preset("anytime2d" if d == 2 else "anytime3d", seed=k)) for d in (2, 3) for k in range(7)}
    for call in range(10_000):
        dim = 2 if call % 2 else 3
        gcfg = GeneratorConfig(m=int(rng.integers(1, 13)), bound=float(rng.uniform(0.1, 5.0)))
        env = envs[(dim, call % 7)]
        gen = OffsetGoalGenerator() if call % 5 == 0 else HeuristicGenerator()
        q = rng.uniform(env.lo, env.hi)
        state = agent_state(q, rng.uniform(env.lo - 5, env.hi + 5), env, rng.normal(size=dim) * 3, gcfg)
        a = explore(gen, state, gcfg, float(rng.choice([0.0, 0.5, 50.0])), rng)
        lim = bound_limits(gcfg.m, gcfg.bound)
        violations += int(np.any(np.abs(a) > lim + 1e-12))
    verdict(10, violations == 0, f"10000 generator calls, {violations} bound violations")


def test_c11_resample_uniformity():
    rng = np.random.default_rng(11)
    bad_gap = 0
    worst_shift = 0.0
    for i in range(1000):
        dim = 2 if i % 2 else 3
        ctrl = np.cumsum(rng.normal(size=(int(rng.integers(4, 10)), dim)), axis=0)
        d = float(rng.choice([0.1, 0.25, 0.5]))
        a = resample_equidistant(CubicBSpline(ctrl), d)
        gaps = np.diff(a.arc)[:-1]
        bad_gap += int(np.any(np.abs(gaps - d) > 0.01 * d))
        b = resample_equidistant(CubicBSpline(refine(ctrl)), d)
        if a.knots.shape != b.knots.shape:
            worst_shift = math.inf
        else:
            worst_shift = max(worst_shift, float(np.max(np.linalg.norm(a.knots - b.knots, axis=1))))
    verdict(11, bad_gap == 0 and worst_shift <= 1e-3,
            f"1000 splines, {bad_gap} with an interior gap off by >1%, max refinement shift {worst_shift:.2e} m")


# ---------------------------------------------------------------------------
# 12. concentrated collecting
# ---------------------------------------------------------------------------

def test_c12_concentrated_collecting():
    problem = wall_with_gap(extent=20.0, gap=0.8)
    env = problem.env

    def factory(rng):
        s = np.array([rng.uniform(1, 9), rng.uniform(1, 19)])
        while env.points_in_collision(s[None])[0]:
            s = np.array([rng.uniform(1, 9), rng.uniform(1, 19)])
        return env, s, np.array([rng.uniform(11, 19), rng.uniform(1, 19)])

    cfg = MdpConfig()
    buf, stats = collect(factory, HeuristicGenerator(), RecordingLearner(), cfg, 10_000, np.random.default_rng(12))
    Q = np.array([tr.q for tr in buf])
    hard = np.all(np.abs(Q - 10.0) <= 2.0, axis=1)  # 4 x 4 box around the gap
    ratio = (hard.sum() / 16.0) / ((~hard).sum() / (400.0 - 16.0))
    max_retry = max(stats.retries_per_state, default=0)
    ok = len(buf) == 10_000 and ratio >= 2.0 and max_retry <= cfg.max_re and stats.max_retries_seen <= cfg.max_re
    verdict(12, ok, f"density ratio {ratio:.2f} over {len(buf)} steps, max retries {max_retry} (max_re {cfg.max_re})")


# ---------------------------------------------------------------------------
# 13. determinism and CI time
# ---------------------------------------------------------------------------

def _bench_all(out, workers):
    common = dict(master_seed=1313, workers=workers, params=BUDGET)
    bench.run_initial_solution_suite(
        bench.BenchConfig(trials=4, variants=["rrt", "rrt_star", "rrt_connect", *EPISODIC], **common), out / "initial")
    bench.run_anytime_suite(
        bench.BenchConfig(suite="anytime", env={"preset": "anytime2d"}, trials=2, runs_per_env=2,
                          variants=["rrt_star", "errt_star"], master_seed=1313, workers=workers,
                          params={"time_limit": None, "max_iterations": 1500},
                          reference={"variant": "rrt_star", "max_iterations": 3000, "time_limit": None}),
        out / "anytime")
    bench.run_ablation_suite(
        bench.BenchConfig(suite="ablation", trials=2, variants=EPISODIC,
                          ablations=["HalfStepJump", "DownSample", "2+L_max"], **common), out / "ablation")


def _deterministic_files(root):
    return sorted(p.relative_to(root) for p in root.rglob("*") if p.is_file() and "timing" not in p.name)


def test_c13_determinism(tmp_path):
    _bench_all(tmp_path / "a", 1)
    _bench_all(tmp_path / "b", 2)
    fa, fb = _deterministic_files(tmp_path / "a"), _deterministic_files(tmp_path / "b")
    differing = [str(p) for p in fa if not filecmp.cmp(tmp_path / "a" / p, tmp_path / "b" / p, shallow=False)]
    same_set = fa == fb and len(fa) > 0
    elapsed = time.perf_counter() - SESSION_START
    ok = same_set and not differing and elapsed < 600
    verdict(13, ok, f"{len(fa)} csv/report files, {len(differing)} differ between reruns; "
                    f"session time so far {elapsed:.0f} s")
