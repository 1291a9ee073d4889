import json

import numpy as np
import pytest

from errt.envgen import generate, preset, sample_problem
from errt.errors import ContractViolation, InvalidProblem
from errt.fixtures import near_goal_fixture, wall_with_gap
from errt.geometry import CollisionChecker, Environment, Sphere, validate_path
from errt.planners import (
    EPISODIC, VARIANTS, EpisodeState, PlannerParams, connect_and_swap, dynamic_bisection, episode_restart,
    extend_step, linear_scan, one_step_jump, plan, update_flags,
)
from errt.spline import ResampledPath
from errt.tree import SearchTree

EMPTY20 = Environment(2, [0, 0], [20, 20])


def _state(LEN):
    knots = np.column_stack([np.arange(LEN + 1) * 0.25, np.zeros(LEN + 1)])
    st = EpisodeState()
    st.start_step(ResampledPath(knots, 0.25, np.arange(LEN + 1) * 0.25))
    return st


def test_bisection_trace_examples():
    st = _state(8)
    assert (st.k, st.k_lower, st.k_upper) == (8, 0, 9)
    assert dynamic_bisection(st, True) == -1
    assert (st.k_lower, st.k_upper) == (8, 9)
    st = _state(8)
    assert dynamic_bisection(st, False) == 4
    assert st.k_upper == 8


def _drive(update, LEN, first_bad):
    st = _state(LEN)
    if update is linear_scan:
        st.k = 1
    probes, accepted = 0, []
    while st.k > 0:
        ok = st.k < first_bad
        probes += 1
        if ok:
            accepted.append(st.k)
        update(st, ok)
    return accepted, probes, st


@pytest.mark.parametrize("LEN", [1, 2, 5, 8, 13, 40])
def test_bisection_matches_linear_scan_on_monotone_paths(LEN):
    for first_bad in range(1, LEN + 2):
        acc_b, probes_b, st_b = _drive(dynamic_bisection, LEN, first_bad)
        acc_l, probes_l, st_l = _drive(linear_scan, LEN, first_bad)
        assert max(acc_b, default=0) == max(acc_l, default=0) == first_bad - 1
        assert st_b.k_lower == st_l.k_lower
        assert probes_b <= LEN + 1


def test_update_flags():
    st = _state(8)
    st.k_lower = 8
    update_flags(st, L_max=3)
    assert st.step_end and not st.episode_end and st.step_count == 1
    st.k_lower = 5
    update_flags(st, L_max=3)
    assert st.episode_end  # converged inside the step
    st = _state(8)
    st.k_lower = 8
    st.step_count = 2
    update_flags(st, L_max=3)
    assert st.episode_end  # reached L_max


def test_extend_step_inserts_furthest_reachable_knot():
    env = Environment(2, [-5, -5], [10, 10], [Sphere([1.5, 0.0], 0.3)])
    tree = SearchTree([0.0, 0.0])
    st = _state(12)
    res = extend_step(tree, st, CollisionChecker(env, 0.05))
    knots = st.a_r.knots
    # knot 4 (x = 1.0) is the last one reachable before the sphere at x = 1.2
    assert res.furthest == 4
    assert any(np.allclose(tree.coords[n], knots[4]) for _, n in res.accepted)
    for _, n in res.accepted:
        assert validate_path([tree.coords[tree.parent[n]], tree.coords[n]], env, 0.005) == []


def test_episode_restart_single_node_and_voronoi_frequencies():
    rng = np.random.default_rng(0)
    t1 = SearchTree([3.0, 3.0])
    assert all(episode_restart(t1, EMPTY20, rng)[0] == 0 for _ in range(50))
    tree = SearchTree(rng.uniform(0, 20, 2))
    for _ in range(9):
        tree.insert(rng.uniform(0, 20, 2), 0)
    counts = np.bincount([episode_restart(tree, EMPTY20, rng)[0] for _ in range(100_000)], minlength=10)
    # Monte-Carlo Voronoi volumes from an independent stream and brute-force nearest
    P = np.random.default_rng(99).uniform(0, 20, size=(1_000_000, 2))
    d2 = ((P[:, None, :] - tree.coords[None, :10, :]) ** 2).sum(axis=2)
    vol = np.bincount(np.argmin(d2, axis=1), minlength=10) / len(P)
    assert np.all(np.abs(counts / 100_000 - vol) <= 0.02 * np.maximum(vol, 0.05))


def test_one_step_jump():
    tree = SearchTree([0.0, 0.0])
    a = tree.insert([9.9, 0.0], 0)
    chk = CollisionChecker(EMPTY20, 0.05)
    node = one_step_jump(tree, np.array([10.0, 0.0]), chk)
    assert node is not None and tree.parent[node] == a
    blocked = Environment(2, [0, 0], [20, 20], [Sphere([10.0, 1.0], 0.5)])
    tree = SearchTree([10.0, 0.2])
    assert one_step_jump(tree, np.array([10.0, 2.0]), CollisionChecker(blocked, 0.05)) is None


def test_jump_gate_and_no_jump_failure():
    pr = near_goal_fixture(3)
    base = dict(variant="errt", generator="offset", goal_tolerance=0.01, time_limit=None, seed=3)
    assert plan(pr.env, pr.q_start, pr.q_goal, PlannerParams(**base, max_iterations=800)).success
    # alpha_jump below the 0.2 m stall distance: the gate never opens
    gated = plan(pr.env, pr.q_start, pr.q_goal, PlannerParams(**base, alpha_jump=0.1, max_iterations=300))
    no_jump = plan(pr.env, pr.q_start, pr.q_goal, PlannerParams(**base, no_jump=True, max_iterations=300))
    assert not gated.success and not no_jump.success


def test_connect_and_swap():
    params = PlannerParams()
    chk = CollisionChecker(EMPTY20, 0.05)
    ta, tb = SearchTree([2.0, 2.0]), SearchTree([12.0, 5.0])
    hit = connect_and_swap(ta, tb, chk, params)
    assert hit is not None
    path = [*ta.path_to_root(hit[0])[0], *tb.path_to_root(hit[1])[0][::-1]]
    assert validate_path(path, EMPTY20, 0.005) == []
    wall = Environment(2, [0, 0], [20, 20], [Sphere([7.0, 3.5], 1.5)])
    ta, tb = SearchTree([2.0, 2.0]), SearchTree([12.0, 5.0])
    assert connect_and_swap(ta, tb, CollisionChecker(wall, 0.05), params) is None
    assert len(tb) > 1  # grew until blocked


def test_connect_matches_exhaustive_oracle():
    """Greedy connect succeeds iff the straight line from b's nearest node is free."""
    rng = np.random.default_rng(4)
    pr = wall_with_gap(gap=2.0)
    params = PlannerParams()
    for _ in range(50):
        ta = SearchTree(rng.uniform(0, 20, 2))
        tb = SearchTree(rng.uniform(0, 20, 2))
        for t in (ta, tb):
            for _ in range(5):
                q = rng.uniform(0, 20, 2)
                if not pr.env.points_in_collision(q[None])[0]:
                    t.insert(q, t.nearest(q))
        if pr.env.points_in_collision(ta.coords[:1])[0] or pr.env.points_in_collision(tb.coords[:1])[0]:
            continue
        target = ta.coords[ta.newest]
        start = tb.coords[tb.nearest(target)]
        free_line = CollisionChecker(pr.env, 0.05).free(start, target)
        hit = connect_and_swap(ta, tb, CollisionChecker(pr.env, 0.05), params)
        assert (hit is not None) == free_line


@pytest.mark.parametrize("variant", VARIANTS)
def test_empty_map_all_variants(variant):
    q_s, q_g = np.array([2.0, 3.0]), np.array([17.0, 15.0])
    straight = np.linalg.norm(q_g - q_s)
    rep = plan(EMPTY20, q_s, q_g, PlannerParams(variant=variant, time_limit=None, max_iterations=20000, seed=1))
    assert rep.success
    tol = 1.05 if variant in EPISODIC else 1.5
    assert rep.path_length <= tol * straight
    assert np.allclose(rep.path[0], q_s)
    assert np.linalg.norm(rep.path[-1] - q_g) <= 0.05


def test_invalid_problem_is_distinct():
    env = Environment(2, [0, 0], [20, 20], [Sphere([10.0, 10.0], 1.0)])
    with pytest.raises(InvalidProblem):
        plan(env, [1.0, 1.0], [10.0, 10.5], PlannerParams())
    with pytest.raises(InvalidProblem):
        plan(env, [25.0, 1.0], [1.0, 1.0], PlannerParams())
    tiny = plan(env, [1.0, 1.0], [19.0, 19.0], PlannerParams(variant="rrt", time_limit=None, max_iterations=2))
    assert not tiny.success and tiny.status == "budget"


@pytest.mark.parametrize("variant", VARIANTS)
def test_fixed_seed_is_bit_identical(variant):
    env = generate(preset("desk2d", seed=5))
    q_s, q_g = sample_problem(env, 0.5, np.random.default_rng(5))
    p = PlannerParams(variant=variant, time_limit=None, max_iterations=3000, seed=7)
    a = json.dumps(plan(env, q_s, q_g, p).to_dict(include_timing=False), sort_keys=True)
    b = json.dumps(plan(env, q_s, q_g, p).to_dict(include_timing=False), sort_keys=True)
    assert a == b


@pytest.mark.parametrize("variant", VARIANTS)
def test_paths_valid_and_counter_audited(variant):
    env = generate(preset("desk2d", seed=8))
    q_s, q_g = sample_problem(env, 0.5, np.random.default_rng(8))
    p = PlannerParams(variant=variant, time_limit=None, max_iterations=20000, seed=2)
    rep = plan(env, q_s, q_g, p)
    assert rep.success
    assert validate_path(rep.path, env, p.collision_resolution / 10) == []
    assert rep.path_length == pytest.approx(sum(np.linalg.norm(np.diff(rep.path, axis=0), axis=1)))


def test_anytime_trace_non_increasing():
    env = generate(preset("anytime2d", seed=1))
    q_s, q_g = sample_problem(env, 0.5, np.random.default_rng(1))
    for v in ("rrt_star", "errt_star"):
        rep = plan(env, q_s, q_g, PlannerParams(variant=v, anytime=True, time_limit=None, max_iterations=1500))
        costs = [c for *_, c in rep.cost_trace]
        assert costs and all(b <= a for a, b in zip(costs, costs[1:]))
        assert rep.path_length == pytest.approx(costs[-1])


def test_ablation_params():
    p = PlannerParams(alpha_jump=2.0, half_step_jump=True, L_max=10, l_max_delta=True, downsample=True)
    assert p.jump_threshold == 1.0 and p.episode_length == 12
    assert p.gen_config().d_dense == pytest.approx(0.5)
    with pytest.raises(ContractViolation):
        PlannerParams(variant="prm")
    with pytest.raises(ContractViolation):
        PlannerParams(time_limit=None, max_iterations=None)
    with pytest.raises(ContractViolation):
        PlannerParams.from_dict({"bogus": 1})
