import numpy as np
import pytest
from hypothesis import given, strategies as st

from errt import kernels
from errt.episode import (
    AgentState, GeneratorConfig, HeuristicGenerator, OffsetGoalGenerator, _FeatureSet, agent_state,
    apply_incremental_bound, bound_limits, gen_path, incoming_velocity, inject_adaptive_noise,
    make_generator, noise_sigma,
)
from errt.errors import ContractViolation
from errt.geometry import Environment, OrientedBox, Sphere, segment_check
from errt.tree import SearchTree

EMPTY = Environment(2, [-50, -50], [50, 50])


def cluttered(rng, dim=2, n=25):
    obs = []
    for _ in range(n):
        c = rng.uniform(1, 19, dim)
        obs.append(Sphere(c, rng.uniform(0.2, 1.2)) if rng.random() < 0.5
                   else OrientedBox(c, rng.uniform(0.2, 1.0, dim), rng.uniform(-3, 3) if dim == 2 else np.eye(3)))
    return Environment(dim, np.zeros(dim), np.full(dim, 20.0), obs)


def test_incremental_bound_examples():
    raw = np.zeros((4, 1))
    raw[1, 0] = 0.9
    assert apply_incremental_bound(raw, 1.0, 4)[1, 0] == 0.5
    raw = np.full((4, 2), 0.3)
    raw[3] = [0.99, -1.0]
    assert np.array_equal(apply_incremental_bound(raw, 1.0, 4)[3], [0.99, -1.0])
    assert not apply_incremental_bound(np.zeros((4, 3)), 1.0, 4).any()
    with pytest.raises(ContractViolation):
        apply_incremental_bound(np.zeros((3, 2)), 1.0, 4)


@given(st.integers(0, 10_000), st.integers(1, 12), st.floats(0.1, 5.0))
def test_bound_holds_for_any_input(seed, m, bound):
    raw = np.random.default_rng(seed).normal(0, 3 * bound, size=(m, 3))
    out = apply_incremental_bound(raw, bound, m)
    assert np.all(np.abs(out) <= bound_limits(m, bound) + 1e-12)


def test_noise_zero_count_is_identity():
    cfg = GeneratorConfig()
    a = np.random.default_rng(0).normal(size=(8, 2)) * 0.1
    rng = np.random.default_rng(1)
    state = rng.bit_generator.state
    out = inject_adaptive_noise(a, 0, cfg, rng)
    assert out is a or np.array_equal(out, a)
    assert rng.bit_generator.state == state


def test_noise_sigma_schedule():
    cfg = GeneratorConfig(noise_base_sigma=0.1, noise_growth=2.0)
    assert noise_sigma(0, cfg) == 0.0
    assert [noise_sigma(c, cfg) for c in (1, 2, 3)] == pytest.approx([0.1, 0.2, 0.4])
    assert GeneratorConfig(bound=3.0).noise_base_sigma == pytest.approx(0.15)


def test_noise_statistics():
    """sigma = 0.1 * 2**2 at the third reuse; bound wide enough that nothing clamps."""
    cfg = GeneratorConfig(m=8, bound=1000.0, noise_base_sigma=0.1, noise_growth=2.0)
    rng = np.random.default_rng(7)
    draws = np.concatenate([inject_adaptive_noise(np.zeros((8, 2)), 3, cfg, rng).ravel() for _ in range(6250)])
    assert draws.size == 100_000
    assert abs(draws.std() - 0.4) <= 0.02 * 0.4
    assert np.all(np.abs(draws) < bound_limits(8, 1000.0).min())


def test_noise_output_bounded(rng):
    cfg = GeneratorConfig(m=8, bound=1.0, noise_base_sigma=0.5)
    for c in range(1, 6):
        out = inject_adaptive_noise(rng.normal(size=(8, 3)), c, cfg, rng)
        assert np.all(np.abs(out) <= bound_limits(8, 1.0) + 1e-12)


def test_heuristic_straight_pursuit():
    cfg = GeneratorConfig()
    a = HeuristicGenerator().step(AgentState(np.zeros(2), np.array([10.0, 0.0])), cfg)
    assert a.shape == (8, 2)
    assert np.allclose(a[:, 1], 0.0)
    assert np.all(np.diff(a[:, 0]) > 0)
    assert a[-1, 0] == pytest.approx(min(cfg.bound, 10.0))


def test_heuristic_reaches_close_goal_exactly():
    cfg = GeneratorConfig()
    goal = np.array([0.1, 0.15])  # inside bound / m = 0.25
    a = HeuristicGenerator().step(AgentState(np.zeros(2), goal), cfg)
    assert np.allclose(a[0], goal)
    assert np.allclose(a[-1], goal)


@pytest.mark.parametrize("dim", [2, 3])
def test_heuristic_avoids_sphere_in_the_way(dim):
    cfg = GeneratorConfig()
    q = np.zeros(dim)
    goal = np.zeros(dim)
    goal[0] = 6.0
    c = np.zeros(dim)
    c[0] = 1.5
    env = Environment(dim, np.full(dim, -10.0), np.full(dim, 10.0), [Sphere(c, 0.6)])
    path = q
    vel = np.zeros(dim)
    for _ in range(6):
        st_ = agent_state(path if path.ndim == 1 else path[-1], goal, env, vel, cfg)
        a = HeuristicGenerator().step(st_, cfg)
        base = path if path.ndim == 1 else path[-1]
        pts = np.vstack([base, base + a])
        for p0, p1 in zip(pts[:-1], pts[1:]):
            assert segment_check(p0, p1, env, cfg.d_dense / 4).valid
        path = pts if path.ndim == 1 else np.vstack([path, pts[1:]])
        vel = pts[-1] - pts[-2]
    assert np.linalg.norm(path[-1] - goal) < 0.5


def test_rollout_backends_agree():
    """Numba and numpy rollouts are the same algorithm; compare both directly."""
    if kernels.USE_NUMBA is False:
        pytest.skip("numba backend disabled")
    rng = np.random.default_rng(3)
    gen = HeuristicGenerator()
    cfg = GeneratorConfig()
    worst = 0.0
    for dim in (2, 3):
        env = cluttered(rng, dim, 40)
        for _ in range(150):
            q = rng.uniform(0, 20, dim)
            if env.points_in_collision(q[None])[0]:
                continue
            st_ = agent_state(q, rng.uniform(0, 20, dim), env, rng.normal(size=dim) * 0.25, cfg)
            feats = _FeatureSet(st_.env_features, dim, margin=cfg.safety_margin)
            a = gen._rollout_np(st_.goal, st_, cfg, feats)
            b = kernels.rollout_nb(st_.goal, st_.velocity, cfg.m, cfg.bound, cfg.k_att, cfg.k_rep, cfg.momentum,
                                   cfg.influence_factor, np.radians(gen.deflections), feats.kind, feats.centers,
                                   feats.half, feats.rot, feats.reach)
            worst = max(worst, float(np.max(np.abs(a - b))))
    assert worst <= 1e-9


def test_generator_bound_fuzz():
    rng = np.random.default_rng(11)
    cfg = GeneratorConfig()
    gen = HeuristicGenerator()
    env = cluttered(rng, 2, 30)
    lim = bound_limits(cfg.m, cfg.bound)
    for _ in range(1000):
        q = rng.uniform(0, 20, 2)
        a = gen.step(agent_state(q, rng.uniform(-5, 25, 2), env, rng.normal(size=2), cfg), cfg)
        assert np.all(np.abs(a) <= lim + 1e-12)


def test_offset_generator_stops_short():
    cfg = GeneratorConfig()
    gen = OffsetGoalGenerator(0.2)
    q = np.zeros(2)
    goal = np.array([3.0, 0.0])
    for _ in range(5):
        a = gen.step(AgentState(np.zeros(2), goal - q), cfg)
        q = q + a[-1]
    assert np.linalg.norm(goal - q) == pytest.approx(0.2, abs=1e-9)


def test_gen_path_examples():
    cfg = GeneratorConfig(noise_base_sigma=0.0)
    tree = SearchTree([0.0, 0.0])
    gen = make_generator("heuristic")
    p1 = gen_path(gen, tree, 0, [10.0, 0.0], EMPTY, cfg, np.random.default_rng(0))
    p2 = gen_path(gen, tree, 0, [10.0, 0.0], EMPTY, cfg, np.random.default_rng(0))
    assert np.array_equal(p1.knots, p2.knots)
    assert np.allclose(p1.knots[:, 1], 0.0)
    assert np.all(np.abs(np.diff(p1.arc)[:-1] - cfg.d_dense) <= 0.01 * cfg.d_dense)
    assert tree.episode_start_count[0] == 2

    noisy = GeneratorConfig()
    tree = SearchTree([0.0, 0.0])
    a = gen_path(gen, tree, 0, [10.0, 0.0], EMPTY, noisy, np.random.default_rng(0))
    b = gen_path(gen, tree, 0, [10.0, 0.0], EMPTY, noisy, np.random.default_rng(0))
    assert not np.array_equal(a.knots, b.knots)


def test_gen_path_rejects_wrong_shape():
    class Bad:
        def step(self, state, config):
            return np.zeros((config.m - 1, 2))

    with pytest.raises(ContractViolation):
        gen_path(Bad(), SearchTree([0.0, 0.0]), 0, [1.0, 1.0], EMPTY, GeneratorConfig(), np.random.default_rng(0))


@given(st.integers(0, 10_000))
def test_gen_path_knot_spacing(seed):
    rng = np.random.default_rng(seed)
    env = cluttered(rng, 2, 15)
    cfg = GeneratorConfig()
    q = rng.uniform(0, 20, 2)
    tree = SearchTree(q)
    tree.episode_start_count[0] = int(rng.integers(0, 4))
    path = gen_path(HeuristicGenerator(), tree, 0, rng.uniform(0, 20, 2), env, cfg, rng)
    assert np.array_equal(path.knots[0], q)
    gaps = np.linalg.norm(np.diff(path.knots, axis=0), axis=1)
    assert np.all(gaps <= 1.01 * cfg.d_dense)


def test_gen_path_deterministic_for_seed():
    rng = np.random.default_rng(2)
    env = cluttered(rng, 3, 20)
    cfg = GeneratorConfig()
    out = []
    for _ in range(2):
        tree = SearchTree([10.0, 10.0, 10.0])
        tree.episode_start_count[0] = 2
        out.append(gen_path(HeuristicGenerator(), tree, 0, [1.0, 2.0, 3.0], env, cfg, np.random.default_rng(9)).knots)
    assert np.array_equal(out[0], out[1])


def test_incoming_velocity():
    tree = SearchTree([0.0, 0.0])
    a = tree.insert([3.0, 4.0], 0)
    assert np.allclose(incoming_velocity(tree, 0, 0.25), 0.0)
    assert np.allclose(incoming_velocity(tree, a, 0.25), [0.15, 0.2])


def test_config_round_trip_and_validation():
    cfg = GeneratorConfig(m=6, bound=1.5)
    assert GeneratorConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ContractViolation):
        GeneratorConfig.from_dict({"nope": 1})
    with pytest.raises(ContractViolation):
        GeneratorConfig(m=0)
    with pytest.raises(ContractViolation):
        make_generator("missing")
