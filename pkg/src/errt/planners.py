"""Episodic RRT planners (ERRT, ERRT*, ERRT-Connect) and classical baselines.

Every planner owns one ``CollisionChecker`` so ``collision_checks`` in the
report is exactly the number of point tests it performed.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from .episode import EpisodeGenerator, GeneratorConfig, gen_path, make_generator
from .errors import ContractViolation, InvalidProblem
from .geometry import CollisionChecker, Environment, as_config, distance, path_length
from .spline import ResampledPath
from .tree import SearchTree, rewire, rrt_star_radius

EPISODIC = ("errt", "errt_star", "errt_connect")
BASELINES = ("rrt", "rrt_star", "rrt_connect")
VARIANTS = BASELINES + EPISODIC
STAR = ("rrt_star", "errt_star")
CONNECT = ("rrt_connect", "errt_connect")


@dataclass
class PlannerParams:
    variant: str = "errt"
    L_max: int = 10
    alpha_jump: float = 2.0
    goal_tolerance: float = 0.05
    time_limit: float | None = 1.0
    max_iterations: int | None = None
    extension_step: float = 1.0
    collision_resolution: float = 0.05
    goal_bias: float = 0.05
    # ablations
    no_bisection: bool = False
    downsample: bool = False
    downsample_factor: float = 2.0
    half_step_jump: bool = False
    no_jump: bool = False
    l_max_delta: bool = False
    # refinement
    anytime: bool = False
    stop_cost: float | None = None
    prune: bool = True
    seed: int = 0
    generator: str = "heuristic"
    generator_options: dict = field(default_factory=dict)
    generator_config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractViolation(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if int(self.L_max) != self.L_max or self.L_max < 1:
            raise ContractViolation("L_max must be a positive integer")
        for name in ("alpha_jump", "extension_step", "collision_resolution", "downsample_factor"):
            if not getattr(self, name) > 0:
                raise ContractViolation(f"{name} must be positive")
        if self.goal_tolerance < 0:
            raise ContractViolation("goal_tolerance must be non-negative")
        if self.time_limit is not None and not self.time_limit > 0:
            raise ContractViolation("time_limit must be positive")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ContractViolation("max_iterations must be positive")
        if self.time_limit is None and self.max_iterations is None:
            raise ContractViolation("need a time_limit or max_iterations budget")
        if not 0.0 <= self.goal_bias <= 1.0:
            raise ContractViolation("goal_bias must lie in [0, 1]")

    # effective values after ablations
    @property
    def jump_threshold(self) -> float:
        return self.alpha_jump * (0.5 if self.half_step_jump else 1.0)

    @property
    def episode_length(self) -> int:
        return int(self.L_max) + (2 if self.l_max_delta else 0)

    def gen_config(self) -> GeneratorConfig:
        cfg = GeneratorConfig.from_dict(self.generator_config)
        if self.downsample:
            cfg.d_dense *= self.downsample_factor
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict | None) -> "PlannerParams":
        d = dict(d or {})
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ContractViolation(f"unknown planner params: {sorted(unknown)}")
        return cls(**d)


@dataclass
class PlannerReport:
    variant: str
    seed: int
    success: bool
    status: str
    wall_time: float
    collision_checks: int
    iterations: int
    path: list
    path_length: float | None
    tree_size: int
    cost_trace: list = field(default_factory=list)  # (iteration, checks, seconds, cost)
    first_solution: dict | None = None
    params: dict = field(default_factory=dict)
    trees: list = field(default_factory=list, repr=False)

    def to_dict(self, include_timing: bool = True) -> dict:
        d = {
            "variant": self.variant,
            "seed": self.seed,
            "success": self.success,
            "status": self.status,
            "collision_checks": self.collision_checks,
            "iterations": self.iterations,
            "path": [list(map(float, q)) for q in self.path],
            "path_length": self.path_length,
            "tree_size": self.tree_size,
            "params": self.params,
        }
        if include_timing:
            d["wall_time"] = self.wall_time
            d["cost_trace"] = [list(e) for e in self.cost_trace]
            d["first_solution"] = self.first_solution
        else:
            d["cost_trace"] = [[it, ch, c] for it, ch, _, c in self.cost_trace]
            if self.first_solution is not None:
                d["first_solution"] = {k: v for k, v in self.first_solution.items() if k != "time"}
            else:
                d["first_solution"] = None
        return d


# ---------------------------------------------------------------------------
# dynamic bisection
# ---------------------------------------------------------------------------

@dataclass
class EpisodeState:
    """Cursor over the current re-sampled path plus episode bookkeeping.

    Knot 0 of ``a_r`` is the step's seed node (already in the tree); knots
    1..LEN are candidates. ``k_upper = LEN + 1`` means "nothing known to fail".
    """

    a_r: ResampledPath | None = None
    k: int = 0
    k_lower: int = 0
    k_upper: int = 1
    step_count: int = 0
    min_goal_distance: float = math.inf
    episode_end: bool = True
    step_end: bool = True
    jump: bool = False

    @property
    def LEN(self) -> int:
        return 0 if self.a_r is None else len(self.a_r) - 1

    def start_step(self, a_r: ResampledPath) -> None:
        self.a_r = a_r
        self.k = self.LEN
        self.k_lower = 0
        self.k_upper = self.LEN + 1
        self.step_end = False


def dynamic_bisection(state: EpisodeState, isvalid: bool) -> int:
    """One bisection update after probing knot ``state.k``; -1 when converged."""
    if isvalid:
        state.k_lower = state.k
        state.k_upper = state.LEN + 1
    else:
        state.k_upper = state.k
    if state.k_upper - state.k_lower > 1:
        state.k = (state.k_upper + state.k_lower) // 2
    else:
        state.k = -1
    return state.k


def linear_scan(state: EpisodeState, isvalid: bool) -> int:
    """Front-to-back replacement for bisection (NoBisection ablation)."""
    if isvalid:
        state.k_lower = state.k
        state.k = state.k + 1 if state.k < state.LEN else -1
    else:
        state.k_upper = state.k
        state.k = -1
    return state.k


def update_flags(state: EpisodeState, L_max: int) -> None:
    """Flag state machine run once a step has converged.

    The episode ends when it has used L_max steps or the step converged short
    of the path's final knot (the path was obstructed).
    """
    state.step_end = True
    state.step_count += 1
    state.episode_end = state.step_count >= L_max or state.k_lower < state.LEN or state.LEN == 0


@dataclass
class StepResult:
    accepted: list  # (knot index, node id) in insertion order
    probes: int
    furthest: int
    stopped: bool = False


def extend_step(tree: SearchTree, state: EpisodeState, checker: CollisionChecker,
                bisection: bool = True, on_insert: Callable[[int], bool] | None = None,
                admit: Callable[[int, np.ndarray], bool] | None = None,
                deadline: Callable[[], bool] | None = None) -> StepResult:
    """Validate knots of ``state.a_r`` against the tree until the step converges.

    Each probe checks the straight edge from the nearest tree node to the
    probed knot and inserts the knot when the edge is free. ``admit`` can veto
    a candidate before any collision check (pruning); ``on_insert`` returning
    True stops the step early (goal reached).
    """
    update = dynamic_bisection if bisection else linear_scan
    if not bisection:
        state.k = min(1, state.LEN)
    accepted = []
    probes = 0
    if state.LEN == 0:
        state.k = -1
    while state.k > 0:
        if deadline is not None and deadline():
            return StepResult(accepted, probes, state.k_lower, stopped=True)
        q_new = state.a_r.knots[state.k]
        near = tree.nearest(q_new)
        probes += 1
        if admit is not None and not admit(near, q_new):
            ok = False
        else:
            ok = checker.free(tree.coords[near], q_new)
        if ok:
            if distance(tree.coords[near], q_new) > 0.0:
                node = tree.insert(q_new, near)
                accepted.append((state.k, node))
                if on_insert is not None and on_insert(node):
                    state.k_lower = state.k
                    return StepResult(accepted, probes, state.k_lower, stopped=True)
            else:
                accepted.append((state.k, near))
        update(state, ok)
    return StepResult(accepted, probes, state.k_lower)


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def steer(q_from: np.ndarray, q_to: np.ndarray, step: float) -> np.ndarray:
    d = distance(q_from, q_to)
    if d <= step:
        return np.array(q_to, dtype=float)
    return q_from + (q_to - q_from) * (step / d)


def sample_uniform(env: Environment, rng: np.random.Generator) -> np.ndarray:
    return env.lo + rng.random(env.dim) * (env.hi - env.lo)


def episode_restart(tree: SearchTree, env: Environment, rng: np.random.Generator) -> tuple[int, EpisodeState]:
    """Uniform sample over the bounds; its nearest tree node seeds a new episode."""
    q_rand = sample_uniform(env, rng)
    return tree.nearest(q_rand), EpisodeState()


def connect_and_swap(tree_a: SearchTree, tree_b: SearchTree, checker: CollisionChecker,
                     params: PlannerParams, target: int | None = None):
    """Greedy connection from tree_b towards tree_a's newest node.

    tree_b grows by ``extension_step`` per free step until it reaches the
    target or is blocked. Returns ``(node_in_a, node_in_b)`` on connection,
    else None. The caller swaps roles afterwards.
    """
    a_node = tree_a.newest if target is None else target
    q_target = tree_a.coords[a_node].copy()
    b_node = tree_b.nearest(q_target)
    while True:
        q = tree_b.coords[b_node]
        if distance(q, q_target) == 0.0:
            return a_node, b_node
        q_next = steer(q, q_target, params.extension_step)
        if not checker.free(q, q_next):
            return None
        b_node = tree_b.insert(q_next, b_node)


def bridge_path(tree_start: SearchTree, n_start: int, tree_goal: SearchTree, n_goal: int) -> list:
    a, _ = tree_start.path_to_root(n_start)
    b, _ = tree_goal.path_to_root(n_goal)
    b = b[::-1]
    if distance(a[-1], b[0]) == 0.0:
        b = b[1:]
    return a + b


class _Budget:
    def __init__(self, params: PlannerParams):
        self.t0 = time.perf_counter()
        self.limit = params.time_limit
        self.max_iter = params.max_iterations
        self.iterations = 0

    def elapsed(self) -> float:
        return time.perf_counter() - self.t0

    def exhausted(self) -> bool:
        if self.max_iter is not None and self.iterations >= self.max_iter:
            return True
        return self.limit is not None and self.elapsed() >= self.limit


class _Solution:
    """Best-cost bookkeeping over goal-region nodes of one tree."""

    def __init__(self):
        self.nodes: list[int] = []
        self.best = math.inf
        self.best_node = -1
        self.trace: list = []
        self.first: dict | None = None

    def refresh(self, tree: SearchTree, budget: _Budget, checker: CollisionChecker) -> bool:
        improved = False
        for n in self.nodes:
            c = float(tree.cost[n])
            if c < self.best:
                self.best, self.best_node = c, n
                improved = True
        if improved:
            entry = (budget.iterations, checker.checks, budget.elapsed(), self.best)
            self.trace.append(entry)
            if self.first is None:
                self.first = {"iteration": entry[0], "checks": entry[1], "time": entry[2], "cost": entry[3]}
        return improved


def _check_problem(env: Environment, q_start, q_goal):
    try:
        s = as_config(q_start, env.dim)
        g = as_config(q_goal, env.dim)
    except ContractViolation as exc:
        raise InvalidProblem(str(exc)) from exc
    hits = env.points_in_collision(np.stack([s, g]))
    if hits[0]:
        raise InvalidProblem("start configuration is in collision or out of bounds")
    if hits[1]:
        raise InvalidProblem("goal configuration is in collision or out of bounds")
    return s, g


# ---------------------------------------------------------------------------
# planners
# ---------------------------------------------------------------------------

class _Planner:
    def __init__(self, env: Environment, q_start, q_goal, params: PlannerParams,
                 generator: EpisodeGenerator | None = None):
        self.env = env
        self.q_start, self.q_goal = _check_problem(env, q_start, q_goal)
        self.params = params
        self.rng = np.random.default_rng(params.seed)
        self.checker = CollisionChecker(env, params.collision_resolution)
        self.budget = _Budget(params)
        self.star = params.variant in STAR
        self.connect = params.variant in CONNECT
        self.generator = generator

    def _rewire_radius(self, tree: SearchTree) -> float:
        return rrt_star_radius(len(tree), self.env.dim, self.env.volume, 2.0 * self.params.extension_step)

    def _after_insert_star(self, tree: SearchTree, node: int) -> None:
        nbrs = tree.near(tree.coords[node], self._rewire_radius(tree))
        rewire(tree, node, nbrs, self.checker)

    def _done(self, sol: _Solution) -> bool:
        if sol.first is None:
            return False
        if not (self.params.anytime and self.star):
            return True
        return self.params.stop_cost is not None and sol.best <= self.params.stop_cost

    def _report(self, success: bool, status: str, path: list, trees: list, sol: _Solution | None) -> PlannerReport:
        return PlannerReport(
            variant=self.params.variant, seed=self.params.seed, success=success, status=status,
            wall_time=self.budget.elapsed(), collision_checks=self.checker.checks,
            iterations=self.budget.iterations, path=path,
            path_length=path_length(path) if success else None,
            tree_size=sum(len(t) for t in trees),
            cost_trace=list(sol.trace) if sol else [], first_solution=sol.first if sol else None,
            params=self.params.to_dict(), trees=trees)

    def _goal_hit(self, tree: SearchTree, node: int) -> bool:
        return distance(tree.coords[node], self.q_goal) <= self.params.goal_tolerance


class EpisodicPlanner(_Planner):
    """Single-tree ERRT / ERRT* and the two-tree ERRT-Connect."""

    def run(self) -> PlannerReport:
        p = self.params
        cfg = p.gen_config()
        if self.generator is None:
            self.generator = make_generator(p.generator, **p.generator_options)
        if self.connect:
            return self._run_connect(cfg)
        tree = SearchTree(self.q_start)
        sol = _Solution()
        state = EpisodeState()
        seed_node = 0
        if self._goal_hit(tree, 0):
            sol.nodes.append(0)
            sol.refresh(tree, self.budget, self.checker)

        def on_insert(node: int) -> bool:
            if self.star:
                self._after_insert_star(tree, node)
            d = distance(tree.coords[node], self.q_goal)
            state.min_goal_distance = min(state.min_goal_distance, d)
            if d <= p.goal_tolerance:
                sol.nodes.append(node)
            if self.star and sol.nodes:
                sol.refresh(tree, self.budget, self.checker)
            elif d <= p.goal_tolerance:
                sol.refresh(tree, self.budget, self.checker)
            return self._done(sol)

        def admit(near: int, q_new: np.ndarray) -> bool:
            self.budget.iterations += 1
            if not (self.star and p.prune and sol.first is not None):
                return True
            g = tree.cost[near] + distance(tree.coords[near], q_new) + distance(q_new, self.q_goal)
            return g < sol.best

        while not self._done(sol) and not self.budget.exhausted():
            if state.step_end:
                if state.episode_end:
                    seed_node, state = episode_restart(tree, self.env, self.rng)
                    n_init = 0
                else:
                    n_init = state.step_count
                a_r = gen_path(self.generator, tree, seed_node, self.q_goal, self.env, cfg, self.rng, n_init)
                state.start_step(a_r)
            res = extend_step(tree, state, self.checker, bisection=not p.no_bisection,
                              on_insert=on_insert, admit=admit, deadline=self.budget.exhausted)
            if res.stopped:
                continue
            update_flags(state, p.episode_length)
            if not state.episode_end:
                seed_node = res.accepted[-1][1]
                continue
            state.jump = (not p.no_jump and state.min_goal_distance < p.jump_threshold)
            if state.jump:
                self.budget.iterations += 1
                node = one_step_jump(tree, self.q_goal, self.checker)
                if node is not None:
                    on_insert(node)
        return self._finish_single(tree, sol)

    def _finish_single(self, tree: SearchTree, sol: _Solution) -> PlannerReport:
        if sol.first is None:
            return self._report(False, "budget", [], [tree], sol)
        path, _ = tree.path_to_root(sol.best_node)
        return self._report(True, "success", path, [tree], sol)

    def _run_connect(self, cfg: GeneratorConfig) -> PlannerReport:
        p = self.params
        trees = [SearchTree(self.q_start), SearchTree(self.q_goal)]
        active = 0
        state = EpisodeState()
        seed_node = 0
        bridge = None

        def admit(near, q_new):
            self.budget.iterations += 1
            return True

        if distance(self.q_start, self.q_goal) <= p.goal_tolerance:
            bridge = (0, 0)
        while bridge is None and not self.budget.exhausted():
            tree, other = trees[active], trees[1 - active]
            target = other.coords[0]
            if state.step_end:
                if state.episode_end:
                    seed_node, state = episode_restart(tree, self.env, self.rng)
                    n_init = 0
                else:
                    n_init = state.step_count
                a_r = gen_path(self.generator, tree, seed_node, target, self.env, cfg, self.rng, n_init)
                state.start_step(a_r)
            res = extend_step(tree, state, self.checker, bisection=not p.no_bisection,
                              admit=admit, deadline=self.budget.exhausted)
            if res.stopped:
                continue
            update_flags(state, p.episode_length)
            if not state.episode_end:
                seed_node = res.accepted[-1][1]
                continue
            self.budget.iterations += 1
            hit = connect_and_swap(tree, other, self.checker, p)
            if hit is not None:
                bridge = (hit[0], hit[1]) if active == 0 else (hit[1], hit[0])
                break
            active = 1 - active
            state = EpisodeState()
        return self._finish_connect(trees, bridge)

    def _finish_connect(self, trees, bridge) -> PlannerReport:
        sol = _Solution()
        if bridge is None:
            return self._report(False, "budget", [], trees, sol)
        path = bridge_path(trees[0], bridge[0], trees[1], bridge[1])
        L = path_length(path)
        entry = (self.budget.iterations, self.checker.checks, self.budget.elapsed(), L)
        sol.trace.append(entry)
        sol.first = {"iteration": entry[0], "checks": entry[1], "time": entry[2], "cost": L}
        return self._report(True, "success", path, trees, sol)


def one_step_jump(tree: SearchTree, q_goal: np.ndarray, checker: CollisionChecker) -> int | None:
    """Try the straight edge from the goal's nearest tree node to the goal."""
    near = tree.nearest(q_goal)
    if distance(tree.coords[near], q_goal) == 0.0:
        return near
    if checker.free(tree.coords[near], q_goal):
        return tree.insert(q_goal, near)
    return None


class ClassicPlanner(_Planner):
    """RRT, RRT* and RRT-Connect with the same instrumentation."""

    def run(self) -> PlannerReport:
        if self.connect:
            return self._run_connect()
        p = self.params
        tree = SearchTree(self.q_start)
        sol = _Solution()
        if self._goal_hit(tree, 0):
            sol.nodes.append(0)
            sol.refresh(tree, self.budget, self.checker)
        while not self._done(sol) and not self.budget.exhausted():
            self.budget.iterations += 1
            q_rand = self.q_goal.copy() if self.rng.random() < p.goal_bias else sample_uniform(self.env, self.rng)
            near = tree.nearest(q_rand)
            q_new = steer(tree.coords[near], q_rand, p.extension_step)
            if distance(tree.coords[near], q_new) == 0.0:
                continue
            if not self.checker.free(tree.coords[near], q_new):
                continue
            node = tree.insert(q_new, near)
            if self.star:
                self._after_insert_star(tree, node)
            if self._goal_hit(tree, node):
                sol.nodes.append(node)
            if sol.nodes:
                sol.refresh(tree, self.budget, self.checker)
        if sol.first is None:
            return self._report(False, "budget", [], [tree], sol)
        path, _ = tree.path_to_root(sol.best_node)
        return self._report(True, "success", path, [tree], sol)

    def _run_connect(self) -> PlannerReport:
        p = self.params
        trees = [SearchTree(self.q_start), SearchTree(self.q_goal)]
        active = 0
        bridge = None
        if distance(self.q_start, self.q_goal) <= p.goal_tolerance:
            bridge = (0, 0)
        while bridge is None and not self.budget.exhausted():
            self.budget.iterations += 1
            tree, other = trees[active], trees[1 - active]
            q_rand = sample_uniform(self.env, self.rng)
            near = tree.nearest(q_rand)
            q_new = steer(tree.coords[near], q_rand, p.extension_step)
            if distance(tree.coords[near], q_new) > 0.0 and self.checker.free(tree.coords[near], q_new):
                tree.insert(q_new, near)
                hit = connect_and_swap(tree, other, self.checker, p)
                if hit is not None:
                    bridge = (hit[0], hit[1]) if active == 0 else (hit[1], hit[0])
                    break
            active = 1 - active
        sol = _Solution()
        if bridge is None:
            return self._report(False, "budget", [], trees, sol)
        path = bridge_path(trees[0], bridge[0], trees[1], bridge[1])
        L = path_length(path)
        entry = (self.budget.iterations, self.checker.checks, self.budget.elapsed(), L)
        sol.trace.append(entry)
        sol.first = {"iteration": entry[0], "checks": entry[1], "time": entry[2], "cost": L}
        return self._report(True, "success", path, trees, sol)


def plan(env: Environment, q_start, q_goal, params: PlannerParams,
         generator: EpisodeGenerator | None = None) -> PlannerReport:
    """Run one planner. Raises InvalidProblem for colliding start or goal."""
    cls = EpisodicPlanner if params.variant in EPISODIC else ClassicPlanner
    return cls(env, q_start, q_goal, params, generator).run()
