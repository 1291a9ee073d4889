"""Training-side MDP: stepping, five-term reward, replay buffer, data collection.

The learner is an interface; the shipped :class:`RecordingLearner` only keeps
batch statistics so the collection loop can be exercised end to end.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .episode import AgentState, EpisodeGenerator, GeneratorConfig, agent_state, apply_incremental_bound
from .errors import ContractViolation
from .geometry import Environment, distance, segment_check
from .spline import build_spline, resample_equidistant


@dataclass
class RewardWeights:
    alpha1: float = -1.0   # length
    alpha2: float = -0.5   # smoothness
    alpha3: float = -20.0  # collision
    beta1: float = 50.0    # reach
    beta2: float = 2.0     # advance

    def __post_init__(self):
        if not (self.alpha1 < 0 and self.alpha2 < 0 and self.alpha3 < 0):
            raise ContractViolation("alpha weights must be negative")
        if not (self.beta1 > 0 and self.beta2 > 0):
            raise ContractViolation("beta weights must be positive")

    def combine(self, c: "RewardComponents") -> float:
        return (self.alpha1 * c.r_len + self.alpha2 * c.r_smooth + self.alpha3 * c.r_collide
                + self.beta1 * c.r_reach + self.beta2 * c.r_advance)


@dataclass
class MdpConfig:
    gamma: float = 0.99
    max_re: int = 5
    reach_radius: float = 0.5
    eps_lsafe: float = 1e-3
    weights: RewardWeights = field(default_factory=RewardWeights)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    resolution: float = 0.05
    explore_sigma: float = 0.2
    capacity: int = 100_000
    batch_size: int = 64
    update_every: int = 50
    max_episode_steps: int = 50

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ContractViolation("gamma must lie in (0, 1)")
        if int(self.max_re) != self.max_re or self.max_re < 1:
            raise ContractViolation("max_re must be a positive integer")
        for name in ("reach_radius", "eps_lsafe", "resolution", "capacity", "batch_size", "update_every",
                     "max_episode_steps"):
            if not getattr(self, name) > 0:
                raise ContractViolation(f"{name} must be positive")


@dataclass
class RewardComponents:
    r_len: float
    r_smooth: float
    r_collide: float
    r_reach: float
    r_advance: float


def collide_penalty(l_safe: float, eps: float = 1e-3) -> float:
    """1 + 1 / l_safe, with l_safe floored at ``eps`` to stay finite."""
    if l_safe < 0:
        raise ContractViolation("l_safe must be non-negative")
    return 1.0 + 1.0 / max(float(l_safe), eps)


def _directions(P: np.ndarray) -> np.ndarray:
    seg = np.diff(P, axis=0)
    n = np.linalg.norm(seg, axis=1)
    keep = n > 1e-12
    return seg[keep] / n[keep, None]


def smoothness(P: np.ndarray, prev_velocity=None) -> float:
    """Mean of 1 - cos over consecutive unit directions.

    The incoming velocity direction, when non-zero, is prepended. Zero-length
    segments are skipped; fewer than two directions score 0.
    """
    dirs = _directions(np.asarray(P, dtype=float))
    if prev_velocity is not None:
        v = np.asarray(prev_velocity, dtype=float)
        nv = float(np.linalg.norm(v))
        if nv > 1e-12:
            dirs = np.vstack([v[None, :] / nv, dirs])
    if dirs.shape[0] < 2:
        return 0.0
    # 1 - cos(theta) = |u - v|^2 / 2 for unit vectors; exact zero when parallel
    diff = dirs[1:] - dirs[:-1]
    return float(np.mean(np.minimum(0.5 * np.einsum("ij,ij->i", diff, diff), 2.0)))


def reward(prev_q, path, q_goal, weights: RewardWeights, reach_radius: float, prev_velocity=None,
           collided: bool = False, l_safe: float = 0.0, eps: float = 1e-3):
    """Weighted five-term reward of an executed path starting at prev_q.

    ``path`` is the executed (possibly truncated) knot sequence. Returns the
    scalar reward and its components.
    """
    P = np.asarray(getattr(path, "knots", path), dtype=float)
    if P.ndim != 2 or P.shape[0] == 0:
        raise ContractViolation("executed path is empty")
    prev_q = np.asarray(prev_q, dtype=float)
    q_goal = np.asarray(q_goal, dtype=float)
    final = P[-1]
    comps = RewardComponents(
        r_len=float(np.sum(np.linalg.norm(np.diff(P, axis=0), axis=1))) if P.shape[0] > 1 else 0.0,
        r_smooth=smoothness(P, prev_velocity),
        r_collide=collide_penalty(l_safe, eps) if collided else 0.0,
        r_reach=1.0 if distance(final, q_goal) <= reach_radius else 0.0,
        r_advance=distance(prev_q, q_goal) - distance(final, q_goal),
    )
    return weights.combine(comps), comps


@dataclass
class Transition:
    s: AgentState
    a: np.ndarray
    r: float
    s_prime: AgentState
    done: bool
    collided: bool
    l_safe: float
    q: np.ndarray
    q_next: np.ndarray
    components: RewardComponents

    def to_record(self) -> dict:
        def state(st: AgentState) -> dict:
            return {"velocity": st.velocity.tolist(), "goal": st.goal.tolist(),
                    "env_features": [f.vector().tolist() for f in st.env_features]}
        return {"s": state(self.s), "a": self.a.tolist(), "r": self.r, "s_prime": state(self.s_prime),
                "done": self.done, "collided": self.collided, "l_safe": self.l_safe,
                "q": self.q.tolist(), "q_next": self.q_next.tolist(), "components": asdict(self.components)}


def execute(current_q, knots, env: Environment, q_goal, cfg: MdpConfig):
    """Walk knots with segment checks.

    Returns (executed knots, collided, l_safe, reached). On collision the path
    is truncated at the last safe knot and l_safe is the free arc length up to
    the impact as measured by the segment checks. Reaching the goal region
    stops the walk at the first knot inside it.
    """
    P = np.asarray(knots, dtype=float)
    q_goal = np.asarray(q_goal, dtype=float)
    travelled = 0.0
    for i in range(P.shape[0] - 1):
        out = segment_check(P[i], P[i + 1], env, cfg.resolution)
        if not out.valid:
            return P[: i + 1], True, travelled + out.l_safe, False
        travelled += out.length
        if distance(P[i + 1], q_goal) <= cfg.reach_radius:
            return P[: i + 2], False, travelled, True
    reached = distance(P[-1], q_goal) <= cfg.reach_radius
    return P, False, travelled, reached


def env_step(current_q, action, env: Environment, q_goal, cfg: MdpConfig, prev_velocity=None,
             state: AgentState | None = None) -> Transition:
    """Execute one action path from current_q and score it."""
    q = np.asarray(current_q, dtype=float)
    gcfg = cfg.generator
    v0 = np.zeros(env.dim) if prev_velocity is None else np.asarray(prev_velocity, dtype=float)
    if state is None:
        state = agent_state(q, q_goal, env, v0, gcfg)
    path = resample_equidistant(build_spline(q, action), gcfg.d_dense)
    path.knots[0] = q
    executed, collided, l_safe, reached = execute(q, path.knots, env, q_goal, cfg)
    r, comps = reward(q, executed, q_goal, cfg.weights, cfg.reach_radius, v0, collided, l_safe, cfg.eps_lsafe)
    q_next = executed[-1].copy()
    dirs = _directions(executed)
    v1 = dirs[-1] * gcfg.d_dense if dirs.shape[0] else v0
    s_prime = agent_state(q_next, q_goal, env, v1, gcfg)
    return Transition(state, np.asarray(action, dtype=float), r, s_prime, bool(collided or reached),
                      bool(collided), float(l_safe), q, q_next, comps)


class ReplayBuffer:
    """Fixed-capacity ring buffer of transitions."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ContractViolation("capacity must be positive")
        self.capacity = int(capacity)
        self._items: list[Transition] = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._items)

    def add(self, tr: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(tr)
        else:
            self._items[self._next] = tr
        self._next = (self._next + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        """Uniform draw without replacement."""
        if batch_size > len(self._items):
            raise ContractViolation("batch larger than buffer")
        idx = rng.choice(len(self._items), size=batch_size, replace=False)
        return [self._items[i] for i in idx]

    def __iter__(self):
        return iter(self._items)

    def to_ndjson(self, path) -> None:
        with Path(path).open("w") as fh:
            for tr in self._items:
                fh.write(json.dumps(tr.to_record(), sort_keys=True) + "\n")


class Learner(Protocol):
    def update(self, batch: list[Transition]) -> dict: ...


class RecordingLearner:
    """No-op learner that keeps per-update batch statistics."""

    def __init__(self, gamma: float = 0.99):
        self.gamma = gamma
        self.history: list[dict] = []

    def update(self, batch: list[Transition]) -> dict:
        r = np.array([t.r for t in batch])
        stats = {"n": len(batch), "mean_reward": float(r.mean()),
                 "collision_rate": float(np.mean([t.collided for t in batch]))}
        self.history.append(stats)
        return stats


@dataclass
class CollectStats:
    steps: int = 0
    collisions: int = 0
    resets: int = 0
    forced_resets: int = 0
    max_retries_seen: int = 0
    updates: int = 0
    retries_per_state: list = field(default_factory=list)


def explore(generator: EpisodeGenerator, state: AgentState, gcfg: GeneratorConfig, sigma: float,
            rng: np.random.Generator) -> np.ndarray:
    """Generator action plus Gaussian exploration noise, re-bounded."""
    a = np.asarray(generator.step(state, gcfg), dtype=float)
    if sigma > 0:
        a = a + rng.normal(0.0, sigma, size=a.shape)
    return apply_incremental_bound(a, gcfg.bound, gcfg.m)


def collect(env_factory: Callable[[np.random.Generator], tuple], generator: EpisodeGenerator, learner: Learner,
            cfg: MdpConfig, budget: int, rng: np.random.Generator,
            policy: Callable | None = None) -> tuple[ReplayBuffer, CollectStats]:
    """Concentrated collecting.

    ``env_factory(rng)`` returns ``(env, q_start, q_goal)``. A collision
    rewinds to the pre-collision state and retries, at most ``max_re`` times,
    before a fresh random reset. Reaching the goal or the episode step cap
    also resets. ``policy(state, rng)`` overrides the exploring generator.
    """
    if budget < 1:
        raise ContractViolation("budget must be positive")
    buf = ReplayBuffer(cfg.capacity)
    stats = CollectStats()
    gcfg = cfg.generator
    act = policy or (lambda st, r: explore(generator, st, gcfg, cfg.explore_sigma, r))

    def reset():
        env, q, goal = env_factory(rng)
        stats.resets += 1
        return env, np.asarray(q, dtype=float), np.asarray(goal, dtype=float), np.zeros(len(q)), 0

    env, q, goal, vel, ep_steps = reset()
    retries = 0
    while stats.steps < budget:
        state = agent_state(q, goal, env, vel, gcfg)
        tr = env_step(q, act(state, rng), env, goal, cfg, vel, state)
        buf.add(tr)
        stats.steps += 1
        ep_steps += 1
        if stats.steps % cfg.update_every == 0 and len(buf) >= cfg.batch_size:
            learner.update(buf.sample(cfg.batch_size, rng))
            stats.updates += 1
        if tr.collided:
            stats.collisions += 1
            if retries < cfg.max_re:
                retries += 1
                stats.max_retries_seen = max(stats.max_retries_seen, retries)
                continue
            stats.retries_per_state.append(retries)
            stats.forced_resets += 1
            env, q, goal, vel, ep_steps = reset()
            retries = 0
            continue
        if retries:
            stats.retries_per_state.append(retries)
        retries = 0
        if tr.done or ep_steps >= cfg.max_episode_steps:
            env, q, goal, vel, ep_steps = reset()
            continue
        q = tr.q_next
        vel = tr.s_prime.velocity
    return buf, stats
