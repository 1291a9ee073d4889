"""Episode generation: generator interface, heuristic generator, bounds and noise.

An action path is an ``(m, dim)`` array of points relative to the agent's
current configuration. Point ``i`` (1-based) must satisfy the incremental
bound ``|p[i, j]| <= (i / m) * bound`` on every component.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Protocol

import numpy as np

from . import kernels
from ._accel import USE_NUMBA
from .errors import ContractViolation
from .geometry import Environment, ObstacleFeature, obstacles_within_radius
from .spline import ResampledPath, build_spline, resample_equidistant
from .tree import SearchTree


@dataclass
class GeneratorConfig:
    m: int = 8
    bound: float = 2.0
    d_dense: float = 0.25
    noise_base_sigma: float | None = None  # default 0.05 * bound
    noise_growth: float = 2.0
    d_o: float = 5.0
    k_att: float = 1.0
    k_rep: float | None = None  # default 0.5 * bound
    momentum: float = 0.5
    influence_factor: float = 2.0
    safety_margin: float = 0.1

    def __post_init__(self):
        if self.noise_base_sigma is None:
            self.noise_base_sigma = 0.05 * self.bound
        if self.k_rep is None:
            self.k_rep = 0.5 * self.bound
        if int(self.m) != self.m or self.m < 1:
            raise ContractViolation("m must be a positive integer")
        self.m = int(self.m)
        for name in ("bound", "d_dense", "d_o", "influence_factor"):
            if not getattr(self, name) > 0:
                raise ContractViolation(f"{name} must be positive")
        if self.noise_base_sigma < 0:
            raise ContractViolation("noise_base_sigma must be non-negative")
        if not self.noise_growth > 1:
            raise ContractViolation("noise_growth must exceed 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ContractViolation("momentum must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict | None) -> "GeneratorConfig":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractViolation(f"unknown generator config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class AgentState:
    """Observation handed to a generator.

    velocity: intrinsic state in m/step; goal: q_goal - q_t;
    env_features: obstacles within the perception radius, nearest first.
    """

    velocity: np.ndarray
    goal: np.ndarray
    env_features: list = field(default_factory=list)
    step_index: int = 0

    @property
    def dim(self) -> int:
        return self.goal.shape[0]


class EpisodeGenerator(Protocol):
    def step(self, state: AgentState, config: GeneratorConfig) -> np.ndarray:
        """Return an ``(m, dim)`` action path; deterministic in its inputs."""
        ...


def bound_limits(m: int, bound: float) -> np.ndarray:
    """Per-point half-range (i / m) * bound for i = 1..m, as a column."""
    return (np.arange(1, m + 1) / m * bound)[:, None]


def apply_incremental_bound(raw, bound: float, m: int) -> np.ndarray:
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2 or raw.shape[0] != m:
        raise ContractViolation(f"action path must have {m} points, got shape {raw.shape}")
    lim = bound_limits(m, bound)
    return np.clip(raw, -lim, lim)


def noise_sigma(selection_count: int, config: GeneratorConfig) -> float:
    if selection_count < 1:
        return 0.0
    return float(config.noise_base_sigma) * float(config.noise_growth) ** (selection_count - 1)


def inject_adaptive_noise(action, selection_count: int, config: GeneratorConfig,
                          rng: np.random.Generator) -> np.ndarray:
    """Gaussian perturbation whose scale doubles (by default) per reuse.

    A count of zero returns the input untouched and draws nothing from rng.
    """
    if selection_count < 0:
        raise ContractViolation("selection_count must be non-negative")
    action = np.asarray(action, dtype=float)
    if selection_count == 0:
        return action
    sigma = noise_sigma(selection_count, config)
    noisy = action + rng.normal(0.0, 1.0, size=action.shape) * sigma
    return apply_incremental_bound(noisy, config.bound, config.m)


# ---------------------------------------------------------------------------
# heuristic potential-field generator
# ---------------------------------------------------------------------------

def _unit(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    return v / n if n > 1e-12 else np.zeros_like(v)


def _perpendicular(n: np.ndarray) -> np.ndarray:
    if n.shape[0] == 2:
        return np.array([-n[1], n[0]])
    axis = np.eye(3)[int(np.argmin(np.abs(n)))]
    return _unit(np.cross(n, axis))


class _FeatureSet:
    """Feature primitives packed for vectorised queries, optionally inflated."""

    def __init__(self, features: list[ObstacleFeature], dim: int, margin: float = 0.0):
        n = len(features)
        self.n = n
        self.kind = np.zeros(n, dtype=np.int64)
        self.centers = np.zeros((n, dim))
        self.half = np.zeros((n, dim))
        self.rot = np.zeros((n, dim, dim))
        self.reach = np.zeros(n)
        for i, f in enumerate(features):
            self.centers[i] = f.center
            self.rot[i] = f.rotation
            if f.kind == "sphere":
                self.kind[i] = kernels.SPHERE
                self.half[i] = f.size[0] + margin
            else:
                self.kind[i] = kernels.BOX
                self.half[i] = f.size + margin
            self.reach[i] = f.bounding_radius
        self.ids = np.arange(n)

    def surface(self, p: np.ndarray):
        """Distance to each surface (0 inside) and the outward unit normal."""
        diff = p - self.centers
        rho = np.zeros(self.n)
        normal = np.zeros_like(diff)
        sph = self.kind == kernels.SPHERE
        if sph.any():
            d = np.linalg.norm(diff[sph], axis=1)
            rho[sph] = np.maximum(d - self.half[sph, 0], 0.0)
            normal[sph] = diff[sph] / np.maximum(d, 1e-12)[:, None]
        box = ~sph
        if box.any():
            loc = np.einsum("nj,nja->na", diff[box], self.rot[box])
            h = self.half[box]
            out = loc - np.clip(loc, -h, h)
            d = np.linalg.norm(out, axis=1)
            rho[box] = d
            inside = d <= 1e-12
            # inside: push out through the nearest face
            rows = np.arange(loc.shape[0])
            face = np.argmin(h - np.abs(loc), axis=1)
            push = np.zeros_like(loc)
            push[rows, face] = np.where(loc[rows, face] < 0.0, -1.0, 1.0)
            local_n = np.where(inside[:, None], push, out / np.maximum(d, 1e-12)[:, None])
            normal[box] = np.einsum("nja,na->nj", self.rot[box], local_n)
        return rho, normal

    def entry(self, a: np.ndarray, b: np.ndarray) -> float:
        """Smallest entry parameter of segment a->b into any primitive, or -1."""
        if self.n == 0:
            return -1.0
        t = kernels._segment_entry_np(a, b - a, self.ids, self.kind, self.centers, self.half, self.rot)
        t = t[t >= 0.0]
        return float(t.min()) if t.size else -1.0


class HeuristicGenerator:
    """Potential-field rollout standing in for a learned policy.

    Each of the m points advances bound / m along a heading that blends the
    previous heading (momentum) with attraction to the goal, repulsion from
    nearby features and a tangential slide around them. Steps that would
    enter an (inflated) feature are deflected towards the slide direction,
    then shortened; the rollout never crosses a feature boundary.
    """

    name = "heuristic"
    deflections = (0.0, 30.0, 60.0, 90.0, 120.0)  # degrees

    def target(self, state: AgentState, config: GeneratorConfig) -> np.ndarray:
        return np.asarray(state.goal, dtype=float)

    def forces(self, p, goal, feats: _FeatureSet, config: GeneratorConfig):
        to_goal = goal - p
        att = config.k_att * _unit(to_goal)
        if feats.n == 0:
            return att, np.zeros_like(p)
        rho, normal = feats.surface(p)
        rho0 = config.influence_factor * feats.reach
        active = rho < rho0
        if not active.any():
            return att, np.zeros_like(p)
        r = np.maximum(rho[active], 1e-3)
        mag = config.k_rep * (1.0 / r - 1.0 / rho0[active]) / (r * r)
        rep = (mag[:, None] * normal[active]).sum(axis=0)
        # slide: goal direction projected off the dominant obstacle normal
        k = int(np.argmax(mag))
        n = normal[active][k]
        tang = att - (att @ n) * n
        if np.linalg.norm(tang) < 1e-9 * max(1.0, np.linalg.norm(att)):
            tang = _perpendicular(n)
        slide = float(np.linalg.norm(rep)) * _unit(tang)
        return att, rep + slide

    def step(self, state: AgentState, config: GeneratorConfig) -> np.ndarray:
        goal = self.target(state, config)
        feats = _FeatureSet(state.env_features, state.dim, margin=config.safety_margin)
        if USE_NUMBA:
            out = kernels.rollout_nb(goal, np.asarray(state.velocity, dtype=float), config.m, float(config.bound),
                                     float(config.k_att), float(config.k_rep), float(config.momentum),
                                     float(config.influence_factor), np.radians(self.deflections),
                                     feats.kind, feats.centers, feats.half, feats.rot, feats.reach)
        else:
            out = self._rollout_np(goal, state, config, feats)
        return apply_incremental_bound(out, config.bound, config.m)

    def _rollout_np(self, goal, state: AgentState, config: GeneratorConfig, feats: "_FeatureSet") -> np.ndarray:
        dim = state.dim
        step_len = config.bound / config.m
        p = np.zeros(dim)
        heading = _unit(np.asarray(state.velocity, dtype=float))
        out = np.zeros((config.m, dim))
        stopped = False
        for i in range(config.m):
            to_goal = goal - p
            dist = float(np.linalg.norm(to_goal))
            if stopped or dist <= 1e-12:
                out[i] = p
                continue
            att, extra = self.forces(p, goal, feats, config)
            force_dir = _unit(att + extra)
            if not force_dir.any():
                force_dir = _unit(att)
            h = _unit(config.momentum * heading + (1.0 - config.momentum) * force_dir)
            if not h.any():
                h = force_dir
            if dist <= step_len and feats.entry(p, goal) < 0.0:
                q = goal.copy()
            else:
                q = self._safe_step(p, h, extra, step_len, feats)
            if q is None:
                stopped = True
                out[i] = p
                continue
            heading = _unit(q - p) if np.linalg.norm(q - p) > 1e-12 else heading
            p = q
            out[i] = p
        return out

    def _safe_step(self, p, h, extra, step_len, feats: _FeatureSet):
        if feats.n == 0:
            return p + step_len * h
        side = _unit(extra - (extra @ h) * h)
        if not side.any():
            side = _perpendicular(h)
        for deg in self.deflections:
            th = math.radians(deg)
            d = _unit(math.cos(th) * h + math.sin(th) * side)
            q = p + step_len * d
            if feats.entry(p, q) < 0.0:
                return q
        t = feats.entry(p, p + step_len * h)
        if t > 0.0:
            return p + 0.5 * t * step_len * h
        return None


class OffsetGoalGenerator(HeuristicGenerator):
    """Heuristic generator aimed at a point ``offset`` metres short of the goal.

    Models a policy that homes in on the goal but never lands on it.
    """

    name = "offset"

    def __init__(self, offset: float = 0.2):
        self.offset = float(offset)

    def target(self, state: AgentState, config: GeneratorConfig) -> np.ndarray:
        g = np.asarray(state.goal, dtype=float)
        dist = float(np.linalg.norm(g))
        if dist <= self.offset:
            return np.zeros_like(g)
        return g * (1.0 - self.offset / dist)


_REGISTRY: dict[str, Callable[..., EpisodeGenerator]] = {
    "heuristic": HeuristicGenerator,
    "offset": OffsetGoalGenerator,
}


def register_generator(name: str, factory: Callable[..., EpisodeGenerator]) -> None:
    _REGISTRY[name] = factory


def make_generator(name: str, **kwargs) -> EpisodeGenerator:
    if name not in _REGISTRY:
        raise ContractViolation(f"unknown generator {name!r}; known: {sorted(_REGISTRY)}")
    return _REGISTRY[name](**kwargs)


def incoming_velocity(tree: SearchTree, node: int, d_dense: float) -> np.ndarray:
    """Unit direction of the edge into ``node`` scaled by d_dense (zero at root)."""
    p = int(tree.parent[node])
    if p < 0:
        return np.zeros(tree.dim)
    return _unit(tree.coords[node] - tree.coords[p]) * d_dense


def agent_state(q, q_goal, env: Environment, velocity, config: GeneratorConfig,
                step_index: int = 0) -> AgentState:
    q = np.asarray(q, dtype=float)
    return AgentState(np.asarray(velocity, dtype=float), np.asarray(q_goal, dtype=float) - q,
                      obstacles_within_radius(q, config.d_o, env), step_index)


def gen_path(generator: EpisodeGenerator, tree: SearchTree, node: int, q_goal, env: Environment,
             config: GeneratorConfig, rng: np.random.Generator, n_init: int = 0) -> ResampledPath:
    """Generate, perturb, spline and resample one action step from a tree node.

    The node's episode-start count selects the noise scale and is then
    incremented. The returned knots start exactly at the node.
    """
    q_init = tree.coords[node].copy()
    state = agent_state(q_init, q_goal, env, incoming_velocity(tree, node, config.d_dense), config, n_init)
    action = np.asarray(generator.step(state, config), dtype=float)
    if action.shape != (config.m, tree.dim):
        raise ContractViolation(f"generator returned shape {action.shape}, expected {(config.m, tree.dim)}")
    action = inject_adaptive_noise(action, int(tree.episode_start_count[node]), config, rng)
    tree.episode_start_count[node] += 1
    path = resample_equidistant(build_spline(q_init, action), config.d_dense)
    path.knots[0] = q_init
    return path
