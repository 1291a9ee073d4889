"""Seeded cluttered environments and start/goal sampling."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import ContractViolation, NoFreeSpace
from .geometry import Environment, OrientedBox, Sphere

BOX_ASPECT_LOW = 0.5  # box half-extent per axis is scale * U(BOX_ASPECT_LOW, 1)


@dataclass
class EnvSpec:
    dim: int = 2
    extent: float = 30.0
    obstacle_count_mean: int = 100
    size_ratio: float = 30.0
    sphere_fraction: float = 0.5
    min_clearance: float = 0.5
    coverage: float = 0.3
    seed: int = 0
    name: str = "custom"

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ContractViolation("dim must be 2 or 3")
        if not self.extent > 0:
            raise ContractViolation("extent must be positive")
        if self.obstacle_count_mean < 0:
            raise ContractViolation("obstacle_count_mean must be non-negative")
        if not self.size_ratio >= 1:
            raise ContractViolation("size_ratio must be at least 1")
        if not 0.0 <= self.sphere_fraction <= 1.0:
            raise ContractViolation("sphere_fraction must lie in [0, 1]")
        if not 0.0 <= self.coverage < 1.0:
            raise ContractViolation("coverage must lie in [0, 1)")
        if self.min_clearance < 0:
            raise ContractViolation("min_clearance must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EnvSpec":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ContractViolation(f"unknown env spec keys: {sorted(unknown)}")
        return cls(**d)

    def with_seed(self, seed: int) -> "EnvSpec":
        return EnvSpec(**{**self.to_dict(), "seed": int(seed)})


PRESETS = {
    "desk2d": dict(dim=2, extent=30.0, obstacle_count_mean=100, size_ratio=30.0),
    "desk3d": dict(dim=3, extent=20.0, obstacle_count_mean=800, size_ratio=100.0 ** (1 / 3)),
    "large2d": dict(dim=2, extent=60.0, obstacle_count_mean=400, size_ratio=30.0),
    "large3d": dict(dim=3, extent=60.0, obstacle_count_mean=17000, size_ratio=100.0 ** (1 / 3)),
    "anytime2d": dict(dim=2, extent=10.0, obstacle_count_mean=30, size_ratio=30.0),
    "anytime3d": dict(dim=3, extent=20.0, obstacle_count_mean=800, size_ratio=100.0 ** (1 / 3)),
    "empty2d": dict(dim=2, extent=20.0, obstacle_count_mean=0, size_ratio=1.0, coverage=0.0),
}


def preset(name: str, seed: int = 0, **overrides) -> EnvSpec:
    if name not in PRESETS:
        raise ContractViolation(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    return EnvSpec(**{**PRESETS[name], **overrides, "seed": int(seed), "name": name})


def _unit_ball(dim: int) -> float:
    return math.pi ** (dim / 2) / math.gamma(dim / 2 + 1)


def scale_moment(ratio: float, dim: int) -> float:
    """E[u^dim] for u log-uniform on [1, ratio]."""
    if ratio == 1.0:
        return 1.0
    return (ratio ** dim - 1.0) / (dim * math.log(ratio))


def min_scale(spec: EnvSpec) -> float:
    """Smallest obstacle scale giving the requested expected coverage.

    Obstacle centres form a Poisson process, so the covered fraction is
    1 - exp(-n E[measure] / V). Spheres have radius s; boxes have half
    extents s * U(0.5, 1) per axis.
    """
    if spec.obstacle_count_mean == 0 or spec.coverage == 0.0:
        return 0.0
    d = spec.dim
    V = spec.extent ** d
    target = -math.log(1.0 - spec.coverage) * V / spec.obstacle_count_mean
    box_unit = 2.0 ** d * ((1.0 + BOX_ASPECT_LOW) / 2.0) ** d
    unit = spec.sphere_fraction * _unit_ball(d) + (1.0 - spec.sphere_fraction) * box_unit
    return (target / (unit * scale_moment(spec.size_ratio, d))) ** (1.0 / d)


def _rotation(rng: np.random.Generator, dim: int):
    if dim == 2:
        return float(rng.uniform(-math.pi, math.pi))
    return Rotation.random(random_state=rng).as_matrix()


def generate(spec: EnvSpec) -> Environment:
    """Poisson count, log-uniform scales, uniform centres, seeded by spec.seed."""
    rng = np.random.default_rng(spec.seed)
    d = spec.dim
    n = int(rng.poisson(spec.obstacle_count_mean)) if spec.obstacle_count_mean > 0 else 0
    s_min = min_scale(spec)
    obstacles = []
    for _ in range(n):
        center = rng.uniform(0.0, spec.extent, size=d)
        scale = s_min * math.exp(rng.uniform(0.0, math.log(spec.size_ratio)))
        if rng.random() < spec.sphere_fraction:
            obstacles.append(Sphere(center, scale))
        else:
            half = scale * rng.uniform(BOX_ASPECT_LOW, 1.0, size=d)
            obstacles.append(OrientedBox(center, half, _rotation(rng, d)))
    meta = {"spec": spec.to_dict(), "min_scale": s_min,
            "coverage_model": "poisson boolean model, expected covered fraction"}
    return Environment(d, np.zeros(d), np.full(d, spec.extent), obstacles, meta=meta)


def sample_problem(env: Environment, min_clearance: float, rng: np.random.Generator,
                   max_attempts: int = 100_000, separation: float | None = None):
    """Rejection-sample a start/goal pair with clearance and separation.

    Separation defaults to half the environment extent. Raises NoFreeSpace
    once ``max_attempts`` candidate configurations have been rejected.
    """
    sep = 0.5 * env.extent if separation is None else float(separation)
    rejects = 0

    def draw():
        nonlocal rejects
        while rejects < max_attempts:
            q = env.lo + rng.random(env.dim) * (env.hi - env.lo)
            ok = not env.points_in_collision(q[None, :])[0]
            if ok and min_clearance > 0 and len(env.obstacles):
                ok = float(env.clearance(q).min()) >= min_clearance
            if ok:
                return q
            rejects += 1
        raise NoFreeSpace(f"no admissible configuration after {max_attempts} rejections")

    start = draw()
    while True:
        goal = draw()
        if np.linalg.norm(goal - start) >= sep:
            return start, goal
        rejects += 1
        if rejects >= max_attempts:
            raise NoFreeSpace(f"no start/goal pair {sep} m apart after {max_attempts} rejections")
