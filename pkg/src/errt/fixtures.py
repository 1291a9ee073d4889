"""Hand-built problems used by tests and the ablation suite."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Environment, OrientedBox, Sphere


@dataclass
class Problem:
    env: Environment
    q_start: np.ndarray
    q_goal: np.ndarray
    name: str = ""


def wall_with_gap(extent: float = 20.0, gap: float = 0.8, thickness: float = 0.5,
                  gap_center: float | None = None) -> Problem:
    """2D square map split by a vertical wall with one opening of width ``gap``."""
    c = extent / 2.0
    y0 = c if gap_center is None else float(gap_center)
    lo_len = y0 - gap / 2.0
    hi_len = extent - (y0 + gap / 2.0)
    t = thickness / 2.0
    walls = [
        OrientedBox([c, lo_len / 2.0], [t, lo_len / 2.0]),
        OrientedBox([c, extent - hi_len / 2.0], [t, hi_len / 2.0]),
    ]
    env = Environment(2, [0.0, 0.0], [extent, extent], walls,
                      meta={"fixture": "wall_with_gap", "gap": gap, "extent": extent})
    return Problem(env, np.array([2.0, c]), np.array([extent - 2.0, c]), "wall_with_gap")


def near_goal_fixture(seed: int, extent: float = 12.0, n_obstacles: int = 6) -> Problem:
    """Lightly cluttered 2D map with a clear approach corridor to the goal.

    Used with the ``offset`` generator, which homes in on a point 0.2 m short
    of the goal, so only a direct connection can finish the path.
    """
    rng = np.random.default_rng(seed)
    start = np.array([1.5, extent / 2.0 + rng.uniform(-2.0, 2.0)])
    goal = np.array([extent - 1.5, extent / 2.0 + rng.uniform(-2.0, 2.0)])
    obstacles = []
    while len(obstacles) < n_obstacles:
        c = rng.uniform([3.0, 1.0], [extent - 3.0, extent - 1.0])
        r = rng.uniform(0.3, 0.8)
        if min(np.linalg.norm(c - start), np.linalg.norm(c - goal)) < r + 1.5:
            continue
        obstacles.append(Sphere(c, r))
    env = Environment(2, [0.0, 0.0], [extent, extent], obstacles,
                      meta={"fixture": "near_goal", "seed": int(seed)})
    return Problem(env, start, goal, f"near_goal_{seed}")
