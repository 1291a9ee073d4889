"""Configuration-space primitives, obstacles and collision queries.

A configuration is a plain float64 numpy vector of length 2 or 3. Free space is
everything inside the environment bounds that is not inside an obstacle;
obstacle boundaries count as occupied.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from . import kernels
from .errors import ContractViolation

DEFAULT_RESOLUTION = 0.05


def as_config(q, dim: int | None = None) -> np.ndarray:
    arr = np.asarray(q, dtype=float).reshape(-1)
    if arr.shape[0] not in (2, 3):
        raise ContractViolation(f"configurations must be 2D or 3D, got length {arr.shape[0]}")
    if dim is not None and arr.shape[0] != dim:
        raise ContractViolation(f"dimension mismatch: expected {dim}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ContractViolation("configuration has non-finite components")
    return arr


def distance(q_a, q_b) -> float:
    a = np.asarray(q_a, dtype=float)
    b = np.asarray(q_b, dtype=float)
    if a.shape != b.shape:
        raise ContractViolation(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(math.sqrt(float(np.dot(a - b, a - b))))


def rotation_2d(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


@dataclass(eq=False)
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        self.center = as_config(self.center)
        self.radius = float(self.radius)
        if not self.radius > 0:
            raise ContractViolation("sphere radius must be positive")

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    @property
    def bounding_radius(self) -> float:
        return self.radius

    def to_dict(self) -> dict:
        return {"type": "sphere", "center": self.center.tolist(), "radius": self.radius}


@dataclass(eq=False)
class OrientedBox:
    """Box with arbitrary orientation.

    ``rotation`` is an angle in radians for 2D boxes and a 3x3 matrix whose
    columns are the box axes for 3D boxes.
    """

    center: np.ndarray
    half_extents: np.ndarray
    rotation: Union[float, np.ndarray] = 0.0

    def __post_init__(self):
        self.center = as_config(self.center)
        self.half_extents = np.asarray(self.half_extents, dtype=float).reshape(-1)
        if self.half_extents.shape[0] != self.dim:
            raise ContractViolation("half_extents length must match the box dimension")
        if not np.all(self.half_extents > 0):
            raise ContractViolation("half_extents must be positive")
        if self.dim == 2:
            if np.ndim(self.rotation) != 0:
                raise ContractViolation("2D box rotation is a scalar angle in radians")
            self.rotation = float(self.rotation)
        else:
            rot = np.asarray(self.rotation, dtype=float)
            if rot.ndim == 0:
                if float(rot) != 0.0:
                    raise ContractViolation("3D box rotation must be a 3x3 matrix")
                rot = np.eye(3)
            rot = rot.reshape(3, 3)
            if np.max(np.abs(rot.T @ rot - np.eye(3))) > 1e-9 or np.linalg.det(rot) < 0:
                raise ContractViolation("3D box rotation must be orthonormal")
            self.rotation = rot

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        if self.dim == 2:
            return rotation_2d(self.rotation)
        return self.rotation

    @property
    def bounding_radius(self) -> float:
        return float(np.linalg.norm(self.half_extents))

    def to_dict(self) -> dict:
        rot = self.rotation if self.dim == 2 else self.rotation.tolist()
        return {
            "type": "box",
            "center": self.center.tolist(),
            "half_extents": self.half_extents.tolist(),
            "rotation": rot,
        }


Obstacle = Union[Sphere, OrientedBox]


def obstacle_from_dict(d: dict) -> Obstacle:
    kind = d.get("type")
    if kind == "sphere":
        return Sphere(d["center"], d["radius"])
    if kind == "box":
        rot = d.get("rotation", 0.0)
        if isinstance(rot, list):
            rot = np.asarray(rot, dtype=float).reshape(3, 3)
        return OrientedBox(d["center"], d["half_extents"], rot)
    raise ContractViolation(f"unknown obstacle type {kind!r}")


@dataclass
class SegmentCheckOutcome:
    valid: bool
    l_safe: float
    length: float
    tests: int


@dataclass
class ObstacleFeature:
    """Obstacle description relative to a query configuration."""

    kind: str
    center: np.ndarray
    size: np.ndarray
    rotation: np.ndarray
    distance: float
    index: int
    bounding_radius: float

    def vector(self) -> np.ndarray:
        """Flat feature vector: relative centre, size, rotation (row-major)."""
        return np.concatenate([self.center, self.size, self.rotation.ravel()])


class Environment:
    """Axis-aligned workspace with sphere and oriented-box obstacles.

    The uniform grid is built once; point queries only test obstacles listed
    in the query's cell. ``grid_margin`` inflates each obstacle's AABB before
    binning so segment checks with sample spacing up to ``2 * grid_margin``
    see every obstacle the segment could clip between samples.
    """

    def __init__(self, dim: int, bounds_min, bounds_max, obstacles: Iterable[Obstacle] = (),
                 grid_margin: float = 0.25, meta: dict | None = None):
        if dim not in (2, 3):
            raise ContractViolation("dim must be 2 or 3")
        self.dim = dim
        self.lo = as_config(bounds_min, dim)
        self.hi = as_config(bounds_max, dim)
        if not np.all(self.hi > self.lo):
            raise ContractViolation("bounds max must exceed bounds min on every axis")
        self.obstacles: tuple[Obstacle, ...] = tuple(obstacles)
        self.grid_margin = float(grid_margin)
        self.meta = dict(meta or {})
        for ob in self.obstacles:
            if ob.dim != dim:
                raise ContractViolation("obstacle dimension differs from environment dimension")
            r = ob.bounding_radius
            if np.any(ob.center + r < self.lo) or np.any(ob.center - r > self.hi):
                raise ContractViolation("obstacle bounding volume lies outside the bounds")
        self._pack()
        self._build_grid()

    # -- construction -----------------------------------------------------

    def _pack(self):
        n, d = len(self.obstacles), self.dim
        self.kind = np.zeros(n, dtype=np.int64)
        self.centers = np.zeros((n, d))
        self.half = np.zeros((n, d))
        self.rot = np.zeros((n, d, d))
        self.radius = np.zeros(n)
        self.aabb_half = np.zeros((n, d))
        for i, ob in enumerate(self.obstacles):
            self.centers[i] = ob.center
            self.radius[i] = ob.bounding_radius
            if isinstance(ob, Sphere):
                self.kind[i] = kernels.SPHERE
                self.half[i] = ob.radius
                self.rot[i] = np.eye(d)
                self.aabb_half[i] = ob.radius
            else:
                self.kind[i] = kernels.BOX
                self.half[i] = ob.half_extents
                self.rot[i] = ob.matrix
                self.aabb_half[i] = np.abs(self.rot[i]) @ ob.half_extents

    def _build_grid(self, max_cells: int = 2_000_000):
        d = self.dim
        span = self.hi - self.lo
        if len(self.obstacles):
            cell = 2.0 * float(np.median(self.radius))
        else:
            cell = float(span.max())
        cell = max(cell, float(span.max()) / 512.0, 1e-6)
        while np.prod(np.ceil(span / cell)) > max_cells:
            cell *= 1.25
        shape = np.maximum(np.ceil(span / cell).astype(np.int64), 1)
        ncell = int(np.prod(shape))
        lo_idx = np.floor((self.centers - self.aabb_half - self.grid_margin - self.lo) / cell).astype(np.int64)
        hi_idx = np.floor((self.centers + self.aabb_half + self.grid_margin - self.lo) / cell).astype(np.int64)
        lo_idx = np.clip(lo_idx, 0, shape - 1)
        hi_idx = np.clip(hi_idx, 0, shape - 1)
        cells, items = [], []
        for i in range(len(self.obstacles)):
            ranges = [np.arange(lo_idx[i, j], hi_idx[i, j] + 1) for j in range(d)]
            mesh = np.meshgrid(*ranges, indexing="ij")
            flat = np.zeros(mesh[0].size, dtype=np.int64)
            for j in range(d):
                flat = flat * shape[j] + mesh[j].ravel()
            cells.append(flat)
            items.append(np.full(flat.size, i, dtype=np.int64))
        if cells:
            cells_a = np.concatenate(cells)
            items_a = np.concatenate(items)
            order = np.lexsort((items_a, cells_a))
            cells_a, items_a = cells_a[order], items_a[order]
        else:
            cells_a = items_a = np.empty(0, dtype=np.int64)
        counts = np.bincount(cells_a, minlength=ncell)
        cell_start = np.zeros(ncell + 1, dtype=np.int64)
        np.cumsum(counts, out=cell_start[1:])
        self.grid = kernels.GridArrays(
            self.lo, self.hi, self.lo.copy(), float(cell), shape,
            cell_start, items_a, self.kind, self.centers, self.half, self.rot,
        )

    # -- queries ------------------------------------------------------------

    def contains(self, q) -> bool:
        q = np.asarray(q, dtype=float)
        return bool(np.all(q >= self.lo) and np.all(q <= self.hi))

    def points_in_collision(self, P) -> np.ndarray:
        """Vectorised point test; does not touch any counter."""
        P = np.atleast_2d(np.asarray(P, dtype=float))
        if P.shape[1] != self.dim:
            raise ContractViolation("dimension mismatch")
        return kernels.points_hit(P, *self.grid)

    def clearance(self, q) -> np.ndarray:
        """Exact distance from q to every obstacle (0 inside)."""
        q = as_config(q, self.dim)
        if not len(self.obstacles):
            return np.zeros(0)
        diff = q - self.centers
        out = np.empty(len(self.obstacles))
        sph = self.kind == kernels.SPHERE
        out[sph] = np.maximum(np.linalg.norm(diff[sph], axis=1) - self.half[sph, 0], 0.0)
        box = ~sph
        if box.any():
            loc = np.einsum("nj,nja->na", diff[box], self.rot[box])
            excess = np.maximum(np.abs(loc) - self.half[box], 0.0)
            out[box] = np.linalg.norm(excess, axis=1)
        return out

    @property
    def extent(self) -> float:
        return float((self.hi - self.lo).max())

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    # -- serialisation --------------------------------------------------------

    def to_dict(self) -> dict:
        out = {
            "dim": self.dim,
            "bounds": {"min": self.lo.tolist(), "max": self.hi.tolist()},
            "obstacles": [ob.to_dict() for ob in self.obstacles],
        }
        if self.meta:
            out["meta"] = self.meta
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Environment":
        try:
            dim = int(d["dim"])
            bounds = d["bounds"]
            obstacles = [obstacle_from_dict(o) for o in d.get("obstacles", [])]
            return cls(dim, bounds["min"], bounds["max"], obstacles, meta=d.get("meta"))
        except (KeyError, TypeError) as exc:
            raise ContractViolation(f"malformed environment document: {exc}") from exc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps() + "\n")

    @classmethod
    def load(cls, path) -> "Environment":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# counted collision queries
# ---------------------------------------------------------------------------


@dataclass
class CheckCounter:
    checks: int = 0


def _bump(counter, n: int) -> None:
    if counter is not None:
        counter.checks += n


def point_in_collision(q, env: Environment, counter: CheckCounter | None = None) -> bool:
    q = as_config(q, env.dim)
    _bump(counter, 1)
    return bool(kernels.points_hit(q[None, :], *env.grid)[0])


def segment_samples(length: float, resolution: float) -> int:
    """Number of segments used to sample a straight edge (0 for a point)."""
    if length <= 0.0:
        return 0
    return max(1, int(math.ceil(length / resolution - 1e-9)))


def segment_check(q_a, q_b, env: Environment, resolution: float = DEFAULT_RESOLUTION,
                  counter: CheckCounter | None = None) -> SegmentCheckOutcome:
    """Sampled straight-line check from q_a to q_b.

    Samples are evenly spaced at ``length / ceil(length / resolution)`` and
    include both endpoints; each sample is one point test. If every sample is
    free, an exact segment/primitive pass over the visited cells catches
    obstacles clipped between samples, so a valid outcome means the whole
    segment is free. The same pass over the prefix before a colliding sample
    keeps l_safe short of any earlier clipped obstacle.
    """
    if not resolution > 0:
        raise ContractViolation("resolution must be positive")
    if resolution > 2.0 * env.grid_margin + 1e-12:
        raise ContractViolation(f"resolution {resolution} exceeds twice the grid margin {env.grid_margin}")
    a = as_config(q_a, env.dim)
    b = as_config(q_b, env.dim)
    length = distance(a, b)
    nseg = segment_samples(length, resolution)
    first, sliver_t = kernels.segment_walk(a, b, nseg, *env.grid)
    first = int(first)
    tests = first + 1 if first >= 0 else nseg + 1
    _bump(counter, tests)
    if sliver_t >= 0.0:
        # index of the last sample strictly before the entry point
        last_free = min(max(int(math.ceil(sliver_t * nseg)) - 1, 0), nseg - 1)
        return SegmentCheckOutcome(False, last_free * length / nseg, length, tests)
    if first >= 0:
        return SegmentCheckOutcome(False, max(first - 1, 0) * length / nseg if first else 0.0, length, tests)
    return SegmentCheckOutcome(True, length, length, tests)


class CollisionChecker(CheckCounter):
    """Environment + resolution + per-run check counter."""

    def __init__(self, env: Environment, resolution: float = DEFAULT_RESOLUTION):
        super().__init__(0)
        self.env = env
        self.resolution = float(resolution)

    def point(self, q) -> bool:
        return point_in_collision(q, self.env, self)

    def segment(self, q_a, q_b) -> SegmentCheckOutcome:
        return segment_check(q_a, q_b, self.env, self.resolution, self)

    def free(self, q_a, q_b) -> bool:
        return self.segment(q_a, q_b).valid


def obstacles_within_radius(q, d_o: float, env: Environment) -> list[ObstacleFeature]:
    """Obstacles whose closest point is within ``d_o`` of q (inclusive).

    Sorted by distance, ties by insertion index.
    """
    q = as_config(q, env.dim)
    if not len(env.obstacles):
        return []
    dist = env.clearance(q)
    idx = np.flatnonzero(dist <= d_o)
    idx = idx[np.lexsort((idx, dist[idx]))]
    out = []
    for i in idx:
        if env.kind[i] == kernels.SPHERE:
            kind, size = "sphere", np.array([env.half[i, 0]])
        else:
            kind, size = "box", env.half[i].copy()
        out.append(ObstacleFeature(kind, env.centers[i] - q, size, env.rot[i].copy(),
                                   float(dist[i]), int(i), float(env.radius[i])))
    return out


def path_length(path: Sequence) -> float:
    P = np.asarray(path, dtype=float)
    if len(P) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(P, axis=0), axis=1)))


def validate_path(path: Sequence, env: Environment, resolution: float) -> list[int]:
    """Indices i whose edge (path[i], path[i+1]) fails a segment check."""
    bad = []
    for i in range(len(path) - 1):
        if not segment_check(path[i], path[i + 1], env, resolution).valid:
            bad.append(i)
    if len(path) == 1 and point_in_collision(path[0], env):
        bad.append(0)
    return bad
