"""Search tree with cost bookkeeping, nearest-neighbour index and RRT* rewiring."""
from __future__ import annotations

import math
from collections import deque

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from .errors import ContractViolation
from .geometry import CollisionChecker, as_config

_MIN_TAIL = 256


def _d2(coords: np.ndarray, q: np.ndarray) -> np.ndarray:
    diff = coords - q
    return np.einsum("nj,nj->n", diff, diff)


class SearchTree:
    """Rooted tree stored in growable arrays.

    Nearest-neighbour queries combine a KD-tree over a frozen prefix of the
    nodes with a brute-force scan of the nodes added since the last rebuild.
    The KD-tree is rebuilt once the tail outgrows ``max(256, frozen / 2)``.
    All ties are broken towards the smallest node id.
    """

    def __init__(self, root, capacity: int = 1024):
        root = as_config(root)
        self.dim = root.shape[0]
        cap = max(int(capacity), 4)
        self.coords = np.zeros((cap, self.dim))
        self.parent = np.full(cap, -1, dtype=np.int64)
        self.cost = np.zeros(cap)
        self.episode_start_count = np.zeros(cap, dtype=np.int64)
        self.children: list[list[int]] = []
        self.size = 0
        self._kd: cKDTree | None = None
        self._frozen = 0
        self._add(root, -1, 0.0)

    # -- storage ------------------------------------------------------------

    def __len__(self) -> int:
        return self.size

    @property
    def root(self) -> int:
        return 0

    @property
    def newest(self) -> int:
        return self.size - 1

    def _grow(self):
        cap = 2 * self.coords.shape[0]
        self.coords = np.resize(self.coords, (cap, self.dim))
        self.parent = np.concatenate([self.parent, np.full(cap - self.parent.shape[0], -1, dtype=np.int64)])
        self.cost = np.resize(self.cost, cap)
        self.episode_start_count = np.concatenate(
            [self.episode_start_count, np.zeros(cap - self.episode_start_count.shape[0], dtype=np.int64)])

    def _add(self, q, parent: int, cost: float) -> int:
        if self.size == self.coords.shape[0]:
            self._grow()
        i = self.size
        self.coords[i] = q
        self.parent[i] = parent
        self.cost[i] = cost
        self.episode_start_count[i] = 0
        self.children.append([])
        if parent >= 0:
            self.children[parent].append(i)
        self.size += 1
        tail = self.size - self._frozen
        if tail > max(_MIN_TAIL, self._frozen // 2):
            self._rebuild()
        return i

    def _rebuild(self):
        self._frozen = self.size
        self._kd = cKDTree(self.coords[: self.size].copy())

    def _check_id(self, i: int) -> int:
        i = int(i)
        if not 0 <= i < self.size:
            raise ContractViolation(f"unknown node id {i}")
        return i

    def config(self, i: int) -> np.ndarray:
        return self.coords[self._check_id(i)].copy()

    def insert(self, q, parent: int) -> int:
        parent = self._check_id(parent)
        q = as_config(q, self.dim)
        diff = q - self.coords[parent]
        return self._add(q, parent, self.cost[parent] + math.sqrt(float(diff @ diff)))

    # -- queries ------------------------------------------------------------

    def nearest(self, q) -> int:
        q = np.asarray(q, dtype=float)
        best, best_d2 = -1, np.inf
        if self._kd is not None:
            k = min(2, self._frozen)
            dd, ii = self._kd.query(q, k=k)
            dd, ii = np.atleast_1d(dd), np.atleast_1d(ii)
            best = int(ii[0])
            if k == 2 and dd[1] <= dd[0] * (1 + 1e-12) + 1e-300:
                cand = np.asarray(self._kd.query_ball_point(q, dd[0] * (1 + 1e-9) + 1e-12), dtype=np.int64)
                cand = np.union1d(cand, ii)
                d2 = _d2(self.coords[cand], q)
                best = int(cand[np.lexsort((cand, d2))[0]])
            best_d2 = float(_d2(self.coords[best:best + 1], q)[0])
        if self._frozen < self.size:
            j, d2j = kernels.nearest_scan(self.coords, self._frozen, self.size, q)
            if float(d2j) < best_d2:
                best = int(j)
        return best

    def near(self, q, radius: float) -> list[int]:
        """Nodes within ``radius`` of q (inclusive), by distance then id."""
        if radius < 0:
            raise ContractViolation("radius must be non-negative")
        q = np.asarray(q, dtype=float)
        parts = []
        if self._kd is not None:
            parts.append(np.asarray(self._kd.query_ball_point(q, radius * (1 + 1e-9) + 1e-12), dtype=np.int64))
        if self._frozen < self.size:
            parts.append(np.arange(self._frozen, self.size))
        if not parts:
            return []
        cand = np.concatenate(parts)
        d = np.sqrt(_d2(self.coords[cand], q))
        keep = d <= radius
        cand, d = cand[keep], d[keep]
        return [int(i) for i in cand[np.lexsort((cand, d))]]

    def path_to_root(self, i: int) -> tuple[list[np.ndarray], float]:
        """Root-to-node configurations and the node's cost."""
        i = self._check_id(i)
        chain = []
        j = i
        while j >= 0:
            chain.append(self.coords[j].copy())
            j = int(self.parent[j])
        chain.reverse()
        return chain, float(self.cost[i])

    def is_ancestor(self, a: int, b: int) -> bool:
        """True if a lies on the root path of b (a node is its own ancestor)."""
        j = b
        while j >= 0:
            if j == a:
                return True
            j = int(self.parent[j])
        return False

    def edge_length(self, a: int, b: int) -> float:
        diff = self.coords[a] - self.coords[b]
        return math.sqrt(float(diff @ diff))

    # -- mutation -----------------------------------------------------------

    def set_parent(self, i: int, new_parent: int) -> None:
        """Re-parent i and recompute the costs of its whole subtree."""
        old = int(self.parent[i])
        if old >= 0:
            self.children[old].remove(i)
        self.parent[i] = new_parent
        self.children[new_parent].append(i)
        self.cost[i] = self.cost[new_parent] + self.edge_length(new_parent, i)
        self._propagate(i)

    def _propagate(self, i: int) -> None:
        queue = deque(self.children[i])
        while queue:
            c = queue.popleft()
            p = int(self.parent[c])
            self.cost[c] = self.cost[p] + self.edge_length(p, c)
            queue.extend(self.children[c])

    def recomputed_costs(self) -> np.ndarray:
        """Costs rebuilt from parent links alone (consistency oracle)."""
        out = np.full(self.size, np.nan)
        out[0] = 0.0
        order = deque([0])
        while order:
            p = order.popleft()
            for c in self.children[p]:
                out[c] = out[p] + self.edge_length(p, c)
                order.append(c)
        return out

    def dump(self) -> list[dict]:
        return [{"id": i, "config": self.coords[i].tolist(),
                 "parent": None if self.parent[i] < 0 else int(self.parent[i]),
                 "cost": float(self.cost[i])} for i in range(self.size)]

    def edges(self) -> np.ndarray:
        """(E, 2, dim) array of parent-child segments."""
        ids = np.arange(1, self.size)
        return np.stack([self.coords[self.parent[ids]], self.coords[ids]], axis=1)


def rrt_star_radius(n: int, dim: int, volume: float, max_radius: float) -> float:
    """Shrinking neighbourhood radius, capped at ``max_radius``.

    gamma follows the usual RRG constant 2 (1 + 1/d)^(1/d) (vol / unit_ball)^(1/d).
    """
    if n < 2:
        return float(max_radius)
    unit_ball = math.pi ** (dim / 2) / math.gamma(dim / 2 + 1)
    gamma = 2.0 * (1.0 + 1.0 / dim) ** (1.0 / dim) * (volume / unit_ball) ** (1.0 / dim)
    return float(min(gamma * (math.log(n) / n) ** (1.0 / dim), max_radius))


def rewire(tree: SearchTree, new: int, neighborhood, checker: CollisionChecker,
           choose_parent: bool = True) -> int:
    """Choose-parent for ``new`` then rewire its neighbours through it.

    Only strict cost improvements are applied. Returns the number of parent
    changes. Each candidate edge is collision-checked at most once.
    """
    new = tree._check_id(new)
    nbrs = [int(j) for j in neighborhood if int(j) != new]
    validity: dict[int, bool] = {}

    def free(j: int) -> bool:
        if j not in validity:
            validity[j] = checker.free(tree.coords[j], tree.coords[new])
        return validity[j]

    changes = 0
    if not nbrs:
        return 0
    ids = np.asarray(nbrs, dtype=np.int64)
    d = np.sqrt(_d2(tree.coords[ids], tree.coords[new]))
    if choose_parent:
        through = tree.cost[ids] + d
        for k in np.lexsort((ids, through)):
            j = int(ids[k])
            if not through[k] < tree.cost[new]:
                break
            if j == tree.parent[new] or tree.is_ancestor(new, j):
                continue
            if free(j):
                tree.set_parent(new, j)
                changes += 1
                break
    # costs only decrease while rewiring, so a neighbour that cannot improve now never will
    cand = np.flatnonzero(tree.cost[new] + d < tree.cost[ids])
    for k in cand:
        j = int(ids[k])
        if j == tree.parent[new] or j == tree.root:
            continue
        c = tree.cost[new] + d[k]
        if c < tree.cost[j] and not tree.is_ancestor(j, new) and free(j):
            tree.set_parent(j, new)
            changes += 1
    return changes
