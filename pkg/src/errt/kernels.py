"""Collision and nearest-neighbour kernels.

Every kernel has a ``*_nb`` (numba loop) and a ``*_np`` (vectorised numpy)
implementation with identical results; the public names are bound to one of
them according to :data:`errt._accel.USE_NUMBA`.

Obstacles are packed into flat arrays (see :class:`GridArrays`):

* ``kind``     0 = sphere, 1 = oriented box
* ``centers``  (N, d)
* ``half``     (N, d) half extents; spheres store the radius in every column
* ``rot``      (N, d, d) box axes as columns, local = rot.T @ (p - center)

A uniform grid over the bounds lists, per cell, every obstacle whose inflated
AABB touches the cell (CSR layout in ``cell_start`` / ``cell_items``).
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from ._accel import USE_NUMBA, njit

SPHERE = 0
BOX = 1


class GridArrays(NamedTuple):
    lo: np.ndarray
    hi: np.ndarray
    origin: np.ndarray
    cell: float
    shape: np.ndarray
    cell_start: np.ndarray
    cell_items: np.ndarray
    kind: np.ndarray
    centers: np.ndarray
    half: np.ndarray
    rot: np.ndarray


# ---------------------------------------------------------------------------
# numba versions
# ---------------------------------------------------------------------------


@njit
def _cell_of(p, origin, cell, shape):
    flat = 0
    for j in range(p.shape[0]):
        c = int(math.floor((p[j] - origin[j]) / cell))
        if c < 0:
            c = 0
        elif c >= shape[j]:
            c = shape[j] - 1
        flat = flat * shape[j] + c
    return flat


@njit
def _inside(p, i, kind, centers, half, rot):
    d = p.shape[0]
    if kind[i] == 0:
        s = 0.0
        for j in range(d):
            diff = p[j] - centers[i, j]
            s += diff * diff
        return s <= half[i, 0] * half[i, 0]
    for a in range(d):
        loc = 0.0
        for j in range(d):
            loc += rot[i, j, a] * (p[j] - centers[i, j])
        if abs(loc) > half[i, a]:
            return False
    return True


@njit
def _point_hit(p, lo, hi, origin, cell, shape, cell_start, cell_items, kind, centers, half, rot):
    for j in range(p.shape[0]):
        if p[j] < lo[j] or p[j] > hi[j]:
            return True
    flat = _cell_of(p, origin, cell, shape)
    for t in range(cell_start[flat], cell_start[flat + 1]):
        if _inside(p, cell_items[t], kind, centers, half, rot):
            return True
    return False


@njit
def _segment_entry(a, u, i, kind, centers, half, rot):
    """Smallest t in [0, 1] with a + t*u inside obstacle i, or -1."""
    d = a.shape[0]
    if kind[i] == 0:
        r = half[i, 0]
        fu = 0.0
        ff = 0.0
        uu = 0.0
        for j in range(d):
            f = a[j] - centers[i, j]
            fu += f * u[j]
            ff += f * f
            uu += u[j] * u[j]
        cc = ff - r * r
        if cc <= 0.0:
            return 0.0
        if uu == 0.0:
            return -1.0
        disc = fu * fu - uu * cc
        if disc < 0.0:
            return -1.0
        t = (-fu - math.sqrt(disc)) / uu
        if t < 0.0 or t > 1.0:
            return -1.0
        return t
    t0 = 0.0
    t1 = 1.0
    for ax in range(d):
        la = 0.0
        lu = 0.0
        for j in range(d):
            la += rot[i, j, ax] * (a[j] - centers[i, j])
            lu += rot[i, j, ax] * u[j]
        h = half[i, ax]
        if lu == 0.0:
            if abs(la) > h:
                return -1.0
        else:
            ta = (-h - la) / lu
            tb = (h - la) / lu
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
            if tb < t1:
                t1 = tb
            if t0 > t1:
                return -1.0
    return t0


@njit
def points_hit_nb(P, lo, hi, origin, cell, shape, cell_start, cell_items, kind, centers, half, rot):
    out = np.zeros(P.shape[0], dtype=np.bool_)
    for n in range(P.shape[0]):
        out[n] = _point_hit(P[n], lo, hi, origin, cell, shape, cell_start, cell_items, kind, centers, half, rot)
    return out


@njit
def segment_walk_nb(a, b, nseg, lo, hi, origin, cell, shape, cell_start, cell_items, kind, centers, half, rot):
    """Walk nseg+1 samples from a to b.

    Returns ``(first_hit, sliver_t)``: index of the first colliding sample (or
    -1) and the smallest entry parameter of an obstacle the segment enters
    before that sample, found by an exact pass over the cells visited so far
    (or -1).
    """
    d = a.shape[0]
    u = b - a
    p = np.empty(d)
    first = -1
    for i in range(nseg + 1):
        if i == nseg:
            for j in range(d):
                p[j] = b[j]
        else:
            t = i / nseg
            for j in range(d):
                p[j] = a[j] + u[j] * t
        if _point_hit(p, lo, hi, origin, cell, shape, cell_start, cell_items, kind, centers, half, rot):
            first = i
            break
    if first == 0:
        return 0, -1.0
    last = nseg if first < 0 else first
    limit = 2.0 if first < 0 else first / nseg
    best = 2.0
    prev = -1
    for i in range(last + 1):
        if i == nseg:
            for j in range(d):
                p[j] = b[j]
        else:
            t = i / nseg
            for j in range(d):
                p[j] = a[j] + u[j] * t
        flat = _cell_of(p, origin, cell, shape)
        if flat == prev:
            continue
        prev = flat
        for k in range(cell_start[flat], cell_start[flat + 1]):
            te = _segment_entry(a, u, cell_items[k], kind, centers, half, rot)
            if te >= 0.0 and te < best and te < limit:
                best = te
    if best <= 1.0:
        return first, best
    return first, -1.0


@njit
def nearest_scan_nb(coords, start, stop, q):
    best = -1
    best_d2 = np.inf
    d = q.shape[0]
    for i in range(start, stop):
        s = 0.0
        for j in range(d):
            diff = coords[i, j] - q[j]
            s += diff * diff
        if s < best_d2:
            best_d2 = s
            best = i
    return best, best_d2


# ---------------------------------------------------------------------------
# numpy versions
# ---------------------------------------------------------------------------


def _cells_np(P, origin, cell, shape):
    idx = np.floor((P - origin) / cell).astype(np.int64)
    np.clip(idx, 0, shape - 1, out=idx)
    flat = np.zeros(P.shape[0], dtype=np.int64)
    for j in range(P.shape[1]):
        flat = flat * shape[j] + idx[:, j]
    return flat


def _pairs_np(flat, cell_start, cell_items):
    """Expand each query's cell into (query row, obstacle id) pairs."""
    starts = cell_start[flat]
    counts = cell_start[flat + 1] - starts
    total = int(counts.sum())
    rows = np.repeat(np.arange(flat.shape[0]), counts)
    if total == 0:
        return rows, np.empty(0, dtype=np.int64)
    offsets = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    return rows, cell_items[np.repeat(starts, counts) + offsets]


def _inside_np(P, ids, kind, centers, half, rot):
    diff = P - centers[ids]
    out = np.empty(ids.shape[0], dtype=bool)
    sph = kind[ids] == SPHERE
    if sph.any():
        r = half[ids[sph], 0]
        out[sph] = np.einsum("nj,nj->n", diff[sph], diff[sph]) <= r * r
    box = ~sph
    if box.any():
        loc = np.einsum("nj,nja->na", diff[box], rot[ids[box]])
        out[box] = np.all(np.abs(loc) <= half[ids[box]], axis=1)
    return out


def points_hit_np(P, lo, hi, origin, cell, shape, cell_start, cell_items, kind, centers, half, rot):
    P = np.asarray(P, dtype=float)
    out = np.any((P < lo) | (P > hi), axis=1)
    inb = np.flatnonzero(~out)
    if inb.size == 0 or kind.shape[0] == 0:
        return out
    Q = P[inb]
    rows, ids = _pairs_np(_cells_np(Q, origin, cell, shape), cell_start, cell_items)
    if ids.size:
        hit = _inside_np(Q[rows], ids, kind, centers, half, rot)
        hit_rows = np.zeros(Q.shape[0], dtype=bool)
        hit_rows[rows[hit]] = True
        out[inb] = hit_rows
    return out


def _segment_entry_np(a, u, ids, kind, centers, half, rot):
    t = np.full(ids.shape[0], -1.0)
    sph = kind[ids] == SPHERE
    if sph.any():
        f = a - centers[ids[sph]]
        r = half[ids[sph], 0]
        fu = f @ u
        cc = np.einsum("nj,nj->n", f, f) - r * r
        uu = float(u @ u)
        ts = np.full(f.shape[0], -1.0)
        inside = cc <= 0.0
        ts[inside] = 0.0
        if uu > 0.0:
            disc = fu * fu - uu * cc
            ok = ~inside & (disc >= 0.0)
            root = np.full(f.shape[0], -1.0)
            root[ok] = (-fu[ok] - np.sqrt(disc[ok])) / uu
            good = ok & (root >= 0.0) & (root <= 1.0)
            ts[good] = root[good]
        t[sph] = ts
    box = ~sph
    if box.any():
        bid = ids[box]
        la = np.einsum("nj,nja->na", a - centers[bid], rot[bid])
        lu = np.einsum("j,nja->na", u, rot[bid])
        h = half[bid]
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (-h - la) / lu
            tb = (h - la) / lu
        lo_t = np.minimum(ta, tb)
        hi_t = np.maximum(ta, tb)
        flat = lu == 0.0
        blocked = np.any(flat & (np.abs(la) > h), axis=1)
        lo_t[flat] = -np.inf
        hi_t[flat] = np.inf
        t0 = np.maximum(lo_t.max(axis=1), 0.0)
        t1 = np.minimum(hi_t.min(axis=1), 1.0)
        tb_out = np.where(~blocked & (t0 <= t1), t0, -1.0)
        t[box] = tb_out
    return t


def _samples_np(a, b, nseg):
    if nseg == 0:
        return a[None, :].copy()
    P = a + (b - a) * (np.arange(nseg + 1) / nseg)[:, None]
    P[-1] = b
    return P


def segment_walk_np(a, b, nseg, lo, hi, origin, cell, shape, cell_start, cell_items, kind, centers, half, rot):
    P = _samples_np(a, b, nseg)
    hits = points_hit_np(P, lo, hi, origin, cell, shape, cell_start, cell_items, kind, centers, half, rot)
    first = int(np.argmax(hits)) if hits.any() else -1
    if first == 0 or kind.shape[0] == 0:
        return first, -1.0
    limit = 2.0 if first < 0 else first / nseg
    flat = np.unique(_cells_np(P if first < 0 else P[: first + 1], origin, cell, shape))
    _, ids = _pairs_np(flat, cell_start, cell_items)
    if ids.size == 0:
        return first, -1.0
    ids = np.unique(ids)
    te = _segment_entry_np(a, b - a, ids, kind, centers, half, rot)
    te = te[(te >= 0.0) & (te < limit)]
    if te.size:
        return first, float(te.min())
    return first, -1.0


def nearest_scan_np(coords, start, stop, q):
    if stop <= start:
        return -1, np.inf
    diff = coords[start:stop] - q
    d2 = np.einsum("nj,nj->n", diff, diff)
    i = int(np.argmin(d2))
    return start + i, float(d2[i])


if USE_NUMBA:
    points_hit = points_hit_nb
    segment_walk = segment_walk_nb
    nearest_scan = nearest_scan_nb
else:
    points_hit = points_hit_np
    segment_walk = segment_walk_np
    nearest_scan = nearest_scan_np


# ---------------------------------------------------------------------------
# spline arc-length resampling (numba path; numpy path lives in spline.py)
# ---------------------------------------------------------------------------


@njit
def _speed(coeffs, s, u):
    tot = 0.0
    for j in range(coeffs.shape[2]):
        v = coeffs[s, 1, j] + u * (2.0 * coeffs[s, 2, j] + 3.0 * u * coeffs[s, 3, j])
        tot += v * v
    return math.sqrt(tot)


@njit
def _gl5(coeffs, s, a, b, gx, gw):
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    tot = 0.0
    for k in range(gx.shape[0]):
        tot += gw[k] * _speed(coeffs, s, mid + half * gx[k])
    return half * tot


@njit
def arc_table_nb(coeffs, tol, gx, gw):
    """Adaptive GL pieces per span, depth first, left to right.

    Returns (piece_span, piece_a, piece_b, cumulative) with cumulative[0] = 0.
    """
    S = coeffs.shape[0]
    cap = 64
    ps = np.empty(cap, dtype=np.int64)
    pa = np.empty(cap)
    pb = np.empty(cap)
    pv = np.empty(cap)
    n = 0
    st_a = np.empty(64)
    st_b = np.empty(64)
    st_w = np.empty(64)
    st_d = np.empty(64, dtype=np.int64)
    for s in range(S):
        top = 0
        st_a[0] = 0.0
        st_b[0] = 1.0
        st_w[0] = _gl5(coeffs, s, 0.0, 1.0, gx, gw)
        st_d[0] = 0
        top = 1
        while top > 0:
            top -= 1
            a = st_a[top]
            b = st_b[top]
            whole = st_w[top]
            depth = st_d[top]
            m = 0.5 * (a + b)
            left = _gl5(coeffs, s, a, m, gx, gw)
            right = _gl5(coeffs, s, m, b, gx, gw)
            if abs(left + right - whole) <= tol + 1e-13 * (abs(left) + abs(right)) or depth >= 40:
                if n + 2 > cap:
                    cap *= 2
                    ps2 = np.empty(cap, dtype=np.int64)
                    pa2 = np.empty(cap)
                    pb2 = np.empty(cap)
                    pv2 = np.empty(cap)
                    ps2[:n] = ps[:n]
                    pa2[:n] = pa[:n]
                    pb2[:n] = pb[:n]
                    pv2[:n] = pv[:n]
                    ps, pa, pb, pv = ps2, pa2, pb2, pv2
                ps[n] = s
                pa[n] = a
                pb[n] = m
                pv[n] = left
                ps[n + 1] = s
                pa[n + 1] = m
                pb[n + 1] = b
                pv[n + 1] = right
                n += 2
            else:
                st_a[top] = m
                st_b[top] = b
                st_w[top] = right
                st_d[top] = depth + 1
                st_a[top + 1] = a
                st_b[top + 1] = m
                st_w[top + 1] = left
                st_d[top + 1] = depth + 1
                top += 2
    cum = np.empty(n + 1)
    cum[0] = 0.0
    for i in range(n):
        cum[i + 1] = cum[i] + pv[i]
    return ps[:n], pa[:n], pb[:n], cum


@njit
def _eval(coeffs, s, u, out):
    for j in range(coeffs.shape[2]):
        out[j] = coeffs[s, 0, j] + u * (coeffs[s, 1, j] + u * (coeffs[s, 2, j] + u * coeffs[s, 3, j]))


@njit
def resample_nb(coeffs, d_dense, tol, inv_rtol, gx, gw):
    """Equidistant arc-length knots of a power-form spline.

    Mirrors ``spline.resample_equidistant``: knots at 0, d, 2d, ... plus the
    endpoint. Returns (knots, arc positions).
    """
    S = coeffs.shape[0]
    d = coeffs.shape[2]
    ps, pa, pb, cum = arc_table_nb(coeffs, tol, gx, gw)
    L = cum[cum.shape[0] - 1]
    start = np.empty(d)
    _eval(coeffs, 0, 0.0, start)
    end = np.empty(d)
    _eval(coeffs, S - 1, 1.0, end)
    if L <= 1e-12:
        knots = np.empty((1, d))
        knots[0] = start
        return knots, np.zeros(1)
    n_full = int(math.floor(L / d_dense + 1e-9))
    extra = L - n_full * d_dense > 1e-9 * max(L, 1.0)
    n_knots = n_full + 2 if extra else n_full + 1
    arc = np.empty(n_knots)
    for k in range(n_full + 1):
        arc[k] = k * d_dense
    arc[n_knots - 1] = L
    knots = np.empty((n_knots, d))
    knots[0] = start
    knots[n_knots - 1] = end
    target_w = inv_rtol * L
    j = 0
    npieces = ps.shape[0]
    for k in range(1, n_knots - 1):
        s_t = arc[k]
        while j < npieces - 1 and cum[j + 1] <= s_t:
            j += 1
        span = ps[j]
        lo = pa[j]
        hi = pb[j]
        width = cum[j + 1] - cum[j]
        while width > target_w:
            mid = 0.5 * (lo + hi)
            if cum[j] + _gl5(coeffs, span, pa[j], mid, gx, gw) < s_t:
                lo = mid
            else:
                hi = mid
            width *= 0.5
        _eval(coeffs, span, 0.5 * (lo + hi), knots[k])
    return knots, arc


# ---------------------------------------------------------------------------
# heuristic generator rollout (numba path; numpy path lives in episode.py)
# ---------------------------------------------------------------------------

@njit
def _norm(v):
    s = 0.0
    for j in range(v.shape[0]):
        s += v[j] * v[j]
    return math.sqrt(s)


@njit
def _unit_nb(v):
    n = _norm(v)
    out = np.zeros_like(v)
    if n > 1e-12:
        for j in range(v.shape[0]):
            out[j] = v[j] / n
    return out


@njit
def _perpendicular_nb(n):
    if n.shape[0] == 2:
        out = np.empty(2)
        out[0] = -n[1]
        out[1] = n[0]
        return out
    k = 0
    for j in range(1, 3):
        if abs(n[j]) < abs(n[k]):
            k = j
    axis = np.zeros(3)
    axis[k] = 1.0
    c = np.empty(3)
    c[0] = n[1] * axis[2] - n[2] * axis[1]
    c[1] = n[2] * axis[0] - n[0] * axis[2]
    c[2] = n[0] * axis[1] - n[1] * axis[0]
    return _unit_nb(c)


@njit
def _surface_nb(p, i, kind, centers, half, rot, normal):
    """Distance from p to obstacle i's surface (0 inside); writes the normal."""
    d = p.shape[0]
    if kind[i] == 0:
        s = 0.0
        for j in range(d):
            diff = p[j] - centers[i, j]
            s += diff * diff
        dist = math.sqrt(s)
        den = max(dist, 1e-12)
        for j in range(d):
            normal[j] = (p[j] - centers[i, j]) / den
        return max(dist - half[i, 0], 0.0)
    loc = np.empty(d)
    out = np.empty(d)
    for a in range(d):
        v = 0.0
        for j in range(d):
            v += (p[j] - centers[i, j]) * rot[i, j, a]
        loc[a] = v
        h = half[i, a]
        out[a] = v - min(max(v, -h), h)
    dist = _norm(out)
    local_n = np.zeros(d)
    if dist <= 1e-12:
        face = 0
        best = half[i, 0] - abs(loc[0])
        for a in range(1, d):
            gap = half[i, a] - abs(loc[a])
            if gap < best:
                best = gap
                face = a
        local_n[face] = -1.0 if loc[face] < 0.0 else 1.0
    else:
        for a in range(d):
            local_n[a] = out[a] / max(dist, 1e-12)
    for j in range(d):
        v = 0.0
        for a in range(d):
            v += rot[i, j, a] * local_n[a]
        normal[j] = v
    return dist


@njit
def _entry_all(a, b, kind, centers, half, rot):
    u = b - a
    best = -1.0
    for i in range(kind.shape[0]):
        t = _segment_entry(a, u, i, kind, centers, half, rot)
        if t >= 0.0 and (best < 0.0 or t < best):
            best = t
    return best


@njit
def _forces_nb(p, goal, kind, centers, half, rot, reach, k_att, k_rep, influence):
    d = p.shape[0]
    att = _unit_nb(goal - p) * k_att
    extra = np.zeros(d)
    n_obs = kind.shape[0]
    if n_obs == 0:
        return att, extra
    rep = np.zeros(d)
    normal = np.empty(d)
    best_mag = -1.0
    best_n = np.zeros(d)
    for i in range(n_obs):
        rho = _surface_nb(p, i, kind, centers, half, rot, normal)
        rho0 = influence * reach[i]
        if rho < rho0:
            r = max(rho, 1e-3)
            mag = k_rep * (1.0 / r - 1.0 / rho0) / (r * r)
            for j in range(d):
                rep[j] += mag * normal[j]
            if mag > best_mag:
                best_mag = mag
                best_n[:] = normal
    if best_mag < 0.0:
        return att, extra
    an = 0.0
    for j in range(d):
        an += att[j] * best_n[j]
    tang = att - an * best_n
    if _norm(tang) < 1e-9 * max(1.0, _norm(att)):
        tang = _perpendicular_nb(best_n)
    slide = _unit_nb(tang) * _norm(rep)
    return att, rep + slide


@njit
def rollout_nb(goal, velocity, m, bound, k_att, k_rep, momentum, influence, deflections,
               kind, centers, half, rot, reach):
    """Potential-field rollout of m points; mirrors ``HeuristicGenerator.step``."""
    d = goal.shape[0]
    step_len = bound / m
    p = np.zeros(d)
    heading = _unit_nb(velocity)
    out = np.zeros((m, d))
    stopped = False
    n_obs = kind.shape[0]
    for i in range(m):
        dist = _norm(goal - p)
        if stopped or dist <= 1e-12:
            out[i] = p
            continue
        att, extra = _forces_nb(p, goal, kind, centers, half, rot, reach, k_att, k_rep, influence)
        force_dir = _unit_nb(att + extra)
        if _norm(force_dir) == 0.0:
            force_dir = _unit_nb(att)
        h = _unit_nb(momentum * heading + (1.0 - momentum) * force_dir)
        if _norm(h) == 0.0:
            h = force_dir
        q = np.empty(d)
        found = False
        if dist <= step_len and (n_obs == 0 or _entry_all(p, goal, kind, centers, half, rot) < 0.0):
            q[:] = goal
            found = True
        elif n_obs == 0:
            q = p + step_len * h
            found = True
        else:
            eh = 0.0
            for j in range(d):
                eh += extra[j] * h[j]
            side = _unit_nb(extra - eh * h)
            if _norm(side) == 0.0:
                side = _perpendicular_nb(h)
            for k in range(deflections.shape[0]):
                th = deflections[k]
                dd = _unit_nb(math.cos(th) * h + math.sin(th) * side)
                cand = p + step_len * dd
                if _entry_all(p, cand, kind, centers, half, rot) < 0.0:
                    q = cand
                    found = True
                    break
            if not found:
                t = _entry_all(p, p + step_len * h, kind, centers, half, rot)
                if t > 0.0:
                    q = p + 0.5 * t * step_len * h
                    found = True
        if not found:
            stopped = True
            out[i] = p
            continue
        if _norm(q - p) > 1e-12:
            heading = _unit_nb(q - p)
        p = q
        out[i] = p
    return out
