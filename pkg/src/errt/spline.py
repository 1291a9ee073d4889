"""Clamped uniform cubic B-splines and equidistant arc-length resampling."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import kernels
from ._accel import USE_NUMBA
from .errors import ContractViolation

_GL_X, _GL_W = np.polynomial.legendre.leggauss(5)
ARC_RTOL = 1e-11     # adaptive quadrature acceptance, relative to control-polygon length
INVERSE_RTOL = 1e-9  # arc-length bracket for knot placement, relative to curve length

# power-basis coefficients from samples at u = 0, 1/3, 2/3, 1
_VANDER_INV = np.linalg.inv(np.vander(np.array([0.0, 1 / 3, 2 / 3, 1.0]), 4, increasing=True))


def _basis_funcs(knots: np.ndarray, span: int, t: float, p: int = 3) -> np.ndarray:
    """Non-zero B-spline basis values at t (Cox-de Boor, The NURBS Book A2.2)."""
    N = np.zeros(p + 1)
    left = np.zeros(p + 1)
    right = np.zeros(p + 1)
    N[0] = 1.0
    for j in range(1, p + 1):
        left[j] = t - knots[span + 1 - j]
        right[j] = knots[span + j] - t
        saved = 0.0
        for r in range(j):
            tmp = N[r] / (right[r + 1] + left[j - r])
            N[r] = saved + right[r + 1] * tmp
            saved = left[j - r] * tmp
        N[j] = saved
    return N


@lru_cache(maxsize=64)
def _span_matrices(n_ctrl: int) -> np.ndarray:
    """(n_spans, 4, 4) maps from four control points to power coefficients."""
    n_spans = n_ctrl - 3
    inner = np.linspace(0.0, 1.0, n_spans + 1)
    knots = np.concatenate([[0.0] * 3, inner, [1.0] * 3])
    out = np.empty((n_spans, 4, 4))
    for s in range(n_spans):
        span = s + 3
        t0, t1 = knots[span], knots[span + 1]
        B = np.array([_basis_funcs(knots, span, t0 + u * (t1 - t0)) for u in (0.0, 1 / 3, 2 / 3, 1.0)])
        out[s] = _VANDER_INV @ B
    out.setflags(write=False)
    return out


class CubicBSpline:
    """Clamped uniform cubic B-spline on the normalised parameter t in [0, 1].

    Fewer than four control points are padded by repeating the last one. The
    curve is stored per knot span in power form so evaluation and derivatives
    are vectorised polynomial evaluations.
    """

    def __init__(self, control_points):
        P = np.asarray(control_points, dtype=float)
        if P.ndim != 2 or P.shape[0] < 1:
            raise ContractViolation("need at least one control point")
        if P.shape[0] < 4:
            P = np.vstack([P, np.repeat(P[-1:], 4 - P.shape[0], axis=0)])
        self.control_points = P
        self.dim = P.shape[1]
        n = P.shape[0]
        self.n_spans = n - 3
        inner = np.linspace(0.0, 1.0, self.n_spans + 1)
        self.knots = np.concatenate([[0.0] * 3, inner, [1.0] * 3])
        windows = np.lib.stride_tricks.sliding_window_view(P, 4, axis=0)  # (S, d, 4)
        self.coeffs = np.einsum("skc,sdc->skd", _span_matrices(n), windows)
        # spans with coincident control points are exactly constant
        flat = np.all(windows == windows[:, :, :1], axis=(1, 2))
        self.coeffs[flat, 1:, :] = 0.0
        self._table = None

    # -- evaluation ----------------------------------------------------------

    def _locate(self, t):
        t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
        x = t * self.n_spans
        span = np.minimum(np.floor(x).astype(np.int64), self.n_spans - 1)
        return span, x - span

    def __call__(self, t) -> np.ndarray:
        span, u = self._locate(t)
        c = self.coeffs[span]
        u = u[..., None]
        return c[..., 0, :] + u * (c[..., 1, :] + u * (c[..., 2, :] + u * c[..., 3, :]))

    def derivative(self, t) -> np.ndarray:
        """dC/dt on the normalised parameter."""
        span, u = self._locate(t)
        c = self.coeffs[span]
        u = u[..., None]
        return self.n_spans * (c[..., 1, :] + u * (2.0 * c[..., 2, :] + 3.0 * u * c[..., 3, :]))

    def _local_speed(self, span, u):
        c = self.coeffs[span]
        u = u[..., None]
        d = c[..., 1, :] + u * (2.0 * c[..., 2, :] + 3.0 * u * c[..., 3, :])
        return np.linalg.norm(d, axis=-1)

    # -- arc length ------------------------------------------------------------

    def _gl(self, span, a, b):
        """5-point Gauss-Legendre of the local speed over [a, b] (local u)."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        half = 0.5 * (b - a)
        mid = 0.5 * (b + a)
        u = mid[..., None] + half[..., None] * _GL_X
        sp = np.broadcast_to(np.asarray(span)[..., None], u.shape)
        return half * (self._local_speed(sp, u) @ _GL_W)

    def _abs_tol(self, rtol: float) -> float:
        rough = float(np.sum(np.linalg.norm(np.diff(self.control_points, axis=0), axis=1)))
        # rounding in the power-form coefficients scales with the coordinates
        scale = 1e-12 * max(1.0, float(np.max(np.abs(self.control_points))))
        return rtol * max(rough, scale)

    def _build_table(self, rtol: float = ARC_RTOL):
        """Adaptive Gauss-Legendre subdivision of every span, breadth first.

        An interval is accepted once its two halves agree with the whole to
        ``rtol`` times the control-polygon length.
        """
        tol = self._abs_tol(rtol)
        span = np.arange(self.n_spans)
        a = np.zeros(self.n_spans)
        b = np.ones(self.n_spans)
        whole = self._gl(span, a, b)
        done_span, done_a, done_b, done_val = [], [], [], []
        depth = 0
        while span.size:
            m = 0.5 * (a + b)
            halves = self._gl(np.concatenate([span, span]), np.concatenate([a, m]), np.concatenate([m, b]))
            left, right = halves[: span.size], halves[span.size:]
            ok = (np.abs(left + right - whole) <= tol + 1e-13 * (np.abs(left) + np.abs(right))) | (depth >= 40)
            done_span += [span[ok], span[ok]]
            done_a += [a[ok], m[ok]]
            done_b += [m[ok], b[ok]]
            done_val += [left[ok], right[ok]]
            bad = ~ok
            span = np.concatenate([span[bad], span[bad]])
            a, b = np.concatenate([a[bad], m[bad]]), np.concatenate([m[bad], b[bad]])
            whole = np.concatenate([left[bad], right[bad]])
            depth += 1
        ps, pa, pb, pv = (np.concatenate(x) for x in (done_span, done_a, done_b, done_val))
        order = np.lexsort((pa, ps))
        ps, pa, pb, pv = ps[order], pa[order], pb[order], pv[order]
        bp = np.concatenate([[0.0], (ps + pb) / self.n_spans])
        cum = np.concatenate([[0.0], np.cumsum(pv)])
        self._table = (bp, cum, ps, pa)
        return self._table

    @property
    def table(self):
        return self._table if self._table is not None else self._build_table()

    @property
    def length(self) -> float:
        return float(self.table[1][-1])

    def _piece_integral(self, j, t):
        bp, cum, ps, pa = self.table
        span = ps[j]
        return cum[j] + self._gl(span, pa[j], t * self.n_spans - span)

    def cumulative(self, t) -> np.ndarray:
        """Arc length from t=0 to t (vectorised)."""
        bp = self.table[0]
        t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
        j = np.clip(np.searchsorted(bp, t, side="right") - 1, 0, len(bp) - 2)
        return self._piece_integral(j, t)

    def inverse_cumulative(self, s, rtol: float = INVERSE_RTOL) -> np.ndarray:
        """Parameter t with cumulative(t) = s.

        The table piece holding s is located exactly, then bisected until the
        bracket's arc length is below ``rtol`` times the curve length.
        """
        bp, cum, _, _ = self.table
        s = np.clip(np.asarray(s, dtype=float), 0.0, cum[-1])
        j = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(bp) - 2)
        lo = bp[j].copy()
        hi = bp[j + 1].copy()
        if s.size == 0:
            return lo
        width = cum[j + 1] - cum[j]
        target = rtol * max(float(cum[-1]), 1e-300)
        while np.any(width > target):
            active = width > target
            mid = 0.5 * (lo + hi)
            below = self._piece_integral(j, mid) < s
            lo = np.where(active & below, mid, lo)
            hi = np.where(active & ~below, mid, hi)
            width = np.where(active, 0.5 * width, width)
        return 0.5 * (lo + hi)


def build_spline(anchor, action) -> CubicBSpline:
    """Spline whose control polygon is the anchor followed by anchor + action."""
    anchor = np.asarray(anchor, dtype=float)
    action = np.asarray(action, dtype=float)
    if action.ndim != 2 or action.shape[0] < 1:
        raise ContractViolation("action path must contain at least one point")
    if action.shape[1] != anchor.shape[0]:
        raise ContractViolation("action dimension differs from anchor dimension")
    return CubicBSpline(np.vstack([anchor[None, :], anchor + action]))


def arc_length(spline: CubicBSpline, t0: float, t1: float) -> float:
    if not 0.0 <= t0 <= t1 <= 1.0:
        raise ContractViolation("need 0 <= t0 <= t1 <= 1")
    if t0 == t1:
        return 0.0
    return float(spline.cumulative(t1) - spline.cumulative(t0))


@dataclass
class ResampledPath:
    knots: np.ndarray
    d_dense: float
    arc: np.ndarray

    def __len__(self) -> int:
        return self.knots.shape[0]

    @property
    def length(self) -> float:
        return float(self.arc[-1])


def resample_equidistant(spline: CubicBSpline, d_dense: float) -> ResampledPath:
    """Knots every ``d_dense`` of arc length, plus the curve endpoint."""
    if not d_dense > 0:
        raise ContractViolation("d_dense must be positive")
    if USE_NUMBA:
        knots, arc = kernels.resample_nb(spline.coeffs, float(d_dense), spline._abs_tol(ARC_RTOL),
                                         INVERSE_RTOL, _GL_X, _GL_W)
        return ResampledPath(knots, d_dense, arc)
    return _resample_np(spline, d_dense)


def _resample_np(spline: CubicBSpline, d_dense: float) -> ResampledPath:
    L = spline.length
    start = spline(0.0)
    if L <= 1e-12:
        return ResampledPath(start[None, :], d_dense, np.zeros(1))
    n_full = int(np.floor(L / d_dense + 1e-9))
    arc = np.arange(n_full + 1) * d_dense
    if L - arc[-1] > 1e-9 * max(L, 1.0):
        arc = np.append(arc, L)
    else:
        arc[-1] = L
    t = spline.inverse_cumulative(arc[1:-1])
    knots = np.vstack([start[None, :], spline(t).reshape(-1, spline.dim), spline(1.0)[None, :]])
    return ResampledPath(knots, d_dense, arc)
