"""Natural cubic splines through centreline waypoints and uniform resampling.

Each coordinate is interpolated separately against the cumulative chord
length, so vertical and looping roads are representable.  Per segment
``f_i(t) = a_i + b_i (t - t_i) + c_i (t - t_i)^2 + d_i (t - t_i)^3`` with
``a_i = y_i``, ``c_i = m_i / 2``, ``d_i = (c_{i+1} - c_i) / (3 h_i)`` and
``b_i = (a_{i+1} - a_i) / h_i - h_i (c_{i+1} + 2 c_i) / 3``, where ``m_i`` are
the knot second derivatives (``m_0 = m_n = 0``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DuplicateWaypoint, ParameterOutOfRange, StepTooLarge, TooFewPoints
from .geometry import ReferenceLine, as_xy

#: chord-vs-arc tolerance of the adaptive arc-length integration, metres
ARC_TOLERANCE = 1e-6


@dataclass(frozen=True)
class CubicSegment:
    a: float
    b: float
    c: float
    d: float
    t0: float
    t1: float

    def __call__(self, t: float) -> float:
        u = t - self.t0
        return self.a + u * (self.b + u * (self.c + u * self.d))


def solve_tridiagonal(lower, diag, upper, rhs) -> np.ndarray:
    """Thomas algorithm for a tridiagonal system.

    ``lower[i]`` multiplies ``x[i-1]`` in row ``i`` (``lower[0]`` unused) and
    ``upper[i]`` multiplies ``x[i+1]`` (``upper[-1]`` unused).
    """
    n = len(diag)
    cp = [0.0] * n
    dp = [0.0] * n
    cp[0] = upper[0] / diag[0]
    dp[0] = rhs[0] / diag[0]
    for i in range(1, n):
        denom = diag[i] - lower[i] * cp[i - 1]
        cp[i] = upper[i] / denom if i < n - 1 else 0.0
        dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / denom
    x = [0.0] * n
    x[-1] = dp[-1]
    for i in range(n - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return np.array(x)


def natural_second_derivatives(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Knot second derivatives ``m`` of the natural cubic spline through (t, y)."""
    h = np.diff(t)
    n = len(t)
    m = np.zeros(n)
    if n < 3:
        return m
    slope = np.diff(y) / h
    lower = h[:-1].tolist()
    diag = (2.0 * (h[:-1] + h[1:])).tolist()
    upper = h[1:].tolist()
    rhs = (6.0 * np.diff(slope)).tolist()
    m[1:-1] = solve_tridiagonal(lower, diag, upper, rhs)
    return m


class NaturalCubicSpline1D:
    """Scalar natural cubic spline; coefficients held as arrays."""

    def __init__(self, t, y):
        t = np.asarray(t, dtype=float)
        y = np.asarray(y, dtype=float)
        h = np.diff(t)
        m = natural_second_derivatives(t, y)
        self.knots = t
        self.a = y[:-1].copy()
        self.c = m[:-1] / 2.0
        c_next = m[1:] / 2.0
        self.d = (c_next - self.c) / (3.0 * h)
        self.b = (y[1:] - y[:-1]) / h - h * (c_next + 2.0 * self.c) / 3.0
        self.m = m

    @property
    def segments(self) -> list[CubicSegment]:
        return [
            CubicSegment(float(a), float(b), float(c), float(d), float(t0), float(t1))
            for a, b, c, d, t0, t1 in zip(self.a, self.b, self.c, self.d, self.knots[:-1], self.knots[1:])
        ]

    def segment_index(self, t) -> np.ndarray:
        idx = np.searchsorted(self.knots, t, side="right") - 1
        return np.clip(idx, 0, len(self.a) - 1)

    def __call__(self, t, order: int = 0, segment=None):
        t = np.asarray(t, dtype=float)
        i = self.segment_index(t) if segment is None else np.asarray(segment)
        u = t - self.knots[i]
        a, b, c, d = self.a[i], self.b[i], self.c[i], self.d[i]
        if order == 0:
            return a + u * (b + u * (c + u * d))
        if order == 1:
            return b + u * (2.0 * c + 3.0 * d * u)
        if order == 2:
            return 2.0 * c + 6.0 * d * u
        if order == 3:
            return 6.0 * d + 0.0 * u
        raise ValueError(f"unsupported derivative order {order}")


class ParametricSpline:
    """Pair of natural cubic splines x(t), y(t) over chord-length knots."""

    def __init__(self, waypoints):
        xy = as_xy(waypoints)
        if len(xy) < 3:
            raise TooFewPoints(f"need at least 3 waypoints, got {len(xy)}")
        chords = np.hypot(np.diff(xy[:, 0]), np.diff(xy[:, 1]))
        bad = np.flatnonzero(chords <= 1e-9)
        if len(bad):
            raise DuplicateWaypoint(f"waypoints {bad[0]} and {bad[0] + 1} coincide")
        self.waypoints = xy
        self.knots = np.concatenate(([0.0], np.cumsum(chords)))
        self.sx = NaturalCubicSpline1D(self.knots, xy[:, 0])
        self.sy = NaturalCubicSpline1D(self.knots, xy[:, 1])

    @property
    def x_segments(self) -> list[CubicSegment]:
        return self.sx.segments

    @property
    def y_segments(self) -> list[CubicSegment]:
        return self.sy.segments

    @property
    def t_max(self) -> float:
        return float(self.knots[-1])

    def _check(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        tol = 1e-12 * max(1.0, self.t_max)
        if np.any(t < -tol) or np.any(t > self.t_max + tol):
            raise ParameterOutOfRange(f"parameter outside [0, {self.t_max:.6g}]")
        return np.clip(t, 0.0, self.t_max)

    def eval(self, t, order: int = 0, segment=None):
        """Evaluate (x, y) or their ``order``-th derivative at ``t``.

        ``segment`` pins the polynomial piece, which lets callers compare the
        left and right limits at a knot.
        """
        t = self._check(t)
        return self.sx(t, order, segment), self.sy(t, order, segment)

    def heading_curvature(self, t):
        dx, dy = self.eval(t, 1)
        ddx, ddy = self.eval(t, 2)
        heading = np.arctan2(dy, dx)
        kappa = (dx * ddy - dy * ddx) / np.power(dx * dx + dy * dy, 1.5)
        return heading, kappa

    def arc_length_table(self, tol: float = ARC_TOLERANCE):
        """Breakpoints ``(t, s)`` from adaptive chord subdivision.

        Every knot interval is bisected until halving a piece changes its chord
        length by less than ``tol``.
        """
        t = self.knots
        pending = np.column_stack((t[:-1], t[1:]))
        done: list[np.ndarray] = []
        while len(pending):
            a, b = pending[:, 0], pending[:, 1]
            mid = 0.5 * (a + b)
            xa, ya = self.eval(a)
            xb, yb = self.eval(b)
            xm, ym = self.eval(mid)
            whole = np.hypot(xb - xa, yb - ya)
            halves = np.hypot(xm - xa, ym - ya) + np.hypot(xb - xm, yb - ym)
            ok = (halves - whole) < tol
            done.append(np.column_stack((a[ok], mid[ok], b[ok])))
            bad = ~ok
            pending = np.concatenate(
                (np.column_stack((a[bad], mid[bad])), np.column_stack((mid[bad], b[bad])))
            )
        pieces = np.concatenate(done)
        pieces = pieces[np.argsort(pieces[:, 0])]
        # each accepted piece contributes its two half-chords
        tb = np.empty(2 * len(pieces) + 1)
        tb[0] = pieces[0, 0]
        tb[1::2] = pieces[:, 1]
        tb[2::2] = pieces[:, 2]
        xb, yb = self.eval(tb)
        sb = np.concatenate(([0.0], np.cumsum(np.hypot(np.diff(xb), np.diff(yb)))))
        return tb, sb

    def arc_length(self, tol: float = ARC_TOLERANCE) -> float:
        return float(self.arc_length_table(tol)[1][-1])


def fit_spline(waypoints) -> ParametricSpline:
    """Fit a natural parametric cubic spline through every waypoint."""
    return ParametricSpline(waypoints)


def eval_spline(spline: ParametricSpline, t, order: int = 0):
    return spline.eval(t, order)


def resample_uniform(spline: ParametricSpline, step: float) -> ReferenceLine:
    """Sample the spline every ``step`` metres of arc length.

    The final sample is the spline end point, so the last gap is shorter than
    ``step`` unless the length is an exact multiple.
    """
    tb, sb = spline.arc_length_table()
    total = float(sb[-1])
    if not step > 0.0 or step >= total:
        raise StepTooLarge(f"step {step} must be in (0, {total:.6g})")
    n = int(np.floor(total / step + 1e-9))
    targets = step * np.arange(n + 1)
    if total - targets[-1] > 1e-6 * step:
        targets = np.append(targets, total)
    else:
        targets[-1] = total
    t = _invert_arc_length(spline, tb, sb, targets)
    x, y = spline.eval(t)
    heading, kappa = spline.heading_curvature(t)
    return ReferenceLine(x, y, heading, kappa, targets, spacing=step)


def _invert_arc_length(spline, tb, sb, targets):
    t = np.interp(targets, sb, tb)
    # one Newton correction using the local speed within each bracket
    idx = np.clip(np.searchsorted(sb, targets, side="right") - 1, 0, len(sb) - 2)
    x0, y0 = spline.eval(tb[idx])
    x1, y1 = spline.eval(t)
    chord = np.hypot(x1 - x0, y1 - y0)
    dx, dy = spline.eval(t, 1)
    speed = np.hypot(dx, dy)
    t = t + (targets - sb[idx] - chord) / speed
    return np.clip(t, 0.0, spline.t_max)
