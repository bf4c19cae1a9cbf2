"""Planar geometry: points, sampled paths and Cartesian/Frenet conversion.

Lateral offsets are signed left-of-tangent positive everywhere in the package.
A :class:`ReferenceLine` is treated as a piecewise-linear curve whose heading
and curvature are interpolated linearly in station between samples; the two
Frenet maps below are exact inverses of each other under that model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import (
    CurvatureSingularity,
    DegenerateSpacing,
    EmptyPath,
    PointOutOfRange,
    StationOutOfRange,
    TooFewPoints,
)

#: default search radius of :func:`project_to_frenet`
PROJECTION_HORIZON = 100.0


def wrap_angle(angle):
    """Wrap an angle (scalar or array) into (-pi, pi]."""
    wrapped = np.mod(np.asarray(angle, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    wrapped = np.where(wrapped <= -np.pi, wrapped + 2.0 * np.pi, wrapped)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite point ({self.x}, {self.y})")

    def __iter__(self):
        yield self.x
        yield self.y

    def distance(self, other: "Point2") -> float:
        return math.hypot(other.x - self.x, other.y - self.y)


@dataclass(frozen=True)
class PathPoint:
    position: Point2
    heading: float  # rad
    curvature: float  # 1/m
    s: float  # m, cumulative arc length


@dataclass(frozen=True)
class FrenetState:
    """Station ``l`` along a reference line and lateral offset ``d(l)``.

    ``d_dot`` and ``d_ddot`` are derivatives with respect to ``l``, not time.
    """

    l: float
    d: float
    d_dot: float = 0.0
    d_ddot: float = 0.0


def as_xy(points) -> np.ndarray:
    """Coerce a sequence of :class:`Point2` / pairs / an (N, 2) array to float array."""
    if isinstance(points, np.ndarray):
        arr = np.asarray(points, dtype=float)
    else:
        arr = np.array([tuple(p) for p in points], dtype=float)
    if arr.size == 0:
        return arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected (N, 2) points, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("points must be finite")
    return arr


def numeric_curvature(points) -> np.ndarray:
    """Signed curvature of a sampled curve from circumscribed circles.

    Each interior point gets the curvature of the circle through itself and its
    two neighbours (left turns positive); the endpoints copy their neighbour.
    """
    xy = as_xy(points)
    if len(xy) < 3:
        raise TooFewPoints(f"need at least 3 points, got {len(xy)}")
    a, b, c = xy[:-2], xy[1:-1], xy[2:]
    ab = b - a
    bc = c - b
    ac = c - a
    la = np.hypot(ab[:, 0], ab[:, 1])
    lb = np.hypot(bc[:, 0], bc[:, 1])
    lc = np.hypot(ac[:, 0], ac[:, 1])
    if np.any(la <= 1e-12) or np.any(lb <= 1e-12):
        raise DegenerateSpacing("duplicate consecutive points")
    cross = ab[:, 0] * bc[:, 1] - ab[:, 1] * bc[:, 0]
    denom = la * lb * lc
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = np.where(denom > 0.0, 2.0 * cross / denom, 0.0)
    return np.concatenate(([kappa[0]], kappa, [kappa[-1]]))


def _ds_gradient(values: np.ndarray, s: np.ndarray) -> np.ndarray:
    if len(values) < 2:
        return np.zeros_like(values)
    return np.gradient(values, s)


class ReferenceLine:
    """Arc-length parameterised sequence of poses.

    Stored as parallel arrays; :attr:`points` gives the :class:`PathPoint`
    view.  ``s`` must be strictly increasing.
    """

    def __init__(self, x, y, heading, curvature, s=None, spacing: float | None = None):
        x = np.asarray(x, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        if len(x) == 0:
            raise EmptyPath("reference line has no points")
        if len(x) < 2:
            raise TooFewPoints("reference line needs at least 2 points")
        heading = np.asarray(heading, dtype=float).ravel()
        curvature = np.asarray(curvature, dtype=float).ravel()
        if s is None:
            s = np.concatenate(([0.0], np.cumsum(np.hypot(np.diff(x), np.diff(y)))))
        s = np.asarray(s, dtype=float).ravel()
        n = len(x)
        if not (len(y) == len(heading) == len(curvature) == len(s) == n):
            raise ValueError("reference line arrays differ in length")
        if not np.all(np.diff(s) > 0.0):
            raise DegenerateSpacing("station must be strictly increasing")
        for arr in (x, y, heading, curvature, s):
            if not np.all(np.isfinite(arr)):
                raise ValueError("reference line contains non-finite values")
        self.x = x
        self.y = y
        self.heading = wrap_angle(heading)
        self.curvature = curvature
        self.s = s
        self.spacing = float(spacing) if spacing is not None else float((s[-1] - s[0]) / (n - 1))
        self._theta = np.unwrap(self.heading)
        self._dkappa = _ds_gradient(curvature, s)
        for arr in (self.x, self.y, self.heading, self.curvature, self.s):
            arr.flags.writeable = False

    @classmethod
    def from_xy(cls, points, spacing: float | None = None) -> "ReferenceLine":
        """Build a line from bare positions, deriving heading and curvature numerically."""
        xy = as_xy(points)
        if len(xy) == 0:
            raise EmptyPath("no points")
        if len(xy) < 2:
            raise TooFewPoints("need at least 2 points")
        seg = np.hypot(np.diff(xy[:, 0]), np.diff(xy[:, 1]))
        if np.any(seg <= 1e-12):
            raise DegenerateSpacing("duplicate consecutive points")
        s = np.concatenate(([0.0], np.cumsum(seg)))
        dx = np.gradient(xy[:, 0], s)
        dy = np.gradient(xy[:, 1], s)
        heading = np.arctan2(dy, dx)
        kappa = numeric_curvature(xy) if len(xy) >= 3 else np.zeros(len(xy))
        return cls(xy[:, 0], xy[:, 1], heading, kappa, s, spacing)

    @classmethod
    def from_points(cls, points: Sequence[PathPoint], spacing: float | None = None) -> "ReferenceLine":
        return cls(
            [p.position.x for p in points],
            [p.position.y for p in points],
            [p.heading for p in points],
            [p.curvature for p in points],
            [p.s for p in points],
            spacing,
        )

    def __len__(self) -> int:
        return len(self.x)

    @property
    def length(self) -> float:
        return float(self.s[-1] - self.s[0])

    @property
    def xy(self) -> np.ndarray:
        return np.column_stack((self.x, self.y))

    @property
    def points(self) -> list[PathPoint]:
        return [self.point(i) for i in range(len(self))]

    def point(self, i: int) -> PathPoint:
        return PathPoint(
            Point2(float(self.x[i]), float(self.y[i])),
            float(self.heading[i]),
            float(self.curvature[i]),
            float(self.s[i]),
        )

    def interpolate(self, l):
        """Position, heading, curvature and d(curvature)/ds at stations ``l``."""
        l = np.asarray(l, dtype=float)
        x = np.interp(l, self.s, self.x)
        y = np.interp(l, self.s, self.y)
        theta = np.interp(l, self.s, self._theta)
        kappa = np.interp(l, self.s, self.curvature)
        dkappa = np.interp(l, self.s, self._dkappa)
        return x, y, theta, kappa, dkappa


def frenet_to_cartesian_arrays(line: ReferenceLine, l, d, d_dot=0.0, d_ddot=0.0):
    """Vectorised Frenet -> Cartesian map.

    Returns ``(x, y, heading, curvature)`` arrays broadcast over the inputs.
    """
    l = np.asarray(l, dtype=float)
    d = np.asarray(d, dtype=float)
    d_dot = np.asarray(d_dot, dtype=float)
    d_ddot = np.asarray(d_ddot, dtype=float)
    tol = 1e-9 * max(1.0, line.length)
    if np.any(l < line.s[0] - tol) or np.any(l > line.s[-1] + tol):
        raise StationOutOfRange(
            f"station outside [{line.s[0]:.6g}, {line.s[-1]:.6g}]"
        )
    xr, yr, theta_r, kappa_r, dkappa_r = line.interpolate(l)
    one_minus = 1.0 - kappa_r * d
    if np.any(one_minus <= 0.0):
        raise CurvatureSingularity("lateral offset reaches the centre of curvature")
    cos_t = np.cos(theta_r)
    sin_t = np.sin(theta_r)
    x = xr - d * sin_t
    y = yr + d * cos_t
    kappa = offset_curvature(kappa_r, dkappa_r, d, d_dot, d_ddot, one_minus)
    heading = wrap_angle(theta_r + np.arctan2(d_dot, one_minus))
    return x, y, heading, kappa


def offset_curvature(kappa_r, dkappa_r, d, d_dot, d_ddot, one_minus=None):
    """Curvature of the curve ``d(l)`` drawn against a reference with curvature ``kappa_r``."""
    if one_minus is None:
        one_minus = 1.0 - kappa_r * d
    tan_d = d_dot / one_minus
    cos2 = 1.0 / (1.0 + tan_d * tan_d)
    return (
        (d_ddot + (dkappa_r * d + kappa_r * d_dot) * tan_d) * cos2 / one_minus + kappa_r
    ) * np.sqrt(cos2) / one_minus


def frenet_to_cartesian(line: ReferenceLine, f: FrenetState) -> PathPoint:
    """Map a Frenet state onto the plane.

    The returned ``s`` is the station ``f.l`` along the reference line.
    """
    x, y, heading, kappa = frenet_to_cartesian_arrays(line, f.l, f.d, f.d_dot, f.d_ddot)
    return PathPoint(Point2(float(x), float(y)), float(heading), float(kappa), float(f.l))


def project_to_frenet(
    line: ReferenceLine,
    p,
    horizon: float = PROJECTION_HORIZON,
) -> FrenetState:
    """Project a point onto the reference line.

    Finds the station whose (interpolated-heading) normal passes through ``p``,
    choosing the root nearest to the closest segment of the polyline.  Points
    before the first or past the last sample clamp to the end stations.
    """
    if line is None or len(line) == 0:
        raise EmptyPath("cannot project onto an empty path")
    px, py = (float(v) for v in p)
    xs, ys, s, theta = line.x, line.y, line.s, line._theta

    dx = np.diff(xs)
    dy = np.diff(ys)
    seg2 = dx * dx + dy * dy
    rx = px - xs[:-1]
    ry = py - ys[:-1]
    t = np.clip((rx * dx + ry * dy) / seg2, 0.0, 1.0)
    dist2 = (rx - t * dx) ** 2 + (ry - t * dy) ** 2
    k = int(np.argmin(dist2))
    if math.sqrt(dist2[k]) > horizon:
        raise PointOutOfRange(f"point is {math.sqrt(dist2[k]):.3f} m from the path")

    # signed along-track residual at every vertex
    g = (px - xs) * np.cos(theta) + (py - ys) * np.sin(theta)
    brackets = np.flatnonzero((g[:-1] >= 0.0) & (g[1:] <= 0.0))
    if len(brackets) == 0:
        j = 0 if g[0] < 0.0 else len(xs) - 1
        return _frenet_at_vertex(line, j, px, py)
    j = int(brackets[np.argmin(np.abs(brackets - k))])
    if g[j] == 0.0:
        return _frenet_at_vertex(line, j, px, py)
    if g[j + 1] == 0.0:
        return _frenet_at_vertex(line, j + 1, px, py)

    x0, y0, ddx, ddy = xs[j], ys[j], dx[j], dy[j]
    th0, dth = theta[j], theta[j + 1] - theta[j]

    def residual(u):
        th = th0 + u * dth
        return (px - x0 - u * ddx) * math.cos(th) + (py - y0 - u * ddy) * math.sin(th)

    u = brentq(residual, 0.0, 1.0, xtol=1e-15, rtol=1e-15, maxiter=200)
    th = th0 + u * dth
    d = -(px - x0 - u * ddx) * math.sin(th) + (py - y0 - u * ddy) * math.cos(th)
    l = s[j] + u * (s[j + 1] - s[j])
    return FrenetState(float(l), float(d))


def _frenet_at_vertex(line: ReferenceLine, j: int, px: float, py: float) -> FrenetState:
    th = line._theta[j]
    d = -(px - line.x[j]) * math.sin(th) + (py - line.y[j]) * math.cos(th)
    return FrenetState(float(line.s[j]), float(d))


def polyline_length(points: Iterable) -> float:
    xy = as_xy(list(points) if not isinstance(points, np.ndarray) else points)
    if len(xy) < 2:
        return 0.0
    return float(np.sum(np.hypot(np.diff(xy[:, 0]), np.diff(xy[:, 1]))))
