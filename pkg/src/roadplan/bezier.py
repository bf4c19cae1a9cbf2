"""Fifth-order Bezier corner smoothing.

A corner is described by three anchors (entry, vertex, exit) and three
distances from the vertex.  Control points P0..P2 sit on the entry leg at
distances d3, d2, d1 before the vertex and P3..P5 on the exit leg at d1, d2,
d3 after it.  Because each end triple is collinear the curve leaves and joins
straight legs with matching tangent and zero curvature.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from .errors import (
    CornerOffLine,
    DegenerateLeg,
    DistanceExceedsLeg,
    OverlappingCorners,
    ParameterOutOfRange,
    TooFewPoints,
)
from .geometry import Point2, ReferenceLine, project_to_frenet

DEFAULT_DISTANCES = (3.0, 3.0, 8.0)
DEGREE = 5


@dataclass(frozen=True)
class QuinticBezier:
    control_points: tuple[Point2, ...]

    def __post_init__(self):
        if len(self.control_points) != DEGREE + 1:
            raise ValueError(f"need exactly {DEGREE + 1} control points")

    @property
    def array(self) -> np.ndarray:
        return np.array([(p.x, p.y) for p in self.control_points], dtype=float)


@dataclass(frozen=True)
class CornerSpec:
    w1: Point2
    w2: Point2
    w3: Point2
    d1: float = DEFAULT_DISTANCES[0]
    d2: float = DEFAULT_DISTANCES[1]
    d3: float = DEFAULT_DISTANCES[2]

    @property
    def distances(self) -> tuple[float, float, float]:
        return (self.d1, self.d2, self.d3)


def leg_lengths(spec: CornerSpec) -> tuple[float, float]:
    """Euclidean lengths of the entry and exit legs."""
    m1 = spec.w1.distance(spec.w2)
    m2 = spec.w2.distance(spec.w3)
    if m1 <= 1e-6 or m2 <= 1e-6:
        raise DegenerateLeg(f"corner legs must be longer than 1e-6 m (got {m1:.3g}, {m2:.3g})")
    return m1, m2


def control_points(spec: CornerSpec) -> QuinticBezier:
    m1, m2 = leg_lengths(spec)
    d1, d2, d3 = spec.distances
    if not (0.0 <= d1 <= d2 <= d3):
        raise ValueError(f"distances must satisfy 0 <= d1 <= d2 <= d3, got {spec.distances}")
    if d3 >= min(m1, m2):
        raise DistanceExceedsLeg(f"d3={d3} must be shorter than both legs ({m1:.3f}, {m2:.3f})")
    w1 = np.array(tuple(spec.w1))
    w2 = np.array(tuple(spec.w2))
    w3 = np.array(tuple(spec.w3))
    pts = []
    for dist in (d3, d2, d1):
        pts.append(w1 + (w2 - w1) * (m1 - dist) / m1)
    for dist in (d1, d2, d3):
        pts.append(w2 + (w3 - w2) * dist / m2)
    return QuinticBezier(tuple(Point2(float(p[0]), float(p[1])) for p in pts))


def _hodograph(points: np.ndarray, order: int) -> np.ndarray:
    n = len(points) - 1
    for _ in range(order):
        points = n * np.diff(points, axis=0)
        n -= 1
    return points


def _bernstein(points: np.ndarray, t: np.ndarray) -> np.ndarray:
    n = len(points) - 1
    if n < 0:
        return np.zeros((len(t), 2))
    i = np.arange(n + 1)
    binom = np.array([comb(n, k) for k in i], dtype=float)
    basis = binom * (1.0 - t[:, None]) ** (n - i) * t[:, None] ** i
    return basis @ points


def eval_bezier(b: QuinticBezier, t, order: int = 0):
    """Curve point (or derivative up to order 3) at ``t`` in [0, 1].

    Returns a :class:`Point2` for scalar ``t`` and an (N, 2) array otherwise.
    """
    scalar = np.ndim(t) == 0
    tt = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(tt < 0.0) or np.any(tt > 1.0):
        raise ParameterOutOfRange("Bezier parameter must lie in [0, 1]")
    if order not in (0, 1, 2, 3):
        raise ValueError(f"unsupported derivative order {order}")
    out = _bernstein(_hodograph(b.array, order), tt)
    if scalar:
        return Point2(float(out[0, 0]), float(out[0, 1]))
    return out


def bezier_curvature(b: QuinticBezier, t) -> np.ndarray:
    tt = np.atleast_1d(np.asarray(t, dtype=float))
    d1 = eval_bezier(b, tt, 1)
    d2 = eval_bezier(b, tt, 2)
    num = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    speed = np.hypot(d1[:, 0], d1[:, 1])
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(speed > 0.0, num / speed**3, 0.0)


def _arc_table(b: QuinticBezier, n: int = 4001):
    t = np.linspace(0.0, 1.0, n)
    pts = eval_bezier(b, t)
    s = np.concatenate(([0.0], np.cumsum(np.hypot(*np.diff(pts, axis=0).T))))
    return t, s


def _t_at_arc(b: QuinticBezier, targets: np.ndarray) -> np.ndarray:
    t_tab, s_tab = _arc_table(b)
    t = np.interp(targets, s_tab, t_tab)
    # refine: two Newton steps on s(t) using the local speed
    for _ in range(2):
        idx = np.clip(np.searchsorted(t_tab, t, side="right") - 1, 0, len(t_tab) - 2)
        base = eval_bezier(b, t_tab[idx])
        here = eval_bezier(b, t)
        s_here = s_tab[idx] + np.hypot(*(here - base).T)
        speed = np.hypot(*eval_bezier(b, t, 1).T)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(speed > 1e-12, (targets - s_here) / speed, 0.0)
        t = np.clip(t + step, 0.0, 1.0)
    return t


def bezier_length(b: QuinticBezier) -> float:
    return float(_arc_table(b)[1][-1])


def find_corner_candidates(line: ReferenceLine, threshold: float = 0.2) -> np.ndarray:
    """Indices of samples whose |curvature| exceeds ``threshold`` (1/m)."""
    return np.flatnonzero(np.abs(line.curvature) > threshold)


def smooth_corners(line: ReferenceLine, corners, sample_step: float) -> ReferenceLine:
    """Splice Bezier corner curves into a reference line.

    The stretch of ``line`` between each corner's P0 and P5 is replaced by the
    Bezier curve.  The composite is resampled every ``sample_step`` metres of
    arc length continuing the station grid of the input, so spacing stays
    uniform across splice points.
    """
    corners = list(corners)
    if not corners:
        return line
    if sample_step <= 0.0:
        raise ValueError("sample_step must be positive")

    spans = []
    for k, spec in enumerate(corners):
        bez = control_points(spec)
        p0, p5 = bez.control_points[0], bez.control_points[-1]
        f0 = project_to_frenet(line, p0)
        f5 = project_to_frenet(line, p5)
        if abs(f0.d) > 0.05 or abs(f5.d) > 0.05:
            raise CornerOffLine(f"corner {k}: P0/P5 lie {abs(f0.d):.3f}/{abs(f5.d):.3f} m off the line")
        if f5.l <= f0.l:
            raise CornerOffLine(f"corner {k}: P5 does not lie downstream of P0")
        spans.append((f0.l, f5.l, bez))
    order = sorted(range(len(spans)), key=lambda i: spans[i][0])
    spans = [spans[i] for i in order]
    for (a0, a1, _), (b0, _, _) in zip(spans, spans[1:]):
        if b0 < a1:
            raise OverlappingCorners("corner spans overlap along the reference line")

    # composite curve: alternate line pieces and Bezier pieces in output arc length
    pieces = []  # (kind, start_out, length, payload)
    cursor_in = line.s[0]
    out = 0.0
    for l0, l5, bez in spans:
        pieces.append(("line", out, l0 - cursor_in, cursor_in))
        out += l0 - cursor_in
        length = bezier_length(bez)
        pieces.append(("bezier", out, length, bez))
        out += length
        cursor_in = l5
    pieces.append(("line", out, line.s[-1] - cursor_in, cursor_in))
    total = out + line.s[-1] - cursor_in

    n = int(np.floor(total / sample_step + 1e-9))
    stations = sample_step * np.arange(n + 1)
    if total - stations[-1] > 1e-6 * sample_step:
        stations = np.append(stations, total)
    else:
        stations[-1] = total

    x = np.empty_like(stations)
    y = np.empty_like(stations)
    heading = np.empty_like(stations)
    kappa = np.empty_like(stations)
    assigned = np.zeros(len(stations), dtype=bool)
    for idx, (kind, start, length, payload) in enumerate(pieces):
        last = idx == len(pieces) - 1
        mask = (stations >= start - 1e-12) & ((stations < start + length) | last) & ~assigned
        if not np.any(mask):
            continue
        local = np.clip(stations[mask] - start, 0.0, max(length, 0.0))
        if kind == "line":
            lx, ly, lth, lk, _ = line.interpolate(payload + local)
            x[mask], y[mask], heading[mask], kappa[mask] = lx, ly, lth, lk
        else:
            bez = payload
            t = _t_at_arc(bez, local)
            pts = eval_bezier(bez, t)
            d1 = eval_bezier(bez, t, 1)
            x[mask], y[mask] = pts[:, 0], pts[:, 1]
            heading[mask] = np.arctan2(d1[:, 1], d1[:, 0])
            kappa[mask] = bezier_curvature(bez, t)
        assigned |= mask
    return ReferenceLine(x, y, heading, kappa, stations, spacing=sample_step)


@dataclass(frozen=True)
class ContinuityReport:
    """Largest jumps between consecutive samples.

    ``tangent`` is the change of the unit tangent (rad for small jumps),
    ``second_derivative`` the change of d^2r/ds^2 = kappa * normal (1/m) and
    ``curvature`` the change of signed curvature (1/m).  The ``*_rate``
    variants divide each jump by its sample spacing.
    """

    heading: float
    tangent: float
    second_derivative: float
    curvature: float
    heading_rate: float
    second_derivative_rate: float
    curvature_rate: float
    spacing: float

    def passes(self, heading: float = 0.01, curvature: float = 0.05, second_derivative: float = 0.05) -> bool:
        return (
            self.heading < heading
            and self.curvature < curvature
            and self.second_derivative < second_derivative
        )

    def rows(self):
        return [
            ("heading_jump", self.heading),
            ("tangent_jump", self.tangent),
            ("second_derivative_jump", self.second_derivative),
            ("curvature_jump", self.curvature),
            ("heading_jump_per_m", self.heading_rate),
            ("second_derivative_jump_per_m", self.second_derivative_rate),
            ("curvature_jump_per_m", self.curvature_rate),
            ("spacing", self.spacing),
        ]


def continuity_report(line: ReferenceLine) -> ContinuityReport:
    if len(line) < 3:
        raise TooFewPoints("continuity report needs at least 3 samples")
    ds = np.diff(line.s)
    th = line.heading
    dth = np.abs(np.diff(np.unwrap(th)))
    tx, ty = np.cos(th), np.sin(th)
    dtan = np.hypot(np.diff(tx), np.diff(ty))
    k = line.curvature
    sx, sy = -k * ty, k * tx
    dsec = np.hypot(np.diff(sx), np.diff(sy))
    dk = np.abs(np.diff(k))
    return ContinuityReport(
        heading=float(dth.max()),
        tangent=float(dtan.max()),
        second_derivative=float(dsec.max()),
        curvature=float(dk.max()),
        heading_rate=float((dth / ds).max()),
        second_derivative_rate=float((dsec / ds).max()),
        curvature_rate=float((dk / ds).max()),
        spacing=float(np.mean(ds)),
    )


def corner_from_xy(w1, w2, w3, distances=DEFAULT_DISTANCES) -> CornerSpec:
    d1, d2, d3 = distances
    return CornerSpec(Point2(*map(float, w1)), Point2(*map(float, w2)), Point2(*map(float, w3)), d1, d2, d3)


def max_curvature(b: QuinticBezier, n: int = 2001) -> float:
    return float(np.max(np.abs(bezier_curvature(b, np.linspace(0.0, 1.0, n)))))


__all__ = [
    "CornerSpec",
    "ContinuityReport",
    "QuinticBezier",
    "bezier_curvature",
    "bezier_length",
    "continuity_report",
    "control_points",
    "corner_from_xy",
    "eval_bezier",
    "find_corner_candidates",
    "leg_lengths",
    "max_curvature",
    "smooth_corners",
]
