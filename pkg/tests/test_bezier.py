import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import Delaunay

from roadplan.bezier import (
    CornerSpec,
    QuinticBezier,
    bezier_curvature,
    continuity_report,
    control_points,
    corner_from_xy,
    eval_bezier,
    find_corner_candidates,
    leg_lengths,
    smooth_corners,
)
from roadplan.errors import (
    CornerOffLine,
    DegenerateLeg,
    DistanceExceedsLeg,
    OverlappingCorners,
    ParameterOutOfRange,
    TooFewPoints,
)
from roadplan.geometry import Point2, ReferenceLine
from roadplan.spline import fit_spline, resample_uniform


def de_casteljau(points, t):
    pts = np.asarray(points, dtype=float)
    while len(pts) > 1:
        pts = (1 - t) * pts[:-1] + t * pts[1:]
    return pts[0]


def fig4_line(step=0.01):
    pts = [(x, 0) for x in range(0, 21)] + [(20, y) for y in range(1, 21)]
    return resample_uniform(fit_spline(pts), step)


def test_leg_lengths():
    assert leg_lengths(corner_from_xy((0, 0), (3, 4), (3, 9), (1, 1, 2))) == pytest.approx((5.0, 5.0))
    with pytest.raises(DegenerateLeg):
        leg_lengths(corner_from_xy((1, 1), (1, 1), (3, 9)))


def test_leg_lengths_random():
    rng = np.random.default_rng(0)
    for _ in range(50):
        w = rng.uniform(-50, 50, (3, 2))
        m1, m2 = leg_lengths(corner_from_xy(*w, (0, 0, 0)))
        assert m1 == pytest.approx(np.linalg.norm(w[1] - w[0]))
        assert m2 == pytest.approx(np.linalg.norm(w[2] - w[1]))


def test_right_angle_control_points():
    b = control_points(corner_from_xy((0, 0), (10, 0), (10, 10), (3, 3, 8)))
    expected = [(2, 0), (7, 0), (7, 0), (10, 3), (10, 3), (10, 8)]
    assert np.allclose(b.array, expected, atol=1e-12)


def test_zero_distances_collapse():
    b = control_points(corner_from_xy((0, 0), (10, 0), (10, 10), (0, 0, 0)))
    assert np.allclose(b.array, [(10, 0)] * 6)


def test_distance_exceeds_leg():
    with pytest.raises(DistanceExceedsLeg):
        control_points(corner_from_xy((0, 0), (5, 0), (5, 20), (3, 3, 8)))


def test_collinear_corner_is_straight():
    b = control_points(corner_from_xy((0, 0), (10, 0), (20, 0)))
    pts = eval_bezier(b, np.linspace(0, 1, 101))
    assert np.allclose(pts[:, 1], 0.0)


class TestEval:
    b = QuinticBezier(tuple(Point2(*p) for p in [(0, 0), (1, 2), (3, 3), (4, 1), (6, 0), (7, 2)]))

    def test_endpoints(self):
        assert tuple(eval_bezier(self.b, 0.0)) == (0.0, 0.0)
        assert tuple(eval_bezier(self.b, 1.0)) == pytest.approx((7.0, 2.0))

    def test_de_casteljau(self):
        for t in (0.1, 0.5, 0.77):
            assert tuple(eval_bezier(self.b, t)) == pytest.approx(tuple(de_casteljau(self.b.array, t)), abs=1e-12)

    def test_derivative_by_differences(self):
        h = 1e-6
        for order in (1, 2, 3):
            t = 0.4
            f = lambda u: np.asarray(eval_bezier(self.b, np.array([u]), order - 1))[0]
            fd = (f(t + h) - f(t - h)) / (2 * h)
            assert np.allclose(eval_bezier(self.b, np.array([t]), order)[0], fd, rtol=1e-5, atol=1e-5)

    def test_constant_curve(self):
        b = QuinticBezier((Point2(1, 1),) * 6)
        for order in (1, 2, 3):
            assert np.allclose(eval_bezier(b, np.linspace(0, 1, 5), order), 0.0)

    def test_range(self):
        with pytest.raises(ParameterOutOfRange):
            eval_bezier(self.b, 1.5)

    def test_needs_six_points(self):
        with pytest.raises(ValueError):
            QuinticBezier((Point2(0, 0),) * 5)


@settings(max_examples=50, deadline=None)
@given(
    w=st.lists(st.tuples(st.floats(-100, 100), st.floats(-100, 100)), min_size=3, max_size=3),
    d=st.tuples(st.floats(0.5, 2.0), st.floats(0.0, 2.0), st.floats(0.0, 4.0)),
)
def test_tangency_zero_end_curvature_and_hull(w, d):
    w = np.array(w)
    m1, m2 = np.linalg.norm(w[1] - w[0]), np.linalg.norm(w[2] - w[1])
    d1, d2, d3 = d[0], d[0] + d[1], d[0] + d[1] + d[2]
    if min(m1, m2) <= d3 + 1.0:
        return
    u1, u2 = (w[1] - w[0]) / m1, (w[2] - w[1]) / m2
    if abs(u1[0] * u2[1] - u1[1] * u2[0]) < 0.05:
        return  # near-collinear legs make the hull degenerate
    b = control_points(corner_from_xy(w[0], w[1], w[2], (d1, d2, d3)))
    t0 = eval_bezier(b, np.array([0.0]), 1)[0]
    t1 = eval_bezier(b, np.array([1.0]), 1)[0]
    assert abs(math.atan2(u1[0] * t0[1] - u1[1] * t0[0], u1 @ t0)) < 1e-9
    assert abs(math.atan2(u2[0] * t1[1] - u2[1] * t1[0], u2 @ t1)) < 1e-9
    assert np.all(np.abs(bezier_curvature(b, [0.0, 1.0])) < 1e-9)
    hull = Delaunay(np.unique(np.round(b.array, 12), axis=0))
    pts = eval_bezier(b, np.linspace(0, 1, 200))
    assert np.all(hull.find_simplex(pts, tol=1e-9) >= 0)


def test_mirror_symmetry():
    # corner symmetric about the bisector x = y mirrored to itself
    b = control_points(corner_from_xy((0, 20), (0, 0), (20, 0)))
    m = control_points(corner_from_xy((20, 0), (0, 0), (0, 20)))
    t = np.linspace(0, 1, 51)
    assert np.allclose(eval_bezier(b, t)[:, ::-1], eval_bezier(m, t), atol=1e-12)


class TestSmoothCorners:
    def test_empty_is_identity(self):
        line = fig4_line(0.1)
        assert smooth_corners(line, [], 0.1) is line

    def test_fig4_continuity(self):
        line = smooth_corners(fig4_line(), [corner_from_xy((0, 0), (20, 0), (20, 20))], 0.01)
        rep = continuity_report(line)
        assert rep.heading < 0.01
        assert rep.curvature < 0.05
        assert rep.second_derivative < 0.05
        assert rep.passes()
        assert np.allclose(np.diff(line.s)[:-1], 0.01, rtol=1e-9)

    def test_splice_is_position_continuous(self):
        line = smooth_corners(fig4_line(), [corner_from_xy((0, 0), (20, 0), (20, 20))], 0.01)
        jumps = np.hypot(np.diff(line.x), np.diff(line.y))
        assert np.max(np.abs(jumps[:-1] - 0.01)) < 1e-6

    def test_collinear_corner_keeps_line(self):
        xs = np.arange(0, 40.01, 0.1)
        line = ReferenceLine(xs, 0 * xs, 0 * xs, 0 * xs)
        out = smooth_corners(line, [corner_from_xy((0, 0), (20, 0), (40, 0))], 0.1)
        assert np.max(np.abs(out.y)) < 1e-6
        assert np.allclose(out.x, line.x, atol=1e-6)

    def test_off_line(self):
        with pytest.raises(CornerOffLine):
            smooth_corners(fig4_line(0.1), [corner_from_xy((0, 5), (20, 5), (20, 25))], 0.1)

    def test_overlap(self):
        pts = [(x, 0) for x in range(0, 31)]
        line = resample_uniform(fit_spline(pts), 0.1)
        c1 = CornerSpec(Point2(0, 0), Point2(15, 0), Point2(30, 0))
        c2 = CornerSpec(Point2(0, 0), Point2(18, 0), Point2(30, 0))
        with pytest.raises(OverlappingCorners):
            smooth_corners(line, [c1, c2], 0.1)


class TestContinuityReport:
    def test_straight(self):
        xs = np.arange(0, 10.01, 0.1)
        rep = continuity_report(ReferenceLine(xs, 0 * xs, 0 * xs, 0 * xs))
        assert rep.heading == 0 and rep.curvature == 0 and rep.second_derivative == 0

    def test_unsmoothed_corner_detected(self):
        pts = [(x * 0.01, 0.0) for x in range(2001)] + [(20.0, y * 0.01) for y in range(1, 2001)]
        rep = continuity_report(ReferenceLine.from_xy(pts))
        assert not rep.passes()
        assert rep.curvature > 10.0

    def test_too_few(self):
        with pytest.raises(TooFewPoints):
            continuity_report(ReferenceLine([0, 1], [0, 0], [0, 0], [0, 0]))

    def test_rows(self):
        xs = np.arange(0, 1.01, 0.1)
        names = [n for n, _ in continuity_report(ReferenceLine(xs, 0 * xs, 0 * xs, 0 * xs)).rows()]
        assert {"heading_jump", "curvature_jump", "second_derivative_jump"} <= set(names)


def test_corner_candidates():
    line = ReferenceLine.from_xy([(x, 0.0) for x in range(10)] + [(9.0, y) for y in range(1, 10)])
    idx = find_corner_candidates(line)
    assert 9 in idx and len(idx) <= 3
