import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roadplan.errors import DuplicateWaypoint, ParameterOutOfRange, StepTooLarge, TooFewPoints
from roadplan.spline import (
    eval_spline,
    fit_spline,
    natural_second_derivatives,
    resample_uniform,
    solve_tridiagonal,
)


def dense_solve(t, y):
    """Knot second derivatives from a full linear system (oracle)."""
    n = len(t)
    h = np.diff(t)
    M = np.zeros((n, n))
    rhs = np.zeros(n)
    M[0, 0] = M[-1, -1] = 1.0
    for i in range(1, n - 1):
        M[i, i - 1] = h[i - 1]
        M[i, i] = 2 * (h[i - 1] + h[i])
        M[i, i + 1] = h[i]
        rhs[i] = 6 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1])
    return np.linalg.solve(M, rhs)


def test_thomas_matches_dense():
    rng = np.random.default_rng(0)
    n = 12
    lower, upper = rng.uniform(0, 1, n), rng.uniform(0, 1, n)
    diag = 3 + rng.uniform(0, 1, n)
    rhs = rng.normal(size=n)
    A = np.diag(diag) + np.diag(lower[1:], -1) + np.diag(upper[:-1], 1)
    assert np.allclose(solve_tridiagonal(lower, diag, upper, rhs), np.linalg.solve(A, rhs), atol=1e-12)


def test_collinear_y_is_linear():
    sp = fit_spline([(0, 0), (1, 2), (2, 4), (3, 6)])
    for seg in sp.y_segments:
        assert abs(seg.c) < 1e-9 and abs(seg.d) < 1e-9
    bs = [seg.b for seg in sp.y_segments]
    assert np.ptp(bs) < 1e-9


def test_three_points_hand_solve():
    sp = fit_spline([(0, 0), (1, 1), (2, 0)])
    h = math.sqrt(2.0)
    # single interior equation: 2 (h + h) m1 = 6 ((y2 - y1)/h - (y1 - y0)/h)
    m1_y = 6 * ((0 - 1) / h - (1 - 0) / h) / (4 * h)
    m1_x = 6 * ((2 - 1) / h - (1 - 0) / h) / (4 * h)
    assert sp.sy.m[1] == pytest.approx(m1_y, abs=1e-12)
    assert sp.sx.m[1] == pytest.approx(m1_x, abs=1e-12)
    x, y = sp.eval(sp.knots)
    assert np.allclose(x, [0, 1, 2], atol=1e-12) and np.allclose(y, [0, 1, 0], atol=1e-12)


def test_second_derivatives_match_dense():
    rng = np.random.default_rng(1)
    t = np.cumsum(rng.uniform(0.5, 2.0, 20))
    y = rng.normal(size=20)
    assert np.allclose(natural_second_derivatives(t, y), dense_solve(t, y), atol=1e-10)


def test_sine_midpoints():
    xs = np.arange(0.0, 2 * math.pi + 1e-9, math.pi / 8)
    sp = fit_spline(np.column_stack((xs, np.sin(xs))))
    tm = 0.5 * (sp.knots[:-1] + sp.knots[1:])
    x, y = sp.eval(tm)
    assert np.max(np.abs(y - np.sin(x))) < 1e-3


def test_knot_continuity_and_natural_ends():
    rng = np.random.default_rng(2)
    pts = np.cumsum(rng.uniform(-1, 1, (30, 2)) + [2.0, 0.0], axis=0)
    sp = fit_spline(pts)
    k = sp.knots
    for i in range(1, len(k) - 1):
        for order in (0, 1, 2):
            left = np.array(sp.eval(k[i], order, segment=i - 1))
            right = np.array(sp.eval(k[i], order, segment=i))
            assert np.max(np.abs(left - right)) < 1e-9 * max(1.0, np.max(np.abs(left)))
    for t in (k[0], k[-1]):
        assert np.max(np.abs(sp.eval(t, 2, segment=0 if t == k[0] else len(k) - 2))) < 1e-9


def test_eval_endpoints_and_range():
    sp = fit_spline([(0, 0), (1, 1), (2, 0), (4, 1)])
    assert eval_spline(sp, 0.0) == pytest.approx((0.0, 0.0))
    with pytest.raises(ParameterOutOfRange):
        sp.eval(sp.t_max + 1.0)


def test_errors():
    with pytest.raises(TooFewPoints):
        fit_spline([(0, 0), (1, 1)])
    with pytest.raises(DuplicateWaypoint):
        fit_spline([(0, 0), (0, 0), (1, 1)])


class TestResample:
    def test_straight(self):
        sp = fit_spline([(0, 0), (5, 0), (10, 0)])
        line = resample_uniform(sp, 1.0)
        assert len(line) == 11
        assert np.allclose(line.x, np.arange(11), atol=1e-9)
        assert np.allclose(line.y, 0.0, atol=1e-9)
        assert np.allclose(line.curvature, 0.0, atol=1e-9)

    def test_collinear_stays_collinear(self):
        sp = fit_spline([(0, 0), (1, 1), (3, 3), (4, 4)])
        line = resample_uniform(sp, 0.3)
        assert np.max(np.abs(line.x - line.y)) < 1e-9

    def test_dense_uniform(self):
        pts = [(x, 0) for x in range(0, 21)] + [(20, y) for y in range(1, 21)]
        line = resample_uniform(fit_spline(pts), 0.01)
        gaps = np.diff(line.s)[:-1]
        assert np.allclose(gaps, 0.01, rtol=1e-9)

    def test_circle_gaps_by_fine_chords(self):
        phi = np.linspace(0, math.pi, 25)
        sp = fit_spline(np.column_stack((10 * np.cos(phi), 10 * np.sin(phi))))
        line = resample_uniform(sp, 0.1)
        tb, sb = sp.arc_length_table()
        t_of = np.interp(line.s, sb, tb)
        # chord-sum oracle at 1e-4 parameter resolution between consecutive samples
        for a, b in list(zip(t_of[:-2], t_of[1:-1]))[::37]:
            tt = np.arange(a, b, 1e-4)
            tt = np.append(tt, b)
            x, y = sp.eval(tt)
            gap = np.sum(np.hypot(np.diff(x), np.diff(y)))
            assert 0.099 <= gap <= 0.101

    def test_step_too_large(self):
        sp = fit_spline([(0, 0), (1, 0), (2, 0)])
        with pytest.raises(StepTooLarge):
            resample_uniform(sp, 5.0)
        with pytest.raises(StepTooLarge):
            resample_uniform(sp, 0.0)

    def test_headings_from_derivative(self):
        phi = np.linspace(0, math.pi / 2, 10)
        sp = fit_spline(np.column_stack((5 * np.cos(phi), 5 * np.sin(phi))))
        line = resample_uniform(sp, 0.05)
        chord = np.arctan2(np.diff(line.y), np.diff(line.x))
        mid = 0.5 * (line.heading[:-1] + line.heading[1:])
        assert np.max(np.abs(chord - mid)) < 0.01


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0.5, 3.0), st.floats(-2.0, 2.0)), min_size=3, max_size=25))
def test_interpolates_waypoints(steps):
    pts = np.cumsum(np.array(steps), axis=0)
    sp = fit_spline(pts)
    x, y = sp.eval(sp.knots)
    assert np.max(np.hypot(x - pts[:, 0], y - pts[:, 1])) < 1e-9


def test_fit_10k_under_a_second():
    xs = np.linspace(0, 1000, 10_000)
    pts = np.column_stack((xs, np.sin(xs / 10)))
    t0 = time.perf_counter()
    fit_spline(pts)
    assert time.perf_counter() - t0 < 1.0
