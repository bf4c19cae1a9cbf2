"""Acceptance checks, one test per criterion.

Each test logs a PASS/FAIL line (shown in the terminal summary) before
asserting, so a red criterion still reports its measured numbers.  Run the
file directly to print only the nine lines.
"""

import math
import tempfile
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from roadplan.acc import (
    AccParams,
    AccState,
    KalmanFilter,
    LqgController,
    build_model,
    kalman_predict,
    kalman_update,
    observability_matrix,
    spectral_radius,
)
from roadplan.bezier import bezier_curvature, continuity_report, control_points
from roadplan.errors import NoFeasibleTrajectory
from roadplan.geometry import FrenetState, ReferenceLine
from roadplan.lateral_planner import (
    CostWeights,
    FootprintCircles,
    Obstacle,
    ObstacleSet,
    SamplingGrid,
    check_collision,
    generate_candidates,
    plan,
    quintic_coefficients,
)
from roadplan.scenario import load_shipped
from roadplan.sim import build_reference, metrics, plan_cycle, run
from roadplan.spline import fit_spline
from roadplan.stanley import StanleySchedule, TrackingError, lookup_ke, lookup_Lx, steer

# ---------------------------------------------------------------- oracles


def median_ms(fn, repeats=7):
    fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return 1000 * float(np.median(times))


def scaled_quintic_solve(d0, d0_dot, d0_ddot, de, de_dot, de_ddot, L):
    """General 6x6 solve in the unit abscissa u = xi / L, mapped back to xi."""
    rows = []
    for u in (0.0, 1.0):
        rows.append([u**k for k in range(6)])
        rows.append([k * u ** (k - 1) if k >= 1 else 0.0 for k in range(6)])
        rows.append([k * (k - 1) * u ** (k - 2) if k >= 2 else 0.0 for k in range(6)])
    rows = [rows[0], rows[1], rows[2], rows[3], rows[4], rows[5]]
    rhs = [d0, d0_dot * L, d0_ddot * L**2, de, de_dot * L, de_ddot * L**2]
    beta = np.linalg.solve(np.array(rows), np.array(rhs))
    return beta / L ** np.arange(6), beta


def eager_plan(c0, grid, weights, obstacles, footprint, ref, speed):
    cands = generate_candidates(c0, grid, weights, ref, speed=speed)
    obstacles.build_index()
    best, best_cost = None, math.inf
    for i, c in enumerate(cands):
        if c is not None and check_collision(c, obstacles, footprint).feasible and c.cost < best_cost:
            best, best_cost = i, c.cost
    return best, cands


def arc(radius, length=80.0, step=0.1):
    s = np.arange(0.0, length + step / 2, step)
    phi = s / radius
    return ReferenceLine(radius * np.sin(phi), radius * (1 - np.cos(phi)), phi, np.full_like(s, 1 / radius), s)


# ------------------------------------------------------------- criteria


def criterion_1():
    rng = np.random.default_rng(1)
    interp = jump = ends = 0.0
    for _ in range(20):
        pts = np.cumsum(rng.uniform([0.5, -3.0], [5.0, 3.0], (int(rng.integers(3, 300)), 2)), axis=0)
        sp = fit_spline(pts)
        x, y = sp.eval(sp.knots)
        interp = max(interp, float(np.max(np.hypot(x - pts[:, 0], y - pts[:, 1]))))
        k = sp.knots
        for i in range(1, len(k) - 1):
            for order in (0, 1, 2):
                left = np.array(sp.eval(k[i], order, segment=i - 1))
                right = np.array(sp.eval(k[i], order, segment=i))
                jump = max(jump, float(np.max(np.abs(left - right))))
        ends = max(ends, float(np.max(np.abs(sp.eval(k[0], 2, segment=0)))))
        ends = max(ends, float(np.max(np.abs(sp.eval(k[-1], 2, segment=len(k) - 2)))))
    xs = np.linspace(0, 10_000, 10_000)
    big = np.column_stack((xs, 50 * np.sin(xs / 100)))
    t0 = time.perf_counter()
    fit_spline(big)
    secs = time.perf_counter() - t0
    ok = interp < 1e-9 and jump < 1e-9 and ends < 1e-9 and secs < 1.0
    return ok, f"interp {interp:.1e} m, knot jump {jump:.1e}, natural ends {ends:.1e}, 1e4 fit {secs:.3f} s"


def criterion_2():
    sc = load_shipped("fig4_corner")
    line = build_reference(sc)
    rep = continuity_report(line)
    b = control_points(sc.corners[0])
    end_k = float(np.max(np.abs(bezier_curvature(b, [0.0, 1.0]))))
    ok = rep.heading < 0.01 and rep.curvature < 0.05 and end_k < 1e-9 and sc.sim.reference_step == 0.01
    return ok, f"max heading jump {rep.heading:.2e} rad, max curvature jump {rep.curvature:.2e} 1/m, end curvature {end_k:.1e}"


def criterion_3():
    rng = np.random.default_rng(3)
    n = 10_000
    b = np.column_stack(
        (rng.uniform(-5, 5, n), rng.uniform(-1, 1, n), rng.uniform(-0.2, 0.2, n),
         rng.uniform(-5, 5, n), rng.uniform(-1, 1, n), rng.uniform(-0.2, 0.2, n))
    )
    L = rng.uniform(5.0, 50.0, n)
    alpha = quintic_coefficients(*b.T, L)
    resid = 0.0
    for order, cols in ((0, (0, 3)), (1, (1, 4)), (2, (2, 5))):
        k = np.arange(6)
        fac = np.array([math.perm(int(j), order) for j in k], dtype=float)
        start = alpha[:, order] * math.factorial(order)
        pw = np.clip(k - order, 0, None)
        end = np.sum(alpha * fac * L[:, None] ** pw, axis=1)
        resid = max(resid, float(np.max(np.abs(start - b[:, cols[0]]))), float(np.max(np.abs(end - b[:, cols[1]]))))
    rel = 0.0
    for i in range(n):
        _, beta = scaled_quintic_solve(*b[i], L[i])
        # coefficient error scaled to the well-conditioned unit-abscissa form
        mine = alpha[i] * L[i] ** np.arange(6)
        rel = max(rel, float(np.max(np.abs(mine[3:] - beta[3:])) / max(np.max(np.abs(beta)), 1e-300)))
    ok = resid < 1e-9 and rel < 1e-9
    return ok, f"max boundary residual {resid:.1e}, alpha3..5 vs general solve {rel:.1e} relative"


def criterion_4():
    sc = load_shipped("fig9_plan")
    grid = sc.planner.grid
    count = len(grid.d_values) * len(grid.l_values)
    line = build_reference(sc)
    c0, res = plan_cycle(sc, line)
    npts = sum(len(o.build().points) for o in sc.obstacles)
    big_grid = SamplingGrid(-4.0, 4.0, 0.08, 15.0, 30.0, 0.15)
    big = replace(sc, planner=replace(sc.planner, grid=big_grid))
    wall = replace(sc.obstacles[0], center=(22.0, 0.5), velocity=(0.0, 0.0))
    blocking = replace(big, obstacles=(wall,))
    cases = [("fig9 grid", sc), ("1e4 grid", big), ("1e4 grid, blocked lane", blocking)]
    parts, ok = [], count == 1596 and len(res.costs) == 1596
    for label, case in cases:
        _, r = plan_cycle(case, line)
        ms = median_ms(lambda case=case: plan_cycle(case, line))
        ok = ok and ms < 100.0
        parts.append(f"{label} {len(r.costs)} cand/{r.checked_count} checked {ms:.0f} ms")
    return ok, f"{count} candidates, {npts} obstacle points; " + "; ".join(parts)


def criterion_5():
    rng = np.random.default_rng(2024)
    foot = FootprintCircles.for_vehicle(4.5, 1.8, -1.4)
    same = 0
    for _ in range(100):
        ref = arc(radius=float(rng.choice([40.0, 80.0, 1e6])))
        grid = SamplingGrid(float(rng.uniform(-3, -1)), float(rng.uniform(0, 3)), 0.25, 10.0, 30.0, 2.0)
        pts = rng.uniform([5, -4], [40, 4], (int(rng.integers(1, 21)), 2))
        xr, yr, th, _, _ = ref.interpolate(pts[:, 0])
        world = np.column_stack((xr - pts[:, 1] * np.sin(th), yr + pts[:, 1] * np.cos(th)))
        obs = ObstacleSet([Obstacle(world, rng.uniform(-2, 4, 2) * rng.integers(0, 2))])
        c0 = FrenetState(0.0, float(rng.uniform(-1, 1)), float(rng.uniform(-0.05, 0.05)), 0.0)
        best, cands = eager_plan(c0, grid, CostWeights(), obs, foot, ref, 8.0)
        try:
            got = plan(c0, grid, CostWeights(), obs, foot, ref, speed=8.0)
            match = got.selected == best and np.array_equal(got.trajectory.samples.d, cands[best].samples.d)
        except NoFeasibleTrajectory:
            match = best is None
        same += bool(match)
    pts = rng.uniform(-50, 50, (100, 2))
    obs = ObstacleSet([Obstacle(pts)]).build_index()
    q = rng.uniform(-60, 60, (1000, 2))
    brute = np.min(np.hypot(*(q[:, None, :] - pts[None]).transpose(2, 0, 1)), axis=1)
    kd = float(np.max(np.abs(obs.nearest_distance(q) - brute)))
    ok = same == 100 and kd < 1e-12
    return ok, f"lazy = eager on {same}/100 instances, KD-tree vs brute force {kd:.1e} m"


def criterion_6():
    p = AccParams()
    m = build_model(p)
    rank = int(np.linalg.matrix_rank(observability_matrix(m.Ad, m.C)))
    ctrl = LqgController(p)
    rho = spectral_radius(m.Ad - m.Bd @ ctrl.K)
    x = np.array([10.0, -5.0, 0.0])
    u_peak = 0.0
    within_bound = True
    for _ in range(int(round(60 / p.T))):
        u = ctrl.command(AccState.from_array(x))
        within_bound = within_bound and abs(u) <= 0.25 * 9.81
        u_peak = max(u_peak, abs(u))
        x = m.Ad @ x + m.Bd.ravel() * u
    final = float(np.max(np.abs(x)))
    kf = KalmanFilter(np.zeros(3), 10 * np.eye(3))
    rng = np.random.default_rng(6)
    monotone = True
    for _ in range(4000):
        prior = kalman_predict(kf, m, 0.0)
        kf = kalman_update(prior, m, rng.normal(size=3))
        monotone = monotone and np.trace(kf.covariance) <= np.trace(prior.covariance) + 1e-15
    P = np.eye(3)
    for _ in range(20_000):
        P = m.Ad @ (P - P @ np.linalg.solve(P + kf.R_meas, P)) @ m.Ad.T + kf.Q_proc
    cov_err = float(np.max(np.abs(kalman_predict(kf, m, 0.0).covariance - P)))
    ok = rank == 3 and rho < 1 and final < 1e-3 and within_bound and monotone and cov_err < 1e-6
    return ok, (
        f"rank {rank}, spectral radius {rho:.6f}, |x(60 s)| {final:.1e}, peak |u| {u_peak:.4f}, "
        f"trace non-increasing {monotone}, covariance vs oracle {cov_err:.1e}"
    )


def criterion_7():
    speeds = [0.0, 5.0, 12.5, 20.0, 25.0, 30.0]
    Lx = [lookup_Lx(v) for v in speeds]
    ke = [lookup_ke(v) for v in speeds]
    d0 = steer(TrackingError(1.0, 0.0), 0.0, StanleySchedule())
    ok = (
        np.allclose(Lx, [10, 10, 10, 16, 20, 20], atol=1e-12)
        and np.allclose(ke, [0.5, 0.6, 0.75, 0.9, 1.0, 1.0], atol=1e-12)
        and math.isfinite(d0)
    )
    return ok, f"L_x {[round(v, 6) for v in Lx]}, k_e {[round(v, 6) for v in ke]}, delta(v=0) {d0:.5f}"


def criterion_8():
    parts, ok = [], True
    sc = load_shipped("straight_offset")
    t0 = time.perf_counter()
    tr = run(sc)
    secs = time.perf_counter() - t0
    t, e = tr.column("t"), tr.column("e_fa")
    sign = math.copysign(1.0, e[0])
    overshoot = max(0.0, float(np.max(-sign * e)))
    late = float(np.max(np.abs(e[t >= 10.0 - 1e-9])))
    above = np.flatnonzero(np.abs(e) >= 0.05)
    settle = float(t[above[-1] + 1]) if len(above) and above[-1] + 1 < len(t) else math.inf
    good = late < 0.05 and overshoot < 0.5 and secs < 10
    ok = ok and good
    parts.append(f"straight 2 m: max|e_fa| after 10 s {late:.3f} m, settles at {settle:.1f} s, overshoot {overshoot:.3f} m, {secs:.1f} s")
    for name in ("fig14_right_turn", "fig14_zigzag"):
        sc = load_shipped(name)
        t0 = time.perf_counter()
        tr = run(sc)
        secs = time.perf_counter() - t0
        m = metrics(tr, sc.vehicle.wheelbase)
        good = m.max_e_fa < 0.3 and m.estop_ticks == 0 and secs < 10
        ok = ok and good
        parts.append(f"{name}: max|e_fa| {m.max_e_fa:.3f} m, estops {m.estop_ticks}, {secs:.1f} s")
    return ok, "; ".join(parts)


def criterion_9():
    sc = load_shipped("fig8_overtake")
    a, b = run(sc), run(sc)
    m = metrics(a, sc.vehicle.wheelbase)
    offset = -a.column("e_ref")
    identical = trace_bytes(a) == trace_bytes(b)
    ok = (
        m.min_clearance > 0
        and abs(offset[0]) < 0.1
        and 2.0 <= m.peak_offset <= 4.0
        and abs(m.final_offset) < 0.1
        and identical
    )
    return ok, (
        f"min clearance {m.min_clearance:.3f} m, offset {offset[0]:.3f} -> peak {m.peak_offset:.3f} -> "
        f"{m.final_offset:.3f} m, byte-identical reruns {identical}"
    )


def trace_bytes(trace) -> bytes:
    with tempfile.TemporaryDirectory() as tmp:
        trace.write_csv(Path(tmp) / "t.csv", Path(tmp) / "r.csv")
        return (Path(tmp) / "t.csv").read_bytes() + (Path(tmp) / "r.csv").read_bytes()


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7, criterion_8, criterion_9]


@pytest.mark.parametrize("number", range(1, 10))
def test_criterion(number, acceptance_log):
    passed, detail = CRITERIA[number - 1]()
    acceptance_log(number, passed, detail)
    assert passed, detail


if __name__ == "__main__":
    for i, check in enumerate(CRITERIA, 1):
        passed, detail = check()
        print(f"criterion {i}: {'PASS' if passed else 'FAIL'}  {detail}", flush=True)
