"""Closed-loop simulation: planner, ACC and steering around a bicycle plant.

Each run builds the reference line (spline fit, uniform resampling, corner
smoothing), then steps a kinematic bicycle with first-order acceleration lag.
Every ``replan_period`` the lateral planner runs from the front axle's Frenet
state; every tick the ACC and steering laws act on the latest plan.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .acc import DEFAULT_Q_PROC, DEFAULT_R_MEAS, AccParams, AccState, LqgController, desired_distance
from .bezier import CornerSpec, smooth_corners
from .errors import EmptyTrace, InvalidStep, NoFeasibleTrajectory
from .geometry import FrenetState, ReferenceLine, project_to_frenet, wrap_angle
from .lateral_planner import (
    CandidateTrajectory,
    CostWeights,
    FootprintCircles,
    Obstacle,
    ObstacleSet,
    SamplingGrid,
    plan,
)
from .spline import fit_spline, resample_uniform
from .stanley import StanleySchedule, compute_errors, front_axle, steer

RESYNC_DISTANCE = 0.5  # m, tracking error beyond which planning restarts from the measured state
MIN_PLANNING_SPEED = 1.0  # m/s, floor for the constant-speed candidate profile
CSV_FORMAT = "%.9g"


@dataclass(frozen=True)
class VehicleState:
    x: float  # rear axle
    y: float
    heading: float
    v: float
    a: float = 0.0

    def __post_init__(self):
        if self.v < 0:
            raise ValueError("speed must be non-negative")
        object.__setattr__(self, "heading", wrap_angle(self.heading))


def bicycle_step(
    s: VehicleState,
    delta: float,
    a_cmd: float,
    dt: float,
    wheelbase: float,
    T_L: float,
    K_L: float = 1.0,
) -> VehicleState:
    """One Euler step of the kinematic bicycle after an exact lag update of ``a``."""
    if not (0.0 < dt <= 0.1):
        raise InvalidStep(f"dt must be in (0, 0.1], got {dt}")
    if not abs(delta) <= math.pi / 2 - 1e-6:
        raise InvalidStep(f"steering angle {delta} too close to +-pi/2")
    target = K_L * a_cmd
    a = target + (s.a - target) * math.exp(-dt / T_L)
    x = s.x + s.v * math.cos(s.heading) * dt
    y = s.y + s.v * math.sin(s.heading) * dt
    heading = s.heading + s.v / wheelbase * math.tan(delta) * dt
    v = max(0.0, s.v + a * dt)
    return VehicleState(x, y, heading, v, a)


# --------------------------------------------------------------------------
# scenario


@dataclass(frozen=True)
class ObstacleSpec:
    """Rectangular obstacle moving at constant velocity."""

    center: tuple[float, float]
    length: float = 4.5
    width: float = 1.8
    heading: float = 0.0
    velocity: tuple[float, float] = (0.0, 0.0)
    spacing: float = 0.5
    name: str = ""

    def build(self) -> Obstacle:
        return Obstacle.rectangle(
            self.center, self.length, self.width, self.heading, self.velocity, self.spacing, self.name
        )


@dataclass(frozen=True)
class VehicleConfig:
    wheelbase: float = 2.8
    length: float = 4.5
    width: float = 1.8
    # initial rear-axle pose relative to the reference line
    s0: float = 0.0
    d0: float = 0.0
    heading_offset: float = 0.0
    v0: float = 10.0


@dataclass(frozen=True)
class PlannerConfig:
    enabled: bool = True
    grid: SamplingGrid = field(default_factory=lambda: SamplingGrid(-1.0, 1.0, 0.1, 15.0, 30.0, 0.5))
    weights: CostWeights = field(default_factory=CostWeights)
    safety_margin: float = 0.3
    circles: int = 3
    sample_step: float = 0.5
    horizon: float = 4.0


@dataclass(frozen=True)
class AccConfig:
    params: AccParams = field(default_factory=AccParams)
    cruise_speed: float = 10.0
    Q_proc: np.ndarray = field(default_factory=lambda: DEFAULT_Q_PROC.copy())
    R_meas: np.ndarray = field(default_factory=lambda: DEFAULT_R_MEAS.copy())
    noise: bool = True
    detection_range: float = 200.0
    corridor_margin: float = 0.3


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.02
    replan_period: float = 0.1
    duration: float = 20.0
    reference_step: float = 0.1
    e_fa_threshold: float = 0.3


@dataclass
class Scenario:
    waypoints: np.ndarray
    corners: Sequence[CornerSpec] = ()
    obstacles: Sequence[ObstacleSpec] = ()
    vehicle: VehicleConfig = field(default_factory=VehicleConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    acc: AccConfig = field(default_factory=AccConfig)
    stanley: StanleySchedule = field(default_factory=StanleySchedule)
    sim: SimConfig = field(default_factory=SimConfig)
    rng_seed: int = 0
    name: str = ""

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=float).reshape(-1, 2)
        t = self.sim
        if not t.dt > 0:
            raise ValueError("dt must be positive")
        if not t.replan_period >= t.dt:
            raise ValueError("replan_period must be at least dt")
        if not t.duration > 0:
            raise ValueError("duration must be positive")

    def footprint(self) -> FootprintCircles:
        v = self.vehicle
        return FootprintCircles.for_vehicle(
            v.length, v.width, -v.wheelbase / 2.0, self.planner.safety_margin, self.planner.circles
        )

    def obstacle_set(self) -> ObstacleSet:
        return ObstacleSet([o.build() for o in self.obstacles])


def build_reference(scenario: Scenario) -> ReferenceLine:
    step = scenario.sim.reference_step
    line = resample_uniform(fit_spline(scenario.waypoints), step)
    return smooth_corners(line, scenario.corners, step)


# --------------------------------------------------------------------------
# trace

TICK_COLUMNS = (
    "t", "x", "y", "heading", "v", "a", "delta", "u",
    "e_fa", "theta_e", "e_ref", "station", "d_error", "v_rel",
    "xhat_d_error", "xhat_v_rel", "xhat_a_f", "lead_gap", "min_clearance",
    "selected", "estop",
)
REPLAN_COLUMNS = (
    "t", "l0", "d0", "d0_dot", "d0_ddot", "candidates", "checked", "selected",
    "l_e", "d_e", "cost", "clearance", "feasible",
)


@dataclass
class Trace:
    dt: float
    ticks: list = field(default_factory=list)
    replans: list = field(default_factory=list)
    events: list = field(default_factory=list)
    paths: list = field(default_factory=list)  # (t, x, y) of every selected trajectory
    reference: Optional[ReferenceLine] = None

    def __len__(self):
        return len(self.ticks)

    def column(self, name: str) -> np.ndarray:
        j = TICK_COLUMNS.index(name)
        return np.array([row[j] for row in self.ticks], dtype=float)

    def replan_column(self, name: str) -> np.ndarray:
        j = REPLAN_COLUMNS.index(name)
        return np.array([row[j] for row in self.replans], dtype=float)

    def write_csv(self, path, replans_path=None):
        _write_rows(path, TICK_COLUMNS, self.ticks)
        if replans_path is not None:
            _write_rows(replans_path, REPLAN_COLUMNS, self.replans)


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return CSV_FORMAT % float(v)


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])


# --------------------------------------------------------------------------
# loop


def trajectory_line(traj: CandidateTrajectory) -> ReferenceLine:
    """Planned trajectory plus its held-offset tail as a trackable line."""
    parts = [traj.samples] + ([traj.tail] if traj.tail is not None else [])
    x = np.concatenate([p.x for p in parts])
    y = np.concatenate([p.y for p in parts])
    h = np.concatenate([p.heading for p in parts])
    k = np.concatenate([p.curvature for p in parts])
    return ReferenceLine(x, y, h, k)


def _initial_state(scenario: Scenario, line: ReferenceLine) -> VehicleState:
    v = scenario.vehicle
    x, y, theta, _, _ = line.interpolate(v.s0)
    x = float(x) - v.d0 * math.sin(theta)
    y = float(y) + v.d0 * math.cos(theta)
    return VehicleState(x, y, float(theta) + v.heading_offset, v.v0, 0.0)


def _initial_slope(line: ReferenceLine, f: FrenetState, heading: float) -> float:
    _, _, theta, kappa, _ = line.interpolate(f.l)
    return math.tan(wrap_angle(heading - float(theta))) * (1.0 - float(kappa) * f.d)


def _start_state(line: ReferenceLine, f: FrenetState, heading: float, path) -> FrenetState:
    """Planning start: the previous plan at the current station while the
    vehicle stays within ``RESYNC_DISTANCE`` of it, else the measured state."""
    if path is not None:
        d_plan = _planned_offset(path, f.l)
        if abs(d_plan - f.d) <= RESYNC_DISTANCE:
            if f.l <= path.poly.le:
                return FrenetState(f.l, d_plan, float(path.poly(f.l, 1)), float(path.poly(f.l, 2)))
            return FrenetState(f.l, d_plan, 0.0, 0.0)
    return FrenetState(f.l, f.d, _initial_slope(line, f, heading), 0.0)


@dataclass(frozen=True)
class _Lead:
    gap: float
    speed: float


def _find_lead(
    scenario: Scenario,
    line: ReferenceLine,
    obstacles: list[Obstacle],
    ego_front: float,
    path: Optional[CandidateTrajectory],
    t: float,
) -> Optional[_Lead]:
    """Nearest obstacle ahead whose lateral extent meets the ego corridor.

    The corridor follows the planned offset at the obstacle's station, so an
    obstacle being overtaken drops out once the plan moves clear of it.
    """
    half = scenario.vehicle.width / 2.0 + scenario.acc.corridor_margin
    best = None
    for ob in obstacles:
        pts = ob.points + ob.velocity * t
        c = pts.mean(axis=0)
        try:
            f = project_to_frenet(line, c, horizon=math.inf)
        except Exception:
            continue
        _, _, theta, _, _ = line.interpolate(f.l)
        tau = np.array([math.cos(theta), math.sin(theta)])
        nrm = np.array([-tau[1], tau[0]])
        along = (pts - c) @ tau
        across = (pts - c) @ nrm
        s_lo = f.l + along.min()
        if s_lo + np.ptp(along) < ego_front or s_lo - ego_front > scenario.acc.detection_range:
            continue
        d_plan = _planned_offset(path, f.l)
        if f.d + across.max() < d_plan - half or f.d + across.min() > d_plan + half:
            continue
        gap = max(s_lo - ego_front, 0.0)
        if best is None or gap < best.gap:
            best = _Lead(gap, float(ob.velocity @ tau))
    return best


def _planned_offset(path: Optional[CandidateTrajectory], l: float) -> float:
    if path is None:
        return 0.0
    smp = path.samples
    if l <= smp.l[-1] or path.tail is None:
        return float(np.interp(l, smp.l, smp.d))
    return float(path.tail.d[0])


def _clearance(footprint: FootprintCircles, state: VehicleState, wheelbase: float, obstacles, t: float) -> float:
    if not obstacles:
        return math.inf
    fx, fy = front_axle(state.x, state.y, state.heading, wheelbase)
    cx, cy = footprint.centers(np.array([fx]), np.array([fy]), np.array([state.heading]))
    centers = np.column_stack((cx.ravel(), cy.ravel()))
    pts = np.concatenate([o.points + o.velocity * t for o in obstacles])
    dist = np.sqrt(((centers[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)).min(axis=1)
    return float(np.min(dist - np.asarray(footprint.radii)))


def plan_cycle(scenario: Scenario, line: Optional[ReferenceLine] = None):
    """One planning cycle from the initial vehicle state at t = 0.

    Returns ``(c0, PlanResult)``.

    Raises:
        NoFeasibleTrajectory: every candidate collides; ``.result`` holds the
            partial plan result.
    """
    line = build_reference(scenario) if line is None else line
    veh = scenario.vehicle
    state = _initial_state(scenario, line)
    fx, fy = front_axle(state.x, state.y, state.heading, veh.wheelbase)
    f = project_to_frenet(line, (fx, fy), horizon=math.inf)
    c0 = _start_state(line, f, state.heading, None)
    p = scenario.planner
    res = plan(
        c0, p.grid, p.weights, scenario.obstacle_set(), scenario.footprint(), line,
        speed=max(state.v, MIN_PLANNING_SPEED), sample_step=p.sample_step, horizon=p.horizon,
    )
    return c0, res


def run(scenario: Scenario) -> Trace:
    """Simulate ``scenario`` to its duration or the end of the route."""
    cfg = scenario.sim
    veh = scenario.vehicle
    line = build_reference(scenario)
    footprint = scenario.footprint()
    obstacles = [o.build() for o in scenario.obstacles]
    params = replace(scenario.acc.params, T=cfg.dt)
    ctrl = LqgController(params, scenario.acc.Q_proc, scenario.acc.R_meas)
    noise_chol = np.linalg.cholesky(ctrl.R_meas) if scenario.acc.noise else None
    rng = np.random.default_rng(scenario.rng_seed)

    trace = Trace(cfg.dt, reference=line)
    state = _initial_state(scenario, line)
    n_steps = int(round(cfg.duration / cfg.dt))
    replan_every = max(1, int(round(cfg.replan_period / cfg.dt)))
    front_extent = veh.length / 2.0 - veh.wheelbase / 2.0  # front axle to bumper

    path: Optional[CandidateTrajectory] = None
    track = line
    selected = -1
    estop = False
    delta = 0.0
    grid = scenario.planner.grid
    for k in range(n_steps + 1):
        t = k * cfg.dt
        fx, fy = front_axle(state.x, state.y, state.heading, veh.wheelbase)
        f = project_to_frenet(line, (fx, fy), horizon=math.inf)
        if f.l + veh.length >= line.s[-1]:
            trace.events.append((t, "end_of_route"))
            break

        if scenario.planner.enabled and k % replan_every == 0:
            if f.l + grid.l_min > line.s[-1]:
                trace.events.append((t, "end_of_route"))
                break
            c0 = _start_state(line, f, state.heading, path)
            obs_now = ObstacleSet([o.at(t) for o in obstacles])
            speed = max(state.v, MIN_PLANNING_SPEED)
            try:
                res = plan(
                    c0, grid, scenario.planner.weights, obs_now, footprint, line, path,
                    speed=speed, sample_step=scenario.planner.sample_step, horizon=scenario.planner.horizon,
                )
            except NoFeasibleTrajectory as exc:
                estop = True
                selected = -1
                r = exc.result
                trace.events.append((t, "no_feasible_trajectory"))
                trace.replans.append(
                    (t, c0.l, c0.d, c0.d_dot, c0.d_ddot, len(r.costs), r.checked_count, -1,
                     math.nan, math.nan, math.nan, math.nan, 0)
                )
            else:
                estop = False
                path = res.trajectory
                selected = res.selected
                track = trajectory_line(path)
                trace.paths.append((t, path.samples.x.copy(), path.samples.y.copy()))
                trace.replans.append(
                    (t, c0.l, c0.d, c0.d_dot, c0.d_ddot, len(res.costs), res.checked_count, res.selected,
                     float(res.end_l[res.selected]), float(res.end_d[res.selected]), path.cost, path.clearance, 1)
                )

        # longitudinal
        ego_front = f.l + front_extent
        lead = _find_lead(scenario, line, obstacles, ego_front, path, t)
        if lead is None:
            true = AccState(0.0, scenario.acc.cruise_speed - state.v, state.a)
            gap = math.nan
        else:
            gap = lead.gap
            true = AccState(desired_distance(state.v, params) - lead.gap, lead.speed - state.v, state.a)
        z = true.as_array()
        if noise_chol is not None:
            z = z + noise_chol @ rng.standard_normal(3)
        u = ctrl.command(AccState.from_array(z))
        if estop:
            u = -params.u_max
            ctrl.last_u = u
        xhat = ctrl.filter.estimate

        # lateral
        err = compute_errors(state, track, veh.wheelbase)
        if not estop:
            delta = steer(err, state.v, scenario.stanley)
        e_ref = -f.d

        clearance = _clearance(footprint, state, veh.wheelbase, obstacles, t)
        trace.ticks.append(
            (t, state.x, state.y, state.heading, state.v, state.a, delta, u,
             err.e_fa, err.theta_e, e_ref, f.l, true.d_error, true.v_rel,
             xhat[0], xhat[1], xhat[2], gap, clearance, selected, int(estop))
        )
        if k == n_steps:
            break
        state = bicycle_step(state, delta, u, cfg.dt, veh.wheelbase, params.T_L, params.K_L)
    return trace


# --------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class Metrics:
    duration: float
    max_e_fa: float
    rms_e_fa: float
    max_e_ref: float
    max_a_lat: float
    max_jerk: float
    min_clearance: float
    mean_abs_d_error: float
    replan_count: int
    mean_checked: float
    max_checked: int
    peak_offset: float
    final_offset: float
    estop_ticks: int

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def metrics(trace: Trace, wheelbase: float = 2.8) -> Metrics:
    """Summary statistics of a run.

    Lateral acceleration is ``v^2 tan(delta) / wheelbase``; jerk is the
    finite difference of the recorded acceleration.
    """
    if len(trace) == 0:
        raise EmptyTrace("trace has no rows")
    t = trace.column("t")
    e = trace.column("e_fa")
    v = trace.column("v")
    a = trace.column("a")
    e_ref = trace.column("e_ref")
    a_lat = v**2 * np.tan(trace.column("delta")) / wheelbase
    jerk = np.diff(a) / trace.dt if len(a) > 1 else np.zeros(1)
    d_err = trace.column("d_error")
    checked = trace.replan_column("checked") if trace.replans else np.zeros(0)
    offset = -e_ref
    return Metrics(
        duration=float(t[-1] - t[0]),
        max_e_fa=float(np.max(np.abs(e))),
        rms_e_fa=float(np.sqrt(np.mean(e * e))),
        max_e_ref=float(np.max(np.abs(e_ref))),
        max_a_lat=float(np.max(np.abs(a_lat))),
        max_jerk=float(np.max(np.abs(jerk))),
        min_clearance=float(np.min(trace.column("min_clearance"))),
        mean_abs_d_error=float(np.mean(np.abs(d_err))),
        replan_count=len(trace.replans),
        mean_checked=float(np.mean(checked)) if len(checked) else 0.0,
        max_checked=int(np.max(checked)) if len(checked) else 0,
        peak_offset=float(offset[np.argmax(np.abs(offset))]),
        final_offset=float(offset[-1]),
        estop_ticks=int(np.sum(trace.column("estop"))),
    )
