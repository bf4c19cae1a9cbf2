"""Front-axle steering law with velocity-scheduled gains.

``delta = theta_e + atan(k_e(v) * e_fa / L_x(v))``.  The classic form, which
divides by the speed instead of a look-ahead length, is kept behind a mode
flag for comparison.

Sign convention: ``e_fa`` is positive when the path lies to the left of the
front axle (vehicle right of the path), and ``theta_e`` is path heading minus
vehicle heading, so positive values of either steer left toward the path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyPath, NegativeSpeed
from .geometry import ReferenceLine, project_to_frenet, wrap_angle

MODIFIED = "modified"
CLASSIC = "classic"


@dataclass(frozen=True)
class StanleySchedule:
    Lx_low: float = 10.0
    Lx_slope: float = 0.8
    Lx_high: float = 20.0
    v_break1: float = 12.5
    v_break2: float = 25.0
    ke_intercept: float = 0.5
    ke_slope: float = 0.02
    ke_high: float = 1.0
    delta_max: float = 0.6
    classic_gain: float = 0.5  # k of the speed-divided law
    mode: str = MODIFIED

    def __post_init__(self):
        if not self.delta_max > 0:
            raise ValueError("delta_max must be positive")
        if not 0 <= self.v_break1 <= self.v_break2:
            raise ValueError("schedule breakpoints must satisfy 0 <= v_break1 <= v_break2")
        if self.mode not in (MODIFIED, CLASSIC):
            raise ValueError(f"unknown steering mode {self.mode!r}")


@dataclass(frozen=True)
class TrackingError:
    e_fa: float
    theta_e: float

    def __post_init__(self):
        if not (math.isfinite(self.e_fa) and math.isfinite(self.theta_e)):
            raise ValueError("tracking errors must be finite")
        object.__setattr__(self, "theta_e", wrap_angle(self.theta_e))


def _check_speed(v: float):
    if v < 0:
        raise NegativeSpeed(f"speed must be non-negative, got {v}")


def lookup_Lx(v: float, sched: StanleySchedule = StanleySchedule()) -> float:
    """Look-ahead divisor: constant, then proportional to speed, then capped."""
    _check_speed(v)
    if v < sched.v_break1:
        return sched.Lx_low
    if v < sched.v_break2:
        return sched.Lx_slope * v
    return sched.Lx_high


def lookup_ke(v: float, sched: StanleySchedule = StanleySchedule()) -> float:
    """Cross-track gain, linear in speed up to ``v_break2`` and constant beyond."""
    _check_speed(v)
    if v < sched.v_break2:
        return sched.ke_intercept + sched.ke_slope * v
    return sched.ke_high


def front_axle(x: float, y: float, heading: float, wheelbase: float) -> tuple[float, float]:
    return x + wheelbase * math.cos(heading), y + wheelbase * math.sin(heading)


def compute_errors(vehicle, line: ReferenceLine, wheelbase: float) -> TrackingError:
    """Front-axle cross-track and heading errors against ``line``.

    ``vehicle`` needs ``x``, ``y`` (rear axle) and ``heading`` attributes.
    The lateral offset of the front axle from the line is ``d`` (left
    positive), so ``e_fa = -d``.
    """
    if line is None or len(line) == 0:
        raise EmptyPath("no path to track")
    fx, fy = front_axle(vehicle.x, vehicle.y, vehicle.heading, wheelbase)
    f = project_to_frenet(line, (fx, fy), horizon=math.inf)
    _, _, theta_r, _, _ = line.interpolate(f.l)
    return TrackingError(-f.d, wrap_angle(float(theta_r) - vehicle.heading))


def steer_unclamped(err: TrackingError, v: float, sched: StanleySchedule = StanleySchedule()) -> float:
    _check_speed(v)
    if sched.mode == CLASSIC:
        if v == 0.0:
            return err.theta_e + math.copysign(math.pi / 2, err.e_fa) if err.e_fa else err.theta_e
        return err.theta_e + math.atan(sched.classic_gain * err.e_fa / v)
    return err.theta_e + math.atan(lookup_ke(v, sched) * err.e_fa / lookup_Lx(v, sched))


def steer(err: TrackingError, v: float, sched: StanleySchedule = StanleySchedule()) -> float:
    """Desired steering angle, clamped to ``+-delta_max``."""
    delta = steer_unclamped(err, v, sched)
    return float(np.clip(delta, -sched.delta_max, sched.delta_max))
