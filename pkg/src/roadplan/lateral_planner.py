"""Sampled quintic lateral planner with lazy collision checking.

Candidates are quintic offsets ``d(l)`` from the current Frenet state to a
grid of end states ``(d_e, 0, 0, l_e)``.  Every candidate is scored with the
twelve-term comfort/safety cost, candidates are sorted by cost, and collision
checking walks that order until the first collision-free one is found.

Candidate speed is held constant (the cruise speed handed in by the caller),
so ``a_lat = v^2 kappa``, ``a_lon = 0`` and section durations are
``length / v``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    EmptyGrid,
    IndexNotBuilt,
    NoFeasibleTrajectory,
    NonpositiveSpeed,
    TooFewSamples,
    ZeroLength,
)
from .geometry import FrenetState, ReferenceLine, frenet_to_cartesian_arrays, offset_curvature, wrap_angle

DEFAULT_SAMPLE_STEP = 0.5
#: sample stride of the broad pass that rejects obviously colliding candidates
COARSE_STRIDE = 8
#: largest speculative block of the collision scan
MAX_BLOCK = 512
DEFAULT_HORIZON = 4.0


# --------------------------------------------------------------------------
# quintic polynomials

@dataclass(frozen=True)
class QuinticPolynomial:
    """Lateral profile ``d(l) = sum alpha_k (l - l0)^k`` on ``[l0, le]``."""

    alpha: tuple[float, float, float, float, float, float]
    l0: float
    le: float

    @property
    def length(self) -> float:
        return self.le - self.l0

    def __call__(self, l, order: int = 0):
        """Value (or ``order``-th derivative in l) at station(s) ``l``."""
        xi = np.atleast_1d(np.asarray(l, dtype=float)) - self.l0
        out = _poly_eval(np.asarray(self.alpha)[None, :], xi, order)[0]
        return float(out[0]) if np.ndim(l) == 0 else out


def _poly_basis(xi: np.ndarray, order: int) -> np.ndarray:
    """Rows ``d^order/dxi^order xi^k`` for k = 0..5 -> (6, n)."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    basis = np.zeros((6, xi.shape[0]))
    for k in range(order, 6):
        basis[k] = math.perm(k, order) * xi ** (k - order)
    return basis


def _poly_eval(alpha: np.ndarray, xi: np.ndarray, order: int) -> np.ndarray:
    """Evaluate rows of coefficients (m, 6) at local abscissae ``xi`` (n,) -> (m, n)."""
    return alpha @ _poly_basis(xi, order)


def quintic_coefficients(d0, d0_dot, d0_ddot, de, de_dot, de_ddot, length) -> np.ndarray:
    """Closed-form coefficients for arrays of boundary conditions -> (m, 6).

    The first three coefficients come straight from the start state; the last
    three solve the 3x3 end-condition system in closed form.
    """
    d0, d0_dot, d0_ddot, de, de_dot, de_ddot, L = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (d0, d0_dot, d0_ddot, de, de_dot, de_ddot, length))
    )
    r1 = de - (d0 + d0_dot * L + 0.5 * d0_ddot * L**2)
    r2 = de_dot - (d0_dot + d0_ddot * L)
    r3 = de_ddot - d0_ddot
    a3 = (10.0 * r1 - 4.0 * r2 * L + 0.5 * r3 * L**2) / L**3
    a4 = (-15.0 * r1 + 7.0 * r2 * L - r3 * L**2) / L**4
    a5 = (6.0 * r1 - 3.0 * r2 * L + 0.5 * r3 * L**2) / L**5
    return np.stack([d0, d0_dot, 0.5 * d0_ddot, a3, a4, a5], axis=-1).reshape(-1, 6)


def _end_coefficients(c0, d_ends: np.ndarray, L: float) -> np.ndarray:
    """Coefficients for many end offsets at one length with zero end slope and
    second derivative; same arithmetic as :func:`quintic_coefficients`."""
    r1 = d_ends - (c0.d + c0.d_dot * L + 0.5 * c0.d_ddot * L**2)
    r2 = 0.0 - (c0.d_dot + c0.d_ddot * L)
    r3 = 0.0 - c0.d_ddot
    alpha = np.empty((len(d_ends), 6))
    alpha[:, 0] = c0.d
    alpha[:, 1] = c0.d_dot
    alpha[:, 2] = 0.5 * c0.d_ddot
    alpha[:, 3] = (10.0 * r1 - 4.0 * r2 * L + 0.5 * r3 * L**2) / L**3
    alpha[:, 4] = (-15.0 * r1 + 7.0 * r2 * L - r3 * L**2) / L**4
    alpha[:, 5] = (6.0 * r1 - 3.0 * r2 * L + 0.5 * r3 * L**2) / L**5
    return alpha


def solve_quintic(c0: FrenetState, ce: FrenetState) -> QuinticPolynomial:
    """Quintic joining two Frenet states (value, slope and second derivative)."""
    L = ce.l - c0.l
    if not L > 1e-6:
        raise ZeroLength(f"end station must exceed start by more than 1e-6 m (L={L})")
    values = (c0.d, c0.d_dot, c0.d_ddot, ce.d, ce.d_dot, ce.d_ddot)
    if not all(math.isfinite(v) for v in values):
        raise ValueError("boundary states must be finite")
    alpha = quintic_coefficients(*values, L)[0]
    return QuinticPolynomial(tuple(float(a) for a in alpha), float(c0.l), float(ce.l))


# --------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class SamplingGrid:
    d_min: float
    d_max: float
    delta_d: float
    l_min: float
    l_max: float
    delta_l: float
    road_half_width: Optional[float] = None

    def __post_init__(self):
        if not (self.delta_d > 0 and self.delta_l > 0):
            raise ValueError("grid steps must be positive")
        if self.d_min > self.d_max or self.l_min > self.l_max:
            raise EmptyGrid("grid bounds are inverted")
        if self.l_min <= 0:
            raise ValueError("l_min must be positive")
        w = self.road_half_width
        if w is not None and (abs(self.d_min) > w + 1e-12 or abs(self.d_max) > w + 1e-12):
            raise ValueError(f"lateral bounds exceed road half-width {w}")

    @staticmethod
    def _axis(lo, hi, step):
        n = int(math.floor((hi - lo) / step + 1e-9)) + 1
        return lo + step * np.arange(n)

    @property
    def d_values(self) -> np.ndarray:
        return self._axis(self.d_min, self.d_max, self.delta_d)

    @property
    def l_values(self) -> np.ndarray:
        return self._axis(self.l_min, self.l_max, self.delta_l)

    def __len__(self) -> int:
        return len(self.d_values) * len(self.l_values)


def sample_end_states(grid: SamplingGrid, l0: float = 0.0) -> list[FrenetState]:
    """End states in row-major order (station outer, offset inner).

    Stations are ``l0`` plus the grid's look-ahead lengths.
    """
    d_vals = grid.d_values
    l_vals = grid.l_values
    if len(d_vals) == 0 or len(l_vals) == 0:
        raise EmptyGrid("sampling grid is empty")
    return [FrenetState(float(l0 + le), float(de)) for le in l_vals for de in d_vals]


@dataclass(frozen=True)
class CostWeights:
    w_s: float = 1.0
    w_k: float = 1.0
    w_kdot: float = 1.0
    w_kddot: float = 1.0
    w_kdddot: float = 1.0
    w_dcenter: float = 1.0
    w_alat: float = 1.0
    w_alon: float = 1.0
    w_alatdot: float = 1.0
    w_alondot: float = 1.0
    w_l: float = 0.5
    w_t: float = 0.1

    def __post_init__(self):
        values = [getattr(self, f.name) for f in fields(self)]
        if any(v < 0 or not math.isfinite(v) for v in values):
            raise ValueError("cost weights must be finite and non-negative")
        if not any(v > 0 for v in values):
            raise ValueError("at least one cost weight must be positive")


#: cost term name -> weight field
TERMS = {
    "s": "w_s",
    "k": "w_k",
    "k_dot": "w_kdot",
    "k_ddot": "w_kddot",
    "k_dddot": "w_kdddot",
    "d_center": "w_dcenter",
    "a_lat": "w_alat",
    "a_lon": "w_alon",
    "a_lat_dot": "w_alatdot",
    "a_lon_dot": "w_alondot",
    "l": "w_l",
    "t": "w_t",
}


@dataclass(frozen=True)
class FootprintCircles:
    """Circles along the vehicle axis, offsets measured from the planning point."""

    offsets: tuple[float, ...]
    radii: tuple[float, ...]
    safety_margin: float = 0.3

    def __post_init__(self):
        if len(self.offsets) != len(self.radii) or not self.offsets:
            raise ValueError("footprint needs matching, non-empty offsets and radii")
        if any(r <= 0 for r in self.radii) or self.safety_margin < 0:
            raise ValueError("radii must be positive and the margin non-negative")

    @classmethod
    def for_vehicle(
        cls,
        length: float,
        width: float,
        center_offset: float = 0.0,
        safety_margin: float = 0.3,
        n: int = 3,
    ) -> "FootprintCircles":
        """``n`` equal circles over the body rectangle centred ``center_offset`` ahead."""
        part = length / n
        radius = max(width / 2.0 + 0.1, math.hypot(part / 2.0, width / 2.0))
        offsets = tuple(center_offset - length / 2.0 + part * (k + 0.5) for k in range(n))
        fp = cls(offsets, (radius,) * n, safety_margin)
        if not fp.covers(length, width, center_offset):
            raise ValueError("footprint circles do not cover the vehicle")
        return fp

    def covers(self, length: float, width: float, center_offset: float = 0.0) -> bool:
        """True when every corner of each body slice is inside some circle."""
        xs = np.linspace(center_offset - length / 2.0, center_offset + length / 2.0, 4 * len(self.offsets) + 1)
        pts = [(x, y) for x in xs for y in (-width / 2.0, width / 2.0)]
        for x, y in pts:
            if not any(math.hypot(x - o, y) <= r + 1e-12 for o, r in zip(self.offsets, self.radii)):
                return False
        return True

    def centers(self, x, y, heading):
        """Circle centres for poses -> arrays (n_poses, n_circles)."""
        off = np.asarray(self.offsets)
        c, s = np.cos(heading)[..., None], np.sin(heading)[..., None]
        return np.asarray(x)[..., None] + off * c, np.asarray(y)[..., None] + off * s


# --------------------------------------------------------------------------
# obstacles

@dataclass
class Obstacle:
    points: np.ndarray  # (N, 2) footprint samples at t = 0
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    name: str = ""

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(2)

    @classmethod
    def rectangle(cls, center, length, width, heading=0.0, velocity=(0.0, 0.0), spacing=0.5, name=""):
        nx = max(2, int(math.ceil(length / spacing)) + 1)
        ny = max(2, int(math.ceil(width / spacing)) + 1)
        gx, gy = np.meshgrid(np.linspace(-length / 2, length / 2, nx), np.linspace(-width / 2, width / 2, ny))
        c, s = math.cos(heading), math.sin(heading)
        px = center[0] + c * gx.ravel() - s * gy.ravel()
        py = center[1] + s * gx.ravel() + c * gy.ravel()
        return cls(np.column_stack((px, py)), np.asarray(velocity, dtype=float), name)

    def at(self, t: float) -> "Obstacle":
        return Obstacle(self.points + self.velocity * t, self.velocity.copy(), self.name)


class ObstacleSet:
    """Obstacles with constant-velocity motion and a KD-tree per obstacle.

    Each obstacle translates rigidly, so the distance from a query point at
    time ``t`` equals the distance from ``q - v t`` to its points at ``t = 0``;
    one tree per obstacle therefore answers queries at any prediction time.
    """

    def __init__(self, obstacles: Sequence[Obstacle] = ()):
        self.obstacles = list(obstacles)
        self._trees: Optional[list[cKDTree]] = None

    def __len__(self):
        return len(self.obstacles)

    @property
    def index_built(self) -> bool:
        return self._trees is not None

    def build_index(self) -> "ObstacleSet":
        self._trees = [cKDTree(o.points) for o in self.obstacles if len(o.points)]
        self._vel = [o.velocity for o in self.obstacles if len(o.points)]
        self._boxes = [(t.mins, t.maxes) for t in self._trees]
        return self

    def at(self, t: float) -> "ObstacleSet":
        return ObstacleSet([o.at(t) for o in self.obstacles])

    @property
    def all_points(self) -> np.ndarray:
        if not self.obstacles:
            return np.zeros((0, 2))
        return np.concatenate([o.points for o in self.obstacles])

    def nearest_distance(self, points, t=0.0, upper_bound: float = np.inf) -> np.ndarray:
        """Distance from each query point (at its time ``t``) to the nearest obstacle point.

        Distances beyond ``upper_bound`` are reported as ``inf``, which lets
        the tree prune far branches.
        """
        if self._trees is None:
            raise IndexNotBuilt("call build_index() first")
        q = np.asarray(points, dtype=float).reshape(-1, 2)
        t = np.broadcast_to(np.asarray(t, dtype=float), (len(q),))
        best = np.full(len(q), np.inf)
        for tree, vel, (lo, hi) in zip(self._trees, self._vel, self._boxes):
            qo = q - t[:, None] * vel
            if np.isfinite(upper_bound):
                # bounding-box broad phase: skip points that cannot be within the bound
                gap = np.maximum(np.maximum(lo - qo, qo - hi), 0.0)
                near = np.hypot(gap[:, 0], gap[:, 1]) <= upper_bound
                if not np.any(near):
                    continue
                dist, _ = tree.query(qo[near], distance_upper_bound=upper_bound)
                best[near] = np.minimum(best[near], dist)
            else:
                dist, _ = tree.query(qo)
                np.minimum(best, dist, out=best)
        return best


# --------------------------------------------------------------------------
# candidates and costs

@dataclass
class Samples:
    """Per-sample quantities of a candidate, all arrays of equal length."""

    l: np.ndarray
    d: np.ndarray
    d_dot: np.ndarray
    d_ddot: np.ndarray
    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    curvature: np.ndarray
    s: np.ndarray  # cumulative Cartesian arc length
    t: np.ndarray  # time stamps under the assumed speed

    def __len__(self):
        return len(self.l)


@dataclass
class CandidateTrajectory:
    poly: QuinticPolynomial
    samples: Samples
    speed: float
    cost: float = math.nan
    index: int = -1
    collision_checked: bool = False
    feasible: bool = False
    clearance: float = math.nan
    tail: Optional[Samples] = None  # held-offset extension used only for collision checks

    @property
    def end_state(self) -> FrenetState:
        return FrenetState(self.poly.le, float(self.samples.d[-1]))


def _row_derivative(values: np.ndarray, s: np.ndarray) -> np.ndarray:
    out = np.empty_like(values)
    out[:, 1:-1] = (values[:, 2:] - values[:, :-2]) / (s[:, 2:] - s[:, :-2])
    out[:, 0] = (values[:, 1] - values[:, 0]) / (s[:, 1] - s[:, 0])
    out[:, -1] = (values[:, -1] - values[:, -2]) / (s[:, -1] - s[:, -2])
    return out


def cost_terms(s, kappa, d, l, speed: float, previous: Optional[CandidateTrajectory] = None) -> dict:
    """Un-weighted cost terms for rows of samples.

    ``s``, ``kappa`` and ``d`` are (m, N) arrays (cumulative arc length,
    curvature, lateral offset); ``l`` holds the stations, (N,) or (m, N).
    Returns ``{term: (m,) array}``.
    """
    s = np.atleast_2d(np.asarray(s, dtype=float))
    kappa = np.atleast_2d(np.asarray(kappa, dtype=float))
    d = np.atleast_2d(np.asarray(d, dtype=float))
    if s.shape[1] < 2:
        raise TooFewSamples("a candidate needs at least 2 samples")
    if not (speed > 0 and math.isfinite(speed)):
        raise NonpositiveSpeed(f"assumed speed must be positive, got {speed}")
    section = np.diff(s, axis=1)
    k1 = _row_derivative(kappa, s)
    k2 = _row_derivative(k1, s)
    k3 = _row_derivative(k2, s)
    # constant speed: a_lat = v^2 kappa, d(a_lat)/dt = v^3 dkappa/ds, a_lon = 0
    a_lat = speed**2 * kappa
    a_lat_dot = speed**3 * k1
    zero = np.zeros(len(s))
    if previous is not None:
        dp = np.interp(np.asarray(l, dtype=float), previous.samples.l, previous.samples.d)
        consistency = np.sum((d - dp) ** 2, axis=1)
    else:
        consistency = np.zeros(len(s))
    dur = section / speed
    return {
        "s": np.sum(section**2, axis=1),
        "k": np.sum(kappa**2, axis=1),
        "k_dot": np.sum(k1**2, axis=1),
        "k_ddot": np.sum(k2**2, axis=1),
        "k_dddot": np.sum(k3**2, axis=1),
        "d_center": np.sum(d**2, axis=1),
        "a_lat": np.sum(a_lat**2, axis=1),
        "a_lon": zero,
        "a_lat_dot": np.sum(a_lat_dot**2, axis=1),
        "a_lon_dot": zero.copy(),
        "l": consistency,
        "t": np.sum(dur**2, axis=1),
    }


def weighted_total(terms: dict, weights: CostWeights) -> np.ndarray:
    total = np.zeros_like(terms["s"])
    for name, attr in TERMS.items():
        w = getattr(weights, attr)
        if w:
            total = total + w * terms[name]
    return total


def evaluate_cost(
    traj: CandidateTrajectory,
    weights: CostWeights,
    previous: Optional[CandidateTrajectory] = None,
) -> float:
    smp = traj.samples
    if len(smp) < 2:
        raise TooFewSamples("a candidate needs at least 2 samples")
    terms = cost_terms(smp.s[None, :], smp.curvature[None, :], smp.d[None, :], smp.l, traj.speed, previous)
    return float(weighted_total(terms, weights)[0])


# --------------------------------------------------------------------------
# collision checking

@dataclass(frozen=True)
class CollisionResult:
    feasible: bool
    clearance: float  # min(distance - radius); +inf without obstacles


def check_collision(
    traj: CandidateTrajectory,
    obstacles: ObstacleSet,
    footprint: FootprintCircles,
    horizon: float = DEFAULT_HORIZON,
) -> CollisionResult:
    """Check footprint circles along the candidate against predicted obstacles.

    Samples with time stamp beyond ``horizon`` are ignored; the held-offset
    tail (if any) extends the check up to the horizon.
    """
    if not obstacles.index_built:
        raise IndexNotBuilt("obstacle index has not been built")
    parts = [traj.samples] + ([traj.tail] if traj.tail is not None else [])
    x = np.concatenate([p.x for p in parts])
    y = np.concatenate([p.y for p in parts])
    th = np.concatenate([p.heading for p in parts])
    t = np.concatenate([p.t for p in parts])
    keep = t <= horizon + 1e-9
    keep[0] = True
    if len(obstacles) == 0:
        return CollisionResult(True, math.inf)
    cx, cy = footprint.centers(x[keep], y[keep], th[keep])
    times = np.repeat(t[keep], len(footprint.offsets))
    dist = obstacles.nearest_distance(np.column_stack((cx.ravel(), cy.ravel())), times)
    radii = np.tile(np.asarray(footprint.radii), keep.sum())
    gap = dist - radii
    clearance = float(gap.min())
    return CollisionResult(bool(clearance >= footprint.safety_margin), clearance)


# --------------------------------------------------------------------------
# planning

@dataclass
class PlanResult:
    end_l: np.ndarray  # grid order
    end_d: np.ndarray
    costs: np.ndarray  # grid order; inf for geometrically invalid candidates
    status: np.ndarray  # -1 unchecked, 0 collides, 1 feasible
    clearances: np.ndarray
    checked_count: int
    selected: int
    trajectory: CandidateTrajectory

    @property
    def end_states(self) -> list[FrenetState]:
        return [FrenetState(float(l), float(d)) for l, d in zip(self.end_l, self.end_d)]

    def rows(self):
        """One row per candidate: index, l_e, d_e, cost, checked, feasible, selected, clearance."""
        for i, cost in enumerate(self.costs):
            st = int(self.status[i])
            yield (
                i, float(self.end_l[i]), float(self.end_d[i]), float(cost),
                int(st >= 0), int(st == 1), int(i == self.selected), float(self.clearances[i]),
            )


class _Batch:
    """Candidates sharing one look-ahead length, hence identical sample stations.

    Positions, curvature and cost are computed for every row up front;
    headings only for rows that reach the collision check.
    """

    def __init__(self, c0, d_ends, L, reference, speed, sample_step, weights, previous):
        n = max(1, int(math.ceil(L / sample_step - 1e-9)))
        self.reference = reference
        self.speed = speed
        self.step = sample_step
        self.xi = np.linspace(0.0, L, n + 1)
        self.l = c0.l + self.xi
        m = len(d_ends)
        self.alpha = _end_coefficients(c0, np.asarray(d_ends, dtype=float), L)
        self.d = _poly_eval(self.alpha, self.xi, 0)
        self.d1 = _poly_eval(self.alpha, self.xi, 1)
        self.d2 = _poly_eval(self.alpha, self.xi, 2)
        xr, yr, self._theta_r, kr, dkr = reference.interpolate(self.l)
        self._one_minus = 1.0 - kr * self.d
        self.valid = np.all(self._one_minus > 0.0, axis=1)
        self._tail = None
        with np.errstate(invalid="ignore", divide="ignore"):
            self.x = xr - self.d * np.sin(self._theta_r)
            self.y = yr + self.d * np.cos(self._theta_r)
            self.kappa = offset_curvature(kr, dkr, self.d, self.d1, self.d2, self._one_minus)
            sec = np.hypot(np.diff(self.x, axis=1), np.diff(self.y, axis=1))
            self.s = np.concatenate((np.zeros((m, 1)), np.cumsum(sec, axis=1)), axis=1)
            terms = cost_terms(self.s, self.kappa, self.d, self.l, speed, previous)
        self.cost = np.where(self.valid, weighted_total(terms, weights), np.inf)

    def heading(self, rows, wrap: bool = True) -> np.ndarray:
        rows = np.atleast_1d(rows)
        h = self._theta_r + np.arctan2(self.d1[rows], self._one_minus[rows])
        return wrap_angle(h) if wrap else h

    def samples(self, i: int) -> Samples:
        s = self.s[i]
        return Samples(
            self.l, self.d[i], self.d1[i], self.d2[i],
            self.x[i], self.y[i], self.heading(i)[0], self.kappa[i], s, s / self.speed,
        )

    def poses_width(self, horizon: float) -> int:
        tail = self.tails(horizon)
        return self.d.shape[1] + (0 if tail[0] is None else tail[0].shape[1])

    def tails(self, horizon: float):
        """Held-offset extension for every row: (x, y, heading, t) arrays (m, K) or None."""
        if self._tail is None:
            t_end = self.s[:, -1] / self.speed
            remaining = horizon - np.min(t_end[self.valid]) if np.any(self.valid) else 0.0
            stations = _tail_stations(self.reference, float(self.l[-1]), self.speed * remaining, self.step)
            if stations is None:
                self._tail = (None,)
            else:
                d_end = self.d[:, -1:]
                d_end = np.where(self.valid[:, None], d_end, 0.0)
                x, y, h, _ = _held_offset(self.reference, stations, d_end)
                ds = _tail_arc(self.reference, float(self.l[-1]), stations, d_end)
                t = t_end[:, None] + np.cumsum(ds, axis=1) / self.speed
                self._tail = (x, y, h, t, stations, d_end, np.cumsum(ds, axis=1))
        return self._tail


def _held_offset(reference, stations, d):
    """Pose of a constant offset ``d`` at ``stations`` (no singularity check)."""
    xr, yr, theta, kr, _ = reference.interpolate(stations)
    x = xr - d * np.sin(theta)
    y = yr + d * np.cos(theta)
    return x, y, wrap_angle(theta + 0.0 * d), kr / (1.0 - kr * d)


def _tail_stations(reference, l_end, extent, step):
    if extent <= 0.0:
        return None
    k = int(math.ceil(extent / step - 1e-9))
    stations = l_end + step * np.arange(1, k + 1)
    stations = stations[stations <= reference.s[-1] + 1e-9]
    return stations if len(stations) else None


def _tail_arc(reference, l_end, stations, d_end):
    _, _, _, kr, _ = reference.interpolate(stations)
    # arc length of a parallel offset is (1 - kappa d) dl
    return (1.0 - kr * d_end) * np.diff(np.concatenate(([l_end], stations)))


def _tail(reference, l_end, d_end, t_end, speed, horizon, step):
    stations = _tail_stations(reference, l_end, speed * (horizon - t_end), step)
    if stations is None:
        return None
    d = np.full_like(stations, d_end)
    x, y, h, k = _held_offset(reference, stations, d)
    arc = np.cumsum(_tail_arc(reference, l_end, stations, d))
    zero = np.zeros_like(stations)
    return Samples(stations, d, zero, zero.copy(), x, y, h, k, arc, t_end + arc / speed)


class _PoseTable:
    """Padded (candidates, samples) pose arrays, filled one batch at a time."""

    def __init__(self, rows: int, width: int):
        self.x = np.empty((rows, width))
        self.y = np.empty((rows, width))
        self.h = np.empty((rows, width))
        self.t = np.empty((rows, width))
        self.keep = np.zeros((rows, width), dtype=bool)

    def fill(self, batch: "_Batch", rows: slice, horizon: float):
        n = batch.d.shape[1]
        self.x[rows, :n] = batch.x
        self.y[rows, :n] = batch.y
        self.h[rows, :n] = batch.heading(np.arange(len(batch.d)), wrap=False)
        np.divide(batch.s, batch.speed, out=self.t[rows, :n])
        tail = batch.tails(horizon)
        if tail[0] is not None:
            k = n + tail[0].shape[1]
            self.x[rows, n:k], self.y[rows, n:k], self.h[rows, n:k], self.t[rows, n:k] = tail[:4]
            n = k
        self.keep[rows, :n] = self.t[rows, :n] <= horizon + 1e-9
        self.keep[rows, 0] = True

    def gather(self, rows):
        row, col = np.nonzero(self.keep[rows])
        sel = rows[row], col
        return self.x[sel], self.y[sel], self.h[sel], self.t[sel], row, col


def _batch_poses(batch: _Batch, rows, horizon):
    """Sample and tail poses of ``rows`` within the horizon, flattened.

    Returns ``(x, y, heading, t, row, col)`` with ``row`` indexing into
    ``rows`` and ``col`` the sample position along the candidate.
    """
    rows = np.atleast_1d(rows)
    x, y, h = batch.x[rows], batch.y[rows], batch.heading(rows, wrap=False)
    t = batch.s[rows] / batch.speed
    tail = batch.tails(horizon)
    if tail[0] is not None:
        tx, ty, th, tt = (a[rows] for a in tail[:4])
        x, y, h, t = (np.concatenate(p, axis=1) for p in ((x, tx), (y, ty), (h, th), (t, tt)))
    keep = t <= horizon + 1e-9
    keep[:, 0] = True
    row, col = np.nonzero(keep)
    return x[keep], y[keep], h[keep], t[keep], row, col


def _pose_gaps(x, y, h, t, obstacles, footprint, bound):
    cx, cy = footprint.centers(x, y, h)
    times = np.repeat(t, len(footprint.offsets))
    dist = obstacles.nearest_distance(np.column_stack((cx.ravel(), cy.ravel())), times, bound)
    return (dist.reshape(-1, len(footprint.offsets)) - np.asarray(footprint.radii)).min(axis=1)


def _clearances(poses, n_rows, obstacles, footprint, margin, bound=np.inf):
    """Per-row clearance from flattened poses (see ``_batch_poses``).

    Unbounded, the result is the exact minimum.  With a finite ``bound`` a
    coarse pass over every ``COARSE_STRIDE``-th sample runs first; rows it
    already finds closer than ``margin`` keep that witness gap, the rest get
    the full check, where clearances above ``bound - max(radii)`` come back
    as ``inf``.  Feasibility is exact either way.
    """
    x, y, h, t, row, col = poses
    out = np.full(n_rows, np.inf)
    if not np.isfinite(bound):
        np.minimum.at(out, row, _pose_gaps(x, y, h, t, obstacles, footprint, bound))
        return out
    first = col % COARSE_STRIDE == 0
    np.minimum.at(out, row[first], _pose_gaps(x[first], y[first], h[first], t[first], obstacles, footprint, bound))
    second = ~first & (out[row] >= margin)
    if np.any(second):
        gaps = _pose_gaps(x[second], y[second], h[second], t[second], obstacles, footprint, bound)
        np.minimum.at(out, row[second], gaps)
    return out


def _batch_clearance(batch: _Batch, rows, obstacles: ObstacleSet, footprint: FootprintCircles, horizon):
    """Exact minimum clearance of rows of one batch."""
    poses = _batch_poses(batch, rows, horizon)
    return _clearances(poses, len(np.atleast_1d(rows)), obstacles, footprint, footprint.safety_margin)


def plan(
    c0: FrenetState,
    grid: SamplingGrid,
    weights: CostWeights,
    obstacles: ObstacleSet,
    footprint: FootprintCircles,
    reference: ReferenceLine,
    previous: Optional[CandidateTrajectory] = None,
    *,
    speed: float,
    sample_step: float = DEFAULT_SAMPLE_STEP,
    horizon: float = DEFAULT_HORIZON,
) -> PlanResult:
    """Cheapest collision-free candidate by cost-ordered lazy collision checking.

    Candidates are checked in ascending cost (ties in grid order).  Checks run
    in growing speculative blocks, but only the prefix up to the first
    feasible candidate is recorded, so ``checked_count`` is what a strictly
    sequential scan would report.

    Candidates whose end station falls past the reference line, or whose
    offset crosses the reference's centre of curvature, get infinite cost and
    are never checked.  Raises :class:`NoFeasibleTrajectory` (carrying the
    partial :class:`PlanResult` as ``.result``) when every candidate collides.
    """
    if not (speed > 0 and math.isfinite(speed)):
        raise NonpositiveSpeed(f"assumed speed must be positive, got {speed}")
    d_vals = grid.d_values
    nd = len(d_vals)
    if nd == 0 or len(grid.l_values) == 0:
        raise EmptyGrid("sampling grid is empty")
    end_l = np.repeat(c0.l + grid.l_values, nd)
    end_d = np.tile(d_vals, len(grid.l_values))
    if not obstacles.index_built:
        obstacles.build_index()

    costs = np.full(len(end_l), np.inf)
    batches: dict[int, _Batch] = {}
    for j, le in enumerate(grid.l_values):
        if c0.l + le > reference.s[-1] + 1e-9:
            continue
        b = _Batch(c0, d_vals, float(le), reference, speed, sample_step, weights, previous)
        batches[j] = b
        costs[j * nd : (j + 1) * nd] = b.cost

    status = np.full(len(end_l), -1, dtype=np.int8)
    clearances = np.full(len(end_l), np.nan)
    finite = np.flatnonzero(np.isfinite(costs))
    order = finite[np.argsort(costs[finite], kind="stable")]

    # t >= 0, so no tail is longer than speed * horizon; tails stay lazy
    width = max((b.d.shape[1] for b in batches.values()), default=1)
    width += int(math.ceil(speed * horizon / sample_step)) + 1
    poses = _PoseTable(len(end_l), width)
    filled: set[int] = set()
    # exact below the margin; the winner's clearance is recomputed unbounded
    bound = footprint.safety_margin + max(footprint.radii) + 1e-9
    pos, block = 0, 1
    while pos < len(order):
        chunk = order[pos : pos + block]
        if len(obstacles) == 0:
            gaps = np.full(len(chunk), np.inf)
        else:
            for j in np.unique(chunk // nd):
                if j not in filled:
                    filled.add(j)
                    poses.fill(batches[int(j)], slice(j * nd, (j + 1) * nd), horizon)
            gaps = _clearances(poses.gather(chunk), len(chunk), obstacles, footprint, footprint.safety_margin, bound)
        ok = gaps >= footprint.safety_margin
        stop = int(np.argmax(ok)) + 1 if np.any(ok) else len(chunk)
        if np.any(ok):
            idx = int(chunk[stop - 1])
            j, i = divmod(idx, nd)
            if len(obstacles):
                gaps[stop - 1] = _batch_clearance(batches[j], [i], obstacles, footprint, horizon)[0]
        status[chunk[:stop]] = ok[:stop]
        clearances[chunk[:stop]] = gaps[:stop]
        if np.any(ok):
            traj = _materialize(batches[j], i, idx, costs[idx], reference, speed, sample_step, horizon)
            traj.collision_checked = True
            traj.feasible = True
            traj.clearance = float(gaps[stop - 1])
            return PlanResult(end_l, end_d, costs, status, clearances, pos + stop, idx, traj)
        pos += len(chunk)
        block = min(4 * block, MAX_BLOCK)
    result = PlanResult(end_l, end_d, costs, status, clearances, pos, -1, None)
    err = NoFeasibleTrajectory(f"all {pos} candidates collide")
    err.result = result
    raise err


def _materialize(batch: _Batch, i, idx, cost, reference, speed, sample_step, horizon) -> CandidateTrajectory:
    poly = QuinticPolynomial(tuple(float(a) for a in batch.alpha[i]), float(batch.l[0]), float(batch.l[-1]))
    smp = batch.samples(i)
    tail = _tail(reference, float(batch.l[-1]), float(batch.d[i, -1]), float(smp.t[-1]), speed, horizon, sample_step)
    return CandidateTrajectory(poly, smp, speed, float(cost), int(idx), tail=tail)


def generate_candidates(
    c0: FrenetState,
    grid: SamplingGrid,
    weights: CostWeights,
    reference: ReferenceLine,
    previous: Optional[CandidateTrajectory] = None,
    *,
    speed: float,
    sample_step: float = DEFAULT_SAMPLE_STEP,
    horizon: float = DEFAULT_HORIZON,
) -> list[Optional[CandidateTrajectory]]:
    """Every candidate of the grid, costed, in grid order (None when out of road)."""
    if not (speed > 0 and math.isfinite(speed)):
        raise NonpositiveSpeed(f"assumed speed must be positive, got {speed}")
    d_vals = grid.d_values
    out: list[Optional[CandidateTrajectory]] = []
    for j, le in enumerate(grid.l_values):
        if c0.l + le > reference.s[-1] + 1e-9:
            out.extend([None] * len(d_vals))
            continue
        b = _Batch(c0, d_vals, float(le), reference, speed, sample_step, weights, previous)
        for i in range(len(d_vals)):
            if not b.valid[i]:
                out.append(None)
                continue
            out.append(_materialize(b, i, j * len(d_vals) + i, b.cost[i], reference, speed, sample_step, horizon))
    return out


def sample_candidate(
    poly: QuinticPolynomial,
    reference: ReferenceLine,
    speed: float,
    sample_step: float = DEFAULT_SAMPLE_STEP,
    horizon: float = DEFAULT_HORIZON,
) -> CandidateTrajectory:
    """Sample a single polynomial onto the reference line (no cost attached)."""
    L = poly.length
    n = max(1, int(math.ceil(L / sample_step - 1e-9)))
    l = poly.l0 + np.linspace(0.0, L, n + 1)
    d, d1, d2 = poly(l), poly(l, 1), poly(l, 2)
    x, y, h, k = frenet_to_cartesian_arrays(reference, l, d, d1, d2)
    s = np.concatenate(([0.0], np.cumsum(np.hypot(np.diff(x), np.diff(y)))))
    smp = Samples(l, d, d1, d2, x, y, h, k, s, s / speed)
    tail = _tail(reference, poly.le, float(d[-1]), float(smp.t[-1]), speed, horizon, sample_step)
    return CandidateTrajectory(poly, smp, speed, tail=tail)
