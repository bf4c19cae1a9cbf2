"""Longitudinal LQG upper controller for adaptive cruise control.

State ``x = [d_error, v_rel, a_f]`` with ``d_error = d_desired - d`` (positive
when too close), ``v_rel = v_preceding - v_following`` and ``a_f`` the actual
acceleration of the following vehicle.  The continuous model

    x_dot = A x + B u + Gamma w,   w = preceding-vehicle acceleration

is discretised by zero-order hold, an infinite-horizon discrete LQR gain is
found by Riccati fixed-point iteration, and a Kalman filter supplies the state
estimate the gain acts on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import expm

from .errors import (
    NegativeSpeed,
    RiccatiDivergence,
    SingularInnovationCovariance,
    UnstabilizablePair,
)

GRAVITY = 9.81
RICCATI_TOL = 1e-12
RICCATI_MAX_ITER = 100_000


@dataclass(frozen=True)
class AccParams:
    tau_h: float = 1.5  # headway time, s
    d0: float = 5.0  # standstill distance, m
    T_L: float = 0.5  # actuator lag time constant, s
    K_L: float = 1.0  # actuator lag gain
    T: float = 0.05  # sampling time, s
    rho1: float = 1.0
    rho2: float = 1.0
    rho3: float = 0.5
    r: float = 1.0
    u_max: float = 0.25 * GRAVITY

    def __post_init__(self):
        for name in ("tau_h", "T_L", "K_L", "T", "r", "u_max"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v}")
        rho = (self.rho1, self.rho2, self.rho3)
        if any(not math.isfinite(v) or v < 0 for v in rho) or max(rho) <= 0:
            raise ValueError("state weights must be non-negative with at least one positive")
        if not math.isfinite(self.d0):
            raise ValueError("d0 must be finite")

    @property
    def Q(self) -> np.ndarray:
        return np.diag([self.rho1, self.rho2, self.rho3])

    @property
    def R(self) -> np.ndarray:
        return np.array([[self.r]])


DEFAULT_Q_PROC = 1e-3 * np.eye(3)
DEFAULT_R_MEAS = np.diag([0.25, 0.04, 0.01])


@dataclass(frozen=True)
class AccState:
    d_error: float
    v_rel: float
    a_f: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.d_error, self.v_rel, self.a_f)):
            raise ValueError("ACC state must be finite")

    @classmethod
    def from_array(cls, x) -> "AccState":
        x = np.asarray(x, dtype=float).ravel()
        return cls(float(x[0]), float(x[1]), float(x[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.d_error, self.v_rel, self.a_f])


@dataclass(frozen=True)
class AccModel:
    A: np.ndarray
    B: np.ndarray
    Gamma: np.ndarray
    C: np.ndarray
    Ad: np.ndarray
    Bd: np.ndarray


def desired_distance(v_f: float, params: AccParams) -> float:
    """Constant-headway spacing ``tau_h * v_f + d0``."""
    if v_f < 0:
        raise NegativeSpeed(f"following speed must be non-negative, got {v_f}")
    return params.tau_h * v_f + params.d0


def zoh(A: np.ndarray, B: np.ndarray, T: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact zero-order-hold discretisation via the augmented matrix exponential."""
    n, m = B.shape
    M = np.zeros((n + m, n + m))
    M[:n, :n] = A
    M[:n, n:] = B
    E = expm(M * T)
    return E[:n, :n], E[:n, n:]


def observability_matrix(A: np.ndarray, C: np.ndarray) -> np.ndarray:
    blocks = [C]
    for _ in range(A.shape[0] - 1):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks)


def build_model(params: AccParams) -> AccModel:
    """Gap/velocity/acceleration model and its ZOH discretisation.

    Raises:
        ValueError: if the discrete pair is not observable.
    """
    A = np.array(
        [
            [0.0, -1.0, params.tau_h],
            [0.0, 0.0, -1.0],
            [0.0, 0.0, -1.0 / params.T_L],
        ]
    )
    B = np.array([[0.0], [0.0], [params.K_L / params.T_L]])
    Gamma = np.array([[0.0], [1.0], [0.0]])
    C = np.eye(3)
    Ad, Bd = zoh(A, B, params.T)
    if np.linalg.matrix_rank(observability_matrix(Ad, C)) != 3:
        raise ValueError("ACC model is not observable")
    return AccModel(A, B, Gamma, C, Ad, Bd)


def is_stabilizable(Ad: np.ndarray, Bd: np.ndarray, tol: float = 1e-9) -> bool:
    """PBH test on every eigenvalue outside the open unit disc."""
    n = Ad.shape[0]
    for lam in np.linalg.eigvals(Ad):
        if abs(lam) >= 1.0 - tol:
            pbh = np.hstack((lam * np.eye(n) - Ad, Bd.astype(complex)))
            if np.linalg.matrix_rank(pbh, tol=1e-9) < n:
                return False
    return True


def solve_dare(
    Ad: np.ndarray,
    Bd: np.ndarray,
    Q: np.ndarray,
    R: np.ndarray,
    tol: float = RICCATI_TOL,
    max_iter: int = RICCATI_MAX_ITER,
) -> np.ndarray:
    """Discrete algebraic Riccati solution by iterating the Riccati recursion.

    The recursion ``P <- Q + A'PA - A'PB (R + B'PB)^-1 B'PA`` is advanced by
    doubling: iterate ``k`` equals the recursion after ``2^k`` steps from
    ``P = 0``. Stops when the largest entry change is below ``tol`` relative
    to ``max(1, max|P|)``. Plain stepping stalls when control is expensive
    and the open loop is marginally stable.

    Raises:
        UnstabilizablePair: if some unstable mode cannot be reached by B.
        RiccatiDivergence: on non-finite iterates or no convergence.
    """
    Ad = np.atleast_2d(np.asarray(Ad, dtype=float))
    Bd = np.asarray(Bd, dtype=float).reshape(Ad.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if not is_stabilizable(Ad, Bd):
        raise UnstabilizablePair("(Ad, Bd) is not stabilizable")
    n = Ad.shape[0]
    A = Ad.copy()
    G = Bd @ np.linalg.solve(R, Bd.T)
    P = Q.copy()
    for _ in range(max_iter):
        W = np.eye(n) + G @ P
        WA = np.linalg.solve(W, A)
        P_next = P + A.T @ P @ WA
        G = G + A @ np.linalg.solve(W, G) @ A.T
        A = A @ WA
        P_next = 0.5 * (P_next + P_next.T)
        G = 0.5 * (G + G.T)
        if not (np.all(np.isfinite(P_next)) and np.all(np.isfinite(A))):
            raise RiccatiDivergence("Riccati iterate became non-finite")
        step = np.max(np.abs(P_next - P))
        P = P_next
        if step <= tol * max(1.0, np.max(np.abs(P))):
            return P
    raise RiccatiDivergence(f"Riccati iteration did not converge in {max_iter} steps")


def lqr_gain(Ad, Bd, Q, R, P: Optional[np.ndarray] = None) -> np.ndarray:
    if P is None:
        P = solve_dare(Ad, Bd, Q, R)
    Bd = np.asarray(Bd, dtype=float).reshape(np.shape(Ad)[0], -1)
    return np.linalg.solve(np.atleast_2d(R) + Bd.T @ P @ Bd, Bd.T @ P @ Ad)


def solve_lqr(model: AccModel, params: AccParams) -> np.ndarray:
    """Infinite-horizon discrete LQR gain K (1x3) for ``u = -K x``."""
    K = lqr_gain(model.Ad, model.Bd, params.Q, params.R)
    if spectral_radius(model.Ad - model.Bd @ K) >= 1.0:
        raise RiccatiDivergence("LQR closed loop is not Schur stable")
    return K


def spectral_radius(M: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M))))


@dataclass
class KalmanFilter:
    estimate: np.ndarray
    covariance: np.ndarray
    Q_proc: np.ndarray = field(default_factory=lambda: DEFAULT_Q_PROC.copy())
    R_meas: np.ndarray = field(default_factory=lambda: DEFAULT_R_MEAS.copy())

    @property
    def state(self) -> AccState:
        return AccState.from_array(self.estimate)


def kalman_predict(kf: KalmanFilter, model: AccModel, u: float) -> KalmanFilter:
    x = model.Ad @ kf.estimate + (model.Bd * u).ravel()
    P = model.Ad @ kf.covariance @ model.Ad.T + kf.Q_proc
    return KalmanFilter(x, 0.5 * (P + P.T), kf.Q_proc, kf.R_meas)


def kalman_update(kf: KalmanFilter, model: AccModel, z) -> KalmanFilter:
    """Measurement update with the Joseph-form covariance."""
    C = model.C
    z = z.as_array() if isinstance(z, AccState) else np.asarray(z, dtype=float)
    S = C @ kf.covariance @ C.T + kf.R_meas
    try:
        L = np.linalg.cholesky(0.5 * (S + S.T))
    except np.linalg.LinAlgError as exc:
        raise SingularInnovationCovariance("innovation covariance is not positive definite") from exc
    if np.min(np.diag(L)) ** 2 <= 1e-300:
        raise SingularInnovationCovariance("innovation covariance is singular")
    PCt = kf.covariance @ C.T
    # gain = P C' S^-1 via the Cholesky factor
    gain = np.linalg.solve(L.T, np.linalg.solve(L, PCt.T)).T
    x = kf.estimate + gain @ (z - C @ kf.estimate)
    I_KC = np.eye(len(x)) - gain @ C
    P = I_KC @ kf.covariance @ I_KC.T + gain @ kf.R_meas @ gain.T
    return KalmanFilter(x, 0.5 * (P + P.T), kf.Q_proc, kf.R_meas)


def kalman_step(kf: KalmanFilter, model: AccModel, u: float, measurement) -> KalmanFilter:
    """Predict with the applied input, then correct with the measurement."""
    return kalman_update(kalman_predict(kf, model, u), model, measurement)


def steady_state_covariance(model: AccModel, Q_proc, R_meas) -> np.ndarray:
    """Prior covariance fixed point of the filter (dual Riccati equation)."""
    return solve_dare(model.Ad.T, model.C.T, Q_proc, R_meas)


class LqgController:
    """LQR gain acting on the Kalman estimate, with saturation.

    The filter is initialised from the first measurement (covariance
    ``R_meas``); later ticks predict with the previously applied command.
    """

    def __init__(self, params: AccParams = AccParams(), Q_proc=None, R_meas=None):
        self.params = params
        self.model = build_model(params)
        self.K = solve_lqr(self.model, params)
        self.Q_proc = DEFAULT_Q_PROC.copy() if Q_proc is None else np.asarray(Q_proc, dtype=float)
        self.R_meas = DEFAULT_R_MEAS.copy() if R_meas is None else np.asarray(R_meas, dtype=float)
        self.filter: Optional[KalmanFilter] = None
        self.last_u = 0.0

    def reset(self):
        self.filter = None
        self.last_u = 0.0

    def saturate(self, u: float) -> float:
        return min(max(u, -self.params.u_max), self.params.u_max)

    def feedback(self, x) -> float:
        """Saturated ``-K x`` for a given state (no filtering)."""
        return self.saturate(float(-(self.K @ np.asarray(x, dtype=float).ravel())[0]))

    def observe(self, measured: AccState) -> KalmanFilter:
        z = measured.as_array()
        if self.filter is None:
            self.filter = KalmanFilter(z.copy(), self.R_meas.copy(), self.Q_proc, self.R_meas)
        else:
            self.filter = kalman_step(self.filter, self.model, self.last_u, z)
        return self.filter

    def command(self, measured: AccState) -> float:
        kf = self.observe(measured)
        self.last_u = self.feedback(kf.estimate)
        return self.last_u


def acc_command(ctrl: LqgController, measured: AccState) -> float:
    """Desired acceleration ``clamp(-K x_hat, -u_max, u_max)``; updates the filter."""
    return ctrl.command(measured)


def lqr_cost(states, inputs, params: AccParams) -> float:
    """Average quadratic cost over a finite run (reporting metric)."""
    x = np.asarray(states, dtype=float).reshape(-1, 3)
    u = np.asarray(inputs, dtype=float).ravel()
    q = np.einsum("ij,jk,ik->i", x, params.Q, x)
    return float(np.mean(q + params.r * u * u))
