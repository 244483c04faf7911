"""Unified bi-modal rigid-body dynamics of the passive-wheeled bi-copter.

Continuous-time model f(x, u):

    pdot = v
    vdot = g + (R T_B + s R_G^W F_G) / m
    Rdot = skew(omega) R                     (omega in world frame)
    omegadot: rigid-body Euler equation with the diagonal body inertia J,
              actuator torque tau_B applied in the body frame and the ground
              reaction torque applied in the heading (intermediate) frame.

with s = 0 in aerial mode and s = 1 in ground mode.  Thrust and torque maps:

    T_B   = (0, -T1 sin d1 - T2 sin d2, T1 cos d1 + T2 cos d2)
    tau_B = (T_By h1, (-T1 cos d1 + T2 cos d2) l, (-T1 sin d1 + T2 sin d2) l)

Ground reaction in the heading frame (rolling friction, lateral friction,
normal force) and its torque:

    F_G   = (f_r, f_l, F_n)
    f_r   = -mu F_n sign(longitudinal speed),  F_n = m g - T_Bz cos(theta)
    f_l   = m a_l - T_By,   a_l = |v_planar| psidot
    tau_G = (f_l r + (F_nr - F_nl) W,
             (m - 2 m_w) h2 g sin(theta),
             (f_rr - f_rl) W)

Ground mode is simulated as a constrained system: p_z and roll are fixed,
the body-lateral velocity is zero while the wheels stick, and f_l, F_n act
as constraint forces.  The pitch/yaw rows of the torque balance drive
(thetaddot, psiddot); the roll row is carried by the contact constraint.
An optional stick/slip model saturates the lateral friction at mu_s F_n and
releases the lateral constraint while sliding.

Internally states are packed as x = [p(3), v(3), q(4), omega(3)] and all
core routines broadcast over a leading batch axis; the typed API wraps the
array core.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .core import (
    SPEED_EPS,
    ContactLossError,
    ControlInput,
    DivergenceError,
    Mode,
    RobotState,
    Vec3,
    VehicleParams,
)

DIVERGENCE_LIMIT = 1e6

# Lateral speed below which a slipping wheel pair is considered for re-stick.
LATERAL_STICK_EPS = 1e-3


# ---------------------------------------------------------------------------
# Typed results
# ---------------------------------------------------------------------------


@dataclass
class BodyWrench:
    """Actuator thrust and torque in the body frame; T_B.x is identically 0."""

    T_B: Vec3
    tau_B: Vec3


@dataclass
class GroundReaction:
    """Ground contact forces (heading frame) and per-wheel decomposition.

    `tau_G` is the ground reaction torque expressed in the heading frame.
    `lift_off` is set when a per-wheel normal went negative and was clamped.
    """

    f_r: float
    f_l: float
    F_n: float
    F_n_left: float
    F_n_right: float
    f_r_left: float
    f_r_right: float
    tau_G: Vec3
    lift_off: bool = False


@dataclass
class StateDerivative:
    pdot: Vec3
    vdot: Vec3
    qdot: np.ndarray  # quaternion rate (4,)
    omegadot: Vec3

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.pdot, self.vdot, self.qdot, self.omegadot])


@dataclass
class SlipResult:
    stick: bool
    excess: float = 0.0


# ---------------------------------------------------------------------------
# Array core
# ---------------------------------------------------------------------------


def _quat_to_matrix_batch(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    xx, yy, zz = x * x, y * y, z * z
    wx, wy, wz = w * x, w * y, w * z
    xy, xz, yz = x * y, x * z, y * z
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (yy + zz)
    R[..., 0, 1] = 2 * (xy - wz)
    R[..., 0, 2] = 2 * (xz + wy)
    R[..., 1, 0] = 2 * (xy + wz)
    R[..., 1, 1] = 1 - 2 * (xx + zz)
    R[..., 1, 2] = 2 * (yz - wx)
    R[..., 2, 0] = 2 * (xz - wy)
    R[..., 2, 1] = 2 * (yz + wx)
    R[..., 2, 2] = 1 - 2 * (xx + yy)
    return R


def _quat_rate_batch(q: np.ndarray, w: np.ndarray) -> np.ndarray:
    # 0.5 * (0, omega) (x) q, omega in world frame
    qw, qx, qy, qz = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    ox, oy, oz = w[..., 0], w[..., 1], w[..., 2]
    out = np.empty_like(q)
    out[..., 0] = 0.5 * (-ox * qx - oy * qy - oz * qz)
    out[..., 1] = 0.5 * (ox * qw + oy * qz - oz * qy)
    out[..., 2] = 0.5 * (oy * qw + oz * qx - ox * qz)
    out[..., 3] = 0.5 * (oz * qw + ox * qy - oy * qx)
    return out


def _wrench_terms(u: np.ndarray, P: VehicleParams):
    T1, T2, d1, d2 = u[..., 0], u[..., 1], u[..., 2], u[..., 3]
    s1, c1 = np.sin(d1), np.cos(d1)
    s2, c2 = np.sin(d2), np.cos(d2)
    a1, a2 = T1 * c1, T2 * c2
    b1, b2 = T1 * s1, T2 * s2
    TBy = -(b1 + b2)
    TBz = a1 + a2
    tau_x = TBy * P.h1
    tau_y = (a2 - a1) * P.l
    tau_z = (b2 - b1) * P.l
    return TBy, TBz, tau_x, tau_y, tau_z


def _f_aerial_batch(x: np.ndarray, u: np.ndarray, P: VehicleParams) -> np.ndarray:
    v = x[..., 3:6]
    q = x[..., 6:10]
    w = x[..., 10:13]
    TBy, TBz, tau_x, tau_y, tau_z = _wrench_terms(u, P)

    R = _quat_to_matrix_batch(q)
    xdot = np.empty_like(x)
    xdot[..., 0:3] = v
    # vdot = g + R @ (0, TBy, TBz) / m
    xdot[..., 3:6] = (R[..., :, 1] * TBy[..., None] + R[..., :, 2] * TBz[..., None]) / P.m
    xdot[..., 5] -= P.g

    # body rates, Euler equation in body coordinates, rate back to world
    wb = np.einsum("...ji,...j->...i", R, w)
    J = P.J
    Jw = wb * J
    gyro0 = wb[..., 1] * Jw[..., 2] - wb[..., 2] * Jw[..., 1]
    gyro1 = wb[..., 2] * Jw[..., 0] - wb[..., 0] * Jw[..., 2]
    gyro2 = wb[..., 0] * Jw[..., 1] - wb[..., 1] * Jw[..., 0]
    wbdot = np.stack(
        [
            (tau_x - gyro0) * P.J_inv[0],
            (tau_y - gyro1) * P.J_inv[1],
            (tau_z - gyro2) * P.J_inv[2],
        ],
        axis=-1,
    )
    xdot[..., 10:13] = np.einsum("...ij,...j->...i", R, wbdot)
    xdot[..., 6:10] = _quat_rate_batch(q, w)
    return xdot


def _ground_geometry(x: np.ndarray):
    """theta, psi, thetadot, psidot and heading trig from a packed state."""
    q = x[..., 6:10]
    qw, qx, qy, qz = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    sin_th = np.clip(2.0 * (qw * qy - qz * qx), -1.0, 1.0)
    theta = np.arcsin(sin_th)
    psi = np.arctan2(2.0 * (qw * qz + qx * qy), 1.0 - 2.0 * (qy * qy + qz * qz))
    w = x[..., 10:13]
    cpsi, spsi = np.cos(psi), np.sin(psi)
    theta_dot = -w[..., 0] * spsi + w[..., 1] * cpsi
    psi_dot = w[..., 2]
    return theta, psi, theta_dot, psi_dot, cpsi, spsi


def _f_ground_batch(
    x: np.ndarray,
    u: np.ndarray,
    P: VehicleParams,
    slipping: bool = False,
    clamp_liftoff: bool = False,
):
    """Constrained ground dynamics.

    Returns (xdot, diag) where diag carries the contact forces used for
    logging, constraints and the stick/slip decision.
    """
    v = x[..., 3:6]
    theta, psi, theta_dot, psi_dot, cpsi, spsi = _ground_geometry(x)
    cth, sth = np.cos(theta), np.sin(theta)

    TBy, TBz, tau_x, tau_y, tau_z = _wrench_terms(u, P)

    vx, vy = v[..., 0], v[..., 1]
    u_long = vx * cpsi + vy * spsi
    w_lat = -vx * spsi + vy * cpsi
    v_planar = np.hypot(vx, vy)
    a_l = v_planar * psi_dot

    F_n = P.m * P.g - TBz * cth
    sgn_u = np.where(np.abs(u_long) < SPEED_EPS, 0.0, np.sign(u_long))
    f_r = -P.mu * F_n * sgn_u

    f_l_req = P.m * a_l - TBy
    if slipping:
        cap = P.mu_s * F_n
        slip_dir = np.where(np.abs(w_lat) > LATERAL_STICK_EPS, np.sign(w_lat), -np.sign(f_l_req))
        f_l = -cap * slip_dir
    else:
        f_l = f_l_req

    half = 0.5 * F_n
    split = (f_l * P.r + tau_x * cth) / P.W
    F_nl = half - split
    F_nr = half + split
    lift = (F_nl < 0.0) | (F_nr < 0.0)
    if clamp_liftoff:
        F_nl = np.maximum(F_nl, 0.0)
        F_nr = np.maximum(F_nr, 0.0)
    f_rl = -P.mu * F_nl * sgn_u
    f_rr = -P.mu * F_nr * sgn_u

    G2 = (P.m - 2.0 * P.m_w) * P.h2 * P.g * sth
    G3 = (f_rr - f_rl) * P.W

    # pitch/yaw rows of the torque balance in the heading frame
    J1, J2, J3 = P.J
    N13 = sth * cth * (J3 - J1)
    N33 = J1 * sth * sth + J3 * cth * cth
    theta_dd = (tau_y + G2 - N13 * psi_dot * psi_dot) / J2
    psi_dd = (-sth * tau_x + cth * tau_z + G3 + 2.0 * N13 * theta_dot * psi_dot) / N33

    acc_long = (TBz * sth + f_r) / P.m
    acc_lat = (TBy + f_l) / P.m

    xdot = np.empty_like(x)
    xdot[..., 0:3] = v
    xdot[..., 3] = acc_long * cpsi - acc_lat * spsi
    xdot[..., 4] = acc_long * spsi + acc_lat * cpsi
    xdot[..., 5] = 0.0
    tp = theta_dot * psi_dot
    xdot[..., 10] = -theta_dd * spsi - tp * cpsi
    xdot[..., 11] = theta_dd * cpsi - tp * spsi
    xdot[..., 12] = psi_dd
    xdot[..., 6:10] = _quat_rate_batch(x[..., 6:10], x[..., 10:13])

    diag = {
        "F_n": F_n,
        "F_nl": F_nl,
        "F_nr": F_nr,
        "f_l": f_l,
        "f_l_req": f_l_req,
        "f_r": f_r,
        "a_l": a_l,
        "u_long": u_long,
        "w_lat": w_lat,
        "lift_off": lift,
    }
    return xdot, diag


def f_batch(
    x: np.ndarray, u: np.ndarray, mode: Mode, P: VehicleParams, slipping: bool = False
) -> np.ndarray:
    """Packed-state dynamics, broadcasting over leading axes."""
    if mode is Mode.AERIAL:
        return _f_aerial_batch(x, u, P)
    xdot, _ = _f_ground_batch(x, u, P, slipping=slipping, clamp_liftoff=True)
    return xdot


def wheel_normals_batch(x: np.ndarray, u: np.ndarray, P: VehicleParams):
    """Per-wheel normal forces for packed states (stick-regime lateral force)."""
    _, diag = _f_ground_batch(x, u, P, slipping=False, clamp_liftoff=False)
    return diag["F_nl"], diag["F_nr"]


def _project_ground(x: np.ndarray, keep_lateral: bool) -> np.ndarray:
    """Re-impose the ground constraints on packed states (in place):
    zero roll, angular rate orthogonal to the heading axis, zero vertical
    speed and (while sticking) zero lateral speed."""
    theta, psi, _, _, cpsi, spsi = _ground_geometry(x)
    half_t, half_p = 0.5 * theta, 0.5 * psi
    ct, st = np.cos(half_t), np.sin(half_t)
    cp, sp = np.cos(half_p), np.sin(half_p)
    qn = np.stack([cp * ct, -sp * st, cp * st, sp * ct], axis=-1)
    # atan2 wraps psi: stay on the same quaternion cover sheet as before
    dot = np.sum(qn * x[..., 6:10], axis=-1)
    qn = np.where(dot[..., None] < 0.0, -qn, qn)
    x[..., 6:10] = qn
    proj = x[..., 10] * cpsi + x[..., 11] * spsi
    x[..., 10] -= proj * cpsi
    x[..., 11] -= proj * spsi
    x[..., 5] = 0.0
    if not keep_lateral:
        u_long = x[..., 3] * cpsi + x[..., 4] * spsi
        x[..., 3] = u_long * cpsi
        x[..., 4] = u_long * spsi
    return x


def rk4_step(
    x: np.ndarray,
    u: np.ndarray,
    mode: Mode,
    dt: float,
    P: VehicleParams,
    slipping: bool = False,
) -> np.ndarray:
    """One fixed-step RK4 integration of the packed state, with quaternion
    renormalization and re-projection of the ground constraints."""
    k1 = f_batch(x, u, mode, P, slipping)
    k2 = f_batch(x + 0.5 * dt * k1, u, mode, P, slipping)
    k3 = f_batch(x + 0.5 * dt * k2, u, mode, P, slipping)
    k4 = f_batch(x + dt * k3, u, mode, P, slipping)
    xn = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    q = xn[..., 6:10]
    xn[..., 6:10] = q / np.linalg.norm(q, axis=-1, keepdims=True)
    if mode is Mode.GROUND:
        _project_ground(xn, keep_lateral=slipping)
    return xn


# ---------------------------------------------------------------------------
# Typed API
# ---------------------------------------------------------------------------


def actuator_wrench(u: ControlInput, params: VehicleParams) -> BodyWrench:
    """Body-frame thrust and torque produced by the rotors and servos."""
    u.validate(params)
    TBy, TBz, tx, ty, tz = _wrench_terms(u.as_array(), params)
    return BodyWrench(
        T_B=np.array([0.0, float(TBy), float(TBz)]),
        tau_B=np.array([float(tx), float(ty), float(tz)]),
    )


def centripetal_accel(v_world, omega_z: float) -> float:
    """Lateral acceleration |v_planar| * psidot of the no-slip turning motion."""
    v = np.asarray(v_world, dtype=float)
    speed = math.hypot(v[0], v[1])
    if speed < SPEED_EPS:
        return 0.0
    return speed * float(omega_z)


def ground_reaction(
    state: RobotState, wrench: BodyWrench, a_l: float, params: VehicleParams
) -> GroundReaction:
    """Ground contact forces for a vehicle rolling with both wheels down.

    Raises ContactLossError when the total normal force is non-positive.
    Negative per-wheel normals are clamped to zero and flagged.
    """
    _, theta, psi = state.q.to_euler()
    cth, sth = math.cos(theta), math.sin(theta)
    TBy, TBz = float(wrench.T_B[1]), float(wrench.T_B[2])
    F_n = params.m * params.g - TBz * cth
    if F_n <= 0.0:
        raise ContactLossError(
            f"total normal force {F_n:.6f} N <= 0: thrust supports the full weight"
        )
    u_long = float(state.v[0]) * math.cos(psi) + float(state.v[1]) * math.sin(psi)
    sgn = 0.0 if abs(u_long) < SPEED_EPS else math.copysign(1.0, u_long)
    f_r = -params.mu * F_n * sgn
    f_l = params.m * a_l - TBy
    tau_Bx = float(wrench.tau_B[0])
    split = (f_l * params.r + tau_Bx * cth) / params.W
    F_nl = 0.5 * F_n - split
    F_nr = 0.5 * F_n + split
    lift = F_nl < 0.0 or F_nr < 0.0
    F_nl, F_nr = max(F_nl, 0.0), max(F_nr, 0.0)
    f_rl = -params.mu * F_nl * sgn
    f_rr = -params.mu * F_nr * sgn
    tau_G = np.array(
        [
            f_l * params.r + (F_nr - F_nl) * params.W,
            (params.m - 2.0 * params.m_w) * params.h2 * params.g * sth,
            (f_rr - f_rl) * params.W,
        ]
    )
    return GroundReaction(
        f_r=f_r,
        f_l=f_l,
        F_n=F_n,
        F_n_left=F_nl,
        F_n_right=F_nr,
        f_r_left=f_rl,
        f_r_right=f_rr,
        tau_G=tau_G,
        lift_off=lift,
    )


def slip_check(reaction: GroundReaction, params: VehicleParams) -> SlipResult:
    """Stick if |f_l| <= mu_s F_n (closed inequality), else Slip with the
    unmet lateral force."""
    cap = params.mu_s * reaction.F_n
    if abs(reaction.f_l) <= cap:
        return SlipResult(stick=True)
    return SlipResult(stick=False, excess=abs(reaction.f_l) - cap)


def derivative(
    state: RobotState, u: ControlInput, mode: Mode, params: VehicleParams
) -> StateDerivative:
    """Continuous-time state derivative f(x, u) for the given mode."""
    x = state.as_array()
    ua = u.as_array()
    if mode is Mode.GROUND:
        xdot, diag = _f_ground_batch(x, ua, params, slipping=False, clamp_liftoff=True)
        if diag["F_n"] <= 0.0:
            raise ContactLossError(
                f"total normal force {float(diag['F_n']):.6f} N <= 0 in ground mode"
            )
    else:
        xdot = _f_aerial_batch(x, ua, params)
    return StateDerivative(
        pdot=xdot[0:3], vdot=xdot[3:6], qdot=xdot[6:10], omegadot=xdot[10:13]
    )


def step(
    state: RobotState,
    u: ControlInput,
    mode: Mode,
    dt: float,
    params: VehicleParams,
) -> RobotState:
    """Advance the state by one RK4 step of length dt (dt in (0, 0.02] s)."""
    if not 0.0 < dt <= 0.02:
        raise ValueError(f"dt must lie in (0, 0.02] s, got {dt}")
    xn = rk4_step(state.as_array(), u.as_array(), mode, dt, params)
    if np.any(np.abs(xn) > DIVERGENCE_LIMIT) or not np.all(np.isfinite(xn)):
        raise DivergenceError(f"state diverged: {xn}")
    return RobotState.from_array(xn)


def rotor_power(u: ControlInput, params: VehicleParams) -> float:
    """Ideal (momentum theory) power of both rotors: sum sqrt(T^3 / (2 S rho))."""
    denom = 2.0 * params.S * params.rho
    total = 0.0
    for T in (u.T1, u.T2):
        if T < 0.0:
            raise ValueError("thrust must be non-negative")
        total += math.sqrt(T**3 / denom)
    return total


def mechanical_energy(state: RobotState, params: VehicleParams) -> float:
    """Kinetic plus gravitational potential energy (aerial mode)."""
    R = state.q.rotation_matrix()
    wb = R.T @ state.omega
    rot = 0.5 * float(wb @ (params.J * wb))
    trans = 0.5 * params.m * float(state.v @ state.v)
    pot = params.m * params.g * float(state.p[2])
    return trans + rot + pot


def thrust_power(state: RobotState, u: ControlInput, params: VehicleParams) -> float:
    """Mechanical power delivered by the actuators to the rigid body."""
    w = actuator_wrench(u, params)
    R = state.q.rotation_matrix()
    force_world = R @ w.T_B
    wb = R.T @ state.omega
    return float(force_world @ state.v) + float(w.tau_B @ wb)


# ---------------------------------------------------------------------------
# Simulator
# ---------------------------------------------------------------------------


@dataclass
class SimLogRow:
    t: float
    x: np.ndarray  # packed state (13,)
    u: np.ndarray  # (4,)
    F_n_left: float
    F_n_right: float
    f_l: float
    slip: int
    lift_off: int
    power: float


@dataclass
class Simulator:
    """Owns one vehicle state and integrates it with mode switching.

    Aerial -> Ground happens when the CoM reaches the contact height with
    non-positive vertical speed; Ground -> Aerial when the total normal
    force would go negative.  The optional stick/slip lateral friction model
    is off by default.
    """

    params: VehicleParams
    state: RobotState = None  # type: ignore[assignment]
    mode: Mode = Mode.AERIAL
    t: float = 0.0
    dt: float = 1e-3
    slip_enabled: bool = False
    contact_height: float = field(default=None)  # type: ignore[assignment]
    slipping: bool = False
    log: List[SimLogRow] = field(default_factory=list)
    record: bool = True
    lift_off_events: int = 0
    slip_steps: int = 0

    TOUCHDOWN_TOL = 1e-3

    def __post_init__(self):
        if self.state is None:
            self.state = RobotState.rest()
        if self.contact_height is None:
            self.contact_height = self.params.r

    @staticmethod
    def _lateral_speed(x: np.ndarray) -> float:
        _, psi, _, _, cpsi, spsi = _ground_geometry(x[None, :])
        return float(-x[3] * spsi[0] + x[4] * cpsi[0])

    def _try_touchdown(self, x: np.ndarray, u: np.ndarray) -> None:
        if x[2] > self.contact_height + self.TOUCHDOWN_TOL or x[5] > 0.0:
            return
        # grazing contact with thrust above the weight cannot load the
        # wheels; stay aerial until F_n would be non-negative
        _, diag = _f_ground_batch(x, u, self.params, slipping=False)
        if float(diag["F_n"]) < 0.0:
            return
        self.mode = Mode.GROUND
        x[2] = self.contact_height
        x[5] = 0.0
        lateral = self._lateral_speed(x)
        keep = self.slip_enabled and abs(lateral) > LATERAL_STICK_EPS
        _project_ground(x, keep_lateral=keep)
        self.slipping = keep
        self.state = RobotState.from_array(x)

    def apply(self, u: ControlInput, duration: float) -> None:
        """Hold the input for `duration` seconds, integrating at the sim rate."""
        ua = u.as_array()
        power = rotor_power(u, self.params) if self.record else 0.0
        n = max(1, round(duration / self.dt))
        for _ in range(n):
            x = self.state.as_array()
            if self.mode is Mode.AERIAL:
                self._try_touchdown(x, ua)
            if self.mode is Mode.GROUND:
                x = self.state.as_array()
                _, diag = _f_ground_batch(x, ua, self.params, slipping=self.slipping)
                F_n = float(diag["F_n"])
                if F_n < 0.0:
                    self.mode = Mode.AERIAL
                    self.slipping = False
                    if self.record:
                        self._record_aerial(x, ua, power)
                    self._integrate(x, ua)
                    continue
                if self.slip_enabled:
                    cap = self.params.mu_s * F_n
                    req = float(diag["f_l_req"])
                    w_lat = float(diag["w_lat"])
                    if not self.slipping and abs(req) > cap:
                        self.slipping = True
                        _, diag = _f_ground_batch(
                            x, ua, self.params, slipping=True
                        )
                    elif self.slipping and abs(w_lat) < LATERAL_STICK_EPS and abs(req) <= cap:
                        self.slipping = False
                        _project_ground(x, keep_lateral=False)
                        self.state = RobotState.from_array(x)
                        _, diag = _f_ground_batch(
                            x, ua, self.params, slipping=False
                        )
                if self.record:
                    Fl = max(float(diag["F_nl"]), 0.0)
                    Fr = max(float(diag["F_nr"]), 0.0)
                    lift = bool(diag["lift_off"])
                    if lift:
                        self.lift_off_events += 1
                    if self.slipping:
                        self.slip_steps += 1
                    self.log.append(
                        SimLogRow(
                            t=self.t, x=x.copy(), u=ua.copy(),
                            F_n_left=Fl, F_n_right=Fr, f_l=float(diag["f_l"]),
                            slip=int(self.slipping), lift_off=int(lift), power=power,
                        )
                    )
            elif self.record:
                self._record_aerial(x, ua, power)
            self._integrate(x, ua)

    def _record_aerial(self, x: np.ndarray, ua: np.ndarray, power: float) -> None:
        self.log.append(
            SimLogRow(
                t=self.t, x=x.copy(), u=ua.copy(),
                F_n_left=0.0, F_n_right=0.0, f_l=0.0, slip=0, lift_off=0, power=power,
            )
        )

    def _integrate(self, x: np.ndarray, ua: np.ndarray) -> None:
        xn = rk4_step(x, ua, self.mode, self.dt, self.params, self.slipping)
        if np.any(np.abs(xn) > DIVERGENCE_LIMIT) or not np.all(np.isfinite(xn)):
            raise DivergenceError(
                f"simulation diverged at t={self.t:.4f}s (mode {self.mode.name})"
            )
        self.state = RobotState.from_array(xn)
        self.t += self.dt
