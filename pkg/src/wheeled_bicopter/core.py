"""Shared domain types and rotation algebra for the wheeled bi-copter toolkit.

Conventions used throughout the package:

* World frame W: z up, gravity (0, 0, -g).
* Intermediate frame G: world frame yawed about z so that x_G follows the
  vehicle heading.
* Body frame B: x forward, z up through the body; thrust lies in the y-z
  body plane.
* Euler angles are intrinsic Z-Y-X (yaw psi, pitch theta, roll phi), so the
  rotation matrix is R = Rz(psi) @ Ry(theta) @ Rx(phi).
* Quaternions are scalar-first (w, x, y, z) and unit-norm.
* Angular velocity `omega` is expressed in the world frame and satisfies
  Rdot = skew(omega) @ R.

Vectors are plain float64 numpy arrays of shape (3,); `vec3` is a small
constructor helper.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Tuple

import numpy as np

Vec3 = np.ndarray  # shape (3,), float64

GRAVITY = 9.81

# Gimbal-lock guard band for the Euler inverse map: |theta| > pi/2 - this
# is rejected.
GIMBAL_LOCK_MARGIN = 1e-3

# Speed dead-band below which heading/rolling-friction direction is undefined.
SPEED_EPS = 0.01


class ConfigError(ValueError):
    """Invalid configuration or parameter set."""


class GimbalLockError(ValueError):
    """Euler extraction requested too close to |pitch| = pi/2."""


class InfeasibleReferenceError(ValueError):
    """A flat sample cannot be realized by the vehicle model."""


class ContactLossError(RuntimeError):
    """Ground-mode force balance produced a non-positive total normal force."""


class DivergenceError(RuntimeError):
    """Simulation state left the sane numeric range."""


def vec3(x: float, y: float, z: float) -> Vec3:
    return np.array([float(x), float(y), float(z)])


def skew(w) -> np.ndarray:
    """Cross-product matrix: skew(w) @ a == cross(w, a)."""
    w = np.asarray(w, dtype=float)
    return np.array(
        [
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ]
    )


def yaw_rotation(psi: float) -> np.ndarray:
    """Rotation from the intermediate (heading) frame to the world frame.

    Pure yaw about world z; the third column is always (0, 0, 1).
    """
    c, s = math.cos(psi), math.sin(psi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


# ---------------------------------------------------------------------------
# Quaternion helpers (scalar-first, unit norm)
# ---------------------------------------------------------------------------


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = math.sqrt(float(q @ q))
    if n < 1e-12:
        raise ValueError("cannot normalize near-zero quaternion")
    return q / n


def quat_multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    xx, yy, zz = x * x, y * y, z * z
    wx, wy, wz = w * x, w * y, w * z
    xy, xz, yz = x * y, x * z, y * z
    return np.array(
        [
            [1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy)],
            [2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx)],
            [2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy)],
        ]
    )


def quat_from_euler(phi: float, theta: float, psi: float) -> np.ndarray:
    """Unit quaternion for the intrinsic Z-Y-X rotation Rz(psi)Ry(theta)Rx(phi)."""
    cphi, sphi = math.cos(phi / 2), math.sin(phi / 2)
    cth, sth = math.cos(theta / 2), math.sin(theta / 2)
    cpsi, spsi = math.cos(psi / 2), math.sin(psi / 2)
    return np.array(
        [
            cpsi * cth * cphi + spsi * sth * sphi,
            cpsi * cth * sphi - spsi * sth * cphi,
            cpsi * sth * cphi + spsi * cth * sphi,
            spsi * cth * cphi - cpsi * sth * sphi,
        ]
    )


def quat_to_euler(q) -> Tuple[float, float, float]:
    """Z-Y-X Euler angles (phi, theta, psi) of a unit quaternion.

    Raises GimbalLockError when |theta| exceeds pi/2 - GIMBAL_LOCK_MARGIN.
    """
    w, x, y, z = q
    sin_theta = 2.0 * (w * y - z * x)
    if abs(sin_theta) > math.sin(math.pi / 2 - GIMBAL_LOCK_MARGIN):
        raise GimbalLockError(f"pitch too close to +-pi/2 (sin(theta)={sin_theta:.6f})")
    phi = math.atan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y))
    theta = math.asin(max(-1.0, min(1.0, sin_theta)))
    psi = math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))
    return phi, theta, psi


def quat_derivative(q, omega_world) -> np.ndarray:
    """Quaternion rate for world-frame angular velocity (Rdot = skew(w) R)."""
    ow = np.array([0.0, omega_world[0], omega_world[1], omega_world[2]])
    return 0.5 * quat_multiply(ow, q)


@dataclass
class Orientation:
    """Unit-quaternion attitude with rotation-matrix and Euler views."""

    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        self.q = quat_normalize(self.q)

    @classmethod
    def identity(cls) -> "Orientation":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_euler(cls, phi: float, theta: float, psi: float) -> "Orientation":
        return cls(quat_from_euler(phi, theta, psi))

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def to_euler(self) -> Tuple[float, float, float]:
        return quat_to_euler(self.q)

    def rotate(self, v) -> Vec3:
        return self.rotation_matrix() @ np.asarray(v, dtype=float)

    def normalized(self) -> "Orientation":
        return Orientation(self.q)


def euler_to_orientation(phi: float, theta: float, psi: float) -> Orientation:
    return Orientation.from_euler(phi, theta, psi)


def orientation_to_euler(o: Orientation) -> Tuple[float, float, float]:
    return o.to_euler()


# ---------------------------------------------------------------------------
# State, input, mode
# ---------------------------------------------------------------------------


class Mode(Enum):
    """Locomotion mode; `s` is the ground-interaction switch of the dynamics."""

    AERIAL = 0
    GROUND = 1

    @property
    def s(self) -> int:
        return self.value


@dataclass
class RobotState:
    """Vehicle state: position/velocity (world), attitude, world-frame angular rate."""

    p: Vec3
    v: Vec3
    q: Orientation
    omega: Vec3

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if not isinstance(self.q, Orientation):
            self.q = Orientation(np.asarray(self.q, dtype=float))
        self.omega = np.asarray(self.omega, dtype=float)
        if not (
            np.all(np.isfinite(self.p))
            and np.all(np.isfinite(self.v))
            and np.all(np.isfinite(self.omega))
        ):
            raise ValueError("non-finite state component")

    @classmethod
    def rest(cls, p=(0.0, 0.0, 0.0), psi: float = 0.0) -> "RobotState":
        return cls(
            vec3(*p), np.zeros(3), Orientation.from_euler(0.0, 0.0, psi), np.zeros(3)
        )

    def as_array(self) -> np.ndarray:
        """Pack as [p(3), v(3), q(4), omega(3)]."""
        return np.concatenate([self.p, self.v, self.q.q, self.omega])

    @classmethod
    def from_array(cls, x) -> "RobotState":
        x = np.asarray(x, dtype=float)
        return cls(x[0:3].copy(), x[3:6].copy(), Orientation(x[6:10]), x[10:13].copy())


@dataclass
class ControlInput:
    """Two rotor thrusts [N] and two servo tilt angles [rad]."""

    T1: float
    T2: float
    delta1: float
    delta2: float

    def as_array(self) -> np.ndarray:
        return np.array([self.T1, self.T2, self.delta1, self.delta2])

    @classmethod
    def from_array(cls, u) -> "ControlInput":
        return cls(float(u[0]), float(u[1]), float(u[2]), float(u[3]))

    def validate(self, params: "VehicleParams") -> None:
        if not (0.0 <= self.T1 <= params.T_max and 0.0 <= self.T2 <= params.T_max):
            raise ValueError(
                f"thrust out of [0, {params.T_max}]: T1={self.T1}, T2={self.T2}"
            )
        if max(abs(self.delta1), abs(self.delta2)) > params.delta_max:
            raise ValueError(
                f"servo angle out of [-{params.delta_max}, {params.delta_max}]"
            )


@dataclass
class VehicleParams:
    """Physical constants of the vehicle and environment.

    Defaults are the prototype values used throughout the package; `c_q` and
    the friction coefficients are not part of that table and default to
    typical micro-air-vehicle magnitudes. `S` is the swept area of one
    5-inch propeller.
    """

    m: float = 0.83  # total mass [kg]
    m_w: float = 0.09  # single wheel mass [kg]
    J: np.ndarray = field(
        default_factory=lambda: np.array([4.1e-3, 2.8e-3, 3.5e-3])
    )  # diagonal inertia [kg m^2]
    l: float = 0.07  # rotor arm length [m]
    h1: float = 0.04  # servo axis to CoM, along body z [m]
    h2: float = 0.02  # wheel axle to CoM lever of the gravity pitch term [m]
    r: float = 0.15  # wheel radius [m]
    W: float = 0.09  # wheel to CoM lateral distance [m]
    mu: float = 0.01  # rolling friction coefficient
    mu_s: float = 0.8  # lateral (sticking) friction coefficient
    c_t: float = 1.75e-8  # thrust coefficient [N s^2]
    c_q: float = 1.75e-10  # rotor torque coefficient [N m s^2]
    g: float = GRAVITY
    T_max: float = 8.0  # per-rotor thrust cap [N]
    delta_max: float = math.pi / 4  # servo travel [rad]
    rho: float = 1.225  # air density [kg/m^3]
    S: float = math.pi * 0.0635**2  # rotor disk area [m^2]

    def __post_init__(self):
        self.J = np.asarray(self.J, dtype=float)
        if self.J.ndim == 2:
            off = self.J - np.diag(np.diag(self.J))
            if np.any(off != 0.0):
                raise ConfigError("inertia must be diagonal")
            self.J = np.diag(self.J).copy()
        if self.J.shape != (3,):
            raise ConfigError(f"inertia must be 3 diagonal entries, got {self.J.shape}")
        positive = {
            "m": self.m,
            "m_w": self.m_w,
            "l": self.l,
            "h1": self.h1,
            "h2": self.h2,
            "r": self.r,
            "W": self.W,
            "c_t": self.c_t,
            "c_q": self.c_q,
            "g": self.g,
            "T_max": self.T_max,
            "delta_max": self.delta_max,
            "rho": self.rho,
            "S": self.S,
        }
        for name, value in positive.items():
            if not (np.isfinite(value) and value > 0.0):
                raise ConfigError(f"{name} must be strictly positive, got {value}")
        if np.any(self.J <= 0.0) or not np.all(np.isfinite(self.J)):
            raise ConfigError("inertia entries must be strictly positive")
        if self.mu < 0.0 or self.mu_s < 0.0:
            raise ConfigError("friction coefficients must be non-negative")
        if not self.h1 < self.r:
            raise ConfigError("h1 must be smaller than the wheel radius r")
        if self.m <= 2 * self.m_w:
            raise ConfigError("total mass must exceed the two wheel masses")
        self.J_inv = 1.0 / self.J

    @property
    def weight(self) -> float:
        return self.m * self.g

    @property
    def hover_thrust_per_rotor(self) -> float:
        return self.weight / 2.0

    @classmethod
    def from_dict(cls, d: dict) -> "VehicleParams":
        known = {
            "m",
            "m_w",
            "J",
            "l",
            "h1",
            "h2",
            "r",
            "W",
            "mu",
            "mu_s",
            "c_t",
            "c_q",
            "g",
            "T_max",
            "delta_max",
            "rho",
            "S",
        }
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown vehicle parameter keys: {sorted(unknown)}")
        return cls(**d)


def unwrap_angles(values: Iterable[float]) -> np.ndarray:
    """Unwrap a sequence of angles so consecutive samples differ by < pi."""
    vals = list(values)
    if not vals:
        return np.empty(0)
    out = [vals[0]]
    for a in vals[1:]:
        prev = out[-1]
        k = round((prev - a) / (2 * math.pi))
        out.append(a + 2 * math.pi * k)
    return np.array(out)
