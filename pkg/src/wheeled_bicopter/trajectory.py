"""Closed-form flat trajectory generators with analytic derivatives.

Segments produce position derivatives up to 4th order (the ground transform
needs snap for the angular accelerations), a mode annotation, a yaw policy
for aerial samples and a vertical-thrust profile for ground samples.  A
HybridTrajectory concatenates segments, checks joint continuity, and samples
mode-appropriate reference points through the flatness transforms.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import SPEED_EPS, Mode, VehicleParams
from .flatness import (
    FlatSampleAerial,
    FlatSampleGround,
    ReferencePoint,
    aerial_flat_to_reference,
    ground_flat_to_reference,
)


def _tangent_yaw_derivatives(v, a, j) -> Tuple[float, float]:
    vx, vy = float(v[0]), float(v[1])
    ax, ay = float(a[0]), float(a[1])
    jx, jy = float(j[0]), float(j[1])
    den = vx * vx + vy * vy
    num = vx * ay - vy * ax
    chi_dot = num / den
    chi_ddot = ((vx * jy - vy * jx) * den - num * 2.0 * (vx * ax + vy * ay)) / (den * den)
    return chi_dot, chi_ddot


class Segment:
    """Base flat-trajectory segment; local time runs over [0, duration]."""

    duration: float
    mode: Mode
    alpha: int = 1

    def flat(self, tau: float) -> np.ndarray:
        """Stack (5, 3) of position derivatives [p, v, a, j, s] at local time."""
        raise NotImplementedError

    def thrust_profile(self, tau: float) -> Tuple[float, float, float]:
        """Ground vertical body thrust (value, rate, accel) at local time."""
        return self._T_Bz, 0.0, 0.0

    def heading_hint(self, tau: float) -> Optional[float]:
        return getattr(self, "psi0", None)

    def yaw(self, tau: float) -> Optional[Tuple[float, float, float]]:
        """Aerial yaw profile; None means heading-tangent yaw."""
        return None

    def end_flat(self) -> np.ndarray:
        return self.flat(self.duration)

    def start_flat(self) -> np.ndarray:
        return self.flat(0.0)


@dataclass
class Lemniscate(Segment):
    """Figure-eight Lissajous curve x = A sin(w t), y = B sin(2 w t)."""

    A: float
    B: float
    omega: float
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    mode: Mode = Mode.GROUND
    laps: float = 1.0
    T_Bz: float = 0.0
    alpha: int = 1

    def __post_init__(self):
        if min(self.A, self.B, self.omega) <= 0:
            raise ValueError("lemniscate parameters must be positive")
        self.center = np.asarray(self.center, dtype=float)
        self.duration = self.laps * 2.0 * math.pi / self.omega
        self._T_Bz = self.T_Bz

    def flat(self, tau: float) -> np.ndarray:
        w = self.omega
        s1, c1 = math.sin(w * tau), math.cos(w * tau)
        s2, c2 = math.sin(2 * w * tau), math.cos(2 * w * tau)
        A, B = self.A, self.B
        out = np.zeros((5, 3))
        out[0] = self.center + np.array([A * s1, B * s2, 0.0])
        out[1] = [A * w * c1, 2 * B * w * c2, 0.0]
        out[2] = [-A * w**2 * s1, -4 * B * w**2 * s2, 0.0]
        out[3] = [-A * w**3 * c1, -8 * B * w**3 * c2, 0.0]
        out[4] = [A * w**4 * s1, 16 * B * w**4 * s2, 0.0]
        return out


@dataclass
class Circle(Segment):
    radius: float
    omega: float
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    mode: Mode = Mode.GROUND
    laps: float = 1.0
    T_Bz: float = 0.0
    alpha: int = 1

    def __post_init__(self):
        if min(self.radius, self.omega) <= 0:
            raise ValueError("circle parameters must be positive")
        self.center = np.asarray(self.center, dtype=float)
        self.duration = self.laps * 2.0 * math.pi / self.omega
        self._T_Bz = self.T_Bz

    def flat(self, tau: float) -> np.ndarray:
        w, R = self.omega, self.radius
        c, s = math.cos(w * tau), math.sin(w * tau)
        out = np.zeros((5, 3))
        out[0] = self.center + np.array([R * c, R * s, 0.0])
        out[1] = [-R * w * s, R * w * c, 0.0]
        out[2] = [-R * w**2 * c, -R * w**2 * s, 0.0]
        out[3] = [R * w**3 * s, -R * w**3 * c, 0.0]
        out[4] = [R * w**4 * c, R * w**4 * s, 0.0]
        return out


@dataclass
class Line(Segment):
    """Constant-velocity straight segment."""

    p0: np.ndarray
    velocity: np.ndarray
    duration: float
    mode: Mode = Mode.GROUND
    T_Bz: float = 0.0
    alpha: int = 1

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        self.p0 = np.asarray(self.p0, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        self._T_Bz = self.T_Bz
        self.psi0 = math.atan2(self.velocity[1], self.velocity[0])

    def flat(self, tau: float) -> np.ndarray:
        out = np.zeros((5, 3))
        out[0] = self.p0 + self.velocity * tau
        out[1] = self.velocity
        return out

    def yaw(self, tau: float):
        if self.mode is Mode.AERIAL:
            return self.psi0, 0.0, 0.0
        return None


@dataclass
class Rest(Segment):
    """Standstill with a fixed heading and an optionally ramped thrust."""

    p0: np.ndarray
    psi0: float
    duration: float
    mode: Mode = Mode.GROUND
    T_Bz: float = 0.0
    T_Bz_end: Optional[float] = None
    alpha: int = 1

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        self.p0 = np.asarray(self.p0, dtype=float)
        self._T_Bz = self.T_Bz

    def flat(self, tau: float) -> np.ndarray:
        out = np.zeros((5, 3))
        out[0] = self.p0
        return out

    def thrust_profile(self, tau: float) -> Tuple[float, float, float]:
        if self.T_Bz_end is None:
            return self.T_Bz, 0.0, 0.0
        # smoothstep quintic ramp: C2 in time
        T = self.duration
        x = min(max(tau / T, 0.0), 1.0)
        s = x**3 * (10 - 15 * x + 6 * x * x)
        sd = (30 * x**2 - 60 * x**3 + 30 * x**4) / T
        sdd = (60 * x - 180 * x**2 + 120 * x**3) / T**2
        dT = self.T_Bz_end - self.T_Bz
        return self.T_Bz + dT * s, dT * sd, dT * sdd

    def yaw(self, tau: float):
        if self.mode is Mode.AERIAL:
            return self.psi0, 0.0, 0.0
        return None


@dataclass
class StraightRamp(Segment):
    """Straight-line speed change along a fixed direction (quintic speed
    profile); heading stays constant so it is safe through zero speed."""

    p0: np.ndarray
    direction: np.ndarray  # unit-norm planar direction
    v_start: float
    v_end: float
    duration: float
    mode: Mode = Mode.GROUND
    T_Bz: float = 0.0
    alpha: int = 1

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        self.p0 = np.asarray(self.p0, dtype=float)
        d = np.asarray(self.direction, dtype=float)
        self.direction = d / np.linalg.norm(d)
        self._T_Bz = self.T_Bz
        self.psi0 = math.atan2(self.direction[1], self.direction[0])
        # arc length chosen so accel vanishes at both ends
        L = 0.5 * (self.v_start + self.v_end) * self.duration
        self._c = _quintic_coeffs(0.0, self.v_start, 0.0, L, self.v_end, 0.0, self.duration)

    def flat(self, tau: float) -> np.ndarray:
        out = np.zeros((5, 3))
        out[0] = self.p0 + self.direction * _quintic_eval(self._c, tau, 0)
        for order in range(1, 5):
            out[order] = self.direction * _quintic_eval(self._c, tau, order)
        return out

    def yaw(self, tau: float):
        if self.mode is Mode.AERIAL:
            return self.psi0, 0.0, 0.0
        return None


def _quintic_coeffs(y0, yd0, ydd0, y1, yd1, ydd1, T):
    """Quintic polynomial coefficients matching value/rate/accel at 0 and T."""
    a0, a1, a2 = y0, yd0, 0.5 * ydd0
    T2, T3, T4, T5 = T**2, T**3, T**4, T**5
    b0 = y1 - (a0 + a1 * T + a2 * T2)
    b1 = yd1 - (a1 + 2 * a2 * T)
    b2 = ydd1 - 2 * a2
    a3 = (20 * b0 - 8 * b1 * T + b2 * T2) / (2 * T3)
    a4 = (-30 * b0 + 14 * b1 * T - 2 * b2 * T2) / (2 * T4)
    a5 = (12 * b0 - 6 * b1 * T + b2 * T2) / (2 * T5)
    return np.array([a0, a1, a2, a3, a4, a5])


def _quintic_eval(c, tau, order):
    # derivatives of sum c_k tau^k up to the requested order
    out = 0.0
    for k in range(order, 6):
        f = 1.0
        for j in range(order):
            f *= k - j
        out += c[k] * f * tau ** (k - order)
    return out


@dataclass
class QuinticBlend(Segment):
    """C2 polynomial bridge between two flat states (per-coordinate quintic).

    Optionally carries a quintic yaw profile (aerial) and a thrust ramp
    (ground); used for mode-transition blends and speed-up/slow-down legs.
    """

    start: np.ndarray  # (3, 3): p, v, a rows
    end: np.ndarray
    duration: float
    mode: Mode = Mode.AERIAL
    T_Bz: float = 0.0
    yaw_bc: Optional[Tuple[float, float, float, float, float, float]] = None
    psi0: Optional[float] = None
    alpha: int = 1

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        self.start = np.asarray(self.start, dtype=float)
        self.end = np.asarray(self.end, dtype=float)
        self._T_Bz = self.T_Bz
        self._coeffs = [
            _quintic_coeffs(
                self.start[0, i], self.start[1, i], self.start[2, i],
                self.end[0, i], self.end[1, i], self.end[2, i], self.duration,
            )
            for i in range(3)
        ]
        if self.yaw_bc is not None:
            p0, pd0, pdd0, p1, pd1, pdd1 = self.yaw_bc
            self._yaw_coeffs = _quintic_coeffs(p0, pd0, pdd0, p1, pd1, pdd1, self.duration)
        else:
            self._yaw_coeffs = None

    def flat(self, tau: float) -> np.ndarray:
        out = np.zeros((5, 3))
        for i in range(3):
            c = self._coeffs[i]
            for order in range(5):
                out[order, i] = _quintic_eval(c, tau, order)
        return out

    def yaw(self, tau: float):
        if self._yaw_coeffs is not None:
            c = self._yaw_coeffs
            return (
                _quintic_eval(c, tau, 0),
                _quintic_eval(c, tau, 1),
                _quintic_eval(c, tau, 2),
            )
        if self.mode is Mode.AERIAL:
            return None  # tangent yaw
        return None


@dataclass
class TimeDilated(Segment):
    """Uniform time dilation of an inner segment (slower by `factor`)."""

    inner: Segment
    factor: float

    def __post_init__(self):
        if self.factor <= 0:
            raise ValueError("dilation factor must be positive")
        self.duration = self.inner.duration * self.factor
        self.mode = self.inner.mode
        self.alpha = self.inner.alpha

    def flat(self, tau: float) -> np.ndarray:
        out = self.inner.flat(tau / self.factor).copy()
        for order in range(1, 5):
            out[order] /= self.factor**order
        return out

    def thrust_profile(self, tau: float):
        T, dT, ddT = self.inner.thrust_profile(tau / self.factor)
        return T, dT / self.factor, ddT / self.factor**2

    def heading_hint(self, tau: float):
        return self.inner.heading_hint(tau / self.factor)

    def yaw(self, tau: float):
        y = self.inner.yaw(tau / self.factor)
        if y is None:
            return None
        return y[0], y[1] / self.factor, y[2] / self.factor**2


@dataclass
class ScaleReport:
    segment: Segment
    peak_speed: float
    peak_accel: float
    dilation: float


def segment_peaks(seg: Segment, n: int = 2001) -> Tuple[float, float]:
    taus = np.linspace(0.0, seg.duration, n)
    pv = pa = 0.0
    for tau in taus:
        f = seg.flat(float(tau))
        pv = max(pv, float(np.linalg.norm(f[1])))
        pa = max(pa, float(np.linalg.norm(f[2])))
    return pv, pa


def scale_to_limits(seg: Segment, v_max: float, a_max: float) -> ScaleReport:
    """Uniformly dilate time so the realized peak speed equals
    min(v_max, acceleration-limited speed) and peak accel stays <= a_max."""
    if v_max <= 0 or a_max <= 0:
        raise ValueError("limits must be positive")
    pv, pa = segment_peaks(seg)
    factor = max(1.0, pv / v_max, math.sqrt(pa / a_max))
    scaled = TimeDilated(seg, factor) if factor != 1.0 else seg
    rv, ra = segment_peaks(scaled)
    return ScaleReport(segment=scaled, peak_speed=rv, peak_accel=ra, dilation=factor)


def takeoff_landing_blend(
    from_seg: Segment,
    to_seg: Segment,
    T_blend: float,
    a_max: Optional[float] = None,
    yaw_bc: Optional[Tuple[float, float, float, float, float, float]] = None,
    psi0: Optional[float] = None,
) -> QuinticBlend:
    """Quintic bridge from the end of one segment to the start of the next,
    matching position, velocity and acceleration at both ends.  If the blend
    would exceed a_max its duration is extended (with a warning)."""
    start = from_seg.end_flat()[:3]
    end = to_seg.start_flat()[:3]
    T = T_blend
    for _ in range(16):
        blend = QuinticBlend(
            start=start, end=end, duration=T, mode=Mode.AERIAL, yaw_bc=yaw_bc, psi0=psi0
        )
        if a_max is None:
            return blend
        _, pa = segment_peaks(blend, n=501)
        if pa <= a_max:
            if T > T_blend:
                warnings.warn(
                    f"blend duration extended {T_blend:.2f}s -> {T:.2f}s to respect a_max"
                )
            return blend
        T *= 1.25
    raise ValueError("could not satisfy a_max by extending the blend")


@dataclass
class HybridTrajectory:
    """Ordered flat segments with machine-checked joint continuity."""

    segments: Sequence[Segment]
    t0: float = 0.0
    joint_tol: float = 1e-6

    def __post_init__(self):
        if not self.segments:
            raise ValueError("trajectory needs at least one segment")
        self.starts = np.concatenate(
            [[0.0], np.cumsum([s.duration for s in self.segments])]
        )
        for i in range(len(self.segments) - 1):
            a = self.segments[i].end_flat()
            b = self.segments[i + 1].start_flat()
            gap_p = np.max(np.abs(a[0] - b[0]))
            gap_v = np.max(np.abs(a[1] - b[1]))
            if gap_p > self.joint_tol or gap_v > self.joint_tol:
                raise ValueError(
                    f"discontinuous joint between segments {i} and {i+1}: "
                    f"|dp|={gap_p:.2e}, |dv|={gap_v:.2e}"
                )

    @property
    def duration(self) -> float:
        return float(self.starts[-1])

    def locate(self, t: float) -> Tuple[Segment, float]:
        tau = t - self.t0
        if tau >= self.duration:
            seg = self.segments[-1]
            return seg, seg.duration
        tau = max(tau, 0.0)
        idx = int(np.searchsorted(self.starts, tau, side="right") - 1)
        idx = min(idx, len(self.segments) - 1)
        return self.segments[idx], tau - float(self.starts[idx])

    def reference(
        self,
        t: float,
        params: VehicleParams,
        psi_hint: Optional[float] = None,
        clamp: bool = False,
    ) -> ReferencePoint:
        seg, tau = self.locate(t)
        past_end = (t - self.t0) >= self.duration
        f = seg.flat(tau)
        if past_end:
            f = f.copy()
            f[1:] = 0.0
        if seg.mode is Mode.GROUND:
            T, dT, ddT = seg.thrust_profile(tau)
            if past_end:
                dT = ddT = 0.0
            hint = psi_hint if psi_hint is not None else seg.heading_hint(tau)
            sample = FlatSampleGround(
                p=f[0], v=f[1], a=f[2], j=f[3], s=f[4],
                T_Bz=T, dT_Bz=dT, ddT_Bz=ddT, alpha=seg.alpha, t=t, psi_hint=hint,
            )
            return ground_flat_to_reference(sample, params, clamp=clamp)
        yaw = seg.yaw(tau)
        if yaw is None:
            speed = math.hypot(f[1][0], f[1][1])
            if speed < SPEED_EPS or past_end:
                base = psi_hint if psi_hint is not None else (seg.heading_hint(tau) or 0.0)
                yaw = (base, 0.0, 0.0)
            else:
                chi = math.atan2(f[1][1], f[1][0])
                if psi_hint is not None:
                    chi += 2 * math.pi * round((psi_hint - chi) / (2 * math.pi))
                cd, cdd = _tangent_yaw_derivatives(f[1], f[2], f[3])
                yaw = (chi, cd, cdd)
        if past_end:
            yaw = (yaw[0], 0.0, 0.0)
        sample = FlatSampleAerial(
            p=f[0], v=f[1], a=f[2], j=f[3], s=f[4],
            psi=yaw[0], psi_dot=yaw[1], psi_ddot=yaw[2], t=t,
        )
        return aerial_flat_to_reference(sample, params, clamp=clamp)

    def sample_references(
        self, t0: float, K: int, dt: float, params: VehicleParams, clamp: bool = False
    ) -> List[ReferencePoint]:
        """K+1 reference points starting at t0, spaced dt apart, with the
        heading thread kept continuous across the window."""
        refs: List[ReferencePoint] = []
        hint: Optional[float] = None
        for k in range(K + 1):
            try:
                ref = self.reference(t0 + k * dt, params, psi_hint=hint, clamp=clamp)
            except Exception as exc:
                raise type(exc)(f"sample {k} (t={t0 + k * dt:.3f}s): {exc}") from exc
            refs.append(ref)
            hint = ref.psi
        return refs
