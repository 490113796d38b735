"""Point-object vehicle kinematics and trajectories.

The vehicle is reduced to a point with pitch/yaw-rate and forward-speed
controls, roll locked to zero. Waypoint paths are Catmull–Rom Hermite
splines with analytic derivatives (these feed the IMU ground truth);
orientations face along the velocity and slerp between waypoint keys.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rotations import (
    IDENTITY_QUAT,
    heading_quat,
    quat_conjugate,
    quat_from_yaw_pitch,
    quat_multiply,
    quat_normalize,
    quat_rotate,
    quat_slerp,
    quat_to_rotvec,
    yaw_pitch_from_quat,
)

ANGULAR_FD_STEP = 1e-3  # 1 kHz internal differencing for angular velocity
PITCH_LIMIT = np.radians(85.0)  # stay clear of the gimbal singularity


class PathError(ValueError):
    pass


@dataclass
class PoseSample:
    t: float
    position: np.ndarray  # world, z-up
    orientation: np.ndarray  # [x,y,z,w], body FLU -> world
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))  # world
    acceleration: np.ndarray = field(default_factory=lambda: np.zeros(3))  # world
    angular_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))  # body

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.orientation = np.asarray(self.orientation, dtype=float)
        n = np.linalg.norm(self.orientation)
        if abs(n - 1.0) > 1e-9:
            raise ValueError("orientation quaternion must be unit norm")
        self.velocity = np.asarray(self.velocity, dtype=float)
        self.acceleration = np.asarray(self.acceleration, dtype=float)
        self.angular_velocity = np.asarray(self.angular_velocity, dtype=float)


@dataclass(frozen=True)
class ControlLimits:
    max_pitch_rate: float = 0.5  # rad/s
    max_yaw_rate: float = 0.5  # rad/s
    max_speed: float = 1.0  # m/s


@dataclass(frozen=True)
class ControlCommand:
    pitch_rate: float = 0.0
    yaw_rate: float = 0.0
    forward_speed: float = 0.0

    def clamped(self, limits: ControlLimits) -> "ControlCommand":
        return ControlCommand(
            pitch_rate=float(np.clip(self.pitch_rate, -limits.max_pitch_rate, limits.max_pitch_rate)),
            yaw_rate=float(np.clip(self.yaw_rate, -limits.max_yaw_rate, limits.max_yaw_rate)),
            forward_speed=float(np.clip(self.forward_speed, 0.0, limits.max_speed)),
        )


@dataclass(frozen=True)
class ControlLabel:
    pitch_class: int
    yaw_class: int

    def __post_init__(self):
        if not (0 <= self.pitch_class <= 6 and 0 <= self.yaw_class <= 6):
            raise ValueError("control classes must lie in 0..6")


@dataclass
class Trajectory:
    """Cubic Hermite position segments plus slerped orientation keys."""

    times: np.ndarray  # (n,) strictly increasing key times
    positions: np.ndarray  # (n, 3)
    tangents: np.ndarray  # (n, 3) dp/dt at the keys
    orientations: np.ndarray  # (n, 4) quats at the keys
    hover: bool = False

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float)
        self.tangents = np.asarray(self.tangents, dtype=float)
        self.orientations = np.asarray(self.orientations, dtype=float)
        if not self.hover and np.any(np.diff(self.times) <= 0):
            raise PathError("key times must be strictly increasing")

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def t1(self) -> float:
        return float(self.times[-1])

    @property
    def duration(self) -> float:
        return self.t1 - self.t0

    @classmethod
    def hover_at(
        cls, position, orientation=None, duration: float = 10.0, t_start: float = 0.0
    ) -> "Trajectory":
        q = IDENTITY_QUAT if orientation is None else quat_normalize(orientation)
        p = np.asarray(position, dtype=float)
        return cls(
            times=np.array([t_start, t_start + duration]),
            positions=np.stack([p, p]),
            tangents=np.zeros((2, 3)),
            orientations=np.stack([q, q]),
            hover=True,
        )


def fit_path(waypoints, cruise_speed: float, hover_duration: float = 10.0) -> Trajectory:
    """Catmull–Rom interpolation through the waypoints at roughly cruise speed.

    Timestamps come from cumulative chord length; orientations face along the
    velocity with zero roll. All-identical waypoints degenerate to a hover.
    """
    wp = np.atleast_2d(np.asarray(waypoints, dtype=float))
    if len(wp) < 2:
        raise PathError("need at least 2 waypoints")
    if cruise_speed <= 0:
        raise PathError("cruise_speed must be positive")
    if np.all(wp == wp[0]):
        return Trajectory.hover_at(wp[0], duration=hover_duration)
    seg = np.linalg.norm(np.diff(wp, axis=0), axis=1)
    if np.any(seg == 0):
        raise PathError("repeated consecutive waypoints")

    times = np.concatenate([[0.0], np.cumsum(seg)]) / cruise_speed
    n = len(wp)
    tangents = np.empty_like(wp)
    tangents[0] = (wp[1] - wp[0]) / (times[1] - times[0])
    tangents[-1] = (wp[-1] - wp[-2]) / (times[-1] - times[-2])
    if n > 2:
        dt = (times[2:] - times[:-2])[:, None]
        tangents[1:-1] = (wp[2:] - wp[:-2]) / dt

    quats = np.empty((n, 4))
    for i in range(n):
        quats[i] = heading_quat(tangents[i])
        if i and quats[i] @ quats[i - 1] < 0:
            quats[i] = -quats[i]
    return Trajectory(times=times, positions=wp, tangents=tangents, orientations=quats)


def _hermite(traj: Trajectory, ts: np.ndarray):
    """Positions, velocities, accelerations at times ts (k,)."""
    i = np.clip(np.searchsorted(traj.times, ts, side="right") - 1, 0, len(traj.times) - 2)
    h = (traj.times[i + 1] - traj.times[i])[:, None]
    s = ((ts - traj.times[i]) / h[:, 0])[:, None]
    p0, p1 = traj.positions[i], traj.positions[i + 1]
    m0, m1 = traj.tangents[i] * h, traj.tangents[i + 1] * h

    s2, s3 = s * s, s * s * s
    pos = (
        (2 * s3 - 3 * s2 + 1) * p0 + (s3 - 2 * s2 + s) * m0
        + (-2 * s3 + 3 * s2) * p1 + (s3 - s2) * m1
    )
    vel = (
        (6 * s2 - 6 * s) * p0 + (3 * s2 - 4 * s + 1) * m0
        + (-6 * s2 + 6 * s) * p1 + (3 * s2 - 2 * s) * m1
    ) / h
    acc = (
        (12 * s - 6) * p0 + (6 * s - 4) * m0 + (-12 * s + 6) * p1 + (6 * s - 2) * m1
    ) / (h * h)
    return pos, vel, acc, i, s[:, 0]


def _orientation_at(traj: Trajectory, ts: np.ndarray) -> np.ndarray:
    i = np.clip(np.searchsorted(traj.times, ts, side="right") - 1, 0, len(traj.times) - 2)
    s = (ts - traj.times[i]) / (traj.times[i + 1] - traj.times[i])
    return quat_slerp(traj.orientations[i], traj.orientations[i + 1], s)


def sample_poses(traj: Trajectory, ts) -> list:
    """Batch pose sampling with analytic derivatives; ts must lie in range."""
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    if np.any(ts < traj.t0 - 1e-12) or np.any(ts > traj.t1 + 1e-12):
        raise ValueError(f"sample time outside [{traj.t0}, {traj.t1}]")
    ts = np.clip(ts, traj.t0, traj.t1)

    if traj.hover:
        return [
            PoseSample(t=float(t), position=traj.positions[0].copy(),
                       orientation=traj.orientations[0].copy())
            for t in ts
        ]

    pos, vel, acc, _, _ = _hermite(traj, ts)
    quats = quat_normalize(_orientation_at(traj, ts))

    # body angular velocity by symmetric differencing of the orientation keys
    h = ANGULAR_FD_STEP
    lo = np.clip(ts - 0.5 * h, traj.t0, traj.t1)
    hi = np.clip(lo + h, traj.t0, traj.t1)
    lo = hi - h
    q_lo = _orientation_at(traj, lo)
    q_hi = _orientation_at(traj, hi)
    omega = quat_to_rotvec(quat_multiply(quat_conjugate(q_lo), q_hi)) / h

    return [
        PoseSample(
            t=float(ts[k]), position=pos[k], orientation=quats[k],
            velocity=vel[k], acceleration=acc[k], angular_velocity=omega[k],
        )
        for k in range(len(ts))
    ]


def sample_pose(traj: Trajectory, t: float) -> PoseSample:
    return sample_poses(traj, [t])[0]


def step_kinematics(pose: PoseSample, cmd: ControlCommand, dt: float) -> PoseSample:
    """First-order point-object update with roll locked to zero.

    pitch_rate/yaw_rate command the Euler-angle rates; position advances
    along the freshly rotated body x axis.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    yaw, pitch = yaw_pitch_from_quat(pose.orientation)
    yaw += cmd.yaw_rate * dt
    pitch = float(np.clip(pitch + cmd.pitch_rate * dt, -PITCH_LIMIT, PITCH_LIMIT))
    q_new = quat_normalize(quat_from_yaw_pitch(yaw, pitch))

    fwd = quat_rotate(q_new, np.array([1.0, 0.0, 0.0]))
    velocity = cmd.forward_speed * fwd
    position = pose.position + velocity * dt
    omega_body = quat_to_rotvec(quat_multiply(quat_conjugate(pose.orientation), q_new)) / dt
    return PoseSample(
        t=pose.t + dt,
        position=position,
        orientation=q_new,
        velocity=velocity,
        acceleration=(velocity - pose.velocity) / dt,
        angular_velocity=omega_body,
    )


def quantize_control(
    cmd: ControlCommand, max_pitch_rate: float = 0.5, max_yaw_rate: float = 0.5
) -> ControlLabel:
    """Fig.-7-style 7+7 binning: uniform bins over [-max, +max], center bin 3."""

    def bin_of(rate: float, max_rate: float) -> int:
        r = float(np.clip(rate, -max_rate, max_rate))
        rhat = (r + max_rate) / (2.0 * max_rate)
        return min(int(rhat * 7.0), 6)

    return ControlLabel(
        pitch_class=bin_of(cmd.pitch_rate, max_pitch_rate),
        yaw_class=bin_of(cmd.yaw_rate, max_yaw_rate),
    )


def lawnmower_pattern(region, track_spacing: float, altitude: float) -> np.ndarray:
    """Boustrophedon tracks covering the region at fixed altitude.

    Tracks run along y; adjacent tracks are track_spacing apart, with the far
    edge appended when the spacing does not divide the width evenly.
    """
    if track_spacing <= 0:
        raise PathError("track_spacing must be positive")
    x0, y0, x1, y1 = (float(v) for v in region)
    if not (x1 > x0 and y1 > y0):
        raise PathError("region must be non-degenerate")

    xs = list(np.arange(x0, x1 + 1e-9, track_spacing))
    if xs[-1] < x1 - 1e-9:
        xs.append(x1)
    if len(xs) < 2:
        xs = [x0, x1]
    waypoints = []
    for k, x in enumerate(xs):
        ya, yb = (y0, y1) if k % 2 == 0 else (y1, y0)
        waypoints.append([x, ya, altitude])
        waypoints.append([x, yb, altitude])
    return np.asarray(waypoints)
