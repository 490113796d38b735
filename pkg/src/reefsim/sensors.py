"""Synthetic IMU and sonar measurements.

IMU output = ground truth + bias + noise, where the noise per sensor is a
velocity/angle random walk (white noise on the output) plus an optional
vibration term, and the bias is an initial offset plus an exponentially
correlated (Gauss-Markov) instability process. Sonar returns are ray casts
with range-proportional noise and a round-trip time of flight from the
temperature/salinity/depth sound-speed polynomial.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.signal

from . import kernels
from .rotations import quat_conjugate, quat_from_rotvec, quat_multiply, quat_normalize, quat_rotate, quat_to_matrix, substream
from .trajectory import PoseSample, Trajectory, sample_poses

GRAVITY = 9.81


class DomainWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# Sound speed


@dataclass(frozen=True)
class WaterProperties:
    temperature_c: float = 10.0
    salinity_ppt: float = 35.0
    depth_m: float = 5.0

    @property
    def in_envelope(self) -> bool:
        return (
            -2.0 <= self.temperature_c <= 40.0
            and 0.0 <= self.salinity_ppt <= 45.0
            and self.depth_m >= 0.0
        )


def sound_speed(w: WaterProperties) -> float:
    """Acoustic propagation speed in m/s from temperature, salinity, depth."""
    if not w.in_envelope:
        warnings.warn(
            f"water properties outside the approximation envelope: {w}", DomainWarning,
            stacklevel=2,
        )
    t, s, d = w.temperature_c, w.salinity_ppt, w.depth_m
    return (
        1449.2
        + 4.6 * t
        - 0.055 * t**2
        + 0.00029 * t**3
        + (1.34 - 0.010 * t) * (s - 35.0)
        + 0.016 * d
    )


# ---------------------------------------------------------------------------
# IMU


@dataclass(frozen=True)
class VibrationModel:
    kind: str = "none"  # none | white | sinusoidal | psd
    sigma: float = 0.0  # white: std per axis
    amplitude: float = 0.0  # sinusoidal: amplitude per axis
    freq_hz: float = 0.0  # sinusoidal frequency
    phase: tuple = (0.0, 0.0, 0.0)  # sinusoidal per-axis phase, radians
    psd_level: float = 0.0  # psd: in-band one-sided level, unit^2/Hz
    band_hz: float = 0.0  # psd: first-order shaping-filter corner

    def __post_init__(self):
        if self.kind not in ("none", "white", "sinusoidal", "psd"):
            raise ValueError(f"unknown vibration kind {self.kind!r}")


# noise densities per preset: (accel (m/s^2)/sqrt(Hz), gyro (rad/s)/sqrt(Hz));
# spans consumer-grade to industrial MEMS
IMU_PRESETS = {
    "none": (0.0, 0.0),
    "low": (5e-4, 5e-5),
    "medium": (2e-3, 2e-4),
    "high": (1e-2, 1e-3),
}


@dataclass(frozen=True)
class ImuConfig:
    rate_hz: float = 200.0
    preset: str = "medium"
    accel_noise_density: float = None  # overrides the preset when given
    gyro_noise_density: float = None
    accel_bias_init: tuple = (0.0, 0.0, 0.0)
    gyro_bias_init: tuple = (0.0, 0.0, 0.0)
    accel_bias_instability_sigma: float = None  # default: 10% of the density
    gyro_bias_instability_sigma: float = None
    bias_correlation_time_s: float = 100.0
    vibration: VibrationModel = field(default_factory=VibrationModel)
    seed: int = 0

    def __post_init__(self):
        if self.preset not in IMU_PRESETS:
            raise ValueError(f"unknown IMU preset {self.preset!r}")
        if self.rate_hz <= 0:
            raise ValueError("rate_hz must be positive")
        if self.bias_correlation_time_s <= 0:
            raise ValueError("bias correlation time must be positive")
        acc_d, gyr_d = IMU_PRESETS[self.preset]
        if self.accel_noise_density is None:
            object.__setattr__(self, "accel_noise_density", acc_d)
        if self.gyro_noise_density is None:
            object.__setattr__(self, "gyro_noise_density", gyr_d)
        if self.accel_noise_density < 0 or self.gyro_noise_density < 0:
            raise ValueError("noise densities must be >= 0")
        if self.accel_bias_instability_sigma is None:
            object.__setattr__(
                self, "accel_bias_instability_sigma", 0.1 * self.accel_noise_density
            )
        if self.gyro_bias_instability_sigma is None:
            object.__setattr__(self, "gyro_bias_instability_sigma", 0.1 * self.gyro_noise_density)


@dataclass
class ImuSample:
    t: float
    accel: np.ndarray  # specific force, m/s^2, body frame
    gyro: np.ndarray  # angular velocity, rad/s, body frame


def vibration_signal(model: VibrationModel, ts: np.ndarray, rng: np.random.Generator):
    """Per-axis vibration time series, shape (n, 3)."""
    ts = np.asarray(ts, dtype=float)
    n = len(ts)
    if model.kind == "none":
        return np.zeros((n, 3))
    if model.kind == "white":
        return rng.normal(0.0, model.sigma, size=(n, 3))
    if model.kind == "sinusoidal":
        phase = np.asarray(model.phase, dtype=float)
        return model.amplitude * np.sin(
            2.0 * np.pi * model.freq_hz * ts[:, None] + phase[None, :]
        )
    # psd: white noise through a first-order low-pass whose plateau equals
    # the requested one-sided level over the band
    if n < 2:
        dt = 1.0
    else:
        dt = float(ts[1] - ts[0])
    a = np.exp(-2.0 * np.pi * model.band_hz * dt)
    sigma_w = np.sqrt(model.psd_level * (1.0 - a) ** 2 / (2.0 * dt))
    white = rng.normal(0.0, sigma_w, size=(n, 3))
    return scipy.signal.lfilter([1.0], [1.0, -a], white, axis=0)


def _white_plus_vibration(
    density: float, cfg: ImuConfig, ts: np.ndarray, rng: np.random.Generator
):
    sigma = density * np.sqrt(cfg.rate_hz)
    white = rng.normal(0.0, sigma, size=(len(ts), 3)) if sigma > 0 else np.zeros((len(ts), 3))
    return white + vibration_signal(cfg.vibration, ts, rng)


def accel_noise(cfg: ImuConfig, ts, rng: np.random.Generator):
    """Velocity-random-walk white term plus vibration, (n, 3)."""
    return _white_plus_vibration(cfg.accel_noise_density, cfg, np.asarray(ts, float), rng)


def gyro_noise(cfg: ImuConfig, ts, rng: np.random.Generator):
    """Angle-random-walk white term plus vibration, (n, 3)."""
    return _white_plus_vibration(cfg.gyro_noise_density, cfg, np.asarray(ts, float), rng)


def gauss_markov_bias(
    sigma: float, tau: float, dt: float, n: int, rng: np.random.Generator
):
    """Stationary first-order Gauss-Markov process, shape (n, 3)."""
    if sigma == 0.0:
        return np.zeros((n, 3))
    phi = np.exp(-dt / tau)
    drive = rng.normal(0.0, sigma * np.sqrt(1.0 - phi * phi), size=(n, 3))
    drive[0] = rng.normal(0.0, sigma, size=3)  # start in the stationary law
    return scipy.signal.lfilter([1.0], [1.0, -phi], drive, axis=0)


def synth_imu(traj: Trajectory, cfg: ImuConfig, gravity: float = GRAVITY) -> list:
    """IMU samples along a trajectory: ground truth + bias + noise.

    Ground-truth specific force is R_world->body(t) @ (a_world - g_world)
    with g_world = (0, 0, -gravity); the gyro ground truth is the body
    angular velocity. Deterministic for a given config seed.
    """
    duration = traj.duration
    if duration < 1.0 / cfg.rate_hz:
        raise ValueError("trajectory shorter than one IMU sample interval")
    n = int(round(duration * cfg.rate_hz))
    ts = traj.t0 + np.arange(n) / cfg.rate_hz
    poses = sample_poses(traj, ts)

    g_world = np.array([0.0, 0.0, -gravity])
    accel_gt = np.stack(
        [
            quat_rotate(quat_conjugate(p.orientation), p.acceleration - g_world)
            for p in poses
        ]
    )
    gyro_gt = np.stack([p.angular_velocity for p in poses])

    dt = 1.0 / cfg.rate_hz
    accel_bias = np.asarray(cfg.accel_bias_init, dtype=float) + gauss_markov_bias(
        cfg.accel_bias_instability_sigma, cfg.bias_correlation_time_s, dt, n,
        substream(cfg.seed, "imu", "accel", "bias"),
    )
    gyro_bias = np.asarray(cfg.gyro_bias_init, dtype=float) + gauss_markov_bias(
        cfg.gyro_bias_instability_sigma, cfg.bias_correlation_time_s, dt, n,
        substream(cfg.seed, "imu", "gyro", "bias"),
    )
    accel_out = accel_gt + accel_bias + accel_noise(
        cfg, ts, substream(cfg.seed, "imu", "accel", "noise")
    )
    gyro_out = gyro_gt + gyro_bias + gyro_noise(
        cfg, ts, substream(cfg.seed, "imu", "gyro", "noise")
    )
    return [ImuSample(t=float(ts[k]), accel=accel_out[k], gyro=gyro_out[k]) for k in range(n)]


def strapdown_integrate(samples: list, initial: PoseSample, gravity: float = GRAVITY):
    """Dead-reckon pose from IMU output (midpoint quaternion, trapezoid v/p).

    Returns (times, positions, quaternions). Useful as a closure check:
    noiseless IMU output must reproduce the source trajectory.
    """
    n = len(samples)
    q = quat_normalize(initial.orientation)
    v = initial.velocity.astype(float).copy()
    p = initial.position.astype(float).copy()
    g_world = np.array([0.0, 0.0, -gravity])

    times = np.array([s.t for s in samples])
    positions = np.empty((n, 3))
    quats = np.empty((n, 4))
    positions[0] = p
    quats[0] = q
    for k in range(n - 1):
        dt = samples[k + 1].t - samples[k].t
        omega_mid = 0.5 * (samples[k].gyro + samples[k + 1].gyro)
        q_next = quat_normalize(quat_multiply(q, quat_from_rotvec(omega_mid * dt)))
        a0 = quat_to_matrix(q) @ samples[k].accel + g_world
        a1 = quat_to_matrix(q_next) @ samples[k + 1].accel + g_world
        v_next = v + 0.5 * dt * (a0 + a1)
        p = p + 0.5 * dt * (v + v_next)
        q, v = q_next, v_next
        positions[k + 1] = p
        quats[k + 1] = q
    return times, positions, quats


# ---------------------------------------------------------------------------
# Sonar


@dataclass(frozen=True)
class SonarConfig:
    mode: str = "single_beam_down"  # single_beam_down | fan_scan
    beams: int = 1
    fan_aperture_deg: float = 90.0
    max_range_m: float = 30.0
    range_noise_sigma_rel: float = 0.0  # sigma = rel * range
    dropout_prob: float = 0.0
    rate_hz: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("single_beam_down", "fan_scan"):
            raise ValueError(f"unknown sonar mode {self.mode!r}")
        if self.beams < 1:
            raise ValueError("beams must be >= 1")
        if self.max_range_m <= 0:
            raise ValueError("max_range_m must be positive")
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise ValueError("dropout_prob must lie in [0,1]")


@dataclass
class SonarReturn:
    t: float
    beam_azimuth_rad: float
    beam_elevation_rad: float
    range_m: float
    time_of_flight_s: float
    intensity: float
    class_id: int
    instance_id: int
    valid: bool


def _beam_directions(cfg: SonarConfig):
    """(azimuth, elevation, direction) per beam, in the sensor frame."""
    if cfg.mode == "single_beam_down":
        return [(0.0, -np.pi / 2.0, np.array([0.0, 0.0, -1.0]))]
    half = np.radians(cfg.fan_aperture_deg) / 2.0
    azimuths = np.linspace(-half, half, cfg.beams) if cfg.beams > 1 else np.array([0.0])
    return [(float(az), 0.0, np.array([np.cos(az), np.sin(az), 0.0])) for az in azimuths]


def scan_sonar(accel, sensor_pose, cfg: SonarConfig, water: WaterProperties, t: float,
               scan_index: int = None) -> list:
    """One sonar scan against the scene acceleration structure.

    Per beam within max range: range gets zero-mean Gaussian noise with
    sigma proportional to range, the time of flight is 2*range/c for the
    configured water, and the intensity is |cos(incidence)|. Dropouts
    invalidate returns with the configured probability.
    """
    if scan_index is None:
        scan_index = int(round(float(t) * 1e9))
    rng = substream(cfg.seed, "sonar", scan_index)
    c = sound_speed(water)
    beams = _beam_directions(cfg)

    origins = np.tile(sensor_pose.translation, (len(beams), 1))
    dirs = np.stack([sensor_pose.rotation @ d for _, _, d in beams])
    t_hit, tri, bu, bv = kernels.trace_rays(
        np.ascontiguousarray(origins), np.ascontiguousarray(dirs),
        accel.node_min, accel.node_max, accel.node_left, accel.node_right,
        accel.node_start, accel.node_count, accel.v0, accel.e1, accel.e2,
    )

    returns = []
    for b, (az, el, _) in enumerate(beams):
        noise = rng.standard_normal()
        drop = rng.uniform()
        hit = tri[b] >= 0 and t_hit[b] <= cfg.max_range_m
        if not hit or drop < cfg.dropout_prob:
            returns.append(SonarReturn(
                t=float(t), beam_azimuth_rad=az, beam_elevation_rad=el,
                range_m=float("nan"), time_of_flight_s=float("nan"), intensity=0.0,
                class_id=-1, instance_id=65535, valid=False,
            ))
            continue
        k = int(tri[b])
        noisy = float(t_hit[b] * (1.0 + cfg.range_noise_sigma_rel * noise))
        tof = 2.0 * noisy / c
        rng_m = 0.5 * (tof * c)  # re-derived so tof*c == 2*range holds bitwise
        vi = accel.tri_vertex_indices[k]
        w0 = 1.0 - bu[b] - bv[b]
        normal = (
            w0 * accel.vertex_normals[vi[0]]
            + bu[b] * accel.vertex_normals[vi[1]]
            + bv[b] * accel.vertex_normals[vi[2]]
        )
        normal /= np.linalg.norm(normal)
        returns.append(SonarReturn(
            t=float(t), beam_azimuth_rad=az, beam_elevation_rad=el,
            range_m=rng_m, time_of_flight_s=tof,
            intensity=float(abs(normal @ dirs[b])),
            class_id=int(accel.tri_class[k]), instance_id=int(accel.tri_instance[k]),
            valid=True,
        ))
    return returns
