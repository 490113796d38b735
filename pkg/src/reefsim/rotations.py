"""Quaternion and rigid-transform helpers.

Conventions used across the package:
- quaternions are numpy arrays ``[x, y, z, w]`` (TUM component order),
  mapping body frame to world frame,
- the body frame is FLU: x forward, y left, z up,
- world frame is z-up.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

IDENTITY_QUAT = np.array([0.0, 0.0, 0.0, 1.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b, both [x,y,z,w]; composes rotations (a after b)."""
    ax, ay, az, aw = np.moveaxis(np.asarray(a, dtype=float), -1, 0)
    bx, by, bz, bw = np.moveaxis(np.asarray(b, dtype=float), -1, 0)
    return np.stack(
        [
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        ],
        axis=-1,
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([-1.0, -1.0, -1.0, 1.0])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors v (…,3) from body to world by quaternions q (…,4)."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    u = q[..., :3]
    w = q[..., 3:4]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    x, y, z, w = np.asarray(q, dtype=float)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    h = 0.5 * angle
    return np.concatenate([axis * np.sin(h), [np.cos(h)]])


def quat_from_rotvec(rv: np.ndarray) -> np.ndarray:
    """Exponential map: rotation vector (…,3) -> quaternion (…,4)."""
    rv = np.asarray(rv, dtype=float)
    angle = np.linalg.norm(rv, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(h)/angle with the small-angle limit 1/2
    small = angle < 1e-12
    k = np.where(small, 0.5, np.sin(half) / np.where(small, 1.0, angle))
    return np.concatenate([rv * k, np.cos(half)], axis=-1)


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    """Logarithmic map: quaternion (…,4) -> rotation vector (…,3)."""
    q = np.asarray(q, dtype=float)
    # force the short arc
    sign = np.where(q[..., 3:4] < 0.0, -1.0, 1.0)
    q = q * sign
    vecnorm = np.linalg.norm(q[..., :3], axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(vecnorm, q[..., 3:4])
    small = vecnorm < 1e-12
    scale = np.where(small, 2.0, angle / np.where(small, 1.0, vecnorm))
    return q[..., :3] * scale


def quat_slerp(q0: np.ndarray, q1: np.ndarray, s) -> np.ndarray:
    """Spherical interpolation, s in [0,1]; s may be an array (…,)."""
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    s = np.asarray(s, dtype=float)[..., None]
    # slerp(q0,q1,s) = q0 * exp(s*log(q0^-1 q1)) keeps angular velocity constant
    dq = quat_multiply(quat_conjugate(q0), q1)
    return quat_multiply(q0, quat_from_rotvec(s * quat_to_rotvec(dq)))


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Rotation matrix -> [x,y,z,w] quaternion (Shepperd's method)."""
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        return quat_normalize(
            [(m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s, 0.25 * s]
        )
    i = int(np.argmax([m[0, 0], m[1, 1], m[2, 2]]))
    j, k = (i + 1) % 3, (i + 2) % 3
    s = np.sqrt(max(m[i, i] - m[j, j] - m[k, k] + 1.0, 0.0)) * 2.0
    q = np.empty(4)
    q[i] = 0.25 * s
    q[j] = (m[j, i] + m[i, j]) / s
    q[k] = (m[k, i] + m[i, k]) / s
    q[3] = (m[k, j] - m[j, k]) / s
    return quat_normalize(q)


def quat_from_yaw_pitch(yaw: float, pitch: float) -> np.ndarray:
    """Zero-roll FLU orientation: yaw about world z, then pitch (nose-up > 0)."""
    qz = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), yaw)
    qy = quat_from_axis_angle(np.array([0.0, 1.0, 0.0]), -pitch)
    return quat_multiply(qz, qy)


def yaw_pitch_from_quat(q: np.ndarray) -> tuple[float, float]:
    """Inverse of quat_from_yaw_pitch for roll-free orientations."""
    fwd = quat_rotate(q, np.array([1.0, 0.0, 0.0]))
    yaw = float(np.arctan2(fwd[1], fwd[0]))
    pitch = float(np.arcsin(np.clip(fwd[2], -1.0, 1.0)))
    return yaw, pitch


def heading_quat(forward: np.ndarray) -> np.ndarray:
    """Zero-roll orientation whose body x axis points along `forward`."""
    f = np.asarray(forward, dtype=float)
    n = np.linalg.norm(f)
    if n < 1e-12:
        return IDENTITY_QUAT.copy()
    f = f / n
    yaw = float(np.arctan2(f[1], f[0])) if abs(f[2]) < 1.0 - 1e-12 else 0.0
    pitch = float(np.arcsin(np.clip(f[2], -1.0, 1.0)))
    return quat_from_yaw_pitch(yaw, pitch)


@dataclass(frozen=True)
class RigidTransform:
    """Rotation (3x3, orthonormal, det +1) plus translation, meters."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def apply_vector(self, vec: np.ndarray) -> np.ndarray:
        return np.asarray(vec, dtype=float) @ self.rotation.T

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(
            rotation=self.rotation @ other.rotation,
            translation=self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        return RigidTransform(
            rotation=self.rotation.T, translation=-self.rotation.T @ self.translation
        )

    @classmethod
    def from_quat(cls, q: np.ndarray, translation=None) -> "RigidTransform":
        t = np.zeros(3) if translation is None else np.asarray(translation, dtype=float)
        return cls(rotation=quat_to_matrix(quat_normalize(q)), translation=t)


def derive_seed(root_seed: int, *tags) -> int:
    """Stable 64-bit sub-seed from a root seed and component tags.

    Adding a new component never perturbs the streams of existing ones.
    """
    import hashlib

    h = hashlib.sha256()
    h.update(int(root_seed).to_bytes(8, "little", signed=False))
    for tag in tags:
        h.update(b"\x00")
        h.update(str(tag).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little")


def substream(root_seed: int, *tags) -> np.random.Generator:
    """Independent counter-based RNG stream keyed by (root seed, tags).

    Philox streams with distinct keys are statistically independent, so
    batches may be generated in parallel without shared state.
    """
    return np.random.Generator(np.random.Philox(key=derive_seed(root_seed, *tags)))
