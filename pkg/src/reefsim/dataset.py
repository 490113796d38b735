"""Session export: images, sensor logs, ground-truth poses, control labels.

Directory layout per session:

    out_dir/
      manifest.json          index binding everything together
      scene.json, meshes/    scene description (JSON + OBJ)
      frames/<camera>/<t>.ppm|.pfm|.pgm
      imu.csv  sonar.csv  poses_gt.tum  labels.csv  annotations.json

All text artifacts use '.' decimals and LF line endings; timestamps carry
9 decimal places. Exports are byte-reproducible for a fixed seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imageio, reef, sensors
from .render import FrameBundle, MISS_INSTANCE, build_accel, cameras_by_role, mount_cameras, render_frame
from .rotations import RigidTransform, quat_to_matrix, yaw_pitch_from_quat
from .trajectory import ControlCommand, ControlLabel, PoseSample, Trajectory, quantize_control, sample_pose, sample_poses

FORMAT_VERSION = "1"


class ExportError(RuntimeError):
    pass


class AnnotationError(ValueError):
    pass


def _t9(t: float) -> str:
    return f"{t:.9f}"


def _g9(x: float) -> str:
    return f"{x:.9g}"


# ---------------------------------------------------------------------------
# TUM trajectory format


def write_tum_poses(samples: list, path) -> None:
    """One `timestamp tx ty tz qx qy qz qw` line per pose, 9 significant digits."""
    ts = [s.t for s in samples]
    if np.any(np.diff(ts) <= 0):
        raise ExportError("pose timestamps must be strictly increasing")
    lines = []
    for s in samples:
        if abs(np.linalg.norm(s.orientation) - 1.0) > 1e-9:
            raise ExportError(f"non-unit quaternion at t={s.t}")
        px, py, pz = s.position
        qx, qy, qz, qw = s.orientation
        lines.append(
            f"{_t9(s.t)} {_g9(px)} {_g9(py)} {_g9(pz)} {_g9(qx)} {_g9(qy)} {_g9(qz)} {_g9(qw)}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_tum_poses(path) -> list:
    out = []
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        vals = [float(v) for v in line.split()]
        if len(vals) != 8:
            raise ExportError(f"malformed TUM line: {line!r}")
        out.append(
            PoseSample(t=vals[0], position=np.array(vals[1:4]),
                       orientation=np.array(vals[4:8]) / np.linalg.norm(vals[4:8]))
        )
    return out


# ---------------------------------------------------------------------------
# Instance-mask annotations


@dataclass
class DetectionAnnotation:
    instance_id: int
    class_id: int
    pixel_count: int
    bbox: tuple  # x, y, w, h in pixels
    rle_counts: list  # row-major run lengths, first run counts zeros


def rle_encode(mask: np.ndarray) -> list:
    """Uncompressed row-major run-length encoding of a binary mask."""
    flat = np.asarray(mask, dtype=bool).ravel()
    if len(flat) == 0:
        return []
    switches = np.flatnonzero(np.diff(flat)) + 1
    runs = np.diff(np.concatenate([[0], switches, [len(flat)]]))
    counts = list(int(r) for r in runs)
    if flat[0]:
        counts.insert(0, 0)  # encoding always starts with a zero-run
    return counts


def rle_decode(counts: list, shape: tuple) -> np.ndarray:
    total = int(np.prod(shape))
    flat = np.zeros(total, dtype=bool)
    pos = 0
    val = False
    for c in counts:
        if val:
            flat[pos:pos + c] = True
        pos += c
        val = not val
    if pos != total:
        raise AnnotationError(f"RLE covers {pos} pixels, mask has {total}")
    return flat.reshape(shape)


def annotate_frame(mask: np.ndarray, scene: reef.ReefScene) -> list:
    """Per-instance annotations for one rendered mask (seabed/miss excluded)."""
    known = {inst.instance_id: inst.class_id for inst in scene.instances}
    out = []
    for iid in np.unique(mask):
        iid = int(iid)
        if iid in (0, MISS_INSTANCE):
            continue
        if iid not in known:
            raise AnnotationError(f"instance id {iid} not present in the scene")
        binary = mask == iid
        ys, xs = np.nonzero(binary)
        bbox = (int(xs.min()), int(ys.min()), int(xs.max() - xs.min() + 1),
                int(ys.max() - ys.min() + 1))
        out.append(
            DetectionAnnotation(
                instance_id=iid,
                class_id=known[iid],
                pixel_count=int(binary.sum()),
                bbox=bbox,
                rle_counts=rle_encode(binary),
            )
        )
    return out


# ---------------------------------------------------------------------------
# Control labels


def write_control_labels(frames: list, path) -> None:
    """frames: (frame_id, ControlLabel) pairs -> labels.csv."""
    lines = ["frame_id,pitch_class,yaw_class"]
    for frame_id, label in frames:
        if not (0 <= label.pitch_class <= 6 and 0 <= label.yaw_class <= 6):
            raise ExportError(f"control class out of range at frame {frame_id}")
        lines.append(f"{frame_id},{label.pitch_class},{label.yaw_class}")
    Path(path).write_text("\n".join(lines) + "\n")


def control_rates_from_trajectory(traj: Trajectory, ts: np.ndarray):
    """Equivalent pitch/yaw rate commands along a trajectory (central FD)."""
    ts = np.asarray(ts, dtype=float)
    h = 0.02
    lo = np.clip(ts - 0.5 * h, traj.t0, traj.t1 - h if traj.duration > h else traj.t0)
    pitch_rates = np.zeros(len(ts))
    yaw_rates = np.zeros(len(ts))
    if traj.hover or traj.duration <= h:
        return pitch_rates, yaw_rates
    a = sample_poses(traj, lo)
    b = sample_poses(traj, lo + h)
    for k in range(len(ts)):
        yaw0, pitch0 = yaw_pitch_from_quat(a[k].orientation)
        yaw1, pitch1 = yaw_pitch_from_quat(b[k].orientation)
        dyaw = (yaw1 - yaw0 + np.pi) % (2 * np.pi) - np.pi
        yaw_rates[k] = dyaw / h
        pitch_rates[k] = (pitch1 - pitch0) / h
    return pitch_rates, yaw_rates


# ---------------------------------------------------------------------------
# Session export


@dataclass(frozen=True)
class CameraRig:
    width: int = 640
    height: int = 480
    fov_deg: float = 90.0
    rgb_roles: tuple = ("down_facing", "front_facing")
    depth: bool = True  # write the front-depth PFM
    mask_role: str = "down_facing"  # camera whose instance mask is exported

    def __post_init__(self):
        for role in (*self.rgb_roles, self.mask_role):
            if role not in ("third_person", "down_facing", "front_facing"):
                raise ValueError(f"not an RGB-capable camera role: {role!r}")


@dataclass(frozen=True)
class Schedule:
    fps: float = 10.0
    duration_s: float = None  # None -> full trajectory span

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError("fps must be positive")


@dataclass
class SessionManifest:
    session_id: str
    seed: int
    complete: bool
    scene_path: str
    cameras: list
    sensors: dict
    frame_index: list  # {"t": "...", "files": {...}} per timestamp
    logs: dict
    depth_miss_value: float = imageio.PFM_MISS_VALUE
    format_version: str = FORMAT_VERSION

    def to_json(self) -> str:
        doc = {
            "format_version": self.format_version,
            "session_id": self.session_id,
            "seed": self.seed,
            "complete": self.complete,
            "scene": self.scene_path,
            "cameras": self.cameras,
            "sensors": self.sensors,
            "depth_miss_value": self.depth_miss_value,
            "frame_index": self.frame_index,
            "logs": self.logs,
        }
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path) -> "SessionManifest":
        doc = json.loads(Path(path).read_text())
        return cls(
            session_id=doc["session_id"],
            seed=doc["seed"],
            complete=doc["complete"],
            scene_path=doc["scene"],
            cameras=doc["cameras"],
            sensors=doc["sensors"],
            frame_index=doc["frame_index"],
            logs=doc["logs"],
            depth_miss_value=doc["depth_miss_value"],
            format_version=doc["format_version"],
        )


class SessionWriter:
    """Incremental writer for the standard session layout.

    Used both by the batch exporter and by the teleop recorder flush.
    """

    def __init__(self, out_dir, session_id: str, seed: int, scene: reef.ReefScene,
                 cameras_meta: list, sensors_meta: dict):
        self.root = Path(out_dir)
        self.session_id = session_id
        self.seed = seed
        self.scene = scene
        self.cameras_meta = cameras_meta
        self.sensors_meta = sensors_meta
        self.frame_index = []
        self.logs = {}
        self.annotation_frames = []
        try:
            (self.root / "frames").mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ExportError(f"cannot create session directory {self.root}: {e}") from e
        # fail-safe marker: overwritten with complete=true by finalize()
        self._write_manifest(complete=False)
        reef.save_scene(scene, self.root / "scene.json")

    def _write(self, relpath: str, writer) -> str:
        path = self.root / relpath
        path.parent.mkdir(parents=True, exist_ok=True)
        try:
            writer(path)
        except OSError as e:
            raise ExportError(f"failed writing {path}: {e}") from e
        return relpath

    def add_frame(self, t: float, renders: dict, mask_role: str = None,
                  depth_role: str = "front_depth") -> None:
        """renders: camera role -> FrameBundle. Writes ppm/pfm/pgm files."""
        stamp = _t9(t)
        files = {}
        for role, frame in renders.items():
            if role == depth_role:
                files[role] = self._write(
                    f"frames/{role}/{stamp}.pfm", lambda p, f=frame: imageio.write_pfm(f.depth, p)
                )
            else:
                files[role] = self._write(
                    f"frames/{role}/{stamp}.ppm", lambda p, f=frame: imageio.write_ppm(f.rgb, p)
                )
        if mask_role is not None and mask_role in renders:
            frame = renders[mask_role]
            files["mask"] = self._write(
                f"frames/mask/{stamp}.pgm", lambda p: imageio.write_pgm16(frame.instance, p)
            )
            self.annotation_frames.append(
                {
                    "frame_id": len(self.frame_index),
                    "t": stamp,
                    "annotations": [
                        {
                            "instance_id": a.instance_id,
                            "class_id": a.class_id,
                            "pixel_count": a.pixel_count,
                            "bbox": list(a.bbox),
                            "rle": {"size": list(frame.instance.shape), "counts": a.rle_counts},
                        }
                        for a in annotate_frame(frame.instance, self.scene)
                    ],
                }
            )
        self.frame_index.append({"t": stamp, "files": files})

    def write_imu(self, samples: list) -> None:
        lines = ["t,ax,ay,az,wx,wy,wz"]
        for s in samples:
            ax, ay, az = s.accel
            wx, wy, wz = s.gyro
            lines.append(
                f"{_t9(s.t)},{ax!r},{ay!r},{az!r},{wx!r},{wy!r},{wz!r}"
            )
        self.logs["imu"] = self._write("imu.csv", lambda p: p.write_text("\n".join(lines) + "\n"))

    def write_sonar(self, returns: list) -> None:
        lines = ["t,azimuth,elevation,range,tof,intensity,class_id,instance_id,valid"]
        for r in returns:
            lines.append(
                f"{_t9(r.t)},{r.beam_azimuth_rad!r},{r.beam_elevation_rad!r},"
                f"{r.range_m!r},{r.time_of_flight_s!r},{r.intensity!r},"
                f"{r.class_id},{r.instance_id},{int(r.valid)}"
            )
        self.logs["sonar"] = self._write(
            "sonar.csv", lambda p: p.write_text("\n".join(lines) + "\n")
        )

    def write_poses(self, samples: list) -> None:
        self.logs["poses"] = self._write("poses_gt.tum", lambda p: write_tum_poses(samples, p))

    def write_labels(self, labelled_frames: list) -> None:
        self.logs["labels"] = self._write(
            "labels.csv", lambda p: write_control_labels(labelled_frames, p)
        )

    def write_annotations(self) -> None:
        doc = {"format_version": FORMAT_VERSION, "frames": self.annotation_frames}
        self.logs["annotations"] = self._write(
            "annotations.json", lambda p: p.write_text(json.dumps(doc, sort_keys=True) + "\n")
        )

    def _manifest(self, complete: bool) -> SessionManifest:
        return SessionManifest(
            session_id=self.session_id,
            seed=self.seed,
            complete=complete,
            scene_path="scene.json",
            cameras=self.cameras_meta,
            sensors=self.sensors_meta,
            frame_index=self.frame_index,
            logs=self.logs,
        )

    def _write_manifest(self, complete: bool) -> None:
        (self.root / "manifest.json").write_text(self._manifest(complete).to_json())

    def finalize(self) -> SessionManifest:
        manifest = self._manifest(complete=True)
        for entry in manifest.frame_index:
            for rel in entry["files"].values():
                if not (self.root / rel).exists():
                    raise ExportError(f"manifest references missing file {rel}")
        (self.root / "manifest.json").write_text(manifest.to_json())
        return manifest


def export_session(
    scene: reef.ReefScene,
    trajectory: Trajectory,
    rig: CameraRig,
    imu_cfg: sensors.ImuConfig,
    sonar_cfg: sensors.SonarConfig,
    water: sensors.WaterProperties,
    schedule: Schedule,
    out_dir,
    session_id: str = "session",
    seed: int = 0,
) -> SessionManifest:
    """Render all cameras at frame times, synthesize sensors, write the set.

    Idempotent per seed: identical bytes for logs and identical pixels for
    images on re-runs.
    """
    duration = schedule.duration_s if schedule.duration_s is not None else trajectory.duration
    duration = min(duration, trajectory.duration)
    n_frames = max(1, int(round(duration * schedule.fps)))
    frame_times = trajectory.t0 + np.arange(n_frames) / schedule.fps

    cameras_meta = [
        {"role": role, "width": rig.width, "height": rig.height, "fov_deg": rig.fov_deg}
        for role in dict.fromkeys(
            [*rig.rgb_roles, *( ["front_depth"] if rig.depth else [] ), rig.mask_role]
        )
    ]
    sensors_meta = {
        "imu": {"rate_hz": imu_cfg.rate_hz, "preset": imu_cfg.preset, "seed": imu_cfg.seed},
        "sonar": {
            "mode": sonar_cfg.mode, "beams": sonar_cfg.beams, "rate_hz": sonar_cfg.rate_hz,
            "max_range_m": sonar_cfg.max_range_m, "seed": sonar_cfg.seed,
        },
        "water": {
            "temperature_c": water.temperature_c,
            "salinity_ppt": water.salinity_ppt,
            "depth_m": water.depth_m,
        },
    }
    writer = SessionWriter(out_dir, session_id, seed, scene, cameras_meta, sensors_meta)
    accel = build_accel(scene)

    poses = sample_poses(trajectory, frame_times)
    needed_roles = set(rig.rgb_roles) | {rig.mask_role} | ({"front_depth"} if rig.depth else set())
    for t, pose in zip(frame_times, poses):
        rig_pose = RigidTransform(
            rotation=quat_to_matrix(pose.orientation), translation=pose.position
        )
        cams = cameras_by_role(
            mount_cameras(rig_pose, width=rig.width, height=rig.height, fov_deg=rig.fov_deg)
        )
        renders = {}
        for role in sorted(needed_roles):
            if role == "front_depth" and "front_facing" in renders:
                # co-located identical intrinsics: reuse the front render
                src = renders["front_facing"]
                renders[role] = FrameBundle(
                    rgb=src.rgb, depth=src.depth, instance=src.instance,
                    timestamp=src.timestamp, camera_role=role,
                )
                continue
            renders[role] = render_frame(scene, accel, cams[role], timestamp=t)
        writer.add_frame(t, renders, mask_role=rig.mask_role)

    if imu_cfg.rate_hz > 0 and duration >= 1.0 / imu_cfg.rate_hz:
        writer.write_imu(synth_imu_window(trajectory, imu_cfg, duration))
    sonar_returns = []
    n_scans = int(round(duration * sonar_cfg.rate_hz))
    scan_times = trajectory.t0 + np.arange(n_scans) / sonar_cfg.rate_hz
    if n_scans:
        for k, (t, pose) in enumerate(zip(scan_times, sample_poses(trajectory, scan_times))):
            body = RigidTransform(
                rotation=quat_to_matrix(pose.orientation), translation=pose.position
            )
            sonar_returns.extend(
                sensors.scan_sonar(accel, body, sonar_cfg, water, t=float(t), scan_index=k)
            )
    writer.write_sonar(sonar_returns)

    writer.write_poses(poses)
    pitch_rates, yaw_rates = control_rates_from_trajectory(trajectory, frame_times)
    labels = [
        (k, quantize_control(ControlCommand(pitch_rate=pitch_rates[k], yaw_rate=yaw_rates[k])))
        for k in range(n_frames)
    ]
    writer.write_labels(labels)
    writer.write_annotations()
    return writer.finalize()


def synth_imu_window(traj: Trajectory, cfg: sensors.ImuConfig, duration: float) -> list:
    """IMU synthesis restricted to [t0, t0 + duration) of a trajectory."""
    samples = sensors.synth_imu(traj, cfg)
    if duration >= traj.duration:
        return samples
    return [s for s in samples if s.t < traj.t0 + duration]
