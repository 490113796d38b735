"""Run configuration: one JSON document driving the whole pipeline.

Parsing is strict: unknown fields are rejected with a path-qualified
diagnostic, and every sub-config validates on construction before any work
starts. Component sub-seeds are derived by hashing (root seed, component
name), so adding a component never perturbs the randomness of the others.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataset, reef, sensors, shellgen, trajectory as traj_mod
from .rotations import derive_seed
from .trajectory import ControlLimits, Trajectory

SEED_ENV_VAR = "REEFSIM_SEED"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ShellConfig:
    n_layers: int = 16
    base_length: float = 0.09
    base_width: float = 0.055
    total_height: float = 0.04
    perturbation_amplitude: float = 0.004
    samples_per_layer: int = 48

    def __post_init__(self):
        if self.n_layers < 2:
            raise ValueError("n_layers must be >= 2")
        if min(self.base_length, self.base_width, self.total_height) <= 0:
            raise ValueError("shell dimensions must be positive")
        if self.perturbation_amplitude < 0:
            raise ValueError("perturbation_amplitude must be >= 0")
        if self.samples_per_layer < 8:
            raise ValueError("samples_per_layer must be >= 8")


@dataclass(frozen=True)
class ReefConfig:
    extent: float = 6.0  # square reef side, meters
    cell_size: float = 0.125
    amplitude: float = 0.12
    octaves: int = 4
    oyster_density: float = 2.0
    rock_density: float = 0.15
    stone_density: float = 0.3
    min_spacing: float = 0.12
    placement_margin: float = 0.3
    turbidity: float = 1.0
    color_scheme: tuple = (0.10, 0.35, 0.22)
    illumination: float = 1.0
    sun_direction: tuple = (0.2, 0.1, -1.0)
    ambient: float = 0.25
    n_shell_variants: int = 4
    n_rock_variants: int = 2
    n_stone_variants: int = 2

    def __post_init__(self):
        if self.extent <= 0 or self.cell_size <= 0:
            raise ValueError("extent and cell_size must be positive")
        if self.turbidity < 0:
            raise ValueError("turbidity must be >= 0")
        if min(self.oyster_density, self.rock_density, self.stone_density) < 0:
            raise ValueError("densities must be >= 0")
        if not all(0.0 <= c <= 1.0 for c in self.color_scheme):
            raise ValueError("color_scheme components must lie in [0,1]")
        if not 0.0 <= self.ambient <= 1.0:
            raise ValueError("ambient must lie in [0,1]")
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")


@dataclass(frozen=True)
class CameraConfig:
    width: int = 640
    height: int = 480
    fov_deg: float = 90.0
    rgb: tuple = ("down_facing", "front_facing")
    depth: bool = True
    mask_camera: str = "down_facing"

    def __post_init__(self):
        if not 0 < self.fov_deg < 180:
            raise ValueError("fov_deg must lie in (0, 180)")
        if self.width < 1 or self.height < 1:
            raise ValueError("width and height must be >= 1")
        allowed = {"third_person", "down_facing", "front_facing"}
        for role in (*self.rgb, self.mask_camera):
            if role not in allowed:
                raise ValueError(f"unknown rgb camera role {role!r}")


@dataclass(frozen=True)
class TrajectoryConfig:
    kind: str = "lawnmower"  # lawnmower | waypoints | hover
    altitude: float = 1.0
    track_spacing: float = 1.5
    cruise_speed: float = 0.5
    margin: float = 0.8  # lawnmower inset from the reef border
    waypoints: tuple = ()
    hover_position: tuple = (0.0, 0.0, 1.0)
    hover_duration: float = 10.0

    def __post_init__(self):
        if self.kind not in ("lawnmower", "waypoints", "hover"):
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if self.cruise_speed <= 0:
            raise ValueError("cruise_speed must be positive")
        if self.kind == "waypoints" and len(self.waypoints) < 2:
            raise ValueError("waypoints trajectory needs at least 2 waypoints")


@dataclass(frozen=True)
class ScheduleConfig:
    fps: float = 10.0
    duration_s: float = None  # None -> trajectory duration

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.duration_s is not None and self.duration_s <= 0:
            raise ValueError("duration_s must be positive")


@dataclass(frozen=True)
class TeleopConfig:
    tick_hz: float = 10.0
    preview_width: int = 320
    preview_height: int = 240
    timeout_s: float = 5.0
    start_position: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if self.tick_hz <= 0:
            raise ValueError("tick_hz must be positive")
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be positive")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    shell: ShellConfig = field(default_factory=ShellConfig)
    reef: ReefConfig = field(default_factory=ReefConfig)
    cameras: CameraConfig = field(default_factory=CameraConfig)
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    imu: sensors.ImuConfig = field(default_factory=sensors.ImuConfig)
    sonar: sensors.SonarConfig = field(default_factory=sensors.SonarConfig)
    water: sensors.WaterProperties = field(default_factory=sensors.WaterProperties)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    controls: ControlLimits = field(default_factory=ControlLimits)
    teleop: TeleopConfig = field(default_factory=TeleopConfig)
    turbidity_sweep: tuple = ()

    def __post_init__(self):
        if any(t < 0 for t in self.turbidity_sweep):
            raise ValueError("turbidity_sweep values must be >= 0")


_NESTED = {
    RunConfig: {
        "shell": ShellConfig,
        "reef": ReefConfig,
        "cameras": CameraConfig,
        "trajectory": TrajectoryConfig,
        "imu": sensors.ImuConfig,
        "sonar": sensors.SonarConfig,
        "water": sensors.WaterProperties,
        "schedule": ScheduleConfig,
        "controls": ControlLimits,
        "teleop": TeleopConfig,
    },
    sensors.ImuConfig: {"vibration": sensors.VibrationModel},
}


def dataclass_from_dict(cls, data: dict, path: str = ""):
    """Strict dataclass construction: unknown fields are errors."""
    label = path or cls.__name__
    if not isinstance(data, dict):
        raise ConfigError(f"{label}: expected a JSON object")
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{label}: unknown field '{key}'")
    nested = _NESTED.get(cls, {})
    kwargs = {}
    for key, value in data.items():
        sub = f"{path}.{key}" if path else key
        if key in nested:
            kwargs[key] = dataclass_from_dict(nested[key], value, sub)
        elif isinstance(value, list):
            kwargs[key] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"{label}: {e}") from e


def load_run_config(path) -> RunConfig:
    """Parse + validate a config file; REEFSIM_SEED overrides the root seed."""
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")

    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            raw["seed"] = int(env_seed)
        except ValueError as e:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env_seed!r}") from e

    cfg = dataclass_from_dict(RunConfig, raw)
    # sensor streams get derived sub-seeds unless the file pinned them
    root = cfg.seed
    if "seed" not in raw.get("imu", {}):
        cfg = dataclasses.replace(
            cfg, imu=dataclasses.replace(cfg.imu, seed=derive_seed(root, "imu"))
        )
    if "seed" not in raw.get("sonar", {}):
        cfg = dataclasses.replace(
            cfg, sonar=dataclasses.replace(cfg.sonar, seed=derive_seed(root, "sonar"))
        )
    return cfg


# ---------------------------------------------------------------------------
# Builders shared by the CLI commands and the teleop server


def shell_spec(cfg: RunConfig, index: int) -> shellgen.OysterShellSpec:
    s = cfg.shell
    return shellgen.OysterShellSpec(
        n_layers=s.n_layers,
        base_length=s.base_length,
        base_width=s.base_width,
        total_height=s.total_height,
        perturbation_amplitude=s.perturbation_amplitude,
        seed=derive_seed(cfg.seed, "shell", index),
    )


def build_shell_library(cfg: RunConfig) -> list:
    lib = [
        shellgen.generate_shell(shell_spec(cfg, k), cfg.shell.samples_per_layer)
        for k in range(cfg.reef.n_shell_variants)
    ]
    lib += [
        reef.make_rock_mesh(seed=derive_seed(cfg.seed, "rock", k))
        for k in range(cfg.reef.n_rock_variants)
    ]
    lib += [
        reef.make_stone_mesh(seed=derive_seed(cfg.seed, "stone", k))
        for k in range(cfg.reef.n_stone_variants)
    ]
    return lib


def build_scene(cfg: RunConfig, turbidity: float = None) -> reef.ReefScene:
    rc = cfg.reef
    n = int(round(rc.extent / rc.cell_size)) + 1
    hf = reef.generate_heightfield(
        nx=n, ny=n, cell_size=rc.cell_size, amplitude=rc.amplitude, octaves=rc.octaves,
        seed=derive_seed(cfg.seed, "heightfield"),
    )
    m = rc.placement_margin
    placements = reef.poisson_disk_place(
        hf,
        reef.PlacementConfig(
            oyster_density=rc.oyster_density,
            rock_density=rc.rock_density,
            stone_density=rc.stone_density,
            min_spacing=rc.min_spacing,
            region=(m, m, rc.extent - m, rc.extent - m),
            seed=derive_seed(cfg.seed, "placement"),
        ),
    )
    medium = reef.turbidity_to_medium(
        rc.turbidity if turbidity is None else turbidity, rc.color_scheme, rc.illumination
    )
    lighting = reef.Lighting(sun_direction=rc.sun_direction, ambient=rc.ambient)
    return reef.compose_scene(
        hf, placements, build_shell_library(cfg), medium, lighting, seed=cfg.seed
    )


def build_trajectory(cfg: RunConfig) -> Trajectory:
    tc = cfg.trajectory
    if tc.kind == "hover":
        return Trajectory.hover_at(tc.hover_position, duration=tc.hover_duration)
    if tc.kind == "waypoints":
        return traj_mod.fit_path(
            np.asarray(tc.waypoints, dtype=float), tc.cruise_speed,
            hover_duration=tc.hover_duration,
        )
    m = tc.margin
    region = (m, m, cfg.reef.extent - m, cfg.reef.extent - m)
    wp = traj_mod.lawnmower_pattern(region, tc.track_spacing, tc.altitude)
    return traj_mod.fit_path(wp, tc.cruise_speed)


def camera_rig(cfg: RunConfig) -> dataset.CameraRig:
    c = cfg.cameras
    return dataset.CameraRig(
        width=c.width, height=c.height, fov_deg=c.fov_deg, rgb_roles=tuple(c.rgb),
        depth=c.depth, mask_role=c.mask_camera,
    )


def schedule(cfg: RunConfig) -> dataset.Schedule:
    return dataset.Schedule(fps=cfg.schedule.fps, duration_s=cfg.schedule.duration_s)
