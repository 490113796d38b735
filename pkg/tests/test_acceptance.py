"""Acceptance criteria, one test per criterion, run with `pytest -v -s`.

Each test prints a `[PASS]` / `[FAIL]` line. The heavyweight fixtures (the
100-oyster reef and its BVH) are shared module-wide; criterion 9 runs the
full-scale 640x480 session once, timed, and proves byte determinism with a
reduced-resolution double export of the same scene.
"""

import functools
import hashlib
import time
from pathlib import Path

import numba
import numpy as np
import pytest
from numba import njit

from reefsim.dataset import CameraRig, Schedule, export_session, read_tum_poses
from reefsim.reef import (
    Lighting,
    PlacementConfig,
    compose_scene,
    generate_heightfield,
    make_rock_mesh,
    make_stone_mesh,
    poisson_disk_place,
    turbidity_to_medium,
)
from reefsim.render import (
    CameraModel,
    build_accel,
    cameras_by_role,
    mount_cameras,
    render_frame,
    trace_batch,
)
from reefsim.rotations import RigidTransform, quat_from_yaw_pitch, quat_to_matrix
from reefsim.sensors import (
    ImuConfig,
    SonarConfig,
    VibrationModel,
    WaterProperties,
    accel_noise,
    scan_sonar,
    sound_speed,
    strapdown_integrate,
    synth_imu,
)
from reefsim.rotations import substream
from reefsim.shellgen import (
    OysterShellSpec,
    extrude_shell,
    generate_shell,
    make_ellipse_layer,
    signed_volume,
    validate_mesh,
)
from reefsim.trajectory import (
    ControlCommand,
    Trajectory,
    fit_path,
    lawnmower_pattern,
    quantize_control,
    sample_pose,
)


def criterion(num, desc):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"\n[FAIL] criterion {num}: {desc}")
                raise
            print(f"\n[PASS] criterion {num}: {desc}")

        return wrapper

    return deco


# ---------------------------------------------------------------------------
# shared 100-oyster reef


def build_acceptance_scene(turbidity=1.0, seed=7):
    hf = generate_heightfield(nx=65, ny=65, cell_size=0.125, amplitude=0.12, octaves=4,
                              seed=seed)
    lib = [generate_shell(OysterShellSpec(seed=seed * 31 + k)) for k in range(5)]
    lib += [make_rock_mesh(seed=seed + 50), make_stone_mesh(seed=seed + 60)]
    region = (0.5, 0.5, 7.5, 7.5)
    area = 49.0
    cfg = PlacementConfig(
        oyster_density=100.0 / area, rock_density=5.0 / area, stone_density=8.0 / area,
        min_spacing=0.18, region=region, seed=seed,
    )
    placements = poisson_disk_place(hf, cfg)
    scene = compose_scene(hf, placements, lib, turbidity_to_medium(turbidity, (0.10, 0.35, 0.22)),
                          Lighting(sun_direction=(0.2, 0.1, -1.0), ambient=0.25), seed=seed)
    n_oysters = sum(1 for i in scene.instances if i.class_id == 1)
    assert n_oysters == 100, f"placement produced {n_oysters} oysters"
    return scene


@pytest.fixture(scope="module")
def scene100():
    return build_acceptance_scene()


@pytest.fixture(scope="module")
def accel100(scene100):
    return build_accel(scene100)


# ---------------------------------------------------------------------------
# 1. sound-speed polynomial exactness


def sound_speed_second_implementation(t, s, d):
    """Independently coded (Horner) version of the same polynomial."""
    return (
        1449.2
        + t * (4.6 + t * (-0.055 + 0.00029 * t))
        + (1.34 - 0.010 * t) * (s - 35.0)
        + 0.016 * d
    )


@criterion(1, "sound-speed polynomial matches hand values and a second implementation")
def test_criterion_1_sound_speed():
    t0 = time.time()
    assert sound_speed(WaterProperties(0.0, 35.0, 0.0)) == 1449.2
    assert sound_speed(WaterProperties(10.0, 35.0, 0.0)) == pytest.approx(1489.99, rel=1e-9)
    assert sound_speed(WaterProperties(10.0, 30.0, 100.0)) == pytest.approx(1485.39, rel=1e-9)
    rng = np.random.default_rng(123)
    for _ in range(1000):
        t, s, d = rng.uniform(-2, 40), rng.uniform(0, 45), rng.uniform(0, 800)
        a = sound_speed(WaterProperties(t, s, d))
        b = sound_speed_second_implementation(t, s, d)
        assert abs(a - b) <= 1e-9 * abs(b)
    assert time.time() - t0 < 1.0, "criterion 1 must finish within 1 s"


# ---------------------------------------------------------------------------
# 2. IMU noise statistics


@criterion(2, "IMU: exact noiseless hover, sqrt-T random-walk growth, vibration DFT peak")
def test_criterion_2_imu_statistics():
    t0 = time.time()
    # exact hover with preset none
    hover = Trajectory.hover_at((0, 0, -1.5), duration=2.0)
    for s in synth_imu(hover, ImuConfig(rate_hz=100.0, preset="none"), gravity=9.81):
        assert np.array_equal(s.accel, np.array([0.0, 0.0, 9.81]))
        assert np.array_equal(s.gyro, np.zeros(3))

    # white-noise-only integral: std grows as sqrt(T), log-log slope 0.5 +/- 0.05
    rate, n, runs = 100.0, 1024, 1000
    cfg = ImuConfig(rate_hz=rate, preset="none", accel_noise_density=0.01,
                    gyro_noise_density=0.0)
    ts = np.arange(n) / rate
    integrals = np.empty((runs, n))
    for r in range(runs):
        w = accel_noise(cfg, ts, substream(r, "mc"))[:, 0]
        integrals[r] = np.cumsum(w) / rate
    windows = np.array([16, 32, 64, 128, 256, 512, 1023])
    stds = integrals[:, windows].std(axis=0)
    slope = np.polyfit(np.log(windows / rate), np.log(stds), 1)[0]
    assert abs(slope - 0.5) <= 0.05, f"random-walk slope {slope:.4f}"

    # sinusoidal vibration shows up at the configured DFT bin
    vib = VibrationModel(kind="sinusoidal", amplitude=0.3, freq_hz=37.0)
    cfg_vib = ImuConfig(rate_hz=1000.0, preset="none", vibration=vib)
    tv = np.arange(10_000) / 1000.0
    sig = accel_noise(cfg_vib, tv, substream(0, "vib"))[:, 0]
    freqs = np.fft.rfftfreq(len(tv), 1e-3)
    peak = freqs[np.argmax(np.abs(np.fft.rfft(sig)))]
    assert peak == pytest.approx(37.0, abs=0.05)
    assert time.time() - t0 < 120.0, "criterion 2 must finish within 2 min"


# ---------------------------------------------------------------------------
# 3. strapdown closure


@criterion(3, "noiseless strapdown reproduces a 60 s lawnmower endpoint within 1% of path")
def test_criterion_3_strapdown_closure():
    t0 = time.time()
    wp = lawnmower_pattern((0.5, 0.5, 7.5, 7.5), track_spacing=1.0, altitude=1.0)
    chord = np.sum(np.linalg.norm(np.diff(wp, axis=0), axis=1))
    traj = fit_path(wp, cruise_speed=chord / 60.0)  # 60 s exactly
    assert traj.duration == pytest.approx(60.0, abs=1e-9)

    samples = synth_imu(traj, ImuConfig(rate_hz=200.0, preset="none"))
    start = sample_pose(traj, traj.t0)
    _, positions, _ = strapdown_integrate(samples, start)
    end_gt = sample_pose(traj, samples[-1].t).position
    path_length = chord
    err = np.linalg.norm(positions[-1] - end_gt)
    assert err <= 0.01 * path_length, f"closure error {err:.3f} m over {path_length:.1f} m"
    assert time.time() - t0 < 30.0, "criterion 3 must finish within 30 s"


# ---------------------------------------------------------------------------
# 4. BVH vs exhaustive oracle


@njit(cache=True)
def _brute_force_nearest(ox, oy, oz, dx, dy, dz, v0, e1, e2):
    """Exhaustive nearest-hit oracle: plain loop over every triangle."""
    best_t = np.inf
    best_k = -1
    for k in range(v0.shape[0]):
        e1x, e1y, e1z = e1[k, 0], e1[k, 1], e1[k, 2]
        e2x, e2y, e2z = e2[k, 0], e2[k, 1], e2[k, 2]
        px = dy * e2z - dz * e2y
        py = dz * e2x - dx * e2z
        pz = dx * e2y - dy * e2x
        det = e1x * px + e1y * py + e1z * pz
        if -1e-12 < det < 1e-12:
            continue
        inv = 1.0 / det
        sx = ox - v0[k, 0]
        sy = oy - v0[k, 1]
        sz = oz - v0[k, 2]
        u = (sx * px + sy * py + sz * pz) * inv
        if u < 0.0 or u > 1.0:
            continue
        qx = sy * e1z - sz * e1y
        qy = sz * e1x - sx * e1z
        qz = sx * e1y - sy * e1x
        v = (dx * qx + dy * qy + dz * qz) * inv
        if v < 0.0 or u + v > 1.0:
            continue
        t = (e2x * qx + e2y * qy + e2z * qz) * inv
        if 1e-9 < t < best_t:
            best_t = t
            best_k = k
    return best_t, best_k


def _numpy_nearest(origin, direction, v0, v1, v2):
    """Second, numpy-vectorized oracle used to spot-check the numba one."""
    e1 = v1 - v0
    e2 = v2 - v0
    p = np.cross(direction, e2)
    det = np.einsum("ij,ij->i", e1, p)
    ok = np.abs(det) > 1e-12
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = origin - v0
    u = np.einsum("ij,ij->i", s, p) * inv
    q = np.cross(s, e1)
    v = (direction * q).sum(axis=1) * inv
    t = np.einsum("ij,ij->i", e2, q) * inv
    valid = ok & (u >= 0) & (u <= 1) & (v >= 0) & (u + v <= 1) & (t > 1e-9)
    t = np.where(valid, t, np.inf)
    k = int(np.argmin(t))
    return (float(t[k]), k) if np.isfinite(t[k]) else (np.inf, -1)


@criterion(4, "BVH equals exhaustive intersection on 1e4 rays over the 100-oyster reef")
def test_criterion_4_bvh_oracle(scene100, accel100):
    t0 = time.time()
    rng = np.random.default_rng(2024)
    n_rays = 10_000
    origins = rng.uniform([0.5, 0.5, 0.3], [7.5, 7.5, 2.5], size=(n_rays, 3))
    dirs = rng.normal(size=(n_rays, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    t_bvh, tri_bvh, _, _ = trace_batch(origins, dirs, accel100)
    v0, e1, e2 = accel100.v0, accel100.e1, accel100.e2
    hits = 0
    for i in range(n_rays):
        t_ref, k_ref = _brute_force_nearest(
            origins[i, 0], origins[i, 1], origins[i, 2],
            dirs[i, 0], dirs[i, 1], dirs[i, 2], v0, e1, e2,
        )
        if k_ref < 0:
            assert tri_bvh[i] < 0, f"ray {i}: BVH hit where oracle missed"
        else:
            hits += 1
            assert tri_bvh[i] == k_ref, f"ray {i}: hit id mismatch"
            assert abs(t_bvh[i] - t_ref) <= 1e-6, f"ray {i}: distance differs"
    assert hits >= 1000, "scene too sparse for a meaningful oracle check"

    # spot-check the numba oracle itself against an independent numpy version
    v1, v2 = v0 + e1, v0 + e2
    for i in range(0, n_rays, 400):
        t_np, k_np = _numpy_nearest(origins[i], dirs[i], v0, v1, v2)
        t_nb, k_nb = _brute_force_nearest(
            origins[i, 0], origins[i, 1], origins[i, 2],
            dirs[i, 0], dirs[i, 1], dirs[i, 2], v0, e1, e2,
        )
        assert k_np == k_nb and (k_np < 0 or abs(t_np - t_nb) <= 1e-9)
    assert time.time() - t0 < 60.0, "criterion 4 must finish within 1 min"


# ---------------------------------------------------------------------------
# 5. cross-sensor consistency


@criterion(5, "down-beam sonar range equals front-depth center pixel; tof*c == 2*range")
def test_criterion_5_cross_sensor(scene100, accel100):
    # nose-down vehicle: the front camera looks straight at the seabed
    pose = RigidTransform(
        rotation=quat_to_matrix(quat_from_yaw_pitch(0.0, -np.pi / 2.0)),
        translation=np.array([4.0, 4.0, 2.0]),
    )
    cams = cameras_by_role(mount_cameras(pose, width=321, height=241, fov_deg=90.0))
    depth_cam = cams["front_depth"]
    frame = render_frame(scene100, accel100, depth_cam, 0.0)
    center_depth = frame.depth[120, 160]  # odd resolution: center pixel on axis
    assert np.isfinite(center_depth)

    # co-located sonar whose -z axis is the camera optical axis
    flip = np.diag([1.0, -1.0, -1.0])
    sonar_pose = RigidTransform(
        rotation=depth_cam.pose.rotation @ flip, translation=depth_cam.pose.translation
    )
    water = WaterProperties(10.0, 35.0, 5.0)
    cfg = SonarConfig(mode="single_beam_down", range_noise_sigma_rel=0.0, dropout_prob=0.0)
    (ret,) = scan_sonar(accel100, sonar_pose, cfg, water, t=0.0)
    assert ret.valid
    assert abs(ret.range_m - center_depth) <= 1e-6
    assert ret.time_of_flight_s * sound_speed(water) == 2.0 * ret.range_m  # exact


# ---------------------------------------------------------------------------
# 6. water-medium behavior


@criterion(6, "turbidity 0 is bitwise medium-free; higher turbidity pulls toward background")
def test_criterion_6_water_medium(accel100):
    import dataclasses

    cam_pose = RigidTransform(
        rotation=np.array([[0.0, -1, 0], [-1, 0, 0], [0, 0, -1]]),
        translation=np.array([4.0, 4.0, 1.8]),
    )
    cam = CameraModel(role="down_facing", pose=cam_pose, width=160, height=120)

    bg = (0.10, 0.35, 0.22)
    frames = {}
    for turb in (0.0, 1.0, 3.0):
        scene_t = build_acceptance_scene(turbidity=turb)
        frames[turb] = render_frame(scene_t, accel100, cam, 0.0)
        if turb == 0.0:
            disabled = render_frame(scene_t, accel100, cam, 0.0, medium_enabled=False)
            assert np.array_equal(frames[0.0].rgb, disabled.rgb)

    gap0 = np.abs(frames[0.0].rgb - np.array(bg))
    gap1 = np.abs(frames[1.0].rgb - np.array(bg))
    gap3 = np.abs(frames[3.0].rgb - np.array(bg))
    assert np.all(gap1 <= gap0 + 1e-12)
    assert np.all(gap3 <= gap1 + 1e-12)
    assert gap3.sum() < gap1.sum() < gap0.sum()  # strictly closer overall


# ---------------------------------------------------------------------------
# 7. geometry


@criterion(7, "100 random shells watertight with sphere topology; cylinder volume within 2%")
def test_criterion_7_geometry():
    for seed in range(100):
        rep = validate_mesh(generate_shell(OysterShellSpec(seed=seed)))
        assert rep.watertight, f"seed {seed} not edge-manifold"
        assert rep.winding_consistent, f"seed {seed} winding"
        assert rep.euler_characteristic == 2, f"seed {seed} euler"
        assert rep.signed_volume > 0, f"seed {seed} volume"
        assert rep.degenerate_triangle_count == 0, f"seed {seed} degenerate"

    layers = [make_ellipse_layer(1.0, 1.0, 0.0, n_ctrl=25),
              make_ellipse_layer(1.0, 1.0, 1.0, n_ctrl=25)]
    mesh = extrude_shell(layers, samples_per_layer=64)
    vol = signed_volume(mesh.vertices, mesh.triangles)
    assert abs(vol - np.pi) / np.pi <= 0.02, f"cylinder volume {vol:.5f} vs pi"


# ---------------------------------------------------------------------------
# 8. control labeling


@criterion(8, "7+7 control quantization: pinned bins and negation symmetry on 1e4 rates")
def test_criterion_8_control_labels():
    assert quantize_control(ControlCommand()) == (
        quantize_control(ControlCommand(pitch_rate=0.0, yaw_rate=0.0))
    )
    assert quantize_control(ControlCommand()).pitch_class == 3
    assert quantize_control(ControlCommand()).yaw_class == 3
    assert quantize_control(ControlCommand(pitch_rate=0.5, yaw_rate=0.5)) \
        .pitch_class == 6
    assert quantize_control(ControlCommand(pitch_rate=-0.5, yaw_rate=-0.5)) \
        .yaw_class == 0
    assert quantize_control(ControlCommand(yaw_rate=-0.3), max_yaw_rate=0.5).yaw_class == 1

    rng = np.random.default_rng(77)
    checked = 0
    while checked < 10_000:
        rate = rng.uniform(-0.5, 0.5)
        rhat7 = (rate + 0.5) / 1.0 * 7.0
        if abs(rhat7 - round(rhat7)) < 1e-9 or abs(rate) < 1e-12:
            continue  # bin boundaries excluded by the contract
        a = quantize_control(ControlCommand(yaw_rate=rate)).yaw_class
        b = quantize_control(ControlCommand(yaw_rate=-rate)).yaw_class
        assert b == 6 - a
        checked += 1


# ---------------------------------------------------------------------------
# 9. dataset determinism, formats, and full-scale runtime


def _export(scene, out, width, height, fps, duration, seed=7):
    traj = fit_path([(1.0, 4.0, 1.0), (7.0, 4.0, 1.0), (7.0, 6.0, 1.0)],
                    cruise_speed=8.0 / duration)
    rig = CameraRig(width=width, height=height,
                    rgb_roles=("down_facing", "front_facing"), depth=True,
                    mask_role="down_facing")
    return export_session(
        scene, traj, rig,
        ImuConfig(rate_hz=200.0, preset="medium", seed=seed),
        SonarConfig(rate_hz=5.0, range_noise_sigma_rel=0.01, seed=seed),
        WaterProperties(10.0, 35.0, 5.0),
        Schedule(fps=fps, duration_s=duration),
        out, session_id="acceptance", seed=seed,
    )


@criterion(9, "byte-deterministic exports; TUM well-formed; full-scale session in time")
def test_criterion_9_dataset(scene100, tmp_path_factory):
    base = tmp_path_factory.mktemp("acceptance_sessions")

    # determinism: two identical exports must agree byte-for-byte everywhere
    m1 = _export(scene100, base / "r1", width=64, height=48, fps=10.0, duration=10.0)
    m2 = _export(scene100, base / "r2", width=64, height=48, fps=10.0, duration=10.0)
    assert len(m1.frame_index) == 100
    files1 = sorted(p for p in (base / "r1").rglob("*") if p.is_file())
    files2 = sorted(p for p in (base / "r2").rglob("*") if p.is_file())
    assert [p.relative_to(base / "r1") for p in files1] == \
        [p.relative_to(base / "r2") for p in files2]
    for a, b in zip(files1, files2):
        assert hashlib.sha256(a.read_bytes()).digest() == \
            hashlib.sha256(b.read_bytes()).digest(), a.name

    # TUM lines: 8 numeric fields, unit quaternions
    for line in (base / "r1/poses_gt.tum").read_text().splitlines():
        vals = [float(v) for v in line.split()]
        assert len(vals) == 8
        assert abs(np.linalg.norm(vals[4:8]) - 1.0) <= 1e-6
    poses = read_tum_poses(base / "r1/poses_gt.tum")
    assert len(poses) == 100

    # full-scale: 10 s, 10 fps, 640x480, the 100-oyster reef, under 10 minutes
    t0 = time.time()
    manifest = _export(scene100, base / "full", width=640, height=480, fps=10.0,
                       duration=10.0)
    elapsed = time.time() - t0
    assert manifest.complete and len(manifest.frame_index) == 100
    assert (base / "full/frames/down_facing/0.000000000.ppm").stat().st_size > 600 * 400
    print(f"\n  full-scale session rendered in {elapsed:.0f} s "
          f"({numba.get_num_threads()} threads)")
    assert elapsed < 600.0, f"full-scale session took {elapsed:.0f} s"
