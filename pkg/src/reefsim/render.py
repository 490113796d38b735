"""CPU ray tracer: four mounted cameras, instance masks, underwater medium.

Shading is single-bounce Lambertian plus the analytic homogeneous-fog
image-formation model: per channel, L = J*exp(-beta*d) + bg*(1 - exp(-beta*d)).
Depth is Euclidean ray distance so it lines up with the sonar module.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .reef import ReefScene, WaterMedium
from .rotations import RigidTransform
from .shellgen import TriangleMesh

MISS_INSTANCE = 65535  # fits a 16-bit mask image

CAMERA_ROLES = ("third_person", "down_facing", "front_facing", "front_depth")

# matte base colors per class id (seabed, oyster, rock, stone)
CLASS_ALBEDO = np.array(
    [
        [0.72, 0.66, 0.48],
        [0.63, 0.58, 0.50],
        [0.46, 0.44, 0.42],
        [0.36, 0.34, 0.31],
    ]
)

DOWN_CAMERA_OFFSET = np.array([0.0, 0.0, -0.05])
FRONT_CAMERA_OFFSET = np.array([0.1, 0.0, 0.0])
THIRD_PERSON_OFFSET = np.array([-1.2, 0.0, 0.8])

# camera frame is x right, y down, z forward (optical axis);
# these matrices express camera axes in the FLU body frame
_R_BODY_DOWN = np.array([[0.0, -1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, -1.0]])
_R_BODY_FRONT = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


class RenderError(RuntimeError):
    pass


@dataclass(frozen=True)
class CameraModel:
    role: str
    pose: RigidTransform  # camera-to-world
    fov_deg: float = 90.0
    width: int = 640
    height: int = 480

    def __post_init__(self):
        if self.role not in CAMERA_ROLES:
            raise ValueError(f"unknown camera role {self.role!r}")
        if not 0.0 < self.fov_deg < 180.0:
            raise ValueError("fov must lie in (0, 180) degrees")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        r = self.pose.rotation
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-9):
            raise ValueError("camera rotation must be orthonormal")


@dataclass
class FrameBundle:
    rgb: np.ndarray  # (h, w, 3) in [0,1]
    depth: np.ndarray  # (h, w) meters, +inf on miss
    instance: np.ndarray  # (h, w) uint16, 65535 on miss
    timestamp: float
    camera_role: str


@dataclass
class Hit:
    distance: float
    point: np.ndarray
    normal: np.ndarray
    instance_id: int
    class_id: int
    uv: np.ndarray


@dataclass
class AccelStructure:
    """Median-split BVH over the flattened world-space scene triangles."""

    node_min: np.ndarray
    node_max: np.ndarray
    node_left: np.ndarray
    node_right: np.ndarray
    node_start: np.ndarray
    node_count: np.ndarray
    v0: np.ndarray  # (m, 3) first corners, BVH leaf order
    e1: np.ndarray
    e2: np.ndarray
    tri_vertex_indices: np.ndarray  # (m, 3) into the flat vertex arrays
    tri_instance: np.ndarray  # (m,)
    tri_class: np.ndarray
    vertex_normals: np.ndarray  # (V, 3)
    vertex_uv: np.ndarray
    vertex_albedo: np.ndarray

    @property
    def triangle_count(self) -> int:
        return len(self.v0)


def _hash01(ix, iy, seed: float):
    h = np.sin(ix * 127.1 + iy * 311.7 + seed * 0.6180339) * 43758.5453
    return h - np.floor(h)


def _value_noise_uv(uv: np.ndarray, freq: float, seed: float) -> np.ndarray:
    """Smooth deterministic noise in [0,1] at texture coordinates."""
    p = np.asarray(uv, dtype=float) * freq
    i0 = np.floor(p)
    f = p - i0
    f = f * f * (3.0 - 2.0 * f)
    ix, iy = i0[:, 0], i0[:, 1]
    n00 = _hash01(ix, iy, seed)
    n10 = _hash01(ix + 1, iy, seed)
    n01 = _hash01(ix, iy + 1, seed)
    n11 = _hash01(ix + 1, iy + 1, seed)
    return (
        n00 * (1 - f[:, 0]) * (1 - f[:, 1])
        + n10 * f[:, 0] * (1 - f[:, 1])
        + n01 * (1 - f[:, 0]) * f[:, 1]
        + n11 * f[:, 0] * f[:, 1]
    )


def _surface_albedo(mesh: TriangleMesh, class_id: int, instance_id: int, scene_seed: int):
    """Per-vertex albedo: optional texture image, else noisy class color."""
    if mesh.texture is not None:
        tex = np.asarray(mesh.texture, dtype=float)
        th, tw = tex.shape[:2]
        px = np.clip(mesh.uv[:, 0] * (tw - 1), 0, tw - 1)
        py = np.clip((1.0 - mesh.uv[:, 1]) * (th - 1), 0, th - 1)
        return tex[py.astype(int), px.astype(int)]
    base = CLASS_ALBEDO[class_id % len(CLASS_ALBEDO)]
    n = _value_noise_uv(mesh.uv, freq=9.0, seed=float(scene_seed % 8191 + instance_id))
    mod = 0.75 + 0.5 * n
    return np.clip(base[None, :] * mod[:, None], 0.0, 1.0)


def _build_bvh(tri_min: np.ndarray, tri_max: np.ndarray, leaf_size: int = 8):
    n = len(tri_min)
    centroids = 0.5 * (tri_min + tri_max)
    order = np.arange(n)
    nmin, nmax, nleft, nright, nstart, ncount = [], [], [], [], [], []

    def build(lo: int, hi: int) -> int:
        idx = len(nmin)
        sel = order[lo:hi]
        nmin.append(tri_min[sel].min(axis=0))
        nmax.append(tri_max[sel].max(axis=0))
        nleft.append(-1)
        nright.append(-1)
        nstart.append(lo)
        ncount.append(0)
        if hi - lo <= leaf_size:
            ncount[idx] = hi - lo
            return idx
        c = centroids[sel]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        mid = (lo + hi) // 2
        part = np.argpartition(c[:, axis], mid - lo)
        order[lo:hi] = sel[part]
        nleft[idx] = build(lo, mid)
        nright[idx] = build(mid, hi)
        return idx

    build(0, n)
    return (
        np.asarray(nmin),
        np.asarray(nmax),
        np.asarray(nleft, dtype=np.int64),
        np.asarray(nright, dtype=np.int64),
        np.asarray(nstart, dtype=np.int64),
        np.asarray(ncount, dtype=np.int64),
        order,
    )


def build_accel(scene: ReefScene, leaf_size: int = 8) -> AccelStructure:
    """Flatten all instances into world space and build the BVH."""
    verts, normals, uvs, albedos = [], [], [], []
    tri_idx, tri_inst, tri_cls = [], [], []
    offset = 0
    for inst in scene.instances:
        mesh = inst.mesh
        verts.append(inst.pose.apply(mesh.vertices))
        normals.append(mesh.normals @ inst.pose.rotation.T)
        uvs.append(mesh.uv)
        albedos.append(_surface_albedo(mesh, inst.class_id, inst.instance_id, scene.seed))
        tri_idx.append(mesh.triangles.astype(np.int64) + offset)
        m = len(mesh.triangles)
        tri_inst.append(np.full(m, inst.instance_id, dtype=np.int32))
        tri_cls.append(np.full(m, inst.class_id, dtype=np.int32))
        offset += len(mesh.vertices)
    if not tri_idx or sum(len(t) for t in tri_idx) == 0:
        raise RenderError("cannot build acceleration structure for an empty scene")

    vertices = np.ascontiguousarray(np.vstack(verts))
    vnormals = np.ascontiguousarray(np.vstack(normals))
    vuv = np.ascontiguousarray(np.vstack(uvs))
    valbedo = np.ascontiguousarray(np.vstack(albedos))
    triangles = np.vstack(tri_idx)
    tri_instance = np.concatenate(tri_inst)
    tri_class = np.concatenate(tri_cls)

    corners = vertices[triangles]  # (m, 3, 3)
    tri_min = corners.min(axis=1)
    tri_max = corners.max(axis=1)
    node_min, node_max, node_left, node_right, node_start, node_count, order = _build_bvh(
        tri_min, tri_max, leaf_size
    )

    triangles = triangles[order]
    corners = corners[order]
    return AccelStructure(
        node_min=np.ascontiguousarray(node_min),
        node_max=np.ascontiguousarray(node_max),
        node_left=node_left,
        node_right=node_right,
        node_start=node_start,
        node_count=node_count,
        v0=np.ascontiguousarray(corners[:, 0]),
        e1=np.ascontiguousarray(corners[:, 1] - corners[:, 0]),
        e2=np.ascontiguousarray(corners[:, 2] - corners[:, 0]),
        tri_vertex_indices=np.ascontiguousarray(triangles),
        tri_instance=tri_instance[order],
        tri_class=tri_class[order],
        vertex_normals=vnormals,
        vertex_uv=vuv,
        vertex_albedo=valbedo,
    )


def trace_batch(origins: np.ndarray, directions: np.ndarray, accel: AccelStructure):
    """Nearest hits for a batch of rays: (t, tri_index, bary_u, bary_v)."""
    return kernels.trace_rays(
        np.ascontiguousarray(origins, dtype=np.float64),
        np.ascontiguousarray(directions, dtype=np.float64),
        accel.node_min,
        accel.node_max,
        accel.node_left,
        accel.node_right,
        accel.node_start,
        accel.node_count,
        accel.v0,
        accel.e1,
        accel.e2,
    )


def trace_primary(origin, direction, accel: AccelStructure):
    """Nearest front-or-back-face hit along one ray, or None."""
    direction = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
        raise ValueError("ray direction must be unit length")
    origin = np.asarray(origin, dtype=float)
    t, tri, u, v = trace_batch(origin[None, :], direction[None, :], accel)
    if tri[0] < 0:
        return None
    k = int(tri[0])
    w0 = 1.0 - u[0] - v[0]
    vi = accel.tri_vertex_indices[k]
    normal = (
        w0 * accel.vertex_normals[vi[0]]
        + u[0] * accel.vertex_normals[vi[1]]
        + v[0] * accel.vertex_normals[vi[2]]
    )
    normal = normal / np.linalg.norm(normal)
    uv = w0 * accel.vertex_uv[vi[0]] + u[0] * accel.vertex_uv[vi[1]] + v[0] * accel.vertex_uv[vi[2]]
    return Hit(
        distance=float(t[0]),
        point=origin + t[0] * direction,
        normal=normal,
        instance_id=int(accel.tri_instance[k]),
        class_id=int(accel.tri_class[k]),
        uv=uv,
    )


def shade_underwater(
    distance,
    normal,
    medium: WaterMedium,
    sun_direction,
    ambient: float,
    surface_albedo,
    medium_enabled: bool = True,
):
    """Lambertian direct light seen through homogeneous scattering water.

    Accepts scalars-with-(3,) vectors or batches (k,)-with-(k,3); returns rgb
    in [0,1] with the same leading shape.
    """
    distance = np.asarray(distance, dtype=float)
    normal = np.asarray(normal, dtype=float)
    albedo = np.asarray(surface_albedo, dtype=float)
    sun = np.asarray(sun_direction, dtype=float)
    sun = sun / np.linalg.norm(sun)

    lam = np.maximum(0.0, -(normal @ sun))
    j = np.clip(albedo * (ambient + medium.illumination * lam)[..., None], 0.0, 1.0)
    if not medium_enabled:
        return j
    trans = np.exp(-medium.beta_rgb * distance[..., None])
    out = j * trans + medium.background_rgb * (1.0 - trans)
    return np.clip(out, 0.0, 1.0)


def camera_rays(camera: CameraModel, supersample: int = 1):
    """Pinhole rays through pixel centers, row-major; unit directions."""
    w, h, s = camera.width, camera.height, supersample
    focal = (w / 2.0) / np.tan(np.radians(camera.fov_deg) / 2.0)
    sub = (np.arange(s) + 0.5) / s  # sub-pixel offsets within each pixel
    xs = np.arange(w)[:, None] + sub[None, :]  # (w, s)
    ys = np.arange(h)[:, None] + sub[None, :]
    px = (xs - w / 2.0).reshape(1, w, 1, s)
    py = (ys - h / 2.0).reshape(h, 1, s, 1)
    d = np.empty((h, w, s, s, 3))
    d[..., 0] = px
    d[..., 1] = py
    d[..., 2] = focal
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    dirs = (d.reshape(-1, 3) @ camera.pose.rotation.T).reshape(-1, 3)
    origins = np.broadcast_to(camera.pose.translation, dirs.shape)
    return np.ascontiguousarray(origins), np.ascontiguousarray(dirs)


def render_frame(
    scene: ReefScene,
    accel: AccelStructure,
    camera: CameraModel,
    timestamp: float = 0.0,
    medium_enabled: bool = True,
    supersample: int = 1,
) -> FrameBundle:
    """One primary ray per pixel center (plus optional supersampling for rgb).

    Deterministic and independent of pixel evaluation order; misses get the
    background color, +inf depth and the 65535 instance sentinel.
    """
    h, w, s = camera.height, camera.width, max(1, int(supersample))
    origins, dirs = camera_rays(camera, s)
    t, tri, u, v = trace_batch(origins, dirs, accel)

    hit = tri >= 0
    rgb_flat = np.empty((len(t), 3))
    bg = np.asarray(scene.medium.background_rgb, dtype=float)
    rgb_flat[~hit] = bg
    if hit.any():
        k = tri[hit]
        vi = accel.tri_vertex_indices[k]
        w0 = (1.0 - u[hit] - v[hit])[:, None]
        u1 = u[hit][:, None]
        v1 = v[hit][:, None]
        normal = (
            w0 * accel.vertex_normals[vi[:, 0]]
            + u1 * accel.vertex_normals[vi[:, 1]]
            + v1 * accel.vertex_normals[vi[:, 2]]
        )
        normal /= np.linalg.norm(normal, axis=1, keepdims=True)
        albedo = (
            w0 * accel.vertex_albedo[vi[:, 0]]
            + u1 * accel.vertex_albedo[vi[:, 1]]
            + v1 * accel.vertex_albedo[vi[:, 2]]
        )
        rgb_flat[hit] = shade_underwater(
            t[hit], normal, scene.medium, scene.sun_direction, scene.ambient, albedo,
            medium_enabled=medium_enabled,
        )
    rgb = rgb_flat.reshape(h, w, s * s, 3).mean(axis=2)

    if s == 1:
        t_c, tri_c = t, tri
    else:
        # depth/instance always come from the pixel-center sample
        center_origins, center_dirs = camera_rays(camera, 1)
        t_c, tri_c, _, _ = trace_batch(center_origins, center_dirs, accel)
    depth = np.where(tri_c >= 0, t_c, np.inf).reshape(h, w)
    instance = np.where(
        tri_c >= 0, accel.tri_instance[np.maximum(tri_c, 0)], MISS_INSTANCE
    ).astype(np.uint16).reshape(h, w)

    return FrameBundle(
        rgb=rgb, depth=depth, instance=instance, timestamp=float(timestamp),
        camera_role=camera.role,
    )


def _look_at(eye: np.ndarray, target: np.ndarray, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    fwd = np.asarray(target, dtype=float) - eye
    fwd = fwd / np.linalg.norm(fwd)
    up = np.asarray(up, dtype=float)
    x = np.cross(fwd, up)
    n = np.linalg.norm(x)
    if n < 1e-9:  # looking straight along up: pick an arbitrary horizontal right
        x = np.array([0.0, -1.0, 0.0])
        n = 1.0
    x = x / n
    y = np.cross(fwd, x)
    return np.column_stack([x, y, fwd])


def mount_cameras(
    rov_pose: RigidTransform,
    width: int = 640,
    height: int = 480,
    fov_deg: float = 90.0,
    preview: bool = False,
) -> list:
    """The four rigidly mounted cameras of the vehicle.

    Down-facing looks along body -z, front RGB and front depth are co-located
    looking along body +x, and the third-person camera sits behind/above and
    looks at the vehicle.
    """
    if preview:
        width, height = width // 2, height // 2
    r = rov_pose.rotation
    p = rov_pose.translation

    down_pose = RigidTransform(rotation=r @ _R_BODY_DOWN, translation=p + r @ DOWN_CAMERA_OFFSET)
    front_pose = RigidTransform(
        rotation=r @ _R_BODY_FRONT, translation=p + r @ FRONT_CAMERA_OFFSET
    )
    tp_eye = p + r @ THIRD_PERSON_OFFSET
    tp_pose = RigidTransform(rotation=_look_at(tp_eye, p), translation=tp_eye)

    common = dict(width=width, height=height, fov_deg=fov_deg)
    return [
        CameraModel(role="third_person", pose=tp_pose, **common),
        CameraModel(role="down_facing", pose=down_pose, **common),
        CameraModel(role="front_facing", pose=front_pose, **common),
        CameraModel(role="front_depth", pose=front_pose, **common),
    ]


def cameras_by_role(cameras: list) -> dict:
    return {cam.role: cam for cam in cameras}
