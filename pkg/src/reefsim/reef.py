"""Reef scene assembly: seabed heightfield, object placement, water medium.

Class ids: 0 = seabed, 1 = oyster, 2 = rock, 3 = stone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import meshio
from .rotations import (
    RigidTransform,
    matrix_to_quat,
    quat_to_matrix,
    substream,
)
from .shellgen import TriangleMesh, vertex_normals

CLASS_SEABED = 0
CLASS_OYSTER = 1
CLASS_ROCK = 2
CLASS_STONE = 3
CLASS_NAMES = {0: "seabed", 1: "oyster", 2: "rock", 3: "stone"}

# per-channel attenuation at turbidity 1, 1/m; red dies fastest underwater
BASE_BETA_RGB = np.array([0.45, 0.15, 0.10])
# how deep (as a fraction of mesh height) placed objects bed into the substrate
SINK_FRACTION = 0.10


class PlacementError(RuntimeError):
    pass


class SceneError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Heightfield


@dataclass
class Heightfield:
    nx: int
    ny: int
    cell_size: float
    heights: np.ndarray  # (ny, nx) meters, row = y index
    origin: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        self.heights = np.asarray(self.heights, dtype=float)
        self.origin = np.asarray(self.origin, dtype=float)
        if self.nx < 2 or self.ny < 2:
            raise SceneError("heightfield needs nx, ny >= 2")
        if self.cell_size <= 0:
            raise SceneError("cell_size must be positive")
        if self.heights.shape != (self.ny, self.nx):
            raise SceneError(f"heights shape {self.heights.shape} != (ny={self.ny}, nx={self.nx})")
        if not np.all(np.isfinite(self.heights)):
            raise SceneError("heights must be finite")

    @property
    def extent(self) -> tuple:
        return ((self.nx - 1) * self.cell_size, (self.ny - 1) * self.cell_size)

    def sample(self, x: float, y: float) -> float:
        """Bilinear surface height at world (x, y), clamped at the borders."""
        gx = np.clip((x - self.origin[0]) / self.cell_size, 0.0, self.nx - 1.0)
        gy = np.clip((y - self.origin[1]) / self.cell_size, 0.0, self.ny - 1.0)
        i0 = min(int(gx), self.nx - 2)
        j0 = min(int(gy), self.ny - 2)
        fx, fy = gx - i0, gy - j0
        h = self.heights
        return float(
            h[j0, i0] * (1 - fx) * (1 - fy)
            + h[j0, i0 + 1] * fx * (1 - fy)
            + h[j0 + 1, i0] * (1 - fx) * fy
            + h[j0 + 1, i0 + 1] * fx * fy
        )


def _smoothstep(t: np.ndarray) -> np.ndarray:
    return t * t * (3.0 - 2.0 * t)


def generate_heightfield(
    nx: int, ny: int, cell_size: float, amplitude: float, octaves: int, seed: int
) -> Heightfield:
    """Fractal value-noise terrain; |height| never exceeds amplitude."""
    if nx < 2 or ny < 2:
        raise SceneError("heightfield needs nx, ny >= 2")
    if amplitude < 0:
        raise SceneError("amplitude must be >= 0")
    if octaves < 1:
        raise SceneError("octaves must be >= 1")
    rng = substream(seed, "heightfield")
    xs = np.arange(nx) / (nx - 1)
    ys = np.arange(ny) / (ny - 1)
    u, v = np.meshgrid(xs, ys)  # (ny, nx)
    total = np.zeros((ny, nx))
    weight_sum = 0.0
    for o in range(octaves):
        cells = 4 * (2**o)
        lattice = rng.uniform(-1.0, 1.0, size=(cells + 1, cells + 1))
        gu, gv = u * cells, v * cells
        i0 = np.minimum(gu.astype(int), cells - 1)
        j0 = np.minimum(gv.astype(int), cells - 1)
        fu, fv = _smoothstep(gu - i0), _smoothstep(gv - j0)
        n = (
            lattice[j0, i0] * (1 - fu) * (1 - fv)
            + lattice[j0, i0 + 1] * fu * (1 - fv)
            + lattice[j0 + 1, i0] * (1 - fu) * fv
            + lattice[j0 + 1, i0 + 1] * fu * fv
        )
        w = 0.5**o
        total += w * n
        weight_sum += w
    heights = amplitude * total / weight_sum
    return Heightfield(nx=nx, ny=ny, cell_size=cell_size, heights=heights)


def heightfield_mesh(hf: Heightfield) -> TriangleMesh:
    """Triangulated seabed with upward normals and [0,1]² uv."""
    xs = hf.origin[0] + np.arange(hf.nx) * hf.cell_size
    ys = hf.origin[1] + np.arange(hf.ny) * hf.cell_size
    gx, gy = np.meshgrid(xs, ys)
    vertices = np.column_stack([gx.ravel(), gy.ravel(), hf.heights.ravel()])

    i = np.arange(hf.nx - 1)
    j = np.arange(hf.ny - 1)
    ii, jj = np.meshgrid(i, j)
    v00 = (jj * hf.nx + ii).ravel()
    v10 = v00 + 1
    v01 = v00 + hf.nx
    v11 = v01 + 1
    # counterclockwise seen from above -> up-facing normals
    tris = np.vstack(
        [np.column_stack([v00, v10, v11]), np.column_stack([v00, v11, v01])]
    ).astype(np.int32)

    uu, vv = np.meshgrid(np.arange(hf.nx) / (hf.nx - 1), np.arange(hf.ny) / (hf.ny - 1))
    uv = np.column_stack([uu.ravel(), vv.ravel()])
    return TriangleMesh(
        vertices=vertices,
        triangles=tris,
        normals=vertex_normals(vertices, tris),
        uv=uv,
        class_id=CLASS_SEABED,
        instance_id=0,
    )


# ---------------------------------------------------------------------------
# Rocks and stones (procedurally deformed icospheres)


def _icosphere(subdivisions: int) -> tuple:
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=float,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = list(verts)
    for _ in range(subdivisions):
        midpoint = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in midpoint:
                p = verts[a] + verts[b]
                verts.append(p / np.linalg.norm(p))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        faces = [
            t
            for (a, b, c) in faces
            for t in (
                (a, mid(a, b), mid(c, a)),
                (b, mid(b, c), mid(a, b)),
                (c, mid(c, a), mid(b, c)),
                (mid(a, b), mid(b, c), mid(c, a)),
            )
        ]
    return np.asarray(verts), np.asarray(faces, dtype=np.int32)


def make_rock_mesh(
    seed: int,
    radius: float = 0.15,
    roughness: float = 0.3,
    squash: float = 0.7,
    subdivisions: int = 2,
    class_id: int = CLASS_ROCK,
) -> TriangleMesh:
    """Noise-displaced icosphere standing in for scanned rock/stone assets."""
    unit, tris = _icosphere(subdivisions)
    rng = substream(seed, "rock", class_id)
    disp = np.zeros(len(unit))
    for _ in range(6):
        k = rng.normal(0.0, 2.5, size=3)
        amp = rng.uniform(0.3, 1.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        disp += amp * np.cos(unit @ k + phase)
    disp /= np.max(np.abs(disp)) + 1e-12
    r = radius * (1.0 + roughness * disp)
    verts = unit * r[:, None]
    verts[:, 2] *= squash
    theta = np.arctan2(unit[:, 1], unit[:, 0])
    uv = np.column_stack([(theta / (2 * np.pi)) % 1.0, 0.5 * (unit[:, 2] + 1.0)])
    return TriangleMesh(
        vertices=verts,
        triangles=tris,
        normals=vertex_normals(verts, tris),
        uv=uv,
        class_id=class_id,
    )


def make_stone_mesh(seed: int, radius: float = 0.06) -> TriangleMesh:
    return make_rock_mesh(
        seed, radius=radius, roughness=0.18, squash=0.8, subdivisions=1, class_id=CLASS_STONE
    )


# ---------------------------------------------------------------------------
# Water medium


@dataclass(frozen=True)
class WaterMedium:
    beta_rgb: np.ndarray  # per-channel attenuation, 1/m
    background_rgb: np.ndarray  # veiling color, [0,1]^3
    illumination: float = 1.0

    def __post_init__(self):
        beta = np.asarray(self.beta_rgb, dtype=float)
        bg = np.asarray(self.background_rgb, dtype=float)
        object.__setattr__(self, "beta_rgb", beta)
        object.__setattr__(self, "background_rgb", bg)
        if np.any(beta < 0):
            raise SceneError("attenuation coefficients must be >= 0")
        if np.any(bg < 0) or np.any(bg > 1):
            raise SceneError("background color must lie in [0,1]^3")
        if self.illumination <= 0:
            raise SceneError("illumination must be positive")


def turbidity_to_medium(turbidity: float, color_scheme, illumination: float = 1.0) -> WaterMedium:
    """Map a particle-density knob onto attenuation + veiling color."""
    if turbidity < 0:
        raise SceneError("turbidity must be >= 0")
    return WaterMedium(
        beta_rgb=turbidity * BASE_BETA_RGB,
        background_rgb=np.asarray(color_scheme, dtype=float),
        illumination=illumination,
    )


# ---------------------------------------------------------------------------
# Placement


@dataclass(frozen=True)
class PlacementConfig:
    oyster_density: float = 0.0  # per m^2
    rock_density: float = 0.0
    stone_density: float = 0.0
    min_spacing: float = 0.1  # meters between instance centers
    region: tuple = (0.0, 0.0, 1.0, 1.0)  # x0, y0, x1, y1
    seed: int = 0
    max_tilt_rad: float = 0.25
    attempt_factor: int = 30

    def __post_init__(self):
        if min(self.oyster_density, self.rock_density, self.stone_density) < 0:
            raise SceneError("densities must be >= 0")
        if self.min_spacing <= 0:
            raise SceneError("min_spacing must be positive")
        x0, y0, x1, y1 = self.region
        if not (x1 > x0 and y1 > y0):
            raise SceneError("region must be a non-degenerate rectangle")


@dataclass
class SceneInstance:
    mesh: TriangleMesh  # None until compose_scene assigns one
    pose: RigidTransform
    class_id: int
    instance_id: int


def poisson_disk_place(hf: Heightfield, cfg: PlacementConfig) -> list:
    """Dart-throwing placement with a pairwise spacing guarantee.

    Raises PlacementError when fewer than half of a class's target count fit
    within the attempt budget.
    """
    rng = substream(cfg.seed, "placement")
    x0, y0, x1, y1 = cfg.region
    area = (x1 - x0) * (y1 - y0)
    accepted = []  # (x, y) across all classes
    instances = []
    for class_id, density in (
        (CLASS_OYSTER, cfg.oyster_density),
        (CLASS_ROCK, cfg.rock_density),
        (CLASS_STONE, cfg.stone_density),
    ):
        target = int(round(density * area))
        if target == 0:
            continue
        placed = 0
        for _ in range(cfg.attempt_factor * target):
            if placed >= target:
                break
            p = rng.uniform((x0, y0), (x1, y1))
            if accepted:
                d2 = np.sum((np.asarray(accepted) - p) ** 2, axis=1)
                if d2.min() < cfg.min_spacing**2:
                    continue
            yaw = rng.uniform(0.0, 2.0 * np.pi)
            tilt_axis = rng.uniform(0.0, 2.0 * np.pi)
            tilt = min(abs(rng.normal(0.0, cfg.max_tilt_rad / 2.5)), cfg.max_tilt_rad)
            cy, sy = np.cos(yaw), np.sin(yaw)
            ca, sa = np.cos(tilt_axis), np.sin(tilt_axis)
            ct, st = np.cos(tilt), np.sin(tilt)
            rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
            axis = np.array([ca, sa, 0.0])
            k = np.array(
                [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]
            )
            rt = np.eye(3) + st * k + (1 - ct) * (k @ k)  # Rodrigues about a horizontal axis
            z = hf.sample(p[0], p[1])
            accepted.append(tuple(p))
            instances.append(
                SceneInstance(
                    mesh=None,
                    pose=RigidTransform(rotation=rt @ rz, translation=np.array([p[0], p[1], z])),
                    class_id=class_id,
                    instance_id=len(instances) + 1,
                )
            )
            placed += 1
        if placed * 2 < target:
            raise PlacementError(
                f"infeasible density for class {CLASS_NAMES[class_id]}: "
                f"placed {placed} of {target}"
            )
    return instances


# ---------------------------------------------------------------------------
# Scene


@dataclass(frozen=True)
class Lighting:
    sun_direction: np.ndarray = field(default_factory=lambda: np.array([0.2, 0.1, -1.0]))
    ambient: float = 0.25

    def __post_init__(self):
        d = np.asarray(self.sun_direction, dtype=float)
        n = np.linalg.norm(d)
        if n < 1e-12:
            raise SceneError("sun_direction must be non-zero")
        object.__setattr__(self, "sun_direction", d / n)
        if not 0.0 <= self.ambient <= 1.0:
            raise SceneError("ambient must lie in [0,1]")


@dataclass
class ReefScene:
    heightfield: Heightfield
    instances: list  # SceneInstance, instance 0 is the seabed
    medium: WaterMedium
    sun_direction: np.ndarray
    ambient: float
    seed: int = 0

    def __post_init__(self):
        ids = [inst.instance_id for inst in self.instances]
        if len(set(ids)) != len(ids):
            raise SceneError("instance ids must be unique")
        if any(i > 65534 for i in ids):
            raise SceneError("instance ids must fit below the 65535 miss sentinel")
        self.sun_direction = np.asarray(self.sun_direction, dtype=float)
        self.sun_direction = self.sun_direction / np.linalg.norm(self.sun_direction)

    def instance_by_id(self, instance_id: int) -> SceneInstance:
        for inst in self.instances:
            if inst.instance_id == instance_id:
                return inst
        raise KeyError(instance_id)


def compose_scene(
    hf: Heightfield,
    placements: list,
    shell_library: list,
    medium: WaterMedium,
    lighting: Lighting,
    seed: int = 0,
) -> ReefScene:
    """Assign library meshes round-robin per class and build the scene.

    The seabed becomes instance 0; placements are renumbered 1..n in order.
    Placed objects sink 10% of their mesh height into the substrate.
    """
    by_class = {}
    for mesh in shell_library:
        by_class.setdefault(mesh.class_id, []).append(mesh)
    counters = {c: 0 for c in by_class}

    instances = [
        SceneInstance(
            mesh=heightfield_mesh(hf), pose=RigidTransform(), class_id=CLASS_SEABED, instance_id=0
        )
    ]
    for k, placement in enumerate(placements):
        pool = by_class.get(placement.class_id)
        if not pool:
            raise SceneError(
                f"no mesh in library for class {CLASS_NAMES.get(placement.class_id)}"
            )
        mesh = pool[counters[placement.class_id] % len(pool)]
        counters[placement.class_id] += 1
        height = float(mesh.bounds[1, 2] - mesh.bounds[0, 2])
        sunk = placement.pose.translation.copy()
        sunk[2] -= SINK_FRACTION * height
        instances.append(
            SceneInstance(
                mesh=mesh,
                pose=RigidTransform(rotation=placement.pose.rotation, translation=sunk),
                class_id=placement.class_id,
                instance_id=k + 1,
            )
        )
    return ReefScene(
        heightfield=hf,
        instances=instances,
        medium=medium,
        sun_direction=lighting.sun_direction,
        ambient=lighting.ambient,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Scene JSON round trip


def save_scene(scene: ReefScene, path, mesh_dir_name: str = "meshes") -> None:
    """Write scene JSON plus one OBJ per distinct library mesh."""
    path = Path(path)
    mesh_dir = path.parent / mesh_dir_name
    mesh_dir.mkdir(parents=True, exist_ok=True)

    mesh_index = {}
    mesh_entries = []
    for inst in scene.instances:
        if inst.instance_id == 0:
            continue
        if id(inst.mesh) not in mesh_index:
            name = f"{mesh_dir_name}/mesh_{len(mesh_entries):03d}.obj"
            meshio.save_obj(inst.mesh, path.parent / name)
            mesh_index[id(inst.mesh)] = len(mesh_entries)
            mesh_entries.append({"path": name, "class_id": inst.mesh.class_id})

    doc = {
        "format_version": "1",
        "seed": scene.seed,
        "heightfield": {
            "nx": scene.heightfield.nx,
            "ny": scene.heightfield.ny,
            "cell_size": scene.heightfield.cell_size,
            "origin": [float(v) for v in scene.heightfield.origin],
            "heights": [[float(h) for h in row] for row in scene.heightfield.heights],
        },
        "medium": {
            "beta_rgb": [float(v) for v in scene.medium.beta_rgb],
            "background_rgb": [float(v) for v in scene.medium.background_rgb],
            "illumination": scene.medium.illumination,
        },
        "sun_direction": [float(v) for v in scene.sun_direction],
        "ambient": scene.ambient,
        "meshes": mesh_entries,
        "instances": [
            {
                "instance_id": inst.instance_id,
                "class_id": inst.class_id,
                "mesh": mesh_index[id(inst.mesh)] if inst.instance_id != 0 else None,
                "position": [float(v) for v in inst.pose.translation],
                "quat_xyzw": [float(v) for v in matrix_to_quat(inst.pose.rotation)],
            }
            for inst in scene.instances
        ],
    }
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_scene(path) -> ReefScene:
    path = Path(path)
    doc = json.loads(path.read_text())
    hf_doc = doc["heightfield"]
    hf = Heightfield(
        nx=hf_doc["nx"],
        ny=hf_doc["ny"],
        cell_size=hf_doc["cell_size"],
        heights=np.asarray(hf_doc["heights"]),
        origin=np.asarray(hf_doc["origin"]),
    )
    meshes = [
        meshio.load_obj(path.parent / entry["path"]).with_ids(entry["class_id"], 0)
        for entry in doc["meshes"]
    ]
    instances = []
    for idoc in doc["instances"]:
        pose = RigidTransform(
            rotation=quat_to_matrix(np.asarray(idoc["quat_xyzw"])),
            translation=np.asarray(idoc["position"]),
        )
        mesh = heightfield_mesh(hf) if idoc["mesh"] is None else meshes[idoc["mesh"]]
        instances.append(
            SceneInstance(
                mesh=mesh, pose=pose, class_id=idoc["class_id"], instance_id=idoc["instance_id"]
            )
        )
    medium = WaterMedium(
        beta_rgb=np.asarray(doc["medium"]["beta_rgb"]),
        background_rgb=np.asarray(doc["medium"]["background_rgb"]),
        illumination=doc["medium"]["illumination"],
    )
    return ReefScene(
        heightfield=hf,
        instances=instances,
        medium=medium,
        sun_direction=np.asarray(doc["sun_direction"]),
        ambient=doc["ambient"],
        seed=doc["seed"],
    )
