"""Procedural oyster-shell meshes from stacked B-spline cross sections.

A shell is a stack of horizontal layers, each a closed cross-section made of
two B-spline halves sharing their endpoints. Layers are sampled with a
common arc-length parameterization and stitched into a watertight triangle
mesh, capped by collapsing the end rings onto centroid apex points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rotations import substream


class GeometryError(ValueError):
    pass


# ---------------------------------------------------------------------------
# B-spline curves


@dataclass(frozen=True)
class BSplineCurve:
    """Clamped B-spline in a layer plane.

    control_points: (n, 2) meters; knots: (n + degree + 1,) non-decreasing,
    with first/last knots repeated degree+1 times.
    """

    control_points: np.ndarray
    degree: int
    knots: np.ndarray

    def __post_init__(self):
        cps = np.atleast_2d(np.asarray(self.control_points, dtype=float))
        knots = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "control_points", cps)
        object.__setattr__(self, "knots", knots)
        d, n = self.degree, len(cps)
        if d < 1:
            raise GeometryError(f"degree must be >= 1, got {d}")
        if n < d + 1:
            raise GeometryError(f"need at least degree+1={d + 1} control points, got {n}")
        if len(knots) != n + d + 1:
            raise GeometryError(
                f"knot count {len(knots)} != control points + degree + 1 = {n + d + 1}"
            )
        if np.any(np.diff(knots) < 0):
            raise GeometryError("knot sequence must be non-decreasing")
        if not (np.all(knots[: d + 1] == knots[0]) and np.all(knots[-(d + 1):] == knots[-1])):
            raise GeometryError("knots must be clamped (end multiplicity degree+1)")

    @classmethod
    def clamped_uniform(cls, control_points, degree: int) -> "BSplineCurve":
        cps = np.atleast_2d(np.asarray(control_points, dtype=float))
        n = len(cps)
        interior = n - degree - 1
        knots = np.concatenate(
            [
                np.zeros(degree + 1),
                (np.arange(1, interior + 1)) / (interior + 1) if interior > 0 else [],
                np.ones(degree + 1),
            ]
        )
        return cls(control_points=cps, degree=degree, knots=knots)


def eval_bspline_many(curve: BSplineCurve, us: np.ndarray) -> np.ndarray:
    """De Boor evaluation at parameters us (k,) in [0,1] -> points (k, 2)."""
    us = np.asarray(us, dtype=float)
    if np.any(us < 0.0) or np.any(us > 1.0):
        raise ValueError("B-spline parameter outside [0, 1]")
    t = curve.knots
    d = curve.degree
    cps = curve.control_points
    n = len(cps)
    x = t[d] + us * (t[n] - t[d])
    span = np.searchsorted(t, x, side="right") - 1
    span = np.clip(span, d, n - 1)
    # triangular De Boor recursion on the d+1 active control points
    pts = cps[span[:, None] - d + np.arange(d + 1)[None, :]].copy()
    for r in range(1, d + 1):
        for j in range(d, r - 1, -1):
            i = span - d + j
            denom = t[i + d - r + 1] - t[i]
            safe = denom > 0
            alpha = np.where(safe, (x - t[i]) / np.where(safe, denom, 1.0), 0.0)
            pts[:, j] = (1.0 - alpha)[:, None] * pts[:, j - 1] + alpha[:, None] * pts[:, j]
    return pts[:, d]


def eval_bspline(curve: BSplineCurve, u: float) -> np.ndarray:
    """Evaluate the curve at a single parameter u in [0,1]."""
    return eval_bspline_many(curve, np.array([float(u)]))[0]


# ---------------------------------------------------------------------------
# Layers


@dataclass(frozen=True)
class LayerProfile:
    """One horizontal slice: two B-spline halves sharing both endpoints."""

    left_curve: BSplineCurve
    right_curve: BSplineCurve
    height_z: float
    closed: bool = True

    def __post_init__(self):
        for a, b in ((0, 0), (-1, -1)):
            pa = self.left_curve.control_points[a]
            pb = self.right_curve.control_points[b]
            if not np.array_equal(pa, pb):
                raise GeometryError("left/right curves must share both endpoints exactly")


@dataclass(frozen=True)
class OysterShellSpec:
    n_layers: int = 16
    base_length: float = 0.09
    base_width: float = 0.055
    total_height: float = 0.04
    taper_profile: tuple = None  # per-layer scale factors in (0, 1]; None -> default bump
    perturbation_amplitude: float = 0.004
    seed: int = 0

    def __post_init__(self):
        if self.n_layers < 2:
            raise GeometryError("n_layers must be >= 2")
        if min(self.base_length, self.base_width, self.total_height) <= 0:
            raise GeometryError("shell dimensions must be positive")
        if self.perturbation_amplitude < 0:
            raise GeometryError("perturbation_amplitude must be >= 0")
        taper = self.taper_profile
        if taper is None:
            taper = default_taper_profile(self.n_layers)
        taper = tuple(float(s) for s in taper)
        if len(taper) != self.n_layers:
            raise GeometryError("taper_profile must have one factor per layer")
        if any(s <= 0 or s > 1 for s in taper):
            raise GeometryError("taper factors must lie in (0, 1]")
        object.__setattr__(self, "taper_profile", taper)


def default_taper_profile(n_layers: int, end_scale: float = 0.05) -> tuple:
    """Smooth bump: near-point at both ends, widest at 40% of the height."""
    tau = np.linspace(0.0, 1.0, n_layers)
    alpha = np.log(0.5) / np.log(0.4)  # puts the sine peak at tau = 0.4
    bump = np.sin(np.pi * tau**alpha)
    return tuple(end_scale + (1.0 - end_scale) * bump)


_HALF_CPS = 7  # control points per half-curve


def make_ellipse_layer(
    a: float, b: float, z: float, jitter: np.ndarray = None, degree: int = 3, n_ctrl: int = _HALF_CPS
) -> LayerProfile:
    """Layer whose halves approximate the ellipse x²/a² + y²/b² = 1.

    jitter, if given, is a (2*n_ctrl - 2, 2) array of offsets applied to the
    distinct control points (endpoints counted once so both halves keep
    sharing them exactly).
    """
    theta = np.linspace(0.0, np.pi, n_ctrl)
    left = np.column_stack([a * np.cos(theta), b * np.sin(theta)])
    right = np.column_stack([a * np.cos(theta), -b * np.sin(theta)])
    if jitter is not None:
        jitter = np.asarray(jitter, dtype=float)
        left = left + jitter[:n_ctrl]
        # interior right-half points use the remaining rows; endpoints reuse
        # the left offsets so closure is exact
        right = right.copy()
        right[0] = left[0]
        right[-1] = left[-1]
        right[1:-1] += jitter[n_ctrl:]
    else:
        right[0] = left[0]
        right[-1] = left[-1]
    return LayerProfile(
        left_curve=BSplineCurve.clamped_uniform(left, degree),
        right_curve=BSplineCurve.clamped_uniform(right, degree),
        height_z=float(z),
    )


def generate_layers(spec: OysterShellSpec) -> list:
    """Stack of cross-section layers for one shell, deterministic per seed."""
    rng = substream(spec.seed, "shellgen")
    heights = np.linspace(0.0, spec.total_height, spec.n_layers)
    amp = spec.perturbation_amplitude
    layers = []
    for i in range(spec.n_layers):
        s = spec.taper_profile[i]
        a = 0.5 * spec.base_length * s
        b = 0.5 * spec.base_width * s
        # truncated Gaussian jitter: sigma = amp/3, norm clipped to amp, so no
        # contour point can stray farther than amp from the clean contour;
        # scaled by the taper factor so near-point end layers stay simple
        g = rng.standard_normal((2 * _HALF_CPS - 2, 2)) / 3.0
        norm = np.linalg.norm(g, axis=1, keepdims=True)
        g = np.where(norm > 1.0, g / np.maximum(norm, 1e-300), g)
        layers.append(make_ellipse_layer(a, b, heights[i], jitter=amp * s * g))
    return layers


def sample_contour(layer: LayerProfile, samples: int, dense: int = 512) -> np.ndarray:
    """Closed contour resampled at `samples` arc-length-uniform points (S, 2).

    Sample 0 sits at the shared start endpoint and traversal is
    counterclockwise, so stacked layers stitch without twisting.
    """
    us = np.linspace(0.0, 1.0, dense)
    left = eval_bspline_many(layer.left_curve, us)
    right = eval_bspline_many(layer.right_curve, us)
    loop = np.vstack([left, right[::-1][1:-1]])
    seg = np.linalg.norm(np.diff(np.vstack([loop, loop[:1]]), axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total <= 0:
        return np.repeat(loop[:1], samples, axis=0)
    targets = np.arange(samples) / samples * total
    idx = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, len(loop) - 1)
    frac = (targets - cum[idx]) / np.maximum(seg[idx], 1e-300)
    nxt = (idx + 1) % len(loop)
    return loop[idx] + frac[:, None] * (loop[nxt] - loop[idx])


def _polygon_is_simple(pts: np.ndarray) -> bool:
    """Exact-ish simplicity test for a closed polygon (S, 2)."""
    n = len(pts)
    a = pts
    b = np.roll(pts, -1, axis=0)
    i_idx, j_idx = np.triu_indices(n, k=2)
    # the closing edge (n-1, 0) is adjacent to edge 0
    keep = ~((i_idx == 0) & (j_idx == n - 1))
    i_idx, j_idx = i_idx[keep], j_idx[keep]

    p, r = a[i_idx], b[i_idx] - a[i_idx]
    q, s = a[j_idx], b[j_idx] - a[j_idx]

    def cross2(u, v):
        return u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]

    denom = cross2(r, s)
    qp = q - p
    t_num = cross2(qp, s)
    u_num = cross2(qp, r)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = t_num / denom
        u = u_num / denom
    proper = (np.abs(denom) > 1e-300) & (t > 1e-12) & (t < 1 - 1e-12) & (u > 1e-12) & (u < 1 - 1e-12)
    return not bool(np.any(proper))


# ---------------------------------------------------------------------------
# Triangle meshes


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) meters
    triangles: np.ndarray  # (F, 3) vertex indices
    normals: np.ndarray  # (V, 3) unit vectors
    uv: np.ndarray  # (V, 2) in [0,1]^2
    class_id: int = 0
    instance_id: int = 0
    texture: np.ndarray = None  # optional (H, W, 3) image in [0,1], sampled by uv

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int32)
        self.normals = np.ascontiguousarray(self.normals, dtype=np.float64)
        self.uv = np.ascontiguousarray(self.uv, dtype=np.float64)
        if len(self.triangles) and (
            self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)
        ):
            raise GeometryError("triangle index out of range")
        for arr in (self.vertices, self.triangles, self.normals, self.uv):
            arr.flags.writeable = False  # meshes are immutable once built

    def with_ids(self, class_id: int, instance_id: int) -> "TriangleMesh":
        return TriangleMesh(
            vertices=self.vertices,
            triangles=self.triangles,
            normals=self.normals,
            uv=self.uv,
            class_id=class_id,
            instance_id=instance_id,
            texture=self.texture,
        )

    @property
    def bounds(self) -> np.ndarray:
        return np.stack([self.vertices.min(axis=0), self.vertices.max(axis=0)])


def vertex_normals(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Area-weighted per-vertex normals."""
    v0 = vertices[triangles[:, 0]]
    fn = np.cross(vertices[triangles[:, 1]] - v0, vertices[triangles[:, 2]] - v0)
    normals = np.zeros_like(vertices)
    for k in range(3):
        np.add.at(normals, triangles[:, k], fn)
    lens = np.linalg.norm(normals, axis=1, keepdims=True)
    return normals / np.maximum(lens, 1e-300)


def signed_volume(vertices: np.ndarray, triangles: np.ndarray) -> float:
    """Divergence-theorem volume; positive for outward-wound closed meshes."""
    v0 = vertices[triangles[:, 0]]
    v1 = vertices[triangles[:, 1]]
    v2 = vertices[triangles[:, 2]]
    return float(np.einsum("ij,ij->i", v0, np.cross(v1, v2)).sum() / 6.0)


def extrude_shell(layers: list, samples_per_layer: int = 48) -> TriangleMesh:
    """Loft the layer stack into a watertight mesh with centroid-apex caps."""
    if len(layers) < 2:
        raise GeometryError("need at least 2 layers")
    if samples_per_layer < 8:
        raise GeometryError("samples_per_layer must be >= 8")
    zs = np.array([la.height_z for la in layers])
    if np.any(np.diff(zs) <= 0):
        raise GeometryError("layer heights must be strictly increasing")

    S = samples_per_layer
    rings = []
    for i, layer in enumerate(layers):
        pts = sample_contour(layer, S)
        if not _polygon_is_simple(pts):
            raise GeometryError(f"layer {i} contour self-intersects")
        rings.append(np.column_stack([pts, np.full(S, layer.height_z)]))
    rings = np.asarray(rings)  # (L, S, 3)
    L = len(layers)

    bottom_apex = rings[0].mean(axis=0)
    top_apex = rings[-1].mean(axis=0)
    vertices = np.vstack([bottom_apex[None, :], rings.reshape(-1, 3), top_apex[None, :]])

    def ring_idx(i, j):
        return 1 + i * S + (j % S)

    tris = []
    j = np.arange(S)
    # bottom cap, wound so its normal points down/out
    tris.append(np.column_stack([np.zeros(S, int), ring_idx(0, j + 1), ring_idx(0, j)]))
    for i in range(L - 1):
        lo0, lo1 = ring_idx(i, j), ring_idx(i, j + 1)
        hi0, hi1 = ring_idx(i + 1, j), ring_idx(i + 1, j + 1)
        tris.append(np.column_stack([lo0, lo1, hi1]))
        tris.append(np.column_stack([lo0, hi1, hi0]))
    top = len(vertices) - 1
    tris.append(np.column_stack([np.full(S, top), ring_idx(L - 1, j), ring_idx(L - 1, j + 1)]))
    triangles = np.vstack(tris).astype(np.int32)

    if signed_volume(vertices, triangles) < 0:
        triangles = triangles[:, ::-1]

    height = zs[-1] - zs[0]
    u = np.tile(j / S, L)
    v = np.repeat((zs - zs[0]) / height, S)
    uv = np.vstack([[0.5, 0.0], np.column_stack([u, v]), [0.5, 1.0]])

    return TriangleMesh(
        vertices=vertices,
        triangles=triangles,
        normals=vertex_normals(vertices, triangles),
        uv=uv,
        class_id=1,
    )


def generate_shell(spec: OysterShellSpec, samples_per_layer: int = 48) -> TriangleMesh:
    """Full pipeline: layers from the spec, lofted into one watertight mesh."""
    return extrude_shell(generate_layers(spec), samples_per_layer)


# ---------------------------------------------------------------------------
# Validation


@dataclass(frozen=True)
class MeshValidation:
    watertight: bool
    winding_consistent: bool
    signed_volume: float
    degenerate_triangle_count: int
    boundary_edge_count: int
    nonmanifold_edge_count: int
    euler_characteristic: int
    vertex_count: int
    triangle_count: int
    bbox_min: tuple
    bbox_max: tuple

    @property
    def ok(self) -> bool:
        return (
            self.watertight
            and self.winding_consistent
            and self.signed_volume > 0
            and self.degenerate_triangle_count == 0
        )


def validate_mesh(mesh: TriangleMesh, degenerate_area: float = 1e-14) -> MeshValidation:
    """Pure report on watertightness, winding, volume, degeneracy, bounds."""
    tris = mesh.triangles
    verts = mesh.vertices
    edges = np.vstack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    und = np.sort(edges, axis=1)
    _, und_inv, und_counts = np.unique(und, axis=0, return_inverse=True, return_counts=True)
    boundary = int(np.sum(und_counts == 1))
    nonmanifold = int(np.sum(und_counts > 2))
    # consistent winding: the two triangles at a shared edge traverse it in
    # opposite directions, so every *directed* edge is unique
    directed_unique = len(np.unique(edges, axis=0)) == len(edges)
    watertight = boundary == 0 and nonmanifold == 0

    v0 = verts[tris[:, 0]]
    areas = 0.5 * np.linalg.norm(
        np.cross(verts[tris[:, 1]] - v0, verts[tris[:, 2]] - v0), axis=1
    )
    n_edges = len(und_counts)
    return MeshValidation(
        watertight=watertight,
        winding_consistent=bool(directed_unique),
        signed_volume=signed_volume(verts, tris),
        degenerate_triangle_count=int(np.sum(areas < degenerate_area)),
        boundary_edge_count=boundary,
        nonmanifold_edge_count=nonmanifold,
        euler_characteristic=len(verts) - n_edges + len(tris),
        vertex_count=len(verts),
        triangle_count=len(tris),
        bbox_min=tuple(verts.min(axis=0)) if len(verts) else (0.0, 0.0, 0.0),
        bbox_max=tuple(verts.max(axis=0)) if len(verts) else (0.0, 0.0, 0.0),
    )
