"""ASCII OBJ / PLY mesh export and import, and shell-spec JSON files.

Floats are written with repr so a write/read round trip is exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .shellgen import GeometryError, OysterShellSpec, TriangleMesh, vertex_normals


def _f(x) -> str:
    return repr(float(x))


def save_obj(mesh: TriangleMesh, path) -> None:
    lines = [f"# reefsim mesh class_id={mesh.class_id} instance_id={mesh.instance_id}"]
    for v in mesh.vertices:
        lines.append(f"v {_f(v[0])} {_f(v[1])} {_f(v[2])}")
    for t in mesh.uv:
        lines.append(f"vt {_f(t[0])} {_f(t[1])}")
    for n in mesh.normals:
        lines.append(f"vn {_f(n[0])} {_f(n[1])} {_f(n[2])}")
    for tri in mesh.triangles:
        a, b, c = (int(i) + 1 for i in tri)
        lines.append(f"f {a}/{a}/{a} {b}/{b}/{b} {c}/{c}/{c}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_obj(path) -> TriangleMesh:
    """Load a (possibly external) OBJ; missing normals/uv are synthesized."""
    verts, uvs, normals, faces = [], [], [], []
    for raw in Path(path).read_text().splitlines():
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        tag = parts[0]
        if tag == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif tag == "vt":
            uvs.append([float(x) for x in parts[1:3]])
        elif tag == "vn":
            normals.append([float(x) for x in parts[1:4]])
        elif tag == "f":
            idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
            for k in range(1, len(idx) - 1):  # fan-triangulate polygons
                faces.append([idx[0], idx[k], idx[k + 1]])
    if not verts or not faces:
        raise GeometryError(f"no geometry in OBJ file {path}")
    vertices = np.asarray(verts, dtype=float)
    triangles = np.asarray(faces, dtype=np.int32)
    nrm = (
        np.asarray(normals, dtype=float)
        if len(normals) == len(verts)
        else vertex_normals(vertices, triangles)
    )
    uv = np.asarray(uvs, dtype=float) if len(uvs) == len(verts) else np.zeros((len(verts), 2))
    return TriangleMesh(vertices=vertices, triangles=triangles, normals=nrm, uv=uv)


def save_ply(mesh: TriangleMesh, path) -> None:
    header = [
        "ply",
        "format ascii 1.0",
        f"comment reefsim class_id={mesh.class_id} instance_id={mesh.instance_id}",
        f"element vertex {len(mesh.vertices)}",
        "property float x",
        "property float y",
        "property float z",
        "property float nx",
        "property float ny",
        "property float nz",
        "property float u",
        "property float v",
        f"element face {len(mesh.triangles)}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    lines = header
    for v, n, t in zip(mesh.vertices, mesh.normals, mesh.uv):
        lines.append(" ".join(_f(x) for x in (*v, *n, *t)))
    for tri in mesh.triangles:
        lines.append("3 " + " ".join(str(int(i)) for i in tri))
    Path(path).write_text("\n".join(lines) + "\n")


def save_shell_spec(spec: OysterShellSpec, path) -> None:
    doc = {
        "n_layers": spec.n_layers,
        "base_length": spec.base_length,
        "base_width": spec.base_width,
        "total_height": spec.total_height,
        "taper_profile": list(spec.taper_profile),
        "perturbation_amplitude": spec.perturbation_amplitude,
        "seed": spec.seed,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_shell_spec(path) -> OysterShellSpec:
    doc = json.loads(Path(path).read_text())
    return OysterShellSpec(
        n_layers=int(doc["n_layers"]),
        base_length=float(doc["base_length"]),
        base_width=float(doc["base_width"]),
        total_height=float(doc["total_height"]),
        taper_profile=tuple(doc["taper_profile"]) if doc.get("taper_profile") else None,
        perturbation_amplitude=float(doc["perturbation_amplitude"]),
        seed=int(doc["seed"]),
    )
