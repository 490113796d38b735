import numpy as np

from reefsim.meshio import load_obj, load_shell_spec, save_obj, save_ply, save_shell_spec
from reefsim.shellgen import OysterShellSpec, generate_shell, validate_mesh


def test_obj_round_trip_exact(tmp_path):
    mesh = generate_shell(OysterShellSpec(n_layers=6, seed=8), samples_per_layer=12)
    path = tmp_path / "shell.obj"
    save_obj(mesh, path)
    back = load_obj(path)
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.triangles, mesh.triangles)
    assert np.array_equal(back.normals, mesh.normals)
    assert np.array_equal(back.uv, mesh.uv)


def test_obj_write_deterministic(tmp_path):
    mesh = generate_shell(OysterShellSpec(n_layers=6, seed=8), samples_per_layer=12)
    p1, p2 = tmp_path / "a.obj", tmp_path / "b.obj"
    save_obj(mesh, p1)
    save_obj(mesh, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_ply_header_counts(tmp_path):
    mesh = generate_shell(OysterShellSpec(n_layers=5, seed=2), samples_per_layer=10)
    path = tmp_path / "shell.ply"
    save_ply(mesh, path)
    text = path.read_text().splitlines()
    assert text[0] == "ply"
    assert f"element vertex {len(mesh.vertices)}" in text
    assert f"element face {len(mesh.triangles)}" in text
    n_payload = len(text) - text.index("end_header") - 1
    assert n_payload == len(mesh.vertices) + len(mesh.triangles)


def test_loaded_mesh_still_validates(tmp_path):
    mesh = generate_shell(OysterShellSpec(n_layers=6, seed=4), samples_per_layer=16)
    path = tmp_path / "shell.obj"
    save_obj(mesh, path)
    rep = validate_mesh(load_obj(path))
    assert rep.watertight and rep.signed_volume > 0


def test_shell_spec_round_trip(tmp_path):
    spec = OysterShellSpec(n_layers=7, seed=99, perturbation_amplitude=0.002)
    path = tmp_path / "spec.json"
    save_shell_spec(spec, path)
    assert load_shell_spec(path) == spec
