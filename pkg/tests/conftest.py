import os

# allow exercising thread-count independence even on small CI boxes;
# must be set before numba is first imported
os.environ.setdefault("NUMBA_NUM_THREADS", "4")

import numpy as np
import pytest

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
from reefsim.shellgen import OysterShellSpec, generate_shell


def build_reef_scene(
    seed=0,
    extent=4.0,
    oyster_density=2.0,
    rock_density=0.25,
    stone_density=0.25,
    turbidity=1.0,
    amplitude=0.1,
    n_shells=3,
    shell_samples=16,
    shell_layers=8,
):
    hf = generate_heightfield(
        nx=33, ny=33, cell_size=extent / 32, amplitude=amplitude, octaves=3, seed=seed
    )
    lib = [
        generate_shell(OysterShellSpec(n_layers=shell_layers, seed=seed * 101 + k), shell_samples)
        for k in range(n_shells)
    ]
    lib += [make_rock_mesh(seed=seed + 1), make_stone_mesh(seed=seed + 2)]
    cfg = PlacementConfig(
        oyster_density=oyster_density,
        rock_density=rock_density,
        stone_density=stone_density,
        min_spacing=0.15,
        region=(0.2, 0.2, extent - 0.2, extent - 0.2),
        seed=seed,
    )
    placements = poisson_disk_place(hf, cfg)
    medium = turbidity_to_medium(turbidity, (0.10, 0.35, 0.22))
    return compose_scene(hf, placements, lib, medium, Lighting(), seed=seed)


@pytest.fixture(scope="session")
def small_reef_scene():
    return build_reef_scene(seed=3)


@pytest.fixture(scope="session")
def small_reef_accel(small_reef_scene):
    from reefsim.render import build_accel

    return build_accel(small_reef_scene)
