"""reefsim command line: shell generation, dataset export, config checks, teleop.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import config as cfg_mod
from . import dataset, meshio, shellgen
from .config import ConfigError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def cmd_generate_shells(args) -> int:
    cfg = cfg_mod.load_run_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k in range(args.count):
        spec = cfg_mod.shell_spec(cfg, k)
        mesh = shellgen.generate_shell(spec, cfg.shell.samples_per_layer)
        rep = shellgen.validate_mesh(mesh)
        path = out / f"shell_{k:03d}.obj"
        meshio.save_obj(mesh, path)
        print(
            f"{path.name}: vertices={rep.vertex_count} triangles={rep.triangle_count} "
            f"watertight={rep.watertight} volume={rep.signed_volume:.3e} m^3"
        )
        if not rep.ok:
            _log(f"warning: {path.name} failed validation: {rep}")
    return EXIT_OK


def cmd_render_dataset(args) -> int:
    cfg = cfg_mod.load_run_config(args.config)
    if args.threads:
        import numba

        numba.set_num_threads(max(1, min(args.threads, numba.config.NUMBA_NUM_THREADS)))
    out = Path(args.out)
    sweep = cfg.turbidity_sweep or (None,)
    trajectory = cfg_mod.build_trajectory(cfg)
    rig = cfg_mod.camera_rig(cfg)
    sched = cfg_mod.schedule(cfg)
    for turbidity in sweep:
        session_id = (
            f"seed{cfg.seed}" if turbidity is None else f"seed{cfg.seed}_turbidity{turbidity:g}"
        )
        _log(f"building scene for session {session_id} ...")
        scene = cfg_mod.build_scene(cfg, turbidity=turbidity)
        _log(
            f"rendering {session_id}: {len(scene.instances) - 1} instances, "
            f"{sched.fps:g} fps"
        )
        manifest = dataset.export_session(
            scene, trajectory, rig, cfg.imu, cfg.sonar, cfg.water, sched,
            out / session_id, session_id=session_id, seed=cfg.seed,
        )
        _log(f"session {session_id} complete: {len(manifest.frame_index)} frames")
        print(str(out / session_id / "manifest.json"))
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = cfg_mod.load_run_config(args.config)
    # dry-run construction of the derived configs; nothing is rendered
    cfg_mod.camera_rig(cfg)
    cfg_mod.schedule(cfg)
    cfg_mod.shell_spec(cfg, 0)
    print(f"config ok: seed={cfg.seed}")
    return EXIT_OK


def cmd_serve(args) -> int:
    from . import teleop

    cfg = cfg_mod.load_run_config(args.config)
    scene = cfg_mod.build_scene(cfg)
    server = teleop.TeleopServer(scene, cfg, out_dir=Path(args.out))
    _log(f"teleop server listening on port {args.port}")
    server.serve(port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reefsim",
        description="Headless underwater oyster-reef simulator and dataset generator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-shells", help="write procedurally generated shell OBJ files")
    g.add_argument("--config", required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate_shells)

    r = sub.add_parser("render-dataset", help="export a full session directory")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--threads", type=int, default=0, help="cap render worker threads")
    r.set_defaults(func=cmd_render_dataset)

    v = sub.add_parser("validate", help="parse and validate a config, no rendering")
    v.add_argument("--config", required=True)
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("serve", help="run the live teleoperation server")
    s.add_argument("--config", required=True)
    s.add_argument("--port", type=int, default=8765)
    s.add_argument("--out", default="teleop_sessions")
    s.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        _log(f"config error: {e}")
        return EXIT_CONFIG
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as e:  # runtime failures map to exit 3 with context
        _log(f"error: {type(e).__name__}: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
