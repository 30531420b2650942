"""Command-line entry point.

Exit codes: 0 ok, 2 invalid input (config, bundle, service answer), 3 replay fixture missing,
4 stage failure. Partial outputs of earlier stages stay in the run directory.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import config as config_mod
from . import jsonfmt, pipeline
from .bundle import Bundle, BundleError
from .geometry import UpAxisHint, canonicalize_up_axis, recenter_bottom
from .meshio import MeshFormatError, load_mesh
from .pipeline import EXIT_OK, EXIT_REPLAY_MISS, EXIT_STAGE_FAILURE, EXIT_VALIDATION, ClientSpec, RunContext
from .scene import CanonicalModel, SceneError, detect_collisions, export_scene, import_layout, swap_instance
from .services import Mode, ReplayMissError, ValidationError, providers_from_env

log = logging.getLogger("tablescene")


def _common(p: argparse.ArgumentParser, needs_bundle: bool = True) -> None:
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for per-instance stages")
    p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.REPLAY.value)
    p.add_argument("--fixtures", help="fixture directory (default: the bundle's own)")
    p.add_argument("--debug-renders", action="store_true", help="write DRO debug PNGs and candidate traces")
    p.add_argument("-v", "--verbose", action="store_true")
    if needs_bundle:
        p.add_argument("--bundle", required=True, help="instance bundle directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tablescene", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("canonicalize", "tsa", "assemble"):
        _common(sub.add_parser(name, help=f"run the {name} stage"))
    p = sub.add_parser("dro", help="estimate each instance's yaw")
    _common(p)
    p.add_argument("--instance", help="only this instance")
    p = sub.add_parser("evaluate", help="collision metrics, optionally the camera sweep")
    _common(p)
    p.add_argument("--sweep", action="store_true", help="render the 160-view sweep against the reference")
    p.add_argument("--metric", default="mse")
    p = sub.add_parser("pipeline", help="canonicalize, dro, tsa and assemble in sequence")
    _common(p)
    p.add_argument("--evaluate", action="store_true", help="also run evaluate with the sweep")
    p = sub.add_parser("swap", help="replace one instance's mesh in an assembled layout")
    _common(p, needs_bundle=False)
    p.add_argument("--layout", required=True, help="scene layout JSON to edit")
    p.add_argument("--instance", required=True)
    p.add_argument("--mesh", required=True, help="replacement mesh (.obj or .glb)")
    p.add_argument("--label", help="label for the new model (default: keep)")
    p.add_argument("--up-axis", default="+Z up, +Y front", help='local axes of the new mesh, e.g. "+Y up, -Z front"')
    p.add_argument("--refit-footprint", action="store_true", help="keep the new mesh's proportions")
    p.add_argument("--name", default="scene", help="output layout name inside --out")
    return ap


def _context(args, cfg) -> RunContext:
    bundle = Bundle.load(args.bundle)
    fixtures = args.fixtures or str(bundle.path(bundle.fixtures))
    providers = {**providers_from_env(), **cfg.services.providers}
    spec = ClientSpec(fixtures, args.mode, tuple(sorted((getattr(k, "value", k), v) for k, v in providers.items())),
                      cfg.services.max_in_flight)
    return RunContext(bundle, args.bundle, Path(args.out), cfg, spec, max(1, args.jobs), args.debug_renders)


def _swap(args) -> list:
    scene = import_layout(args.layout)
    if args.instance not in {i.instance_id for i in scene.instances}:
        raise ValidationError(f"layout has no instance {args.instance!r}")
    old = scene.get(args.instance)
    mesh = recenter_bottom(canonicalize_up_axis(load_mesh(args.mesh), UpAxisHint.parse(args.up_axis)))
    model = CanonicalModel(args.instance, args.label or old.model.label, mesh, f"meshes/{args.instance}.obj")
    edited = swap_instance(scene, args.instance, model, args.refit_footprint)
    out = Path(args.out)
    files = export_scene(edited, out, args.name)
    report = detect_collisions(edited)
    coll = jsonfmt.write(out / f"{args.name}_collisions.json", report.to_dict())
    if report.pairs:
        log.warning("swap introduced %d colliding pair(s): %s", len(report.pairs), report.pairs)
    return [files["layout"], files["glb"], coll]


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_mod.load(args.config)
        if args.command == "swap":
            for p in _swap(args):
                print(p)
            return EXIT_OK
        ctx = _context(args, cfg)
        if args.command == "pipeline":
            pipeline.run_pipeline(ctx, evaluate=args.evaluate)
        elif args.command == "dro":
            pipeline.run_stage(ctx, "dro", only=args.instance)
        elif args.command == "evaluate":
            pipeline.run_stage(ctx, "evaluate", sweep=args.sweep, metric=args.metric)
        else:
            pipeline.run_stage(ctx, args.command)
    except ReplayMissError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REPLAY_MISS
    except pipeline.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (SceneError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE_FAILURE
    except (config_mod.ConfigError, BundleError, ValidationError, MeshFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
