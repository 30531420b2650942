"""Pipeline stages over an instance bundle, writing into a run directory with a manifest.

Stages: canonicalize -> dro -> tsa -> assemble (-> evaluate). Each stage reads
its predecessors' outputs from the run directory, so any stage can be re-run
alone. Per-instance work fans out over a process pool; results are gathered in
instance-id order so the worker count never changes the artifacts.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import jsonfmt
from .bundle import Bundle, BundleError
from .config import RunConfig
from .dro import DroError, estimate_rotation
from .evalharness import (
    SweepError,
    best_view,
    builtin_metric,
    camera_sweep,
    contact_sheet,
    fit_reference,
    score_views,
    sweep_report,
)
from .geometry import RigidScaleTransform, apply_transform, canonicalize_up_axis, recenter_bottom
from .imageproc import canny_edges
from .losses import LossError, PatchPyramidExtractor, TargetViews
from .meshio import MeshFormatError, load_mesh, save_mesh
from .raster import Camera, crop_bounds, crop_with_bounds, render, to_float_image, to_uint8
from .scene import (
    CanonicalModel,
    SceneError,
    assemble,
    collision_metrics,
    detect_collisions,
    export_scene,
    import_layout,
    resolve_overlaps,
)
from .services import (
    FixtureStore,
    RemoteFeatureExtractor,
    ReplayMissError,
    ServiceClient,
    ServiceError,
    ValidationError,
    camera_init_request,
    parse_camera_init,
    parse_size_prior,
    parse_stacking,
    parse_up_axis,
    size_prior_request,
    stacking_request,
    up_axis_request,
)
from .tsa import TsaError, run_tsa, stack_heights

log = logging.getLogger(__name__)

STAGES = ("canonicalize", "dro", "tsa", "assemble", "evaluate")
MANIFEST_VERSION = 1


EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_REPLAY_MISS = 3
EXIT_STAGE_FAILURE = 4


class StageError(RuntimeError):
    """A stage failed; ``exit_code`` distinguishes bad inputs and replay misses from other failures."""

    def __init__(self, stage: str, message: str, instance: str | None = None,
                 exit_code: int = EXIT_STAGE_FAILURE):
        where = f"{stage}[{instance}]" if instance else stage
        super().__init__(f"{where}: {message}")
        self.stage = stage
        self.message = message
        self.instance = instance
        self.exit_code = exit_code

    def __reduce__(self):
        # keeps the error intact when it crosses the process-pool boundary
        return StageError, (self.stage, self.message, self.instance, self.exit_code)


def stage_error(stage: str, exc: Exception, instance: str | None = None) -> StageError:
    if isinstance(exc, StageError):
        return exc
    if isinstance(exc, ReplayMissError):
        code = EXIT_REPLAY_MISS
    elif isinstance(exc, (ValidationError, BundleError)):
        code = EXIT_VALIDATION
    else:
        code = EXIT_STAGE_FAILURE
    return StageError(stage, str(exc), instance, code)


@dataclass(frozen=True)
class ClientSpec:
    """Picklable recipe for a ServiceClient, so workers can build their own."""

    fixtures: str
    mode: str
    providers: tuple = ()
    max_in_flight: int = 4

    def build(self) -> ServiceClient:
        return ServiceClient(FixtureStore(self.fixtures), self.mode, dict(self.providers), self.max_in_flight)


@dataclass
class RunContext:
    bundle: Bundle
    bundle_arg: str
    run_dir: Path
    cfg: RunConfig
    client_spec: ClientSpec
    jobs: int = 1
    debug_renders: bool = False

    def client(self) -> ServiceClient:
        return self.client_spec.build()


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- manifest ------------------------------------------------------------------------

def _manifest_path(run_dir: Path) -> Path:
    return run_dir / "manifest.json"


def load_manifest(run_dir: Path) -> dict:
    p = _manifest_path(run_dir)
    if p.is_file():
        return json.loads(p.read_text(encoding="utf-8"))
    return {}


def _write_manifest(ctx: RunContext, stage: str, status: str, outputs=(), error: str | None = None,
                    instance: str | None = None) -> None:
    man = load_manifest(ctx.run_dir)
    man["version"] = MANIFEST_VERSION
    man["inputs"] = {
        "bundle": ctx.bundle_arg,
        "reference": ctx.bundle.reference,
        "fixtures": ctx.bundle.fixtures,
        "mode": ctx.client_spec.mode,
    }
    man["config"] = ctx.cfg.snapshot()
    entry = {"status": status,
             "outputs": {str(Path(o).relative_to(ctx.run_dir)): file_digest(o) for o in sorted(outputs)}}
    if error:
        entry["error"] = error
    if instance:
        entry["failed_instance"] = instance
    man.setdefault("stages", {})[stage] = entry
    jsonfmt.write(_manifest_path(ctx.run_dir), man, decimals=12)


def _record_timing(ctx: RunContext, stage: str, timings: dict) -> None:
    # wall-clock numbers live outside the manifest so the manifest stays byte-stable
    p = ctx.run_dir / "timings.json"
    doc = json.loads(p.read_text(encoding="utf-8")) if p.is_file() else {}
    doc[stage] = timings
    jsonfmt.write(p, doc)


def run_stage(ctx: RunContext, stage: str, **kwargs):
    fn = {"canonicalize": stage_canonicalize, "dro": stage_dro, "tsa": stage_tsa,
          "assemble": stage_assemble, "evaluate": stage_evaluate}[stage]
    ctx.run_dir.mkdir(parents=True, exist_ok=True)
    try:
        outputs = fn(ctx, **kwargs)
    except (StageError, ServiceError, ValidationError, BundleError, DroError, LossError, TsaError, SceneError,
            SweepError, MeshFormatError) as exc:
        err = stage_error(stage, exc)
        key = stage if not kwargs.get("only") else f"{stage}:{kwargs['only']}"
        _write_manifest(ctx, key, "failed", error=str(err), instance=err.instance)
        raise err from exc
    key = stage if not kwargs.get("only") else f"{stage}:{kwargs['only']}"
    _write_manifest(ctx, key, "ok", outputs)
    return outputs


def _map(ctx: RunContext, fn, items):
    if ctx.jobs <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=min(ctx.jobs, len(items))) as pool:
        futures = [pool.submit(fn, *it) for it in items]
        return [f.result() for f in futures]


# -- service requests (also used by the replay preflight) ---------------------------------

def service_requests(bundle: Bundle) -> list:
    ref_png = bundle.read_bytes(bundle.reference)
    reqs = [camera_init_request(ref_png),
            stacking_request([e.instance_id for e in bundle.instances], ref_png)]
    for e in bundle.all_entries:
        reqs.append(up_axis_request(e.instance_id, e.label, bundle.read_bytes(e.mesh)))
        image = bundle.read_bytes(e.crop) if e.crop else ref_png
        reqs.append(size_prior_request(e.instance_id, e.label, image))
    return reqs


def preflight(ctx: RunContext) -> None:
    ctx.client().preflight(service_requests(ctx.bundle))


# -- canonicalize ------------------------------------------------------------------------

def _canonicalize_one(bundle_root: str, instance_id: str, spec: ClientSpec, run_dir: str):
    bundle = Bundle.load(bundle_root)
    e = bundle.entry(instance_id)
    t0 = time.perf_counter()
    try:
        hint = parse_up_axis(spec.build().call_json(up_axis_request(e.instance_id, e.label,
                                                                    bundle.read_bytes(e.mesh))))
        mesh = recenter_bottom(canonicalize_up_axis(load_mesh(bundle.path(e.mesh)), hint))
    except (ServiceError, ValidationError, ValueError) as exc:
        raise stage_error("canonicalize", exc, instance_id) from exc
    out = Path(run_dir) / "canonical" / f"{instance_id}.obj"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_mesh(mesh, out)
    return instance_id, {"hint": hint.label, "label": e.label, "mesh": f"canonical/{instance_id}.obj"}, \
        time.perf_counter() - t0


def stage_canonicalize(ctx: RunContext):
    items = [(str(ctx.bundle.root), e.instance_id, ctx.client_spec, str(ctx.run_dir))
             for e in sorted(ctx.bundle.all_entries, key=lambda e: e.instance_id)]
    results = _map(ctx, _canonicalize_one, items)
    doc = {"table": ctx.bundle.table.instance_id, "instances": {iid: rec for iid, rec, _ in results}}
    _record_timing(ctx, "canonicalize", {iid: dt for iid, _, dt in results})
    index = jsonfmt.write(ctx.run_dir / "canonical.json", doc)
    return [index] + [ctx.run_dir / rec["mesh"] for _, rec, _ in results]


def _read_json(path: Path, stage: str, needed_by: str) -> dict:
    if not path.is_file():
        raise StageError(needed_by, f"missing {path.name}; run the {stage} stage first")
    return json.loads(path.read_text(encoding="utf-8"))


def load_canonical(run_dir: Path, needed_by: str) -> dict:
    doc = _read_json(run_dir / "canonical.json", "canonicalize", needed_by)
    return {iid: CanonicalModel(iid, rec["label"], load_mesh(run_dir / rec["mesh"]), rec["mesh"])
            for iid, rec in doc["instances"].items()}


# -- dro -------------------------------------------------------------------------------------

def prepare_target(crop, mask, cfg: RunConfig, extractor) -> TargetViews:
    """Re-crop the instance image and mask with the mask's square bounds and the DRO margin."""
    m = to_float_image(mask)
    if m.ndim == 3:
        m = m[..., 0]
    img = to_float_image(crop)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    img = img[..., :3]
    bounds = crop_bounds(m, cfg.dro.crop_margin)
    size = cfg.dro.image_size
    m_c = (crop_with_bounds(m, bounds, size) > 0.5).astype(np.float64)
    img_c = crop_with_bounds(img, bounds, size) * m_c[..., None]
    return TargetViews.from_crop(img_c, m_c, extractor, cfg.canny)


def _extractor(cfg: RunConfig, spec: ClientSpec):
    if cfg.services.feature_model:
        return RemoteFeatureExtractor(spec.build(), cfg.services.feature_model, cfg.services.feature_length)
    return PatchPyramidExtractor()


def _debug_triplet(mesh, target: TargetViews, camera: Camera, yaw: float, cfg: RunConfig) -> np.ndarray:
    out = render(mesh, camera, yaw, cfg.dro.softness, framing="tight", margin=cfg.dro.crop_margin)
    t_edges = canny_edges(target.mask, cfg.canny).astype(np.float64)
    e = out.edge_map / max(out.edge_map.max(), 1e-12)
    gray = lambda a: np.repeat(a[..., None], 3, axis=2)
    rows = [np.concatenate([gray(target.mask), gray(out.silhouette)], axis=1),
            np.concatenate([gray(t_edges), gray(e)], axis=1),
            np.concatenate([target.image, out.color], axis=1)]
    return to_uint8(np.concatenate(rows, axis=0))


def _dro_one(bundle_root: str, instance_id: str, run_dir: str, cfg: RunConfig, spec: ClientSpec,
             azimuth: float, elevation: float, debug: bool):
    bundle = Bundle.load(bundle_root)
    run = Path(run_dir)
    e = bundle.entry(instance_id)
    t0 = time.perf_counter()
    canon = json.loads((run / "canonical.json").read_text(encoding="utf-8"))["instances"][instance_id]
    mesh = load_mesh(run / canon["mesh"])
    extractor = _extractor(cfg, spec)
    camera = Camera(azimuth, elevation, cfg.camera.distance, cfg.camera.fov, cfg.dro.image_size)
    try:
        target = prepare_target(bundle.image(e.crop), bundle.image(e.mask), cfg, extractor)
        result = estimate_rotation(mesh, target, camera, cfg.dro, extractor)
    except (DroError, LossError, ServiceError, ValueError) as exc:
        raise stage_error("dro", exc, instance_id) from exc
    outputs = [jsonfmt.write(run / "dro" / f"{instance_id}.json",
                             {"instance_id": instance_id, **result.to_dict()}, decimals=6)]
    if debug:
        cam = result.camera or camera
        img = _debug_triplet(mesh, target, cam, result.yaw, cfg)
        dbg = run / "debug" / f"{instance_id}_dro.png"
        dbg.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(img).save(dbg)
        trace = [{"initial_yaw": c.initial_yaw, "history": [list(h) for h in c.history]}
                 for c in result.candidates]
        outputs += [dbg, jsonfmt.write(run / "debug" / f"{instance_id}_candidates.json", trace, decimals=6)]
    return instance_id, outputs, time.perf_counter() - t0


def camera_init(ctx: RunContext) -> tuple[float, float]:
    ref_png = ctx.bundle.read_bytes(ctx.bundle.reference)
    return parse_camera_init(ctx.client().call_json(camera_init_request(ref_png)))


def stage_dro(ctx: RunContext, only: str | None = None):
    _read_json(ctx.run_dir / "canonical.json", "canonicalize", "dro")
    az, el = camera_init(ctx)
    ids = sorted(e.instance_id for e in ctx.bundle.instances)
    if only is not None:
        if only not in ids:
            raise StageError("dro", f"unknown or table instance {only!r}", exit_code=EXIT_VALIDATION)
        ids = [only]
    items = [(str(ctx.bundle.root), iid, str(ctx.run_dir), ctx.cfg, ctx.client_spec, az, el, ctx.debug_renders)
             for iid in ids]
    results = _map(ctx, _dro_one, items)
    _record_timing(ctx, "dro" if only is None else f"dro:{only}", {iid: dt for iid, _, dt in results})
    return [p for _, outs, _ in results for p in outs]


# -- tsa ----------------------------------------------------------------------------------

def stage_tsa(ctx: RunContext):
    bundle = ctx.bundle
    canon = load_canonical(ctx.run_dir, "tsa")
    table_id = bundle.table.instance_id
    yaws = {table_id: 0.0}
    for e in bundle.instances:
        rec = _read_json(ctx.run_dir / "dro" / f"{e.instance_id}.json", "dro", "tsa")
        yaws[e.instance_id] = float(rec["yaw_deg"])
    client = ctx.client()
    ref_png = bundle.read_bytes(bundle.reference)
    priors = {}
    for e in bundle.all_entries:
        image = bundle.read_bytes(e.crop) if e.crop else ref_png
        priors[e.instance_id] = parse_size_prior(
            client.call_json(size_prior_request(e.instance_id, e.label, image)), e.instance_id)
    graph = parse_stacking(client.call_json(stacking_request([e.instance_id for e in bundle.instances], ref_png)),
                           [e.instance_id for e in bundle.instances])
    try:
        result = run_tsa(bundle.boxes(), priors, yaws, ctx.cfg.tsa, table_id)
    except TsaError as exc:
        raise StageError("tsa", str(exc)) from exc
    table_height = float(result.placements[table_id].scale[2])
    scaled = {iid: apply_transform(canon[iid].mesh, RigidScaleTransform(p.yaw, (0.0, 0.0, 0.0), tuple(p.scale)))
              for iid, p in result.placements.items() if iid != table_id}
    z = stack_heights(graph, scaled, table_height)
    doc = result.to_dict()
    for iid, rec in doc["instances"].items():
        rec["support"] = "" if iid == table_id else graph.support_of(iid)
        if iid != table_id:
            rec["translation_cm"][2] = 100.0 * z[iid]
    doc["table"] = table_id
    doc["anchor_score"] = {"area_px": result.anchor_score.area_px, "epsilon": result.anchor_score.epsilon,
                           "score": result.anchor_score.score, "tau": result.anchor_score.tau}
    return [jsonfmt.write(ctx.run_dir / "tsa.json", doc, decimals=6)]


# -- assemble -------------------------------------------------------------------------------

def poses_from_tsa(doc: dict):
    poses, supports = {}, {}
    for iid, rec in doc["instances"].items():
        poses[iid] = RigidScaleTransform(float(rec["yaw_deg"]),
                                         tuple(v / 100.0 for v in rec["translation_cm"]),
                                         tuple(v / 100.0 for v in rec["scale_cm"]))
        if rec.get("support"):
            supports[iid] = rec["support"]
    return poses, supports


def stage_assemble(ctx: RunContext):
    canon = load_canonical(ctx.run_dir, "assemble")
    doc = _read_json(ctx.run_dir / "tsa.json", "tsa", "assemble")
    poses, supports = poses_from_tsa(doc)
    try:
        scene = assemble(list(canon.values()), poses, supports, table_id=doc["table"])
    except ValueError as exc:
        raise StageError("assemble", str(exc)) from exc
    tol = ctx.cfg.scene.contact_tolerance
    resolved = None
    if ctx.cfg.scene.resolve_overlaps:
        res = resolve_overlaps(scene, ctx.cfg.scene.resolve_max_iters, tol)
        scene, resolved = res.scene, res.converged
    report = detect_collisions(scene, tol)
    files = export_scene(scene, ctx.run_dir / "scene")
    coll = {**report.to_dict(), "contact_tolerance_m": tol}
    if resolved is not None:
        coll["resolve_converged"] = resolved
    outputs = [files["layout"], files["glb"], jsonfmt.write(ctx.run_dir / "collisions.json", coll)]
    outputs += sorted((ctx.run_dir / "scene" / "meshes").glob("*.obj"))
    return outputs


# -- evaluate --------------------------------------------------------------------------------

def stage_evaluate(ctx: RunContext, sweep: bool = True, metric: str = "mse"):
    """Collision metrics of the assembled scene and, with ``sweep``, the camera sweep against the reference."""
    layout = ctx.run_dir / "scene" / "scene.json"
    if not layout.is_file():
        raise StageError("evaluate", "missing scene/scene.json; run the assemble stage first")
    try:
        m = builtin_metric(metric)
    except ValueError as exc:
        raise StageError("evaluate", str(exc), exit_code=EXIT_VALIDATION) from exc
    scene = import_layout(layout)
    report = detect_collisions(scene, ctx.cfg.scene.contact_tolerance)
    col_o, col_s = collision_metrics([report])
    out = ctx.run_dir / "evaluate"
    outputs = [jsonfmt.write(out / "metrics.json", {"col_o_percent": col_o, "col_s_percent": col_s,
                                                    "collisions": report.to_dict()})]
    if sweep:
        views = camera_sweep(scene, ctx.cfg.sweep)
        reference = fit_reference(ctx.bundle.image(ctx.bundle.reference), ctx.cfg.sweep.image_size)
        best, _ = best_view(views, reference, m)
        scores = score_views(views, reference, m)
        outputs.append(jsonfmt.write(out / "sweep.json", sweep_report(scores, best), decimals=6))
        sheet = out / "contact_sheet.png"
        Image.fromarray(contact_sheet(views)).save(sheet)
        outputs.append(sheet)
    return outputs


def run_pipeline(ctx: RunContext, evaluate: bool = False):
    preflight(ctx)
    stages = ["canonicalize", "dro", "tsa", "assemble"] + (["evaluate"] if evaluate else [])
    for s in stages:
        run_stage(ctx, s)
