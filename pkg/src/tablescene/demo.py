"""Builds the bundled 9-instance demo scene with known ground truth.

The generator stands in for the generative front half: meshes are authored
from primitives (several stored in non-canonical axes), crops and masks are
rendered from the ground-truth yaw, top-view boxes are the ideal orthographic
footprints, and every service answer is a hand-authored fixture.

    python3 -m tablescene.demo OUT_DIR
"""

from __future__ import annotations

import argparse
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import jsonfmt
from .bundle import Bundle, InstanceEntry
from .geometry import (
    RigidScaleTransform,
    TriangleMesh,
    UpAxisHint,
    aabb,
    apply_transform,
    box_mesh,
    cylinder_mesh,
    footprint_dims,
    merge_meshes,
    recenter_bottom,
)
from .meshio import save_mesh
from .raster import Camera, render, to_uint8
from .services import (
    FixtureStore,
    camera_init_request,
    size_prior_request,
    stacking_request,
    up_axis_request,
)
from .tsa import TABLE_ID, TopViewBox

CAMERA_AZIMUTH = 0.0
CAMERA_ELEVATION = 60.0
CROP_SIZE = 320
TOPVIEW_SIZE = 1024
TOPVIEW_FOV = 8.0
TOPVIEW_DISTANCE = 12.0
MIN_GAP_M = 0.05


def table_mesh(width=1.2, depth=0.8, height=0.75, top=0.04, leg=0.05) -> TriangleMesh:
    wood = [(0.55, 0.35, 0.2), (0.6, 0.4, 0.22), (0.5, 0.3, 0.18), (0.65, 0.45, 0.25),
            (0.3, 0.2, 0.1), (0.7, 0.5, 0.3)]
    parts = [box_mesh((width, depth, top), (0, 0, height - top / 2), wood)]
    lx, ly = width / 2 - leg, depth / 2 - leg
    for sx in (-1, 1):
        for sy in (-1, 1):
            parts.append(box_mesh((leg, leg, height - top), (sx * lx, sy * ly, (height - top) / 2),
                                  [(0.35, 0.22, 0.12)] * 6))
    return merge_meshes(parts)


def book() -> TriangleMesh:
    return box_mesh((0.26, 0.20, 0.04), (0, 0, 0.02),
                    [(0.6, 0.1, 0.1), (0.95, 0.92, 0.8), (0.2, 0.5, 0.3), (0.92, 0.9, 0.78),
                     (0.15, 0.2, 0.5), (0.2, 0.35, 0.8)])


def toy_car() -> TriangleMesh:
    body = box_mesh((0.16, 0.072, 0.04), (0, 0, 0.028),
                    [(0.8, 0.1, 0.1), (0.9, 0.5, 0.1), (0.2, 0.6, 0.2), (0.1, 0.3, 0.8), (0.2, 0.2, 0.2),
                     (0.9, 0.9, 0.2)])
    cab = box_mesh((0.072, 0.064, 0.032), (-0.024, 0, 0.064),
                   [(0.3, 0.3, 0.9), (0.6, 0.9, 0.9), (0.9, 0.9, 0.9), (0.5, 0.2, 0.6), (0.2, 0.2, 0.2),
                    (0.95, 0.6, 0.6)])
    fin = box_mesh((0.012, 0.064, 0.024), (-0.074, 0, 0.06), [(0.1, 0.1, 0.1)] * 6)
    wheels = [cylinder_mesh(0.016, 0.008, 12, (x, y, 0.016), (0.05, 0.05, 0.05))
              for x in (-0.048, 0.048) for y in (-0.04, 0.04)]
    return merge_meshes([body, cab, fin] + wheels)


def pen() -> TriangleMesh:
    barrel = box_mesh((0.14, 0.012, 0.012), (0, 0, 0.006),
                      [(0.9, 0.9, 0.9), (0.1, 0.1, 0.1), (0.2, 0.3, 0.9), (0.1, 0.2, 0.7), (0.1, 0.1, 0.4),
                       (0.3, 0.5, 1.0)])
    cap = box_mesh((0.035, 0.014, 0.014), (-0.055, 0, 0.007), [(0.9, 0.2, 0.1)] * 6)
    return merge_meshes([barrel, cap])


def mug() -> TriangleMesh:
    body = cylinder_mesh(0.045, 0.10, 24, (0, 0, 0.05), (0.92, 0.92, 0.88), top_color=(0.3, 0.18, 0.1))
    handle = box_mesh((0.03, 0.012, 0.06), (0.058, 0, 0.05), [(0.85, 0.85, 0.8)] * 6)
    logo = box_mesh((0.04, 0.004, 0.04), (0, 0.045, 0.05), [(0.9, 0.3, 0.1)] * 6)
    return merge_meshes([body, handle, logo])


def laptop() -> TriangleMesh:
    base = box_mesh((0.32, 0.22, 0.015), (0, 0, 0.0075),
                    [(0.5, 0.5, 0.55), (0.55, 0.55, 0.6), (0.45, 0.45, 0.5), (0.6, 0.6, 0.65), (0.3, 0.3, 0.3),
                     (0.7, 0.7, 0.75)])
    keys = box_mesh((0.26, 0.09, 0.002), (0, 0.01, 0.016), [(0.1, 0.1, 0.12)] * 6)
    screen = box_mesh((0.32, 0.012, 0.20), (0, -0.104, 0.115),
                      [(0.5, 0.5, 0.55), (0.55, 0.55, 0.6), (0.7, 0.7, 0.75), (0.15, 0.3, 0.7), (0.3, 0.3, 0.3),
                       (0.6, 0.6, 0.65)])
    return merge_meshes([base, keys, screen])


def lamp() -> TriangleMesh:
    base = cylinder_mesh(0.07, 0.02, 24, (0, 0, 0.01), (0.15, 0.15, 0.15), top_color=(0.25, 0.25, 0.25))
    pole = box_mesh((0.015, 0.015, 0.30), (-0.03, 0, 0.17), [(0.7, 0.7, 0.7)] * 6)
    arm = box_mesh((0.14, 0.015, 0.015), (0.03, 0, 0.3125), [(0.7, 0.7, 0.7)] * 6)
    head = box_mesh((0.06, 0.06, 0.04), (0.1, 0, 0.30),
                    [(0.1, 0.5, 0.4), (0.1, 0.55, 0.45), (0.1, 0.45, 0.35), (0.2, 0.6, 0.5), (1.0, 0.95, 0.5),
                     (0.1, 0.4, 0.3)])
    return merge_meshes([base, pole, arm, head])


def plant() -> TriangleMesh:
    pot = cylinder_mesh(0.06, 0.10, 24, (0, 0, 0.05), (0.75, 0.4, 0.25), top_color=(0.3, 0.2, 0.1))
    leaf_a = box_mesh((0.08, 0.03, 0.10), (0.03, 0.01, 0.15), [(0.2, 0.7, 0.2)] * 6)
    leaf_b = box_mesh((0.03, 0.07, 0.08), (-0.02, -0.02, 0.14), [(0.1, 0.45, 0.15)] * 6)
    return merge_meshes([pot, leaf_a, leaf_b])


def tissue_box() -> TriangleMesh:
    body = box_mesh((0.24, 0.12, 0.10), (0, 0, 0.05),
                    [(0.9, 0.6, 0.7), (0.6, 0.8, 0.9), (0.95, 0.95, 0.7), (0.7, 0.9, 0.6), (0.9, 0.9, 0.9),
                     (0.95, 0.75, 0.8)])
    slot = box_mesh((0.10, 0.03, 0.01), (0.03, 0, 0.105), [(1.0, 1.0, 1.0)] * 6)
    return merge_meshes([body, slot])


def phone() -> TriangleMesh:
    body = box_mesh((0.075, 0.155, 0.009), (0, 0, 0.0045),
                    [(0.2, 0.2, 0.2), (0.3, 0.3, 0.3), (0.8, 0.8, 0.8), (0.1, 0.1, 0.1), (0.6, 0.2, 0.2),
                     (0.1, 0.2, 0.6)])
    bump = box_mesh((0.024, 0.024, 0.003), (-0.018, -0.055, 0.0105), [(0.05, 0.05, 0.05)] * 6)
    return merge_meshes([body, bump])


@dataclass(frozen=True)
class DemoObject:
    instance_id: str
    label: str
    build: object
    x: float
    y: float
    yaw: float
    support: str = TABLE_ID
    stored_axes: str = "+Z up, +Y front"
    fmt: str = "obj"


DEMO_OBJECTS = (
    DemoObject("book_1", "book", book, 0.27, 0.10, 200.0, stored_axes="+Y up, -Z front"),
    DemoObject("toy_car_1", "toy car", toy_car, 0.19, 0.14, 120.0, support="book_1"),
    DemoObject("pen_1", "pen", pen, 0.36, 0.05, 75.0, support="book_1", stored_axes="+X up, +Y front"),
    DemoObject("mug_1", "mug", mug, -0.03, 0.30, 300.0, stored_axes="+Y up, +Z front"),
    DemoObject("laptop_1", "laptop", laptop, -0.36, 0.05, 10.0, fmt="glb"),
    DemoObject("lamp_1", "desk lamp", lamp, -0.45, -0.28, 160.0),
    DemoObject("plant_1", "potted plant", plant, 0.48, -0.27, 250.0, stored_axes="-Z up, +Y front"),
    DemoObject("tissue_box_1", "tissue box", tissue_box, 0.05, -0.25, 20.0),
    DemoObject("phone_1", "phone", phone, -0.04, 0.02, 300.0),
)


def to_stored_axes(mesh: TriangleMesh, axes: str) -> TriangleMesh:
    """Inverse of canonicalization: express a canonical mesh in the given local axes."""
    rot = UpAxisHint.parse(axes).rotation()
    return mesh.with_vertices(mesh.vertices @ rot)


def ground_truth_scene():
    """Canonical meshes and poses (meters, degrees) of the table and every object."""
    table = recenter_bottom(table_mesh())
    ext = aabb(table).extents
    canon = {TABLE_ID: table}
    poses = {TABLE_ID: RigidScaleTransform(0.0, (0.0, 0.0, 0.0), tuple(ext))}
    top = {TABLE_ID: float(ext[2])}
    for obj in DEMO_OBJECTS:
        mesh = recenter_bottom(obj.build())
        e = aabb(mesh).extents
        z = top[obj.support]
        canon[obj.instance_id] = mesh
        poses[obj.instance_id] = RigidScaleTransform(obj.yaw, (obj.x, obj.y, z), tuple(e))
        top[obj.instance_id] = z + float(e[2])
    return canon, poses


def footprints(poses: dict) -> dict:
    """Ideal top-view footprint per instance: the yawed rectangle of its canonical extents.

    This is the footprint model placement inverts. A tight box around a rounded
    mesh is smaller, so real detector boxes under-report rounded objects.
    Returns (x_min, y_min, x_max, y_max) in meters.
    """
    out = {}
    for iid, p in poses.items():
        w, d = footprint_dims(p.scale[:2], p.yaw)
        x, y = p.translation[:2]
        out[iid] = (x - w / 2, y - d / 2, x + w / 2, y + d / 2)
    return out


def _check_spacing(rects: dict) -> None:
    supports = {o.instance_id: o.support for o in DEMO_OBJECTS}
    ids = sorted(k for k in rects if k != TABLE_ID)
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            if supports[a] == b or supports[b] == a:
                continue
            ra, rb = rects[a], rects[b]
            gap = max(ra[0] - rb[2], rb[0] - ra[2], ra[1] - rb[3], rb[1] - ra[3])
            if gap < MIN_GAP_M:
                raise AssertionError(f"demo objects {a} and {b} are only {gap:.3f} m apart")


def topview_alpha(scene_mesh: TriangleMesh, table_top: float) -> float:
    """Meters per pixel of the top-view render at the table-top plane."""
    box = aabb(scene_mesh)
    eye_height = box.center[2] + TOPVIEW_DISTANCE * box.radius - table_top
    return 2.0 * eye_height * math.tan(math.radians(TOPVIEW_FOV) / 2.0) / TOPVIEW_SIZE


def ideal_boxes(rects: dict, center_xy, alpha: float) -> dict:
    """Pixel boxes of the footprints; image +u is world -x, image +v is world +y."""
    cu = cv = TOPVIEW_SIZE / 2.0
    out = {}
    for iid, (x0, y0, x1, y1) in rects.items():
        out[iid] = TopViewBox(iid, cu - (x1 - center_xy[0]) / alpha, cv + (y0 - center_xy[1]) / alpha,
                              (x1 - x0) / alpha, (y1 - y0) / alpha, (TOPVIEW_SIZE, TOPVIEW_SIZE))
    return out


def _save_png(path: Path, image: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(image)).save(path, optimize=False)


def build_demo_bundle(out_dir) -> Bundle:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    canon, poses = ground_truth_scene()
    posed = {k: apply_transform(canon[k], poses[k]) for k in canon}
    rects = footprints(poses)
    _check_spacing(rects)
    scene_mesh = merge_meshes([posed[k] for k in sorted(posed)])
    table_top = poses[TABLE_ID].scale[2]

    reference = render(scene_mesh, Camera(0.0, 50.0, 1.6, 40.0, 512), background=(1.0, 1.0, 1.0)).color
    _save_png(out / "reference.png", reference)
    top_cam = Camera(0.0, 90.0, TOPVIEW_DISTANCE, TOPVIEW_FOV, TOPVIEW_SIZE)
    _save_png(out / "topview.png", render(scene_mesh, top_cam, background=(1.0, 1.0, 1.0)).color)
    alpha = topview_alpha(scene_mesh, table_top)
    center = aabb(scene_mesh).center
    boxes = ideal_boxes(rects, center[:2], alpha)
    jsonfmt.write(out / "topview_boxes.json",
                  {"image_size": [TOPVIEW_SIZE, TOPVIEW_SIZE],
                   "boxes": [{"id": k, "box": [b.x_min, b.y_min, b.width, b.height]}
                             for k, b in sorted(boxes.items())]}, decimals=6)

    crop_cam = Camera(CAMERA_AZIMUTH, CAMERA_ELEVATION, 2.5, 40.0, CROP_SIZE)
    stored = {TABLE_ID: ("+Z up, +Y front", "obj", "table")}
    entries = []
    for obj in DEMO_OBJECTS:
        stored[obj.instance_id] = (obj.stored_axes, obj.fmt, obj.label)
        r = render(canon[obj.instance_id], crop_cam, obj.yaw, framing="tight", margin=0.2)
        mask = r.coverage.astype(np.float64)
        crop = f"instances/{obj.instance_id}/crop.png"
        mask_rel = f"instances/{obj.instance_id}/mask.png"
        _save_png(out / crop, r.color * mask[..., None])
        _save_png(out / mask_rel, mask)
        entries.append(InstanceEntry(obj.instance_id, obj.label, f"meshes/{obj.instance_id}.{obj.fmt}", crop,
                                     mask_rel))
    (out / "meshes").mkdir(exist_ok=True)
    for iid, (axes, fmt, _) in stored.items():
        save_mesh(to_stored_axes(canon[iid], axes), out / "meshes" / f"{iid}.{fmt}")

    table_entry = InstanceEntry(TABLE_ID, "table", f"meshes/{TABLE_ID}.obj")
    bundle = Bundle(out, "demo_scene", table_entry, tuple(entries))
    jsonfmt.write(out / "bundle.json", bundle.to_dict())

    _write_fixtures(bundle, canon, stored)
    jsonfmt.write(out / "ground_truth.json", {
        "alpha_m_per_px": alpha,
        "camera": {"azimuth_deg": CAMERA_AZIMUTH, "elevation_deg": CAMERA_ELEVATION},
        "instances": {k: {"yaw_deg": p.yaw, "translation_m": list(p.translation), "scale_m": list(p.scale),
                          "support": "" if k == TABLE_ID else
                          next(o.support for o in DEMO_OBJECTS if o.instance_id == k)}
                      for k, p in sorted(poses.items())},
    }, decimals=9)
    return Bundle.load(out)


def _json_bytes(doc) -> bytes:
    return (json.dumps(doc, sort_keys=True, indent=2) + "\n").encode("utf-8")


def _write_fixtures(bundle: Bundle, canon: dict, stored: dict) -> None:
    store = FixtureStore(bundle.path(bundle.fixtures))
    ref_png = bundle.read_bytes(bundle.reference)
    store.put_hand_authored(camera_init_request(ref_png),
                            _json_bytes({"azimuth_deg": CAMERA_AZIMUTH, "elevation_deg": CAMERA_ELEVATION}))
    stacking = [{"above": o.instance_id, "below": o.support} for o in DEMO_OBJECTS if o.support != TABLE_ID]
    store.put_hand_authored(stacking_request([e.instance_id for e in bundle.instances], ref_png),
                            _json_bytes({"stacking": stacking}))
    for e in bundle.all_entries:
        axes = stored[e.instance_id][0]
        store.put_hand_authored(up_axis_request(e.instance_id, e.label, bundle.read_bytes(e.mesh)),
                                _json_bytes({"hint": axes}))
        dims_cm = [round(100.0 * float(v), 2) for v in aabb(canon[e.instance_id]).extents]
        image = bundle.read_bytes(e.crop) if e.crop else ref_png
        store.put_hand_authored(size_prior_request(e.instance_id, e.label, image),
                                _json_bytes({"instance_id": e.instance_id, "size_cm": dims_cm,
                                             "confidence": "high"}))


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description="write the demo instance bundle")
    ap.add_argument("out_dir")
    args = ap.parse_args(argv)
    b = build_demo_bundle(args.out_dir)
    print(f"wrote {b.root} with {len(b.instances)} instances")


if __name__ == "__main__":
    main()
