"""Scene assembly, triangle-level collision checks, collision metrics, instance swap and export."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numba
import numpy as np

from . import jsonfmt
from .geometry import RigidScaleTransform, TriangleMesh, aabb, apply_transform, merge_meshes
from .meshio import load_mesh, save_mesh, write_glb

LAYOUT_VERSION = 1
CONTACT_TOLERANCE = 1e-3
TABLE_ID = "table"


class SceneError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CanonicalModel:
    """Mesh in the canonical frame (+Z up, +Y front), AABB bottom-center at the origin."""

    instance_id: str
    label: str
    mesh: TriangleMesh
    mesh_ref: str = ""


@dataclass(frozen=True, eq=False)
class PosedInstance:
    model: CanonicalModel
    transform: RigidScaleTransform
    support: str = TABLE_ID

    @property
    def instance_id(self) -> str:
        return self.model.instance_id

    @property
    def label(self) -> str:
        return self.model.label

    @cached_property
    def mesh(self) -> TriangleMesh:
        return apply_transform(self.model.mesh, self.transform)

    @cached_property
    def box(self):
        return aabb(self.mesh)


@dataclass(frozen=True, eq=False)
class SceneLayout:
    table: PosedInstance
    objects: tuple = ()

    def __post_init__(self):
        ids = [self.table.instance_id] + [o.instance_id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise SceneError("instance ids must be unique")

    @property
    def surface_height(self) -> float:
        return float(self.table.box.max[2])

    @property
    def table_center(self) -> np.ndarray:
        return np.asarray(self.table.transform.translation[:2], dtype=np.float64)

    @property
    def instances(self) -> tuple:
        return (self.table,) + tuple(self.objects)

    def get(self, instance_id: str) -> PosedInstance:
        for inst in self.instances:
            if inst.instance_id == instance_id:
                return inst
        raise SceneError(f"unknown instance {instance_id!r}")

    def with_instance(self, inst: PosedInstance) -> "SceneLayout":
        if inst.instance_id == self.table.instance_id:
            return SceneLayout(inst, self.objects)
        objs = tuple(inst if o.instance_id == inst.instance_id else o for o in self.objects)
        return SceneLayout(self.table, objs)

    def bounds(self):
        box = self.table.box
        for o in self.objects:
            box = box.union(o.box)
        return box

    def merged_mesh(self) -> TriangleMesh:
        return merge_meshes([i.mesh for i in self.instances])


def assemble(models, poses: dict, supports: dict | None = None, table_id: str = TABLE_ID) -> SceneLayout:
    """Pose every model with its RigidScaleTransform; ``poses`` maps instance id to transform."""
    supports = supports or {}
    by_id = {}
    for m in models:
        if m.instance_id in by_id:
            raise SceneError(f"duplicate model id {m.instance_id!r}")
        by_id[m.instance_id] = m
    if table_id not in by_id:
        raise SceneError("scene has no table model")
    if set(by_id) != set(poses):
        missing = sorted(set(by_id) ^ set(poses))
        raise SceneError(f"models and poses do not match one-to-one: {missing}")
    table = PosedInstance(by_id[table_id], poses[table_id], support="")
    objs = tuple(PosedInstance(by_id[i], poses[i], supports.get(i, table_id))
                 for i in sorted(by_id) if i != table_id)
    return SceneLayout(table, objs)


# -- collision detection --------------------------------------------------------

@numba.njit(cache=True)
def _cross(a, b):
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


@numba.njit(cache=True)
def _plane_dists(n, p0, q0, q1, q2, eps):
    d = np.empty(3)
    d[0] = n[0] * (q0[0] - p0[0]) + n[1] * (q0[1] - p0[1]) + n[2] * (q0[2] - p0[2])
    d[1] = n[0] * (q1[0] - p0[0]) + n[1] * (q1[1] - p0[1]) + n[2] * (q1[2] - p0[2])
    d[2] = n[0] * (q2[0] - p0[0]) + n[1] * (q2[1] - p0[1]) + n[2] * (q2[2] - p0[2])
    for k in range(3):
        if abs(d[k]) < eps:
            d[k] = 0.0
    return d


@numba.njit(cache=True)
def _interval(p, d):
    # segment of the plane-crossing line inside the triangle, as parameters along the line
    if d[0] * d[1] > 0.0:
        lone, a, b = 2, 0, 1
    elif d[0] * d[2] > 0.0:
        lone, a, b = 1, 0, 2
    elif d[1] * d[2] > 0.0 or d[0] != 0.0:
        lone, a, b = 0, 1, 2
    elif d[1] != 0.0:
        lone, a, b = 1, 0, 2
    else:
        lone, a, b = 2, 0, 1
    t0 = p[a] + (p[lone] - p[a]) * d[a] / (d[a] - d[lone])
    t1 = p[b] + (p[lone] - p[b]) * d[b] / (d[b] - d[lone])
    if t0 > t1:
        t0, t1 = t1, t0
    return t0, t1


@numba.njit(cache=True)
def _orient(p, q, r):
    return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])


@numba.njit(cache=True)
def _seg_cross_2d(a, b, c, d):
    o1 = _orient(a, b, c)
    o2 = _orient(a, b, d)
    o3 = _orient(c, d, a)
    o4 = _orient(c, d, b)
    if o1 == 0.0 and o2 == 0.0 and o3 == 0.0 and o4 == 0.0:
        # collinear: overlap of the coordinate ranges
        return (min(a[0], b[0]) <= max(c[0], d[0]) and min(c[0], d[0]) <= max(a[0], b[0])
                and min(a[1], b[1]) <= max(c[1], d[1]) and min(c[1], d[1]) <= max(a[1], b[1]))
    return o1 * o2 <= 0.0 and o3 * o4 <= 0.0


@numba.njit(cache=True)
def _point_in_tri_2d(p, a, b, c):
    d1 = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
    d2 = (c[0] - b[0]) * (p[1] - b[1]) - (c[1] - b[1]) * (p[0] - b[0])
    d3 = (a[0] - c[0]) * (p[1] - c[1]) - (a[1] - c[1]) * (p[0] - c[0])
    neg = d1 < 0.0 or d2 < 0.0 or d3 < 0.0
    pos = d1 > 0.0 or d2 > 0.0 or d3 > 0.0
    return not (neg and pos)


@numba.njit(cache=True)
def _coplanar_overlap(n, v, u):
    ax = 0
    if abs(n[1]) > abs(n[ax]):
        ax = 1
    if abs(n[2]) > abs(n[ax]):
        ax = 2
    i0 = 1 if ax == 0 else 0
    i1 = 1 if ax == 2 else 2
    v2 = np.empty((3, 2))
    u2 = np.empty((3, 2))
    for k in range(3):
        v2[k, 0] = v[k, i0]
        v2[k, 1] = v[k, i1]
        u2[k, 0] = u[k, i0]
        u2[k, 1] = u[k, i1]
    for a in range(3):
        for b in range(3):
            if _seg_cross_2d(v2[a], v2[(a + 1) % 3], u2[b], u2[(b + 1) % 3]):
                return True
    return _point_in_tri_2d(v2[0], u2[0], u2[1], u2[2]) or _point_in_tri_2d(u2[0], v2[0], v2[1], v2[2])


@numba.njit(cache=True)
def tri_tri_intersect(v, u, eps=1e-12):
    """Interval-overlap triangle/triangle test on (3, 3) vertex arrays; touching counts."""
    n1 = _cross(v[1] - v[0], v[2] - v[0])
    l1 = math.sqrt(n1[0] ** 2 + n1[1] ** 2 + n1[2] ** 2)
    n2 = _cross(u[1] - u[0], u[2] - u[0])
    l2 = math.sqrt(n2[0] ** 2 + n2[1] ** 2 + n2[2] ** 2)
    if l1 == 0.0 or l2 == 0.0:
        return False
    n1 = n1 / l1
    n2 = n2 / l2
    du = _plane_dists(n1, v[0], u[0], u[1], u[2], eps)
    if du[0] * du[1] > 0.0 and du[0] * du[2] > 0.0:
        return False
    dv = _plane_dists(n2, u[0], v[0], v[1], v[2], eps)
    if dv[0] * dv[1] > 0.0 and dv[0] * dv[2] > 0.0:
        return False
    if du[0] == 0.0 and du[1] == 0.0 and du[2] == 0.0:
        return _coplanar_overlap(n1, v, u)
    line = _cross(n1, n2)
    ax = 0
    if abs(line[1]) > abs(line[ax]):
        ax = 1
    if abs(line[2]) > abs(line[ax]):
        ax = 2
    pv = np.array([v[0, ax], v[1, ax], v[2, ax]])
    pu = np.array([u[0, ax], u[1, ax], u[2, ax]])
    a0, a1 = _interval(pv, dv)
    b0, b1 = _interval(pu, du)
    return not (a1 < b0 or b1 < a0)


@numba.njit(cache=True)
def _meshes_intersect(ta, tb):
    """True if any triangle of ``ta`` meets any of ``tb`` (both (T, 3, 3))."""
    na = ta.shape[0]
    nb = tb.shape[0]
    lo_b = np.empty((nb, 3))
    hi_b = np.empty((nb, 3))
    for j in range(nb):
        for k in range(3):
            lo_b[j, k] = min(tb[j, 0, k], min(tb[j, 1, k], tb[j, 2, k]))
            hi_b[j, k] = max(tb[j, 0, k], max(tb[j, 1, k], tb[j, 2, k]))
    for i in range(na):
        lo0 = min(ta[i, 0, 0], min(ta[i, 1, 0], ta[i, 2, 0]))
        hi0 = max(ta[i, 0, 0], max(ta[i, 1, 0], ta[i, 2, 0]))
        lo1 = min(ta[i, 0, 1], min(ta[i, 1, 1], ta[i, 2, 1]))
        hi1 = max(ta[i, 0, 1], max(ta[i, 1, 1], ta[i, 2, 1]))
        lo2 = min(ta[i, 0, 2], min(ta[i, 1, 2], ta[i, 2, 2]))
        hi2 = max(ta[i, 0, 2], max(ta[i, 1, 2], ta[i, 2, 2]))
        for j in range(nb):
            if hi0 < lo_b[j, 0] or hi_b[j, 0] < lo0 or hi1 < lo_b[j, 1] or hi_b[j, 1] < lo1 \
                    or hi2 < lo_b[j, 2] or hi_b[j, 2] < lo2:
                continue
            if tri_tri_intersect(ta[i], tb[j]):
                return True
    return False


def meshes_intersect(a: TriangleMesh, b: TriangleMesh) -> bool:
    ta = np.ascontiguousarray(a.vertices[a.triangles])
    tb = np.ascontiguousarray(b.vertices[b.triangles])
    return bool(_meshes_intersect(ta, tb))


@dataclass(frozen=True)
class CollisionReport:
    pairs: tuple
    total_pairs: int
    penetration: dict = field(default_factory=dict)
    table_pairs: tuple = ()

    @property
    def colliding(self) -> bool:
        return len(self.pairs) > 0

    def to_dict(self) -> dict:
        return {
            "pairs": [list(p) for p in self.pairs],
            "total_pairs": self.total_pairs,
            "penetration_m": {f"{a}|{b}": v for (a, b), v in sorted(self.penetration.items())},
            "table_pairs": [list(p) for p in self.table_pairs],
        }


def _aabb_overlap(a, b) -> np.ndarray:
    return np.minimum(a.max, b.max) - np.maximum(a.min, b.min)


def detect_collisions(scene: SceneLayout, tolerance: float = CONTACT_TOLERANCE) -> CollisionReport:
    """Colliding unordered pairs (ids sorted within and across pairs).

    Pairs whose bounding boxes overlap by no more than ``tolerance`` on some
    axis are treated as resting contact. The penetration value is the smallest
    axis-wise box overlap, an upper estimate of the true depth.
    """
    insts = sorted(scene.instances, key=lambda i: i.instance_id)
    table_id = scene.table.instance_id
    pairs, pen, table_pairs = [], {}, []
    for a, b in itertools.combinations(insts, 2):
        ov = _aabb_overlap(a.box, b.box)
        if np.any(ov <= tolerance):
            continue
        if meshes_intersect(a.mesh, b.mesh):
            key = (a.instance_id, b.instance_id)
            pairs.append(key)
            pen[key] = float(ov.min())
            if table_id in key:
                table_pairs.append(key)
    n = len(insts)
    return CollisionReport(tuple(pairs), n * (n - 1) // 2, pen, tuple(table_pairs))


def collision_metrics(reports) -> tuple[float, float]:
    """(Col_O, Col_S) in percent: pooled colliding-pair fraction and fraction of scenes with a collision."""
    reports = list(reports)
    if not reports:
        raise SceneError("collision_metrics needs at least one report")
    total = sum(r.total_pairs for r in reports)
    hits = sum(len(r.pairs) for r in reports)
    col_o = 100.0 * hits / total if total else 0.0
    col_s = 100.0 * sum(1 for r in reports if r.pairs) / len(reports)
    return col_o, col_s


# -- editing -----------------------------------------------------------------------

def swap_instance(scene: SceneLayout, instance_id: str, new_model: CanonicalModel,
                  refit_footprint: bool = False) -> SceneLayout:
    """Replace one instance's model, keeping its pose.

    With ``refit_footprint`` the new model keeps its own proportions, scaled
    uniformly to the largest size that fits the old footprint.
    """
    old = scene.get(instance_id)
    model = replace(new_model, instance_id=instance_id)
    xf = old.transform
    if refit_footprint:
        ext = aabb(model.mesh).extents
        k = min(xf.scale[0] / ext[0], xf.scale[1] / ext[1])
        xf = RigidScaleTransform(xf.yaw, xf.translation, tuple(float(e * k) for e in ext))
    return scene.with_instance(PosedInstance(model, xf, old.support))


def _dependents(scene: SceneLayout, instance_id: str) -> list[str]:
    out, frontier = [], [instance_id]
    while frontier:
        cur = frontier.pop()
        for o in scene.objects:
            if o.support == cur and o.instance_id not in out:
                out.append(o.instance_id)
                frontier.append(o.instance_id)
    return out


def _shift(scene: SceneLayout, ids, delta) -> SceneLayout:
    for i in ids:
        inst = scene.get(i)
        t = np.asarray(inst.transform.translation, dtype=np.float64) + np.array([delta[0], delta[1], 0.0])
        xf = RigidScaleTransform(inst.transform.yaw, tuple(t.tolist()), inst.transform.scale)
        scene = scene.with_instance(PosedInstance(inst.model, xf, inst.support))
    return scene


@dataclass(frozen=True)
class ResolveResult:
    scene: SceneLayout
    converged: bool
    iterations: int


def resolve_overlaps(scene: SceneLayout, max_iters: int = 50,
                     tolerance: float = CONTACT_TOLERANCE) -> ResolveResult:
    """Push colliding object pairs apart horizontally; the smaller footprint moves.

    Each push covers the smaller horizontal box overlap plus 1.5 tolerances.
    Objects stacked on the moved one travel with it. Pushes that would raise
    the number of colliding pairs are rejected; yaw and scale never change.
    Pairs involving the table are left alone.
    """
    report = detect_collisions(scene, tolerance)
    table_id = scene.table.instance_id
    for it in range(max_iters):
        movable = [p for p in report.pairs if table_id not in p]
        if not report.pairs:
            return ResolveResult(scene, True, it)
        if not movable:
            break
        progressed = False
        for a_id, b_id in movable:
            a, b = scene.get(a_id), scene.get(b_id)
            ov = _aabb_overlap(a.box, b.box)
            if np.any(ov <= tolerance):
                continue
            area = lambda i: float(i.box.extents[0] * i.box.extents[1])
            mover, other = (a, b) if (area(a), a_id) < (area(b), b_id) else (b, a)
            axis = 0 if ov[0] <= ov[1] else 1
            sign = 1.0 if mover.box.center[axis] >= other.box.center[axis] else -1.0
            delta = [0.0, 0.0]
            delta[axis] = sign * (ov[axis] + 1.5 * tolerance)
            trial = _shift(scene, [mover.instance_id] + _dependents(scene, mover.instance_id), delta)
            trial_report = detect_collisions(trial, tolerance)
            if len(trial_report.pairs) <= len(report.pairs):
                scene, report = trial, trial_report
                progressed = True
        if not progressed:
            break
    return ResolveResult(scene, not report.pairs, max_iters)


# -- export / import -------------------------------------------------------------

def _instance_record(inst: PosedInstance, mesh_path: str) -> dict:
    xf = inst.transform
    return {
        "id": inst.instance_id,
        "label": inst.label,
        "mesh": mesh_path,
        "yaw_deg": xf.yaw,
        "translation_cm": [100.0 * float(v) for v in xf.translation],
        "scale_cm": [100.0 * float(v) for v in xf.scale],
        "support": inst.support,
    }


def layout_dict(scene: SceneLayout, mesh_dir: str = "meshes") -> dict:
    return {
        "version": LAYOUT_VERSION,
        "units": {"length": "cm", "angle": "deg"},
        "frame": {"origin": "table center", "x": "left", "y": "front", "z": "up"},
        "surface_height_cm": 100.0 * scene.surface_height,
        "table": _instance_record(scene.table, f"{mesh_dir}/{scene.table.instance_id}.obj"),
        "instances": [_instance_record(o, f"{mesh_dir}/{o.instance_id}.obj")
                      for o in sorted(scene.objects, key=lambda o: o.instance_id)],
    }


def export_scene(scene: SceneLayout, out_dir, name: str = "scene") -> dict:
    """Write ``<name>.json`` (layout, cm/deg), ``<name>.glb`` (posed meshes) and canonical meshes."""
    out = Path(out_dir)
    try:
        (out / "meshes").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise SceneError(f"cannot write to {out}: {exc}") from exc
    for inst in scene.instances:
        save_mesh(inst.model.mesh, out / "meshes" / f"{inst.instance_id}.obj")
    layout = jsonfmt.write(out / f"{name}.json", layout_dict(scene))
    glb = out / f"{name}.glb"
    glb.write_bytes(write_glb([(i.instance_id, i.mesh) for i in scene.instances]))
    return {"layout": layout, "glb": glb}


def _pose_from_record(rec: dict) -> RigidScaleTransform:
    return RigidScaleTransform(float(rec["yaw_deg"]),
                               tuple(v / 100.0 for v in rec["translation_cm"]),
                               tuple(v / 100.0 for v in rec["scale_cm"]))


def import_layout(path) -> SceneLayout:
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("version") != LAYOUT_VERSION:
        raise SceneError(f"unsupported layout version {doc.get('version')}")
    models, poses, supports = [], {}, {}
    for rec in [doc["table"]] + doc["instances"]:
        mesh = load_mesh(path.parent / rec["mesh"])
        models.append(CanonicalModel(rec["id"], rec["label"], mesh, rec["mesh"]))
        poses[rec["id"]] = _pose_from_record(rec)
        if rec is not doc["table"]:
            supports[rec["id"]] = rec.get("support", TABLE_ID)
    return assemble(models, poses, supports, table_id=doc["table"]["id"])
