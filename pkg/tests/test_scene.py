import itertools
import json

import numpy as np
import pytest

from synth_scenes import TABLE_HEIGHT, make_scene, placed_meshes
from tablescene.geometry import RigidScaleTransform, box_mesh, cylinder_mesh, recenter_bottom
from tablescene.scene import (
    CanonicalModel,
    CollisionReport,
    SceneError,
    assemble,
    collision_metrics,
    detect_collisions,
    export_scene,
    import_layout,
    resolve_overlaps,
    swap_instance,
)
from tablescene.tsa import run_tsa, stack_heights

CUBE = recenter_bottom(box_mesh((1.0, 1.0, 1.0)))
TABLE = CanonicalModel("table", "table", recenter_bottom(box_mesh((1.0, 1.0, 1.0))))
TABLE_POSE = RigidScaleTransform(0.0, (0.0, 0.0, 0.0), (2.0, 2.0, 0.7))


def model(iid, mesh=CUBE, label="thing"):
    return CanonicalModel(iid, label, mesh)


def scene_of(poses, meshes=None, supports=None):
    meshes = meshes or {}
    models = [TABLE] + [model(i, meshes.get(i, CUBE)) for i in poses]
    return assemble(models, {"table": TABLE_POSE, **poses}, supports)


def xf(x=0.0, y=0.0, z=0.7, s=(1.0, 1.0, 1.0), yaw=0.0):
    return RigidScaleTransform(yaw, (x, y, z), s)


# -- oracle ----------------------------------------------------------------------

def edges_cross_triangles(ta, tb, eps=1e-12):
    """Any edge of a triangle in ``ta`` piercing a triangle of ``tb`` (Moller-Trumbore, all pairs)."""
    p0 = np.concatenate([ta[:, 0], ta[:, 1], ta[:, 2]])
    p1 = np.concatenate([ta[:, 1], ta[:, 2], ta[:, 0]])
    d = (p1 - p0)[:, None, :]
    v0, e1, e2 = tb[None, :, 0], tb[None, :, 1] - tb[None, :, 0], tb[None, :, 2] - tb[None, :, 0]
    h = np.cross(d, e2)
    a = np.einsum("ijk,ijk->ij", e1, h)
    ok = np.abs(a) > eps
    f = np.where(ok, 1.0 / np.where(ok, a, 1.0), 0.0)
    s = p0[:, None, :] - v0
    u = f * np.einsum("ijk,ijk->ij", s, h)
    q = np.cross(s, e1)
    v = f * np.einsum("ijk,ijk->ij", d, q)
    t = f * np.einsum("ijk,ijk->ij", e2, q)
    hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t >= 0) & (t <= 1)
    return bool(hit.any())


def oracle_pairs(scene):
    tris = {i.instance_id: i.mesh.vertices[i.mesh.triangles] for i in scene.instances}
    out = []
    for a, b in itertools.combinations(sorted(tris), 2):
        if edges_cross_triangles(tris[a], tris[b]) or edges_cross_triangles(tris[b], tris[a]):
            out.append((a, b))
    return out


def random_scene(rng):
    poses, meshes = {}, {}
    for k in range(int(rng.integers(2, 6))):
        iid = f"o{k}"
        meshes[iid] = CUBE if rng.random() < 0.5 else recenter_bottom(cylinder_mesh(0.5, 1.0, 16))
        size = tuple(rng.uniform(0.05, 0.3, size=3))
        poses[iid] = xf(*rng.uniform(-0.25, 0.25, size=2), z=0.7 + rng.uniform(-0.03, 0.2), s=size,
                        yaw=float(rng.uniform(0, 360)))
    return scene_of(poses, meshes)


# -- assembly --------------------------------------------------------------------

def test_assemble_table_only():
    s = assemble([TABLE], {"table": TABLE_POSE})
    assert s.objects == ()
    assert s.surface_height == pytest.approx(0.7)


def test_assemble_keeps_ids_and_requested_extents():
    poses = {f"i{k}": xf(0.1 * k, 0.0, s=(0.1 + 0.01 * k, 0.05, 0.2)) for k in range(9)}
    s = scene_of(poses)
    assert sorted(o.instance_id for o in s.objects) == sorted(poses)
    for o in s.objects:
        assert o.box.extents == pytest.approx(np.array(poses[o.instance_id].scale), abs=1e-12)


def test_assemble_errors():
    with pytest.raises(SceneError):
        assemble([model("a")], {"a": xf()})
    with pytest.raises(SceneError):
        assemble([TABLE, model("a")], {"table": TABLE_POSE})
    with pytest.raises(SceneError):
        assemble([TABLE, model("a"), model("a")], {"table": TABLE_POSE, "a": xf()})


# -- collisions ------------------------------------------------------------------

def test_cubes_apart_do_not_collide():
    r = detect_collisions(scene_of({"a": xf(-0.5), "b": xf(1.5)}))
    assert r.pairs == ()


def test_cubes_overlapping_collide():
    r = detect_collisions(scene_of({"a": xf(0.0, z=0.8), "b": xf(0.5, z=0.8)}))
    assert r.pairs == (("a", "b"),)
    assert r.penetration[("a", "b")] == pytest.approx(0.5)
    assert r.total_pairs == 3


def test_resting_contact_is_not_a_collision():
    r = detect_collisions(scene_of({"a": xf(0.0, z=0.7), "b": xf(0.0, z=1.7, s=(0.5, 0.5, 0.5))}))
    assert r.pairs == ()


def test_sunk_into_table_is_a_table_pair():
    r = detect_collisions(scene_of({"a": xf(0.0, z=0.65, s=(0.2, 0.2, 0.2))}))
    assert r.pairs == (("a", "table"),)
    assert r.table_pairs == (("a", "table"),)


def test_detect_matches_triangle_oracle_on_random_scenes(rng):
    hits = 0
    for _ in range(20):
        s = random_scene(rng)
        got = list(detect_collisions(s, tolerance=0.0).pairs)
        assert got == oracle_pairs(s)
        hits += len(got)
    assert hits > 0


def test_detect_is_order_independent(rng):
    s = random_scene(rng)
    flipped = type(s)(s.table, tuple(reversed(s.objects)))
    assert detect_collisions(s).pairs == detect_collisions(flipped).pairs


def test_stacked_tsa_pairs_only_touch():
    scene = make_scene(np.random.default_rng(11), n_free=3, chain=3)
    res = run_tsa(scene.boxes, scene.priors, scene.yaws)
    meshes = placed_meshes({k: v for k, v in res.placements.items() if k != "table"})
    z = stack_heights(scene.graph, meshes, TABLE_HEIGHT)
    poses = {}
    for iid, p in res.placements.items():
        if iid == "table":
            continue
        poses[iid] = RigidScaleTransform(p.yaw, (p.translation[0], p.translation[1], z[iid]), tuple(p.scale))
    s = scene_of(poses)
    # free objects may overlap each other in a random layout; stacked pairs must only touch
    pairs = set(detect_collisions(s).pairs)
    for above, below in scene.edges:
        assert tuple(sorted((above, below))) not in pairs


# -- metrics ---------------------------------------------------------------------

def report(pairs, total):
    return CollisionReport(tuple(pairs), total)


def test_metrics_clean():
    assert collision_metrics([report([], 3), report([], 6)]) == (0.0, 0.0)


def test_metrics_hand_cases():
    col_o, col_s = collision_metrics([report([("a", "b")], 3)])
    assert (round(col_o, 2), col_s) == (33.33, 100.0)
    col_o, col_s = collision_metrics([report([], 3), report([("a", "b")], 3)])
    assert (round(col_o, 2), col_s) == (16.67, 50.0)


def test_metrics_invariant_to_scene_order():
    reps = [report([], 3), report([("a", "b")], 6), report([("a", "c"), ("b", "c")], 10)]
    assert collision_metrics(reps) == collision_metrics(reversed(reps))


def test_metrics_single_instance_scene_adds_nothing():
    assert collision_metrics([report([], 0), report([("a", "b")], 1)]) == (100.0, 50.0)
    with pytest.raises(SceneError):
        collision_metrics([])


# -- swap ------------------------------------------------------------------------

def test_swap_identical_model_keeps_pose_and_others():
    s = scene_of({"a": xf(0.1, s=(0.2, 0.1, 0.3), yaw=29.72), "b": xf(-0.4)})
    out = swap_instance(s, "a", model("x", CUBE, "new"))
    assert out.get("a").transform == s.get("a").transform
    assert out.get("a").label == "new"
    assert out.get("b") is s.get("b")
    assert out.table is s.table


def test_swap_back_restores_poses():
    s = scene_of({"a": xf(0.1, s=(0.2, 0.1, 0.3), yaw=40.0)})
    mug = recenter_bottom(cylinder_mesh(0.3, 0.5))
    there = swap_instance(s, "a", model("m", mug))
    back = swap_instance(there, "a", s.get("a").model)
    assert back.get("a").transform == s.get("a").transform
    assert np.array_equal(back.get("a").mesh.vertices, s.get("a").mesh.vertices)


def test_swapped_extents_equal_old_scale():
    s = scene_of({"a": xf(0.1, s=(0.2, 0.1, 0.3))})
    out = swap_instance(s, "a", model("m", recenter_bottom(cylinder_mesh(0.3, 0.5))))
    assert out.get("a").box.extents == pytest.approx([0.2, 0.1, 0.3], abs=1e-12)


def test_swap_refit_keeps_new_proportions():
    s = scene_of({"a": xf(0.1, s=(0.2, 0.1, 0.3))})
    tall = recenter_bottom(box_mesh((1.0, 1.0, 2.0)))
    out = swap_instance(s, "a", model("m", tall), refit_footprint=True)
    assert out.get("a").box.extents == pytest.approx([0.1, 0.1, 0.2], abs=1e-12)


def test_swap_unknown_id():
    with pytest.raises(SceneError):
        swap_instance(scene_of({"a": xf()}), "ghost", model("m"))


# -- resolve ---------------------------------------------------------------------

def test_resolve_leaves_clean_scene_alone():
    s = scene_of({"a": xf(-0.5, s=(0.2, 0.2, 0.2)), "b": xf(0.5, s=(0.2, 0.2, 0.2))})
    res = resolve_overlaps(s)
    assert res.converged
    assert res.scene is s


def test_resolve_separates_overlap_minimally():
    # a spans x in [-0.2, 0.2], b in [0.1, 0.3]: 0.1 m overlap
    s = scene_of({"a": xf(0.0, s=(0.4, 0.4, 0.2)), "b": xf(0.2, s=(0.2, 0.2, 0.2))})
    assert detect_collisions(s).pairs == (("a", "b"),)
    res = resolve_overlaps(s)
    assert res.converged
    assert detect_collisions(res.scene).pairs == ()
    moved = sum(np.abs(np.subtract(res.scene.get(i).transform.translation, s.get(i).transform.translation)).sum()
                for i in ("a", "b"))
    assert moved <= 0.1 + 2e-3
    gap = res.scene.get("b").box.min[0] - res.scene.get("a").box.max[0]
    assert gap >= 1e-3 - 1e-12
    assert res.scene.get("b").transform.scale == s.get("b").transform.scale


def test_resolve_carries_stacked_objects():
    s = scene_of({"a": xf(0.0, s=(0.4, 0.4, 0.2)), "b": xf(0.2, s=(0.2, 0.2, 0.2)),
                  "c": xf(0.2, z=0.9, s=(0.1, 0.1, 0.1))}, supports={"c": "b"})
    res = resolve_overlaps(s)
    dx_b = res.scene.get("b").transform.translation[0] - 0.2
    dx_c = res.scene.get("c").transform.translation[0] - 0.2
    assert dx_b > 0.0
    assert dx_b == pytest.approx(dx_c)
    assert detect_collisions(res.scene).pairs == ()


# -- export ----------------------------------------------------------------------

def test_export_round_trip(tmp_path):
    s = scene_of({"a": xf(0.123456, -0.2, s=(0.2, 0.1, 0.3), yaw=29.72), "b": xf(-0.4, s=(0.1, 0.1, 0.1))},
                 supports={"a": "table"})
    files = export_scene(s, tmp_path)
    back = import_layout(files["layout"])
    for inst in s.instances:
        got = back.get(inst.instance_id).transform
        assert np.allclose(got.translation, inst.transform.translation, rtol=1e-4, atol=1e-6)
        assert np.allclose(got.scale, inst.transform.scale, rtol=1e-4)
    assert f"{back.get('a').transform.yaw:.2f}" == "29.72"
    assert np.allclose(back.get("a").mesh.vertices, s.get("a").mesh.vertices, atol=1e-6)


def test_export_twice_is_byte_identical(tmp_path):
    s = scene_of({"a": xf(0.1, s=(0.2, 0.1, 0.3), yaw=12.5)})
    f1 = export_scene(s, tmp_path / "one")
    f2 = export_scene(s, tmp_path / "two")
    for key in ("layout", "glb"):
        assert f1[key].read_bytes() == f2[key].read_bytes()


def test_export_layout_units(tmp_path):
    s = scene_of({"a": xf(0.1, 0.2, s=(0.2, 0.1, 0.3), yaw=29.72)})
    doc = json.loads(export_scene(s, tmp_path)["layout"].read_text())
    rec = doc["instances"][0]
    assert rec["translation_cm"] == [10.0, 20.0, 70.0]
    assert rec["scale_cm"] == [20.0, 10.0, 30.0]
    assert rec["yaw_deg"] == 29.72
    assert doc["surface_height_cm"] == 70.0


def test_export_unwritable_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(SceneError):
        export_scene(scene_of({"a": xf()}), blocker / "sub")
