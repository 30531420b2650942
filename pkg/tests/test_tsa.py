import itertools
import math

import numpy as np
import pytest

from synth_scenes import TABLE_HEIGHT, make_scene, placed_meshes
from tablescene.geometry import aabb, box_mesh
from tablescene.tsa import (
    TABLE_ID,
    SizePrior,
    StackingGraph,
    TopViewBox,
    TsaConfig,
    TsaError,
    place_and_scale,
    ratio_error,
    rma_score,
    run_tsa,
    select_anchor,
    solve_alpha,
    stack_heights,
    unfit_footprint,
)


def box(iid, x, y, w, h, size=(1024, 1024)):
    return TopViewBox(iid, x, y, w, h, size)


def test_box_must_be_positive_and_inside_image():
    with pytest.raises(TsaError):
        box("a", 0, 0, 0, 10)
    with pytest.raises(TsaError):
        box("a", 1000, 0, 50, 10)


def test_size_prior_rejects_non_positive():
    with pytest.raises(TsaError):
        SizePrior("a", 0.1, 0.0, 0.1)


def test_ratio_error_identity_and_log_two():
    assert ratio_error(SizePrior("a", 0.3, 0.2, 0.1), 0.0, box("a", 0, 0, 300, 200)) == pytest.approx(0.0, abs=1e-12)
    assert ratio_error(SizePrior("a", 0.2, 0.1, 0.1), 0.0, box("a", 0, 0, 100, 100)) == pytest.approx(math.log(2.0))


def test_ratio_error_uses_yawed_footprint():
    # a 0.2 x 0.1 footprint turned 90 degrees reads 0.1 x 0.2
    assert ratio_error(SizePrior("a", 0.2, 0.1, 0.1), 90.0, box("a", 0, 0, 100, 200)) == pytest.approx(0.0, abs=1e-12)


def test_rma_spot_values():
    assert rma_score(10000.0, 0.0, 0.25) == 10000.0
    assert rma_score(10000.0, 0.25, 0.25) == pytest.approx(5000.0, abs=1e-9)
    assert rma_score(10000.0, 0.5, 0.25) == pytest.approx(2000.0, abs=1e-9)


def test_rma_strictly_decreases_with_epsilon():
    eps = np.linspace(0.0, 2.0, 50)
    scores = [rma_score(500.0, e, 0.25) for e in eps]
    assert all(a > b for a, b in zip(scores, scores[1:]))


def random_candidates(rng, n):
    cands = [(box(TABLE_ID, 100, 100, 800, 600), SizePrior(TABLE_ID, 1.2, 0.8, 0.75), 0.0)]
    for k in range(n):
        w, h = rng.uniform(10, 200, size=2)
        cands.append((box(f"i{k}", 0, 0, w, h), SizePrior(f"i{k}", *rng.uniform(0.05, 0.5, size=3)),
                      float(rng.uniform(0, 360))))
    return cands


def brute_force_anchor(cands, tau=0.25):
    best = None
    for b, p, yaw in cands:
        if b.instance_id == TABLE_ID:
            continue
        wp, dp = (p.width, p.depth)
        a = math.radians(yaw)
        fw = wp * abs(math.cos(a)) + dp * abs(math.sin(a))
        fd = wp * abs(math.sin(a)) + dp * abs(math.cos(a))
        eps = abs(math.log(fw / fd) - math.log(b.width / b.height))
        key = (b.width * b.height / (1 + (eps / tau) ** 2), b.width * b.height, [-ord(c) for c in b.instance_id])
        if best is None or key > best[0]:
            best = (key, b.instance_id)
    return best[1]


def test_select_anchor_matches_brute_force(rng):
    for _ in range(100):
        cands = random_candidates(rng, int(rng.integers(1, 8)))
        assert select_anchor(cands).instance_id == brute_force_anchor(cands)


def test_select_anchor_excludes_table_and_needs_a_candidate():
    table = (box(TABLE_ID, 0, 0, 900, 900), SizePrior(TABLE_ID, 1.0, 1.0, 0.7), 0.0)
    small = (box("cup", 0, 0, 10, 10), SizePrior("cup", 0.1, 0.1, 0.1), 0.0)
    assert select_anchor([table, small]).instance_id == "cup"
    with pytest.raises(TsaError):
        select_anchor([table])


def test_select_anchor_invariant_to_order_and_area_scaling(rng):
    cands = random_candidates(rng, 6)
    expected = select_anchor(cands).instance_id
    for perm in itertools.islice(itertools.permutations(cands), 0, 720, 37):
        assert select_anchor(list(perm)).instance_id == expected
    scaled = [(box(b.instance_id, 0, 0, b.width * 0.5, b.height * 0.5), p, y) for b, p, y in cands]
    assert select_anchor(scaled).instance_id == expected


def test_select_anchor_tie_breaks_by_area_then_id():
    p = SizePrior("x", 0.1, 0.1, 0.1)
    a = (box("b", 0, 0, 10, 10), p, 0.0)
    b = (box("a", 0, 0, 10, 10), p, 0.0)
    assert select_anchor([a, b]).instance_id == "a"
    # with tau equal to its ratio error the 200 px^2 box scores exactly 100, tying the square
    wide = (box("z", 0, 0, 20, 10), p, 0.0)
    tau = ratio_error(p, 0.0, wide[0])
    assert rma_score(200.0, tau, tau) == 100.0
    assert select_anchor([a, wide], tau=tau).instance_id == "z"


def test_solve_alpha_examples():
    prior = SizePrior("a", 0.30, 0.20, 0.1)
    assert solve_alpha(box("a", 0, 0, 300, 200), prior, 0.0) == pytest.approx(0.001, abs=1e-15)
    assert solve_alpha(box("a", 0, 0, 300, 100), prior, 0.0) == pytest.approx(0.0015, abs=1e-15)


def test_solve_alpha_homogeneous_in_box_size():
    prior = SizePrior("a", 0.25, 0.12, 0.1)
    base = solve_alpha(box("a", 0, 0, 200, 150), prior, 30.0)
    assert solve_alpha(box("a", 0, 0, 600, 450), prior, 30.0) == pytest.approx(base / 3.0, rel=1e-12)


TABLE_BOX = box(TABLE_ID, 212, 312, 600, 400)


def place(boxes, priors, yaws, alpha=0.001):
    return place_and_scale(boxes, priors, yaws, alpha, TABLE_BOX)


def test_place_centered_box_is_origin():
    b = box("a", 512 - 50, 512 - 25, 100, 50)
    out = place({"a": b}, {"a": SizePrior("a", 0.1, 0.05, 0.1)}, {"a": 0.0})
    assert out["a"].translation[:2] == pytest.approx([0.0, 0.0], abs=1e-12)


def test_place_left_of_table_is_positive_x():
    b = box("a", 512 - 100 - 50, 512 - 25, 100, 50)
    out = place({"a": b}, {"a": SizePrior("a", 0.1, 0.05, 0.1)}, {"a": 0.0})
    assert out["a"].translation[0] == pytest.approx(0.1, abs=1e-12)
    assert out["a"].translation[1] == pytest.approx(0.0, abs=1e-12)


def test_place_below_table_center_is_front():
    b = box("a", 512 - 50, 512 + 200 - 25, 100, 50)
    out = place({"a": b}, {"a": SizePrior("a", 0.1, 0.05, 0.1)}, {"a": 0.0})
    assert out["a"].translation[1] == pytest.approx(0.2, abs=1e-12)


def test_place_scale_yaw_zero():
    out = place({"a": box("a", 100, 100, 300, 200)}, {"a": SizePrior("a", 0.3, 0.2, 0.15)}, {"a": 0.0})
    assert out["a"].scale == pytest.approx([0.30, 0.20, 0.15], abs=1e-12)
    assert not out["a"].rescaled


def test_place_rescales_large_deviation():
    # prior says 0.1 x 0.1 but the box reads 0.3 x 0.3: factor 3 > 1.5
    out = place({"a": box("a", 100, 100, 300, 300)}, {"a": SizePrior("a", 0.1, 0.1, 0.2)}, {"a": 0.0})
    assert out["a"].rescaled
    assert out["a"].scale == pytest.approx([0.3, 0.3, 0.6], rel=1e-12)


def test_place_keeps_prior_height_for_small_deviation():
    out = place({"a": box("a", 100, 100, 120, 120)}, {"a": SizePrior("a", 0.1, 0.1, 0.2)}, {"a": 0.0})
    assert not out["a"].rescaled
    assert out["a"].scale[2] == pytest.approx(0.2)


def test_unfit_inverts_footprint_away_from_45():
    w, d, fallback = unfit_footprint((0.3 * math.cos(math.radians(20)) + 0.1 * math.sin(math.radians(20)),
                                      0.3 * math.sin(math.radians(20)) + 0.1 * math.cos(math.radians(20))),
                                     20.0, (0.5, 0.5))
    assert not fallback
    assert (w, d) == pytest.approx((0.3, 0.1), rel=1e-12)


def test_unfit_falls_back_to_prior_aspect_near_45():
    w, d, fallback = unfit_footprint((0.2, 0.2), 45.0, (0.3, 0.1))
    assert fallback
    assert w / d == pytest.approx(3.0)


def test_stack_no_stacking_all_on_table():
    meshes = {"a": box_mesh((0.1, 0.1, 0.1), (0, 0, 0.05)), "b": box_mesh((0.2, 0.1, 0.3), (0, 0, 0.15))}
    z = stack_heights(StackingGraph(("a", "b")), meshes, 0.75)
    assert z == {"a": pytest.approx(0.75), "b": pytest.approx(0.75)}


def test_stack_pen_on_book():
    meshes = {"book": box_mesh((0.2, 0.3, 0.03), (0, 0, 0.015)), "pen": box_mesh((0.14, 0.01, 0.01), (0, 0, 0.005))}
    z = stack_heights(StackingGraph(("book", "pen"), (("pen", "book"),)), meshes, 0.75)
    assert z["pen"] == pytest.approx(z["book"] + 0.03, abs=1e-12)


def test_stack_three_deep_strictly_increasing():
    meshes = {k: box_mesh((0.1, 0.1, 0.02), (0, 0, 0.01)) for k in "abc"}
    z = stack_heights(StackingGraph(("a", "b", "c"), (("b", "a"), ("c", "b"))), meshes, 0.0)
    assert z["a"] < z["b"] < z["c"]


def test_stack_cycle_is_named():
    with pytest.raises(TsaError, match="cycle"):
        StackingGraph(("a", "b"), (("a", "b"), ("b", "a")))


def test_stacking_graph_rejects_unknown_and_double_support():
    with pytest.raises(TsaError):
        StackingGraph(("a",), (("a", "ghost"),))
    with pytest.raises(TsaError):
        StackingGraph(("a", "b", "c"), (("a", "b"), ("a", "c")))


def test_run_tsa_needs_table_and_priors():
    b = {"a": box("a", 0, 0, 10, 10)}
    with pytest.raises(TsaError):
        run_tsa(b, {"a": SizePrior("a", 0.1, 0.1, 0.1)}, {})
    b[TABLE_ID] = TABLE_BOX
    with pytest.raises(TsaError):
        run_tsa(b, {"a": SizePrior("a", 0.1, 0.1, 0.1)}, {})


def test_round_trip_on_synthetic_scenes(rng):
    for _ in range(3):
        scene = make_scene(rng)
        res = run_tsa(scene.boxes, scene.priors, scene.yaws, TsaConfig())
        assert res.anchor_id != TABLE_ID
        assert res.alpha == pytest.approx(scene.alpha, rel=0.01)
        for iid, p in res.placements.items():
            assert np.abs(p.translation[:2] - scene.translations[iid][:2]).max() < 0.01
            assert p.scale[:2] == pytest.approx(scene.sizes[iid][:2], rel=0.02)
        meshes = placed_meshes(res.placements)
        z = stack_heights(scene.graph, {k: v for k, v in meshes.items() if k != TABLE_ID}, TABLE_HEIGHT)
        for above, below in scene.edges:
            gap = (aabb(meshes[above]).min[2] + z[above]) - (aabb(meshes[below]).max[2] + z[below])
            assert abs(gap) <= 1e-6


def test_result_report_is_in_centimeters():
    scene = make_scene(np.random.default_rng(5), n_free=2, chain=0)
    res = run_tsa(scene.boxes, scene.priors, scene.yaws)
    doc = res.to_dict()
    p = res.placements["obj_0"]
    assert doc["instances"]["obj_0"]["scale_cm"] == pytest.approx((p.scale * 100).tolist())
