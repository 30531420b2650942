import hashlib
import json
import shutil

import pytest

from tablescene import cli
from tablescene.geometry import box_mesh, cylinder_mesh
from tablescene.meshio import save_mesh


def run(*argv):
    return cli.run([str(a) for a in argv])


@pytest.fixture(scope="session")
def pipeline_run(tmp_path_factory, demo_bundle_path):
    out = tmp_path_factory.mktemp("pipeline") / "run"
    code = run("pipeline", "--bundle", demo_bundle_path, "--out", out)
    return code, out


@pytest.fixture
def run_copy(pipeline_run, tmp_path):
    dst = tmp_path / "run"
    shutil.copytree(pipeline_run[1], dst)
    return dst


def test_pipeline_exits_zero_with_full_layout(pipeline_run):
    code, out = pipeline_run
    assert code == 0
    layout = json.loads((out / "scene" / "scene.json").read_text())
    assert layout["table"]["id"] == "table"
    assert len(layout["instances"]) == 9
    assert json.loads((out / "collisions.json").read_text())["pairs"] == []
    assert (out / "scene" / "scene.glb").stat().st_size > 0


def test_manifest_lists_output_digests(pipeline_run):
    out = pipeline_run[1]
    manifest = json.loads((out / "manifest.json").read_text())
    assert [manifest["stages"][s]["status"] for s in ("canonicalize", "dro", "tsa", "assemble")] == ["ok"] * 4
    for stage in manifest["stages"].values():
        for rel, digest in stage["outputs"].items():
            assert hashlib.sha256((out / rel).read_bytes()).hexdigest() == digest
    assert manifest["inputs"]["mode"] == "replay"
    timings = json.loads((out / "timings.json").read_text())
    assert set(timings["dro"]) == {p.stem for p in (out / "dro").glob("*.json")}


def test_stage_rerun_reproduces_bytes(pipeline_run, run_copy, demo_bundle_path):
    out = pipeline_run[1]
    assert run("tsa", "--bundle", demo_bundle_path, "--out", run_copy) == 0
    assert run("assemble", "--bundle", demo_bundle_path, "--out", run_copy) == 0
    for rel in ("tsa.json", "scene/scene.json", "scene/scene.glb", "collisions.json"):
        assert (run_copy / rel).read_bytes() == (out / rel).read_bytes(), rel


def test_dro_single_instance_is_deterministic(pipeline_run, run_copy, demo_bundle_path):
    target = run_copy / "dro" / "toy_car_1.json"
    assert run("dro", "--instance", "toy_car_1", "--bundle", demo_bundle_path, "--out", run_copy) == 0
    first = target.read_bytes()
    assert run("dro", "--instance", "toy_car_1", "--bundle", demo_bundle_path, "--out", run_copy) == 0
    assert target.read_bytes() == first
    assert first == (pipeline_run[1] / "dro" / "toy_car_1.json").read_bytes()
    manifest = json.loads((run_copy / "manifest.json").read_text())
    assert manifest["stages"]["dro:toy_car_1"]["status"] == "ok"


def test_debug_renders(run_copy, demo_bundle_path):
    assert run("dro", "--instance", "phone_1", "--debug-renders", "--bundle", demo_bundle_path,
               "--out", run_copy) == 0
    assert (run_copy / "debug" / "phone_1_dro.png").is_file()
    trace = json.loads((run_copy / "debug" / "phone_1_candidates.json").read_text())
    assert len(trace) == 8


def test_evaluate_sweep_reports_160_views(run_copy, demo_bundle_path, tmp_path):
    cfg = tmp_path / "small.yaml"
    cfg.write_text("sweep:\n  image_size: 48\n")
    assert run("evaluate", "--sweep", "--config", cfg, "--bundle", demo_bundle_path, "--out", run_copy) == 0
    report = json.loads((run_copy / "evaluate" / "sweep.json").read_text())
    assert report["view_count"] == 160
    assert len(report["views"]) == 160
    metrics = json.loads((run_copy / "evaluate" / "metrics.json").read_text())
    assert (metrics["col_o_percent"], metrics["col_s_percent"]) == (0.0, 0.0)
    assert (run_copy / "evaluate" / "contact_sheet.png").is_file()


def test_evaluate_without_sweep(run_copy, demo_bundle_path):
    assert run("evaluate", "--bundle", demo_bundle_path, "--out", run_copy) == 0
    assert (run_copy / "evaluate" / "metrics.json").is_file()
    assert not (run_copy / "evaluate" / "sweep.json").exists()


def test_unknown_metric_is_a_validation_error(run_copy, demo_bundle_path):
    assert run("evaluate", "--sweep", "--metric", "lpips", "--bundle", demo_bundle_path, "--out", run_copy) == 2


def test_bad_config_exits_2(tmp_path, demo_bundle_path):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("dro:\n  no_such_key: 1\n")
    assert run("canonicalize", "--config", cfg, "--bundle", demo_bundle_path, "--out", tmp_path / "r") == 2


def test_missing_bundle_exits_2(tmp_path):
    assert run("canonicalize", "--bundle", tmp_path / "nope", "--out", tmp_path / "r") == 2


def test_replay_miss_exits_3_with_full_list(tmp_path, demo_bundle_path, capsys):
    empty = tmp_path / "fixtures"
    empty.mkdir()
    code = run("pipeline", "--fixtures", empty, "--bundle", demo_bundle_path, "--out", tmp_path / "r")
    assert code == 3
    err = capsys.readouterr().err
    # camera init + stacking + (up axis + size prior) for the table and 9 objects
    assert "22 fixture(s) missing" in err
    assert not (tmp_path / "r" / "canonical").exists()


def test_stage_without_predecessor_exits_4(tmp_path, demo_bundle_path, capsys):
    out = tmp_path / "r"
    assert run("assemble", "--bundle", demo_bundle_path, "--out", out) == 4
    assert "canonicalize" in capsys.readouterr().err
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["stages"]["assemble"]["status"] == "failed"


def test_dro_unknown_instance_exits_2(run_copy, demo_bundle_path):
    assert run("dro", "--instance", "ghost", "--bundle", demo_bundle_path, "--out", run_copy) == 2
    assert run("dro", "--instance", "table", "--bundle", demo_bundle_path, "--out", run_copy) == 2


def test_swap_keeps_pose(pipeline_run, tmp_path):
    layout = pipeline_run[1] / "scene" / "scene.json"
    mesh = tmp_path / "cup.obj"
    save_mesh(cylinder_mesh(0.4, 1.0, 20), mesh)
    out = tmp_path / "edited"
    assert run("swap", "--layout", layout, "--instance", "mug_1", "--mesh", mesh, "--label", "cup",
               "--out", out, "--name", "edited") == 0
    before = json.loads(layout.read_text())
    after = json.loads((out / "edited.json").read_text())
    old = {r["id"]: r for r in before["instances"]}
    new = {r["id"]: r for r in after["instances"]}
    assert new["mug_1"]["label"] == "cup"
    for key in ("yaw_deg", "translation_cm", "scale_cm", "support"):
        assert new["mug_1"][key] == old["mug_1"][key]
    for iid in old:
        if iid != "mug_1":
            assert new[iid] == old[iid]
    assert (out / "edited.glb").is_file()
    assert json.loads((out / "edited_collisions.json").read_text())["total_pairs"] == 45


def test_swap_unknown_instance_exits_2(pipeline_run, tmp_path):
    mesh = tmp_path / "b.obj"
    save_mesh(box_mesh(), mesh)
    assert run("swap", "--layout", pipeline_run[1] / "scene" / "scene.json", "--instance", "ghost",
               "--mesh", mesh, "--out", tmp_path / "o") == 2
