import json
import os
import subprocess
import sys

import numpy as np
import pytest

from oracles import blob_image
from segfusion.cli import main
from segfusion.fileio import write_csv_raster, write_label_map


def write_blob_image(directory, seed=0):
    img, truth = blob_image(seed)
    names = []
    for b in range(img.n_bands):
        name = f"band{b}.csv"
        write_csv_raster(directory / name, img.bands[b].reshape(img.height, img.width))
        names.append(name)
    (directory / "image.json").write_text(json.dumps({"bands": names}))
    write_label_map(directory / "truth.pgm", truth)
    return directory / "image.json", directory / "truth.pgm"


@pytest.fixture
def workspace(tmp_path):
    image, truth = write_blob_image(tmp_path)
    seg_dir = tmp_path / "seg"
    assert main(["segment", "--image", str(image), "--k", "3",
                 "--out-dir", str(seg_dir)]) == 0
    return tmp_path, image, truth, seg_dir / "ensemble.json"


def read_json(path):
    return json.loads(path.read_text())


def test_segment_outputs(workspace):
    tmp, _, _, ensemble = workspace
    names = read_json(ensemble)
    assert len(names) == 5
    manifest = read_json(ensemble.parent / "manifest.json")
    assert manifest["command"] == "segment"
    assert manifest["outputs"][-1] == "ensemble.json"
    assert "total_seconds" in read_json(ensemble.parent / "timing.json")


def test_fuse_and_replay_are_byte_identical(workspace, capsys):
    tmp, _, _, ensemble = workspace
    first, second = tmp / "f1", tmp / "f2"
    args = ["fuse", "--ensemble", str(ensemble), "--t-max", "50", "--beta", "0.5",
            "--seed", "4", "--palette"]
    assert main(args + ["--out-dir", str(first)]) == 0
    assert main(["fuse", "--manifest", str(first / "manifest.json"),
                 "--out-dir", str(second)]) == 0
    for name in read_json(first / "manifest.json")["outputs"]:
        assert (first / name).read_bytes() == (second / name).read_bytes()
    report = read_json(first / "report.json")
    assert report["config"]["seed"] == 4
    assert "wall_time" not in report
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert "final_objective" in summary


def test_fuse_with_learned_qd(workspace):
    tmp, image, _, _ = workspace
    # k=5 splits the noise differently per band, so the members differ
    assert main(["segment", "--image", str(image), "--k", "5",
                 "--out-dir", str(tmp / "s5")]) == 0
    ensemble = tmp / "s5" / "ensemble.json"
    assert main(["fit-qd", "--ensemble", str(ensemble), "--out-dir", str(tmp / "q")]) == 0
    model = read_json(tmp / "q" / "distance_model.json")
    assert model["kind"] == "qd" and model["qd_max"] > model["qd_min"]
    assert main(["fuse", "--ensemble", str(ensemble), "--distance", "qd",
                 "--qd-model", str(tmp / "q" / "distance_model.json"),
                 "--t-max", "20", "--out-dir", str(tmp / "fq")]) == 0
    assert read_json(tmp / "fq" / "report.json")["config"]["distance"]["kind"] == "qd"


def test_evaluate(workspace):
    tmp, _, truth, _ = workspace
    assert main(["evaluate", "--consensus", str(truth), "--ground-truth", str(truth),
                 "--out-dir", str(tmp / "e")]) == 0
    assert read_json(tmp / "e" / "metrics.json") == {"ari": 1.0, "ri": 1.0}


def test_estimate_c(workspace):
    tmp, image, _, _ = workspace
    assert main(["estimate-c", "--image", str(image),
                 "--c-grid", "2", "3", "4", "--out-dir", str(tmp / "c")]) == 0
    assert read_json(tmp / "c" / "grid.json")["chosen"] == 3
    assert (tmp / "c" / "grid.csv").read_text().startswith("candidate,score,valid")


def test_estimate_beta(workspace):
    tmp, _, _, ensemble = workspace
    assert main(["estimate-beta", "--ensemble", str(ensemble), "--beta-grid", "0.2",
                 "0.8", "--t-max", "20", "--out-dir", str(tmp / "b")]) == 0
    assert read_json(tmp / "b" / "grid.json")["chosen"] in (0.2, 0.8)


def test_convert(workspace):
    tmp, _, truth, _ = workspace
    assert main(["convert", "--input", str(truth), "--output", "truth.csv",
                 "--out-dir", str(tmp / "cv")]) == 0
    text = (tmp / "cv" / "truth.csv").read_text().splitlines()
    assert text[:2] == ["width=30", "height=30"]


def test_out_dir_from_environment(workspace, monkeypatch):
    tmp, _, truth, _ = workspace
    monkeypatch.setenv("SEGFUSION_OUT_DIR", str(tmp / "env"))
    assert main(["convert", "--input", str(truth), "--output", "t.pgm"]) == 0
    assert (tmp / "env" / "t.pgm").exists()


@pytest.mark.parametrize("argv, status", [
    ([], 2),
    (["fuse"], 2),
    (["fuse", "--beta", "x"], 2),
    (["evaluate", "--consensus", "nope.pgm", "--ground-truth", "nope.pgm"], 1),
])
def test_errors_are_json(tmp_path, capsys, argv, status):
    assert main(argv + ["--out-dir", str(tmp_path)] if argv else argv) == status
    err = json.loads(capsys.readouterr().err.strip())
    assert "error" in err and "message" in err


def test_invalid_beta_reported(workspace, capsys):
    tmp, _, _, ensemble = workspace
    assert main(["fuse", "--ensemble", str(ensemble), "--beta", "1.5",
                 "--out-dir", str(tmp / "x")]) == 1
    assert json.loads(capsys.readouterr().err)["error"] == "ValueError"


def test_joint_mode_cannot_estimate_c(workspace, capsys):
    tmp, image, _, _ = workspace
    assert main(["estimate-c", "--image", str(image), "--mode", "joint",
                 "--c-grid", "2", "3", "--out-dir", str(tmp / "j")]) == 1
    assert "at least" in json.loads(capsys.readouterr().err)["message"]


def test_degenerate_evaluation_is_reported(tmp_path):
    one = tmp_path / "one.csv"
    one.write_text("width=3\nheight=1\n0,0,0\n")
    assert main(["evaluate", "--consensus", str(one), "--ground-truth", str(one),
                 "--out-dir", str(tmp_path / "e")]) == 0
    metrics = read_json(tmp_path / "e" / "metrics.json")
    assert metrics["ari"] is None and metrics["ri"] == 1.0


def test_help_lists_subcommands():
    out = subprocess.run([sys.executable, "-m", "segfusion", "--help"],
                         capture_output=True, text=True, check=True).stdout
    for name in ("segment", "fuse", "fit-qd", "estimate-c", "estimate-beta",
                 "evaluate", "convert", "protocol"):
        assert name in out


def test_protocol_small(tmp_path):
    image, truth = write_blob_image(tmp_path, seed=1)
    assert main(["protocol", "--image", str(image), "--ground-truth", str(truth),
                 "--train-rows", "0", "15", "--c-grid", "2", "3", "--beta-grid",
                 "0.5", "--t-max", "10",
                 "--out-dir", str(tmp_path / "p")]) == 0
    doc = read_json(tmp_path / "p" / "protocol.json")
    assert sorted(doc["rows"]) == ["average_base", "dl", "qd", "sdd"]
    assert doc["c_hat"] in (2, 3)
    # identical per-band training members leave no QD range to learn
    assert doc["notes"]
