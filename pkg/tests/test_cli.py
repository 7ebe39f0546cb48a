import json
import os
import subprocess
import sys

import numpy as np
import pytest

from viewstitch.cli import main
from viewstitch.config import TargetSpec, load_rig_config, rig_config_from_cameras, serialize_rig_config
from viewstitch.datagen import read_manifest
from viewstitch.fileio import read_image, write_point_cloud
from viewstitch.synth import Environment, default_rig


@pytest.fixture(scope="module")
def small_yaml(tmp_path_factory):
    rig = rig_config_from_cameras(
        default_rig(320, 240),
        targets=(TargetSpec("mid", 27.5, anchor="front"),),
        environment=Environment(radius=500.0),
    )
    path = tmp_path_factory.mktemp("rig") / "rig.yaml"
    path.write_text(serialize_rig_config(rig))
    return str(path)


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory, small_yaml):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--rig", small_yaml, "--out", str(out), "--seed", "3"]) == 0
    return out


def _error_line(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error: ")
    return err[0]


def test_synth_outputs(synth_dir):
    names = sorted(p.name for p in (synth_dir / "images").iterdir())
    assert names == sorted(f"{c.name}.png" for c in default_rig())
    assert (synth_dir / "gt" / "mid.png").exists() and (synth_dir / "points.npy").exists()
    manifest = json.loads((synth_dir / "synth_manifest.json").read_text())
    assert manifest["seed"] == 3 and manifest["details"]["points"] == 320 * 240


def test_stitch_then_eval(tmp_path, small_yaml, synth_dir):
    out = tmp_path / "st"
    frames = str(synth_dir / "images")
    assert main(["stitch", "--rig", small_yaml, "--frames", frames, "--target", "mid", "--out", str(out)]) == 0
    manifest = json.loads((out / "mid_manifest.json").read_text())
    per_source = manifest["details"]["per_source"]
    assert {s["source_id"] for s in per_source} == {c.name for c in default_rig()}
    assert all("provenance" in s and "alpha" in s for s in per_source)
    assert read_image(out / "mid.png").shape == (240, 320, 3)
    report = tmp_path / "report.json"
    argv = ["eval", "--image", str(out / "mid.png"), "--cloud", str(synth_dir / "points.npy"),
            "--rig", small_yaml, "--target", "mid", "--report", str(report)]
    assert main(argv) == 0
    metrics = json.loads(report.read_text())["metrics"]
    assert set(metrics) >= {"psnr", "ssim", "mae", "rmse", "coverage", "ssim_protocol"}
    assert metrics["psnr"] > 15 and metrics["rmse"] >= metrics["mae"]
    assert (tmp_path / "report.json.manifest.json").exists()


def test_stitch_is_reproducible(tmp_path, small_yaml, synth_dir):
    argv = ["stitch", "--rig", small_yaml, "--frames", str(synth_dir / "images"), "--target", "mid",
            "--out", str(tmp_path), "--seed", "5", "--debug"]
    blobs = []
    for _ in range(2):
        assert main(argv) == 0
        blobs.append((tmp_path / "mid_manifest.json").read_bytes())
    assert blobs[0] == blobs[1]
    assert (tmp_path / "mid_clusters.json").exists()


def test_geometric_only_flag(tmp_path, small_yaml, synth_dir):
    argv = ["stitch", "--rig", small_yaml, "--frames", str(synth_dir / "images"), "--target", "mid",
            "--out", str(tmp_path), "--geometric-only"]
    assert main(argv) == 0
    details = json.loads((tmp_path / "mid_manifest.json").read_text())["details"]
    assert all(s["provenance"] == "geometric" for s in details["per_source"] if s["valid"])


def test_missing_image_is_io_error(tmp_path, small_yaml, capsys):
    argv = ["stitch", "--rig", small_yaml, "--frames", str(tmp_path), "--target", "mid", "--out", str(tmp_path)]
    assert main(argv) == 1
    assert _error_line(capsys).startswith("error: io_error:")


def test_empty_cloud_is_no_reference(tmp_path, small_yaml, synth_dir, capsys):
    cloud = tmp_path / "empty.npy"
    write_point_cloud(cloud, np.zeros((0, 3)))
    argv = ["eval", "--image", str(synth_dir / "gt" / "mid.png"), "--cloud", str(cloud), "--rig", small_yaml,
            "--target", "mid", "--report", str(tmp_path / "r.json")]
    assert main(argv) == 1
    assert _error_line(capsys).startswith("error: no_reference:")


def test_uncoloured_cloud_needs_frames(tmp_path, small_yaml, synth_dir, capsys):
    cloud = tmp_path / "xyz.csv"
    write_point_cloud(cloud, np.load(synth_dir / "points.npy")[:500, :3])
    base = ["eval", "--image", str(synth_dir / "gt" / "mid.png"), "--cloud", str(cloud), "--rig", small_yaml,
            "--target", "mid", "--report", str(tmp_path / "r.json"), "--min-coverage", "0.01"]
    assert main(base) == 1
    assert _error_line(capsys).startswith("error: config_error:")
    assert main(base + ["--frames", str(synth_dir / "images")]) == 0


def test_unknown_target_is_config_error(tmp_path, small_yaml, synth_dir, capsys):
    argv = ["stitch", "--rig", small_yaml, "--frames", str(synth_dir / "images"), "--target", "zz",
            "--out", str(tmp_path)]
    assert main(argv) == 1
    assert "config_error" in _error_line(capsys)


def test_datagen(tmp_path, small_yaml, synth_dir):
    argv = ["datagen", "--rig", small_yaml, "--frames", str(synth_dir / "images"), "--out", str(tmp_path),
            "--k", "1", "--seed", "2"]
    assert main(argv) == 0
    header, records = read_manifest(tmp_path / "manifest.jsonl")
    assert len(records) == 6 and header["sampling"]["seed"] == 2
    assert json.loads((tmp_path / "datagen_manifest.json").read_text())["details"]["records"] == 6


def test_attn_check_homography(capsys):
    assert main(["attn-check", "--homography", "1,0,1,0,1,0,0,0,1", "--grid", "4x4", "--sigma", "0.5"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["target_map"]["uniform_rows"] == 4
    assert abs(report["target_map"]["row_sum_min"] - 1) < 1e-9
    assert report["target_map"]["argmax"][:3] == [1, 2, 3]
    assert report["pe_at_zero"][:16] == [0.0] * 16 and report["pe_at_zero"][16:] == [1.0] * 16


def test_attn_check_rig(tmp_path, small_yaml):
    out = tmp_path / "attn.json"
    argv = ["attn-check", "--rig", small_yaml, "--source", "front", "--target", "mid", "--out", str(out)]
    assert main(argv) == 0
    report = json.loads(out.read_text())
    assert report["levels"] == 3 and report["attention"]["row_sum_max_error"] < 1e-9


def test_attn_check_bad_homography(capsys):
    assert main(["attn-check", "--homography", "1,2,3"]) == 1
    assert _error_line(capsys).startswith("error: config_error:")


def test_config_echo(small_yaml, capsys):
    assert main(["config", "--rig", small_yaml]) == 0
    echoed = capsys.readouterr().out
    assert echoed == serialize_rig_config(load_rig_config(small_yaml))


def _run(args, env=None):
    return subprocess.run([sys.executable, "-m", "viewstitch.cli", *args], capture_output=True, text=True,
                          env={**os.environ, **(env or {})})


def test_usage_errors_exit_2():
    assert _run(["bogus"]).returncode == 2
    assert _run([]).returncode == 2
    assert _run(["stitch"]).returncode == 2


def test_bad_thread_count(small_yaml):
    res = _run(["config", "--rig", small_yaml], {"VIEWSTITCH_THREADS": "0"})
    assert res.returncode == 1 and res.stderr.startswith("error: config_error:")
    assert _run(["config", "--rig", small_yaml], {"VIEWSTITCH_THREADS": "1"}).returncode == 0
