from __future__ import annotations

import json
import subprocess
import sys

import numpy as np
import pytest

from panodar.cli import main
from panodar.io import read_binary_map, read_tensor, write_labels, write_masks, write_tensor
from panodar.fusion import InstanceMaskSet

NAMES = [f"c{k}" for k in range(6)]
SMALL_SPEC = {"width": 96, "height": 24, "classes": 6, "region_count": 6}


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return path


@pytest.fixture
def small_config(tmp_path):
    return write_json(tmp_path / "cfg.json", {
        "window": {"width": 32, "height": 24, "stride": 16}, "classes": NAMES,
    })


def make_scene(tmp_path, name="scene", **spec):
    spec_path = write_json(tmp_path / f"{name}.json", {**SMALL_SPEC, **spec})
    assert main(["synth", "--spec", str(spec_path), "--out", str(tmp_path / name)]) == 0
    return tmp_path / name


def test_plan_windows(capsys):
    assert main(["plan-windows", "--width", "2048", "--height", "400", "--win-w", "512", "--stride", "256"]) == 0
    plan = json.loads(capsys.readouterr().out)
    assert len(plan["windows"]) == 7 and len(plan["overlaps"]) == 6
    assert main(["plan-windows", "--width", "2048", "--height", "400", "--win-w", "512", "--non-overlapping"]) == 0
    assert len(json.loads(capsys.readouterr().out)["windows"]) == 4


def test_plan_windows_errors(capsys):
    assert main(["plan-windows", "--width", "2048", "--height", "400", "--win-w", "4096", "--stride", "256"]) == 1
    assert "error" in capsys.readouterr().err
    assert main(["plan-windows", "--width", "2048", "--height", "400", "--win-w", "512"]) == 1
    with pytest.raises(SystemExit) as info:
        main(["plan-windows", "--width", "abc"])
    assert info.value.code == 1


def test_fuse_clean_scene_reproduces_gt(tmp_path, small_config):
    scene = make_scene(tmp_path)
    out = tmp_path / "fused"
    args = ["fuse", "--ta-logits", str(scene / "ta_logits.npy"), "--masks", str(scene / "masks.json"),
            "--config", str(small_config), "--out", str(out)]
    assert main(args) == 0
    np.testing.assert_array_equal(read_tensor(out / "ensemble_labels.npy"), read_tensor(scene / "gt_labels.npy"))
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    assert main(args) == 0
    assert first == {p.name: p.read_bytes() for p in out.iterdir()}
    report = json.loads((out / "report.json").read_text())
    assert {m["rule"] for m in report["masks"]} == {"lcr"}


def test_fuse_shape_mismatch(tmp_path):
    write_tensor(np.zeros((3, 4, 5), dtype=np.float32), tmp_path / "l.npy")
    write_masks(InstanceMaskSet(np.ones((1, 5, 5), dtype=bool)), tmp_path / "m.json")
    assert main(["fuse", "--ta-logits", str(tmp_path / "l.npy"), "--masks", str(tmp_path / "m.json"),
                 "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()


def _refine_inputs(tmp_path, gap_i, gap_j):
    h, w = 8, 6
    b_i = np.zeros((h, w), dtype=np.uint8)
    b_i[2, 3] = 1
    sam = np.zeros((h, w), dtype=np.uint8)
    sam[5, 3] = 1
    write_labels(b_i, tmp_path / "bi.npy")
    write_labels(np.zeros((h, w), dtype=np.uint8), tmp_path / "bj.npy")
    write_labels(sam, tmp_path / "sam.npy")
    for name, gap in (("li", gap_i), ("lj", gap_j)):
        g = np.zeros((2, h, w), dtype=np.float32)
        g[0] = 12.0
        hi = (1 + gap) / 2
        g[0, 5, 3], g[1, 5, 3] = np.log(hi), np.log(1 - hi)
        write_tensor(g, tmp_path / f"{name}.npy")
    return ["refine-boundary", "--ta-i", str(tmp_path / "bi.npy"), "--ta-j", str(tmp_path / "bj.npy"),
            "--sam", str(tmp_path / "sam.npy"), "--logits-i", str(tmp_path / "li.npy"),
            "--logits-j", str(tmp_path / "lj.npy"), "--out", str(tmp_path / "ref")]


def test_refine_case_b(tmp_path, capsys):
    assert main(_refine_inputs(tmp_path, 0.1, 0.9)) == 0
    ref = read_binary_map(tmp_path / "ref" / "b_ref.npy")
    assert ref[5, 3] and not ref[2, 3]
    report = json.loads(capsys.readouterr().out)
    assert report["relocated"] == 1 and report["alpha"] == 0.3


def test_refine_alpha_zero_and_identity(tmp_path, capsys):
    args = _refine_inputs(tmp_path, 0.1, 0.9)
    assert main(args + ["--alpha", "0"]) == 0
    np.testing.assert_array_equal(read_binary_map(tmp_path / "ref" / "b_ref.npy"),
                                  read_binary_map(tmp_path / "bi.npy"))
    capsys.readouterr()
    same = args.copy()
    same[same.index("--ta-j") + 1] = same[same.index("--ta-i") + 1]
    same[same.index("--sam") + 1] = same[same.index("--ta-i") + 1]
    assert main(same) == 0
    assert json.loads(capsys.readouterr().out)["l_bd_t_ta"] == 0.0
    assert main(args + ["--alpha", "2"]) == 1


def test_refine_empty_reference_is_compute_error(tmp_path):
    args = _refine_inputs(tmp_path, 0.1, 0.9)
    write_labels(np.zeros((8, 6), dtype=np.uint8), tmp_path / "bi.npy")
    assert main(args) == 3


def test_evaluate(tmp_path, capsys):
    write_labels(np.array([[0, 0], [1, 1]]), tmp_path / "gt.npy")
    write_labels(np.array([[0, 1], [1, 1]]), tmp_path / "pred.npy")
    classes = write_json(tmp_path / "classes.json", ["a", "b"])
    assert main(["evaluate", "--gt", str(tmp_path / "gt.npy"), "--pred", str(tmp_path / "pred.npy"),
                 "--classes", str(classes)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["miou"] == pytest.approx(0.5833, abs=1e-4) and report["pixel_count"] == 4
    assert [c["name"] for c in report["per_class"]] == ["a", "b"]
    assert main(["evaluate", "--gt", str(tmp_path / "gt.npy"), "--pred", str(tmp_path / "gt.npy"),
                 "--classes", str(classes)]) == 0
    assert json.loads(capsys.readouterr().out)["miou"] == 1.0
    write_labels(np.zeros((3, 2), dtype=np.uint8), tmp_path / "bad.npy")
    assert main(["evaluate", "--gt", str(tmp_path / "gt.npy"), "--pred", str(tmp_path / "bad.npy"),
                 "--classes", str(classes)]) == 2


def test_synth_deterministic_and_infeasible(tmp_path):
    a = make_scene(tmp_path, "a", seed=3, noise_rate=0.2)
    b = make_scene(tmp_path, "b", seed=3, noise_rate=0.2)
    for p in a.iterdir():
        assert p.read_bytes() == (b / p.name).read_bytes()
    bad = write_json(tmp_path / "bad.json", {"width": 4, "height": 4, "region_count": 50})
    assert main(["synth", "--spec", str(bad), "--out", str(tmp_path / "c")]) == 1


def _pipeline(tmp_path, scene, config, out, *extra):
    return main(["pipeline", "--scene", str(scene), "--config", str(config), "--out", str(out), *extra])


def test_pipeline_clean_and_noisy(tmp_path, small_config):
    clean = make_scene(tmp_path, "clean")
    assert _pipeline(tmp_path, clean, small_config, tmp_path / "o1") == 0
    manifest = json.loads((tmp_path / "o1" / "manifest.json").read_text())
    assert manifest["metrics"]["miou_ensemble"] == 1.0
    assert all(v == 0 for k, v in manifest["losses"].items() if k != "lambda")
    assert set(manifest["inputs"]) >= {"gt_labels.npy", "ta_logits.npy", "masks.json", "config"}

    noisy = make_scene(tmp_path, "noisy", seed=3, noise_rate=0.3)
    assert _pipeline(tmp_path, noisy, small_config, tmp_path / "o2") == 0
    m = json.loads((tmp_path / "o2" / "metrics.json").read_text())
    assert m["miou_ensemble"] > m["miou_ta"]


def test_pipeline_manifest_reproducible(tmp_path, small_config):
    scene = make_scene(tmp_path, seed=7, noise_rate=0.2)
    assert _pipeline(tmp_path, scene, small_config, tmp_path / "a") == 0
    assert _pipeline(tmp_path, scene, small_config, tmp_path / "b") == 0
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    ma.pop("created"), mb.pop("created")
    assert ma == mb


def test_pipeline_stage_error(tmp_path, capsys):
    scene = make_scene(tmp_path)
    assert main(["pipeline", "--scene", str(scene), "--out", str(tmp_path / "o")]) == 1
    assert "plan" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_pipeline_missing_scene(tmp_path):
    assert main(["pipeline", "--scene", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 2


def test_losses_from_intermediates(tmp_path, small_config, capsys):
    scene = make_scene(tmp_path, seed=8, noise_rate=0.2)
    out = tmp_path / "run"
    assert _pipeline(tmp_path, scene, small_config, out, "--keep-intermediates") == 0
    expected = json.loads((out / "losses.json").read_text())
    args = ["losses", "--plan", str(out / "plan.json"), "--ta-windows", str(out / "ta_windows"),
            "--student", str(scene / "student_logits.npy"), "--ensemble", str(out / "ensemble"),
            "--weights", str(out / "weights"), "--sam", str(out / "sam"),
            "--ta-whole", str(scene / "ta_logits.npy"), "--config", str(small_config)]
    capsys.readouterr()
    assert main(args) == 0
    captured = capsys.readouterr()
    report = json.loads(captured.out)
    for k, v in expected.items():
        assert report[k] == pytest.approx(v, rel=1e-12, abs=1e-12)
    assert "l_cc = " in captured.err

    lam0 = {**json.loads(small_config.read_text()), "lambda": 0.0}
    cfg0 = write_json(tmp_path / "cfg0.json", lam0)
    weights0 = tmp_path / "w0"
    weights0.mkdir()
    for p in (out / "weights").iterdir():
        write_labels(np.zeros_like(read_tensor(p)), weights0 / p.name)
    a = args.copy()
    a[a.index("--config") + 1] = str(cfg0)
    assert main(a) == 0
    r_lam0 = json.loads(capsys.readouterr().out)
    a[a.index("--weights") + 1] = str(weights0)
    assert main(a) == 0
    r_now = json.loads(capsys.readouterr().out)
    assert r_lam0["l_ce_t_s"] == r_now["l_ce_t_s"] and r_lam0["l_ce_t_ta"] == r_now["l_ce_t_ta"]


def test_losses_all_zero_when_consistent(tmp_path, small_config, capsys):
    scene = make_scene(tmp_path, seed=9)
    out = tmp_path / "run"
    assert _pipeline(tmp_path, scene, small_config, out, "--keep-intermediates") == 0
    capsys.readouterr()
    assert main(["losses", "--plan", str(out / "plan.json"), "--ta-windows", str(out / "ta_windows"),
                 "--student", str(scene / "student_logits.npy"), "--ensemble", str(out / "ensemble"),
                 "--weights", str(out / "weights"), "--sam", str(out / "sam"),
                 "--config", str(small_config)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert all(v == 0 for k, v in report.items() if k != "lambda")


def test_losses_missing_inputs(tmp_path, small_config):
    scene = make_scene(tmp_path, seed=9)
    out = tmp_path / "run"
    assert _pipeline(tmp_path, scene, small_config, out, "--keep-intermediates") == 0
    base = ["losses", "--plan", str(out / "plan.json"), "--ta-windows", str(out / "ta_windows"),
            "--student", str(scene / "student_logits.npy"), "--ensemble", str(out / "ensemble"),
            "--weights", str(out / "weights"), "--sam", str(out / "sam"), "--config", str(small_config)]
    (out / "ensemble" / "002.npy").unlink()
    assert main(base) == 1
    missing_student = base.copy()
    missing_student[missing_student.index("--student") + 1] = str(tmp_path / "none.npy")
    assert main(missing_student) == 1
    write_labels(np.full((24, 32), 9, dtype=np.uint8), out / "ensemble" / "002.npy")
    assert main(base) == 1


def test_threads_env_override(tmp_path, small_config, monkeypatch):
    scene = make_scene(tmp_path, seed=2)
    monkeypatch.setenv("PANODAR_THREADS", "0")
    assert _pipeline(tmp_path, scene, small_config, tmp_path / "o", "--threads", "4") == 1
    monkeypatch.setenv("PANODAR_THREADS", "3")
    assert _pipeline(tmp_path, scene, small_config, tmp_path / "o") == 0
    assert json.loads((tmp_path / "o" / "manifest.json").read_text())["threads"] == 3


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "panodar", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "panodar" in proc.stdout
