import json
import subprocess
import sys
import time

import numpy as np
import pytest

from priorfuse.checkpoint import Checkpoint, save_checkpoint
from priorfuse.cli import main
from priorfuse.config import FusionConfig
from priorfuse.imageio import read_image, write_image
from priorfuse.model import FusionNet


@pytest.fixture
def images(tmp_path, rng):
    ir = rng.integers(0, 256, (64, 64), dtype=np.uint8)
    vis = rng.integers(0, 256, (64, 64), dtype=np.uint8)
    paths = {}
    for name, img in (("ir", ir), ("vis", vis), ("small", ir[:32, :32]),
                      ("flat", np.full((16, 16), 90, np.uint8)), ("max", np.maximum(ir, vis))):
        paths[name] = tmp_path / f"{name}.pgm"
        write_image(paths[name], img)
    return paths


@pytest.fixture
def checkpoint(tmp_path):
    cfg = FusionConfig()
    path = tmp_path / "model.ckpt"
    save_checkpoint(Checkpoint(cfg, FusionNet(cfg).state_dict()), path)
    return path


def test_fuse_identical_inputs(images, checkpoint, tmp_path, capsys):
    out = tmp_path / "fused.pgm"
    code = main(["fuse", str(images["ir"]), str(images["ir"]), "--checkpoint", str(checkpoint), "--out", str(out)])
    assert code == 0
    assert read_image(out).shape == (64, 64)
    assert set(json.loads(capsys.readouterr().out)) == {"en", "sf", "ag", "sd"}


def test_fuse_size_mismatch(images, checkpoint, tmp_path, capsys):
    code = main(["fuse", str(images["ir"]), str(images["small"]), "--checkpoint", str(checkpoint),
                 "--out", str(tmp_path / "f.pgm")])
    err = capsys.readouterr().err
    assert code == 2 and "64x64" in err and "32x32" in err


def test_fuse_unreadable_input(images, checkpoint, tmp_path):
    code = main(["fuse", str(tmp_path / "none.pgm"), str(images["ir"]), "--checkpoint", str(checkpoint),
                 "--out", str(tmp_path / "f.pgm")])
    assert code == 2


def test_fuse_missing_or_incompatible_checkpoint(images, checkpoint, tmp_path):
    args = ["fuse", str(images["ir"]), str(images["vis"]), "--out", str(tmp_path / "f.pgm")]
    assert main(args + ["--checkpoint", str(tmp_path / "missing.ckpt")]) == 3
    assert main(args + ["--checkpoint", str(checkpoint), "--set", "widths=8,16,48"]) == 3
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(checkpoint.read_bytes()[:500])
    assert main(args + ["--checkpoint", str(bad)]) == 3


def test_metrics_csv(images, capsys):
    assert main(["metrics", str(images["flat"]), str(images["ir"])]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "en,sf,ag,sd"
    assert [float(v) for v in lines[1].split(",")] == [0.0, 0.0, 0.0, 0.0]
    assert len(lines) == 3


def test_metrics_unreadable(tmp_path):
    assert main(["metrics", str(tmp_path / "none.pgm")]) == 2


def test_loss_json(images, capsys):
    assert main(["loss", str(images["max"]), str(images["ir"]), str(images["vis"])]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["intensity"] == 0.0
    assert report["weights"] == {"intensity": 4.0, "gradient": 24.0, "ssim": 0.5, "struct": 4.5}
    assert main(["loss", str(images["max"]), str(images["ir"]), str(images["vis"]), "--set", "w_grad=2"]) == 0
    assert json.loads(capsys.readouterr().out)["weights"]["gradient"] == 2.0


def test_gradcheck_ops_passes(capsys):
    assert main(["gradcheck", "--scope", "ops"]) == 0
    assert "conv2d_oracle" in capsys.readouterr().out


def test_gradcheck_corrupted_threshold_fails(capsys):
    assert main(["gradcheck", "--scope", "ops", "--debug-corrupt-threshold", "matmul_grad"]) == 1
    assert "failed: matmul_grad" in capsys.readouterr().err
    assert main(["gradcheck", "--scope", "blocks", "--debug-corrupt-threshold"]) == 1
    assert "failed: apg_step_grad" in capsys.readouterr().err
    assert main(["gradcheck", "--scope", "ops", "--debug-corrupt-threshold", "nonexistent"]) == 3


@pytest.mark.slow
def test_gradcheck_end2end_within_a_minute():
    t0 = time.perf_counter()
    assert main(["gradcheck", "--scope", "end2end"]) == 0
    assert time.perf_counter() - t0 < 60


def test_train_toy_then_fuse(images, tmp_path, capsys):
    ckpt, curve = tmp_path / "t.ckpt", tmp_path / "curve.txt"
    args = ["train-toy", "--out", str(ckpt), "--steps", "2", "--pairs", "2", "--size", "32", "--quiet",
            "--curve", str(curve), "--seed", "3"]
    assert main(args) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["steps"] == 2 and summary["seed"] == 3
    assert len(curve.read_text().split()) == 2
    first = curve.read_text()
    assert main(args) == 0
    assert curve.read_text() == first
    capsys.readouterr()
    assert main(["fuse", str(images["ir"]), str(images["vis"]), "--checkpoint", str(ckpt),
                 "--out", str(tmp_path / "f.pgm")]) == 0


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "priorfuse.cli", "metrics", "/nonexistent.pgm"],
                         capture_output=True, text=True)
    assert res.returncode == 2 and "error:" in res.stderr
