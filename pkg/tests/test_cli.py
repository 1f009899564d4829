import json
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from mmnerf.cli import main

SMALL = ["--iters", "3", "--batch", "32", "--coarse", "6", "--fine", "6"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


def test_end_to_end(capsys, workdir):
    data, ckpt = workdir / "data", workdir / "m.npz"
    code, out, _ = run(capsys, "synth", "--views", 9, "--res", "12x12", "--seed", 2, "--supersample", 2,
                       "--out", data)
    assert code == 0 and json.loads(out)["views"] == 9
    assert (data / "manifest.json").exists() and (data / "events.bin").exists()

    code, out, _ = run(capsys, "train", "--data", data, "--out", ckpt, *SMALL, "--disable", "reg",
                       "--trace", workdir / "trace.json")
    assert code == 0 and ckpt.exists()
    trace = json.loads((workdir / "trace.json").read_text())
    assert len(trace["records"]) == 3 and set(trace["records"][0]["losses"]) == {"rgb", "th"}

    code, out, _ = run(capsys, "render", "--ckpt", ckpt, "--frame-idx", 4, "--head", "xspec", "--scale", 2,
                       "--out", workdir / "x.png")
    assert code == 0 and Image.open(workdir / "x.png").size == (24, 24)

    pose = json.loads((data / "manifest.json").read_text())["frames"][2]["pose"]
    (workdir / "pose.json").write_text(json.dumps({"pose": pose}))
    code, _, _ = run(capsys, "render", "--ckpt", ckpt, "--pose-file", workdir / "pose.json", "--out",
                     workdir / "p.png")
    assert code == 0

    code, out, _ = run(capsys, "eval", "--ckpt", ckpt, "--data", data, "--report", workdir / "r.json")
    report = json.loads((workdir / "r.json").read_text())
    assert code == 0 and report["n_views"] == 2 and report["split"] == "holdout"
    assert report["train_config"]["weights"]["use_reg"] is False


def test_lowlight_synth(capsys, workdir):
    code, _, _ = run(capsys, "synth", "--views", 2, "--res", "8x8", "--supersample", 2, "--rgb-gain", 0.2,
                     "--out", workdir / "dark")
    assert code == 0
    m = json.loads((workdir / "dark" / "manifest.json").read_text())
    assert m["lowlight"]["rgb_gain"] == 0.2
    dark = np.asarray(Image.open(workdir / "dark" / "rgb" / "0000.png"), dtype=float)
    base = np.asarray(Image.open(workdir / "dark.base" / "rgb" / "0000.png"), dtype=float)
    assert dark.mean() == pytest.approx(0.2 * base.mean(), abs=0.6)


def test_ablate(capsys, workdir, tiny_data):
    code, out, _ = run(capsys, "ablate", "--data", tiny_data, "--out", workdir / "abl", "--iters", 1)
    assert code == 0 and json.loads(out)["rows"] == 6


@pytest.mark.parametrize("argv,kind", [
    (["train", "--data", "/nonexistent/ds", "--out", "x.npz"], "DatasetError"),
    (["render", "--ckpt", "/nonexistent.npz", "--frame-idx", "0", "--out", "y.png"], "FileNotFoundError"),
])
def test_errors_are_single_json_lines(capsys, argv, kind):
    code, out, err = run(capsys, *argv)
    assert code != 0 and out == ""
    lines = err.strip().splitlines()
    assert len(lines) == 1 and json.loads(lines[0])["error"] == kind


def test_unknown_head_lists_valid(capsys, workdir):
    code, _, err = run(capsys, "render", "--ckpt", workdir / "m.npz", "--frame-idx", 0, "--head", "ir",
                       "--out", workdir / "y.png")
    msg = json.loads(err)
    assert code == 1 and "rgb" in msg["message"] and "xspec" in msg["message"]


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "mmnerf.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("synth", "train", "render", "eval", "ablate"):
        assert cmd in r.stdout
