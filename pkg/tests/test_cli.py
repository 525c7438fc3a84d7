from __future__ import annotations

import json
import subprocess
import sys

import numpy as np
import pytest

from cpsinpaint import formats
from cpsinpaint.cli import EXIT_MISSING, main
from cpsinpaint.config import RunConfig, dump_config, from_flat

TINY = {"d_model": 8, "n_heads": 2, "depth": 1, "d_txt": 4, "n_txt": 2, "mlp_ratio": 2, "freq_dim": 4,
        "stage1_iters": 3, "stage2_iters": 2, "batch_size": 2, "warmup": 1}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Dataset, config and trained teacher + student shared by the tests below."""
    d = tmp_path_factory.mktemp("cli")
    (d / "run.toml").write_text(dump_config(from_flat(TINY)))
    assert main(["synth-data", "--out", str(d / "data"), "--count", "3", "--frames", "9", "--size", "16x16"]) == 0
    assert main(["train", "--data", str(d / "data"), "--config", str(d / "run.toml"), "--out", str(d / "t.ckpt"),
                 "--log", str(d / "train.jsonl"), "--log-every", "1"]) == 0
    assert main(["distill", "--teacher", str(d / "t.ckpt"), "--data", str(d / "data"), "--iters", "2",
                 "--out", str(d / "s.ckpt"), "--log", str(d / "distill.jsonl"), "--log-every", "1"]) == 0
    return d


def test_synth_and_train_outputs(workdir):
    assert len(formats.read_dataset(workdir / "data")) == 3
    lines = [json.loads(x) for x in (workdir / "train.jsonl").read_text().splitlines()]
    assert [r["iteration"] for r in lines] == [0, 1, 2, 3, 4]
    assert [r["stage"] for r in lines] == [1, 1, 1, 2, 2]
    header, params = formats.load_checkpoint(workdir / "t.ckpt")
    assert header["kind"] == "teacher" and header["config"]["d_model"] == 8
    assert not any(k.startswith("guide.") for k in params)


def test_distill_output(workdir):
    header, params = formats.load_checkpoint(workdir / "s.ckpt")
    assert header["kind"] == "student" and header["extra"]["scale"] == 3.0
    assert any(k.startswith("guide.") for k in params)
    lines = [json.loads(x) for x in (workdir / "distill.jsonl").read_text().splitlines()]
    assert [r["stage"] for r in lines] == ["distill", "distill"]
    assert main(["distill", "--teacher", str(workdir / "s.ckpt"), "--data", str(workdir / "data"),
                 "--out", str(workdir / "x.ckpt")]) == 1


def test_infer_all_known_returns_input_bytes(workdir):
    ex = formats.read_dataset(workdir / "data")[0]
    formats.write_video(workdir / "v.cpsv", ex.video)
    formats.write_mask(workdir / "ones.cpsm", np.ones(ex.mask.shape, np.uint8))
    for ckpt in ("t.ckpt", "s.ckpt"):
        out = workdir / f"o_{ckpt}.cpsv"
        assert main(["infer", "--ckpt", str(workdir / ckpt), "--video", str(workdir / "v.cpsv"),
                     "--mask", str(workdir / "ones.cpsm"), "--steps", "2", "--out", str(out)]) == 0
        assert out.read_bytes() == (workdir / "v.cpsv").read_bytes()


def test_infer_auto_prompt_and_eval(workdir, monkeypatch, capsys):
    ex = formats.read_dataset(workdir / "data")[1]
    formats.write_video(workdir / "v1.cpsv", ex.video)
    formats.write_mask(workdir / "m1.cpsm", ex.mask)
    monkeypatch.setenv("CPSINPAINT_CAPTIONER", "mock")
    args = ["infer", "--ckpt", str(workdir / "t.ckpt"), "--video", str(workdir / "v1.cpsv"), "--mask",
            str(workdir / "m1.cpsm"), "--steps", "2", "--prompt", "auto", "--out", str(workdir / "o1.cpsv")]
    assert main(args) == 1  # auto needs --object
    assert "[describe]" in capsys.readouterr().err
    assert main(args + ["--object", "dog"]) == 0
    assert "prompt: 'a " in capsys.readouterr().out
    out = formats.read_video(workdir / "o1.cpsv")
    keep = ex.mask > 0
    assert np.array_equal(out[keep], ex.video[keep])
    report = workdir / "r.json"
    assert main(["eval", "--out", str(workdir / "o1.cpsv"), "--gt", str(workdir / "v1.cpsv"),
                 "--mask", str(workdir / "m1.cpsm"), "--report", str(report)]) == 0
    agg = json.loads(report.read_text())["aggregate"]
    assert agg["count"] == 1 and agg["known"]["mse"] == 0.0


def test_missing_files_exit_2(tmp_path, capsys):
    code = main(["infer", "--ckpt", str(tmp_path / "nope.ckpt"), "--video", "v", "--mask", "m",
                 "--out", str(tmp_path / "o")])
    assert code == EXIT_MISSING
    assert "[load]" in capsys.readouterr().err
    assert main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "t")]) == EXIT_MISSING


def test_bad_config_exits_1(tmp_path, capsys):
    (tmp_path / "bad.toml").write_text("learning_rate = 1\n")
    (tmp_path / "data").mkdir()
    code = main(["train", "--data", str(tmp_path / "data"), "--config", str(tmp_path / "bad.toml"),
                 "--out", str(tmp_path / "t")])
    assert code == 1 and "unknown config keys" in capsys.readouterr().err


def test_schedule_dump(capsys):
    assert main(["schedule-dump", "--frames", "5", "--window", "4", "--alpha", "3", "--steps", "2"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[-2:] == ["  window 0: positions=[3, 4, 5, 6] frames=[3, 4, 3, 2]",
                        "  window 1: positions=[7, 0, 1, 2] frames=[1, 0, 1, 2]"]


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "cpsinpaint", "schedule-dump", "--frames", "3", "--window", "2",
                          "--steps", "1"], capture_output=True, text=True, check=True)
    assert "window 1" in res.stdout
    res = subprocess.run([sys.executable, "-m", "cpsinpaint", "synth-data", "--out", "x", "--size", "big"],
                         capture_output=True, text=True)
    assert res.returncode == 2 and "HxW" in res.stderr


def test_default_config_matches_flat_round_trip():
    assert from_flat(RunConfig().to_flat()) == RunConfig()
