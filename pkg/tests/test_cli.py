import json

import numpy as np
import pytest

from trajgs.cli import main, parse_times
from trajgs.io import read_png, read_trajectory_csv


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    spec = {"n_static": 8, "n_dynamic": 3, "n_frames": 4, "n_cameras": 2, "width": 16,
            "height": 16, "focal": 20.0, "test_every": 2}
    cfg = {"total_iters": 6, "warmup_frac": 0.3, "hidden": 16, "depth": 2, "n_freqs": 3,
           "k": 4, "l": 2, "m": 2, "eval_every": 3, "weights": {"rho_w": 5.0, "knn_k": 3}}
    (d / "spec.json").write_text(json.dumps(spec))
    (d / "cfg.json").write_text(json.dumps(cfg))
    assert main(["synth", "--spec", str(d / "spec.json"), "--out", str(d / "data")]) == 0
    assert main(["train", "--data", str(d / "data"), "--out", str(d / "run"),
                 "--config", str(d / "cfg.json"), "--seed", "7"]) == 0
    return d


def test_pipeline_outputs(workdir):
    run = workdir / "run"
    assert (run / "checkpoint.dgtj").read_bytes()[:4] == b"DGTJ"
    assert json.loads((run / "config.json").read_text())["seed"] == 7
    assert len((run / "metrics.ndjson").read_text().splitlines()) == 6
    assert sorted(p.name for p in run.iterdir()) == ["checkpoint.dgtj", "config.json",
                                                     "metrics.ndjson"]


def test_eval(workdir):
    out = workdir / "eval.json"
    assert main(["eval", "--ckpt", str(workdir / "run" / "checkpoint.dgtj"),
                 "--data", str(workdir / "data"), "--split", "test", "--out", str(out)]) == 0
    res = json.loads(out.read_text())
    assert res["split"] == "test" and len(res["frames"]) == 2 and res["psnr"] > 0


def test_render_and_range(workdir):
    ck = str(workdir / "run" / "checkpoint.dgtj")
    cams = str(workdir / "data" / "cameras.json")
    out = workdir / "r.png"
    assert main(["render", "--ckpt", ck, "--camera", cams, "--index", "1", "--time", "1.5",
                 "--out", str(out)]) == 0
    assert read_png(out).shape == (16, 16, 3)
    assert main(["render", "--ckpt", ck, "--camera", cams, "--time", "3.5",
                 "--out", str(workdir / "bad.png")]) == 1
    assert not (workdir / "bad.png").exists()


def test_export(workdir):
    out = workdir / "t.csv"
    assert main(["export-traj", "--ckpt", str(workdir / "run" / "checkpoint.dgtj"),
                 "--times", "0:3", "--subset", "all", "--out", str(out)]) == 0
    tab = read_trajectory_csv(out)
    assert set(tab["t"]) == {0.0, 1.0, 2.0, 3.0}


def test_usage_errors(workdir, capsys):
    assert main(["train", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err
    assert main([]) == 1
    assert main(["eval", "--ckpt", str(workdir / "nope"), "--data", str(workdir / "data")]) == 1
    bad = workdir / "badcfg.json"
    bad.write_text(json.dumps({"learning_rate": 1}))
    assert main(["train", "--data", str(workdir / "data"), "--out", str(workdir / "x"),
                 "--config", str(bad)]) == 1


def test_resume_matches(workdir):
    ck = workdir / "run" / "checkpoint.dgtj"
    part = workdir / "part"
    cfg = str(workdir / "cfg.json")
    assert main(["train", "--data", str(workdir / "data"), "--out", str(part), "--config", cfg,
                 "--seed", "7", "--stop-at", "3"]) == 0
    assert main(["train", "--data", str(workdir / "data"), "--out", str(part),
                 "--resume", str(part / "checkpoint.dgtj")]) == 0
    assert (part / "checkpoint.dgtj").read_bytes() == ck.read_bytes()
    assert (part / "metrics.ndjson").read_text() == (workdir / "run" / "metrics.ndjson").read_text()


def test_gradcheck_cli(capsys):
    assert main(["gradcheck", "--module", "losses"]) == 0
    out = capsys.readouterr().out
    assert "L_arap" in out and "max relative error" in out
    assert main(["gradcheck", "--module", "nope"]) == 1


def test_parse_times():
    assert parse_times("all", 3) == [0.0, 1.0, 2.0]
    assert parse_times("1:3", 9) == [1.0, 2.0, 3.0]
    assert parse_times("0.5,2", 9) == [0.5, 2.0]
