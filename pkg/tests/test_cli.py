"""CLI contract tests: exit codes, artifacts, determinism, config files."""

import json
from pathlib import Path

import numpy as np
import pytest

from bigraph import imgio
from bigraph.cli import main
from bigraph.likelihood import ChannelSelection
from bigraph.mcmc import load_bigp
from bigraph.scene import (
    Camera,
    Material,
    Scene,
    ShapeClass,
    default_lights,
    resting_object,
    save_scene,
)


def run(argv):
    return main([str(a) for a in argv])


@pytest.fixture
def micro_dataset(tmp_path):
    code = run(
        [
            "gen-dataset", "--out", tmp_path / "ds", "--classes", 2,
            "--shots", 2, "--width", 32, "--height", 24, "--seed", 3,
        ]
    )
    assert code == 0
    return tmp_path / "ds" / "train"


def scene_file(tmp_path, width=32, height=24):
    scene = Scene(
        camera=Camera(width=width, height=height),
        lights=default_lights(count=3),
        objects=[
            resting_object(
                ShapeClass.SPHERE,
                Material(color=np.array([0.8, 0.2, 0.2])),
                x=0.0, y=0.0, z_rotation=0.0, scale=np.array([0.8, 0.8, 0.8]),
            )
        ],
        shadows_enabled=False,
    )
    path = tmp_path / "scene.json"
    save_scene(scene, path)
    return path


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        run(["--version"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    assert "bigraph" in out and "BIGP" in out


def test_missing_required_flag_exits_one():
    assert run(["render"]) == 1


def test_unknown_subcommand_exits_one():
    assert run(["frobnicate"]) == 1


def test_missing_scene_file_exits_two(tmp_path):
    assert run(["render", "--scene", tmp_path / "nope.json",
                "--out", tmp_path / "x.png"]) == 2


def test_render_png_and_bigi(tmp_path):
    scene = scene_file(tmp_path)
    out = tmp_path / "img.png"
    assert run(["render", "--scene", scene, "--out", out]) == 0
    img = imgio.read_png(out)
    assert img.shape == (24, 32, 3)
    assert (tmp_path / "img.png.meta.json").exists()
    out2 = tmp_path / "img.bigi"
    assert run(["render", "--scene", scene, "--out", out2]) == 0
    raw = imgio.read_bigi(out2)
    assert raw.shape == (24, 32, 3)


def test_gen_dataset_deterministic(tmp_path):
    for name in ("a", "b"):
        assert run(
            ["gen-dataset", "--out", tmp_path / name, "--classes", 2,
             "--shots", 2, "--width", 24, "--height", 18, "--seed", 5]
        ) == 0
    pngs_a = sorted((tmp_path / "a" / "train").glob("class-*/shot-*.png"))
    assert len(pngs_a) == 4
    for pa in pngs_a:
        pb = tmp_path / "b" / "train" / pa.parent.name / pa.name
        assert pa.read_bytes() == pb.read_bytes()


def test_select_channels_with_random_weights(micro_dataset, tmp_path):
    out = tmp_path / "sel.json"
    weights = tmp_path / "w.bigw"
    code = run(
        ["select-channels", "--dataset", micro_dataset, "--out", out,
         "--random-weights-seed", 1, "--save-weights", weights, "--top-k", 3]
    )
    assert code == 0
    sel = ChannelSelection.from_json(out)
    assert len(sel.indices) == 3
    assert sel.losses == sorted(sel.losses)
    assert weights.exists()


def test_infer_writes_posterior(micro_dataset, tmp_path):
    img = next(micro_dataset.glob("class-*/shot-*.png"))
    out = tmp_path / "post.bigp"
    code = run(
        ["infer", "--scene", micro_dataset / "scene.json", "--image", img,
         "--out", out, "--chains", 2, "--draws", 120, "--burn-in", 20,
         "--seed", 1]
    )
    assert code == 0
    samples = load_bigp(out)
    assert samples.draws.shape == (2, 100, 16)
    meta = json.loads((tmp_path / "post.bigp.meta.json").read_text())
    assert meta["config"]["draws"] == 120


def test_infer_np3_requires_weights(micro_dataset, tmp_path):
    img = next(micro_dataset.glob("class-*/shot-*.png"))
    code = run(
        ["infer", "--scene", micro_dataset / "scene.json", "--image", img,
         "--out", tmp_path / "p.bigp", "--mode", "np3"]
    )
    assert code == 1


def test_classify_writes_csv(micro_dataset, tmp_path):
    query = next(micro_dataset.glob("class-000/shot-01.png"))
    out = tmp_path / "pred.csv"
    code = run(
        ["classify", "--support", micro_dataset, "--query", query,
         "--out", out, "--k-shot", 1, "--chains", 1, "--draws", 100,
         "--burn-in", 20, "--seed", 2]
    )
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0].startswith("query-id,predicted-class,class-000,class-001")
    assert len(lines) == 2


def test_evaluate_writes_report(micro_dataset, tmp_path):
    report = tmp_path / "report.json"
    code = run(
        ["evaluate", "--dataset", micro_dataset, "--report", report,
         "--n-way", 2, "--k-shot", 1, "--episodes", 2, "--chains", 1,
         "--draws", 100, "--burn-in", 20, "--seed", 3]
    )
    assert code == 0
    doc = json.loads(report.read_text())
    assert 0.0 <= doc["accuracy"] <= 1.0
    assert len(doc["episodes"]) == 2
    assert doc["adi"]  # per-class ADI table present
    for entry in doc["adi"].values():
        assert entry["mean_adi"] >= 0.0


def test_adi_subcommand(tmp_path, capsys):
    est = {"translation": [0.01, 0.0, 0.5], "z_rotation": 0.0,
           "scale": [0.5, 0.5, 0.5]}
    truth = {"translation": [0.0, 0.0, 0.5], "z_rotation": 0.0,
             "scale": [0.5, 0.5, 0.5]}
    (tmp_path / "est.json").write_text(json.dumps(est))
    (tmp_path / "truth.json").write_text(json.dumps(truth))
    code = run(
        ["adi", "--estimate", tmp_path / "est.json", "--truth",
         tmp_path / "truth.json", "--shape", "cube", "--points", 2000]
    )
    assert code == 0
    value = float(capsys.readouterr().out.strip())
    assert value == pytest.approx(0.01, rel=0.2)


def test_optimize_scene_runs(micro_dataset, tmp_path):
    out = tmp_path / "opt.json"
    loss_csv = tmp_path / "loss.csv"
    code = run(
        ["optimize-scene", "--dataset", micro_dataset, "--out", out,
         "--epochs", 1, "--steps-per-epoch", 3, "--limit", 1,
         "--loss-csv", loss_csv]
    )
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["metadata"]["epoch_losses"]
    assert loss_csv.read_text().startswith("epoch,mean_loss")


def test_config_file_provides_defaults(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"classes": 3, "shots": 2, "width": 24,
                               "height": 18}))
    code = run(
        ["gen-dataset", "--config", cfg, "--out", tmp_path / "ds",
         "--seed", 1]
    )
    assert code == 0
    index = json.loads((tmp_path / "ds" / "train" / "index.json").read_text())
    assert len(index["classes"]) == 3


def test_flags_override_config_file(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"classes": 3, "shots": 2, "width": 24,
                               "height": 18}))
    code = run(
        ["gen-dataset", "--config", cfg, "--out", tmp_path / "ds",
         "--classes", 2, "--seed", 1]
    )
    assert code == 0
    index = json.loads((tmp_path / "ds" / "train" / "index.json").read_text())
    assert len(index["classes"]) == 2
