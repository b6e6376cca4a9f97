import json

import numpy as np
import pytest

from heatdiff.cli import main
from heatdiff.grids import read_raster, read_scene

TINY_CFG = dict(
    batch_size=2,
    max_steps=4,
    base_width=8,
    depth=2,
    blocks_per_resolution=1,
    embed_dim=16,
    schedule_T=40,
    lr=1e-3,
    seed=3,
)


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    code = main(["synth", "--count", "8", "--seed", "5", "--out", str(root), "--sat-size", "40"])
    assert code == 0
    return root


class TestSynthPrep:
    def test_synth_writes_scenes(self, corpus):
        scenes = sorted(p.name for p in corpus.iterdir())
        assert len(scenes) == 8
        s = read_scene(corpus / scenes[0])
        assert s.rgb.values.shape == (40, 40, 3)

    def test_prep_idempotent(self, corpus, tmp_path, capsys):
        out1 = tmp_path / "prep1"
        out2 = tmp_path / "prep2"
        for out in (out1, out2):
            code, _, _ = run(capsys, "prep", "--in", str(corpus), "--out", str(out))
            assert code == 0
        files1 = sorted(p.relative_to(out1) for p in out1.rglob("*") if p.is_file())
        files2 = sorted(p.relative_to(out2) for p in out2.rglob("*") if p.is_file())
        assert files1 == files2
        for rel in files1:
            assert (out1 / rel).read_bytes() == (out2 / rel).read_bytes(), rel

    def test_prep_split_manifest(self, corpus, tmp_path, capsys):
        out = tmp_path / "prep"
        code, stdout, _ = run(capsys, "prep", "--in", str(corpus), "--out", str(out))
        assert code == 0
        manifest = json.loads((out / "split.json").read_text())
        assert len(manifest["train"]) == 6
        assert len(manifest["test"]) == 2

    def test_synth_cloud_flag(self, tmp_path, capsys):
        code, _, _ = run(capsys, "synth", "--count", "2", "--seed", "1", "--out",
                         str(tmp_path / "c"), "--sat-size", "40", "--cloud", "1.0")
        assert code == 0
        s = read_scene(tmp_path / "c" / "scene00000")
        assert s.rgb.valid_mask is not None
        assert not s.rgb.valid_mask.all()


class TestEval:
    def test_predict_truth_fixture(self, corpus, tmp_path, capsys):
        code, stdout, _ = run(
            capsys, "eval", "--in", str(corpus), "--out", str(tmp_path / "rep"),
            "--predict-truth",
        )
        assert code == 0
        res = json.loads(stdout)
        assert res["rmse"] == 0.0
        assert res["ssim"] == pytest.approx(1.0, abs=1e-9)
        csv_text = (tmp_path / "rep.csv").read_text()
        assert csv_text.splitlines()[0] == "method,rmse,mae,ssim"

    def test_empty_split_is_data_error(self, tmp_path, capsys):
        code, _, err = run(capsys, "eval", "--in", str(tmp_path), "--out",
                           str(tmp_path / "rep"), "--predict-truth")
        assert code == 2
        assert json.loads(err.strip().splitlines()[-1])["error"]


@pytest.fixture(scope="module")
def trained(corpus, tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = dict(TINY_CFG)
    cfg["data_dir"] = str(corpus)
    cfg["checkpoint_path"] = str(root / "ta.ckpt")
    cfg_path = root / "train.json"
    cfg_path.write_text(json.dumps(cfg))
    assert main(["train", "--config", str(cfg_path)]) == 0

    cfg_l = dict(TINY_CFG)
    cfg_l["data_dir"] = str(corpus)
    cfg_l["checkpoint_path"] = str(root / "lst.ckpt")
    cfg_lpath = root / "train_lst.json"
    cfg_lpath.write_text(json.dumps(cfg_l))
    assert main(["train-rgb2lst", "--config", str(cfg_lpath)]) == 0
    return root


class TestTrainedFlows:
    def test_eval_with_checkpoint(self, corpus, trained, tmp_path, capsys):
        code, stdout, _ = run(
            capsys, "eval", "--ckpt", str(trained / "ta.ckpt"), "--in", str(corpus),
            "--out", str(tmp_path / "rep"), "--steps", "4",
        )
        assert code == 0
        assert np.isfinite(json.loads(stdout)["rmse"])

    def test_sample_round_trip(self, corpus, trained, tmp_path, capsys):
        scene_path = sorted(corpus.iterdir())[0]
        code, stdout, _ = run(
            capsys, "sample", "--ckpt", str(trained / "ta.ckpt"), "--scene",
            str(scene_path), "--out", str(tmp_path / "pred"), "--steps", "4",
        )
        assert code == 0
        pred = read_scene(tmp_path / "pred")
        truth = read_scene(scene_path)
        assert pred.ta.values.shape == truth.ta.values.shape
        assert not np.array_equal(pred.ta.values, truth.ta.values)

    def test_infer30m_writes_satellite_raster(self, corpus, trained, tmp_path, capsys):
        # retrain tiny SR model for the cross-resolution path
        cfg = dict(TINY_CFG)
        cfg["data_dir"] = str(corpus)
        cfg["task"] = "super_resolution"
        cfg["checkpoint_path"] = str(tmp_path / "sr.ckpt")
        cfg_path = tmp_path / "sr.json"
        cfg_path.write_text(json.dumps(cfg))
        assert main(["train", "--config", str(cfg_path)]) == 0
        scene_path = sorted(corpus.iterdir())[0]
        code, stdout, _ = run(
            capsys, "infer30m", "--ckpt", str(tmp_path / "sr.ckpt"), "--scene",
            str(scene_path), "--out", str(tmp_path / "ta30"), "--steps", "4",
        )
        assert code == 0
        r = read_raster(tmp_path / "ta30")
        assert r.values.shape == (40, 40, 1)

    def test_inpaint_fills_lst(self, trained, tmp_path, capsys):
        assert main(["synth", "--count", "1", "--seed", "9", "--out",
                     str(tmp_path / "cloudy"), "--sat-size", "40", "--cloud", "1.0"]) == 0
        scene_path = tmp_path / "cloudy" / "scene00000"
        code, stdout, _ = run(
            capsys, "inpaint", "--ckpt", str(trained / "lst.ckpt"), "--scene",
            str(scene_path), "--out", str(tmp_path / "filled"), "--steps", "4",
        )
        assert code == 0
        before = read_scene(scene_path)
        after = read_scene(tmp_path / "filled")
        assert before.lst.valid_mask is not None and not before.lst.valid_mask.all()
        assert after.lst.valid_mask is None
        m = before.lst.valid_mask
        assert np.allclose(after.lst.values[m], before.lst.values[m], atol=1e-3)

    def test_bench_reports_throughput(self, trained, capsys):
        code, stdout, _ = run(
            capsys, "bench", "--ckpt", str(trained / "ta.ckpt"), "--sat-size", "40",
            "--steps", "3", "--repeat", "1",
        )
        assert code == 0
        rep = json.loads(stdout)
        assert rep["scenes_per_s"] > 0

    def test_baseline_fit_eval(self, corpus, tmp_path, capsys):
        code, stdout, _ = run(
            capsys, "baseline", "--model", "lr", "--in", str(corpus), "--out",
            str(tmp_path / "ridge.npz"),
        )
        assert code == 0
        res = json.loads(stdout)
        assert np.isfinite(res["rmse"])
        assert (tmp_path / "ridge.npz").exists()

    def test_ablate_table(self, corpus, tmp_path, capsys):
        cfg = dict(TINY_CFG)
        cfg["data_dir"] = str(corpus)
        cfg["sampler_steps"] = 4
        cfg_path = tmp_path / "ab.json"
        cfg_path.write_text(json.dumps(cfg))
        code, stdout, _ = run(capsys, "ablate", "--config", str(cfg_path), "--out",
                              str(tmp_path / "ab.csv"))
        assert code == 0
        res = json.loads(stdout)
        assert set(res) == {"lst_anchored", "pure_noise"}
        assert res["lst_anchored"]["scenes"] == res["pure_noise"]["scenes"]
        lines = (tmp_path / "ab.csv").read_text().strip().splitlines()
        assert len(lines) == 3


class TestErrors:
    def test_unknown_config_key_usage_error(self, tmp_path, capsys):
        cfg_path = tmp_path / "bad.json"
        cfg_path.write_text(json.dumps({"data_dir": ".", "bogus_key": 1}))
        code, _, err = run(capsys, "train", "--config", str(cfg_path))
        assert code == 1
        msg = json.loads(err.strip().splitlines()[-1])
        assert msg["error"] == "usage"
        assert "bogus_key" in msg["message"]

    def test_missing_scene_data_error(self, tmp_path, capsys):
        code, _, err = run(capsys, "sample", "--ckpt", str(tmp_path / "none.ckpt"),
                           "--scene", str(tmp_path / "nope"), "--out", str(tmp_path / "o"))
        assert code == 2
        assert json.loads(err.strip().splitlines()[-1])["error"]

    def test_usage_error_on_bad_flag(self, capsys):
        code, _, err = run(capsys, "synth", "--count", "notanumber", "--seed", "1",
                           "--out", "x")
        assert code == 1

    def test_set_overrides(self, corpus, tmp_path, capsys):
        cfg = dict(TINY_CFG)
        cfg["data_dir"] = str(corpus)
        cfg["checkpoint_path"] = str(tmp_path / "o.ckpt")
        cfg_path = tmp_path / "t.json"
        cfg_path.write_text(json.dumps(cfg))
        code, stdout, _ = run(capsys, "train", "--config", str(cfg_path),
                              "--set", "max_steps=2")
        assert code == 0
        assert json.loads(stdout)["steps"] == 2
