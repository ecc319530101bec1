import csv
import json
import re

import numpy as np
import pytest

from lightmbn import cli
from lightmbn.config import RunConfig, dump_config, load_config
from lightmbn.data import synth_dataset, write_image, write_market_layout
from lightmbn.engine import read_manifest, strip_timing
from lightmbn.objective import ScheduleParams, lr_schedule

FAST = ["--synthetic", "ids=6", "per-id=4", "seed=3", "--set", "backbone_width=8", "--set", "P=3",
        "--set", "K=2", "--set", "warmup=2", "--set", "eval_batch=16"]
ERROR_LINE = re.compile(r"^error: code=[a-z_]+ exit=(\d)( field=\S+)?$")


def run(argv, capsys):
    status = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return status, out, err


def assert_error(status, err, expected):
    assert status == expected
    first = err.splitlines()[0]
    m = ERROR_LINE.match(first)
    assert m and int(m.group(1)) == expected, first
    assert len(err.splitlines()) >= 2


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert cli.main(["train", *FAST, "--epochs", "3", "--dtype", "float64", "--out", str(out)]) == 0
    return out


def test_train_outputs(trained):
    names = {p.name for p in trained.iterdir()}
    assert {"manifest.jsonl", "config.txt", "checkpoint_final.lmbn", "cmc.csv", "summary.json"} <= names
    records = read_manifest(trained)
    assert [r["type"] for r in records] == ["config", "epoch", "epoch", "epoch", "final"]
    cfg = load_config(trained / "config.txt")
    p = ScheduleParams(cfg.epochs, cfg.warmup, cfg.lr_peak, cfg.lr_floor)
    lrs = [r["lr"] for r in records if r["type"] == "epoch"]
    assert lrs == [lr_schedule(t, p) for t in range(1, 4)]
    assert all(np.isfinite(r["loss"]) and "wall_clock" in r for r in records[1:4])


def test_resolved_config_reproduces_run_bit_identically(trained, tmp_path, capsys):
    status, _, _ = run(["train", "--config", trained / "config.txt", "--out", tmp_path], capsys)
    assert status == 0
    assert strip_timing(read_manifest(tmp_path)) == strip_timing(read_manifest(trained))
    assert (tmp_path / "checkpoint_final.lmbn").read_bytes() == (trained / "checkpoint_final.lmbn").read_bytes()


def test_train_g_only_terms(tmp_path, capsys):
    status, _, _ = run(["train", *FAST, "--epochs", "3", "--branches", "G", "--out", tmp_path], capsys)
    assert status == 0
    terms = read_manifest(tmp_path)[1]["terms"]
    assert sorted(terms) == ["ce:g", "ce:g_drop", "ms:g", "ms:g_drop"]


def test_train_toggles(tmp_path, capsys):
    status, _, _ = run(["train", *FAST, "--epochs", "3", "--no-wca", "--triplet", "--no-db",
                        "--backbone", "tiny-res", "--out", tmp_path], capsys)
    assert status == 0
    cfg = read_manifest(tmp_path)[0]["config"]
    assert (cfg["wca"], cfg["ranking"], cfg["drop_block"], cfg["backbone"]) == (False, "triplet", False, "tiny-res")
    assert any(k.startswith("triplet:") for k in read_manifest(tmp_path)[1]["terms"])


def test_step_schedule_export(tmp_path, capsys):
    cfg = RunConfig(wca=False)
    (tmp_path / "manifest.jsonl").write_text(json.dumps({"type": "config", "config": vars(cfg)}) + "\n")
    status, _, _ = run(["export", "schedule", "--run", tmp_path], capsys)
    assert status == 0
    lrs = [float(r["lr"]) for r in csv.DictReader(open(tmp_path / "schedule.csv"))]
    assert len(lrs) == 140
    assert lrs[48] == 6e-4 and lrs[49] == pytest.approx(6e-5) and lrs[79] == pytest.approx(6e-6)
    assert lrs[109] == pytest.approx(6e-7)


def test_wca_schedule_export(tmp_path, capsys):
    (tmp_path / "manifest.jsonl").write_text(json.dumps({"type": "config", "config": vars(RunConfig())}) + "\n")
    run(["export", "schedule", "--run", tmp_path, "--out", tmp_path / "lr.csv"], capsys)
    rows = list(csv.reader(open(tmp_path / "lr.csv")))
    assert len(rows) == 141 and float(rows[10][1]) == pytest.approx(6e-4)


def test_export_cmc_and_loss_curve(trained, capsys):
    assert run(["export", "cmc", "--run", trained, "--out", trained / "cmc_export.csv"], capsys)[0] == 0
    cmc = [float(r["cmc"]) for r in csv.DictReader(open(trained / "cmc_export.csv"))]
    assert len(cmc) == 50 and all(a <= b for a, b in zip(cmc, cmc[1:]))
    assert run(["export", "loss-curve", "--run", trained], capsys)[0] == 0
    rows = list(csv.DictReader(open(trained / "loss-curve.csv")))
    assert len(rows) == 3 and "ce:g" in rows[0]


def test_export_missing_manifest(tmp_path, capsys):
    status, _, err = run(["export", "cmc", "--run", tmp_path], capsys)
    assert_error(status, err, 2)


def test_eval_twice_identical(trained, tmp_path, capsys):
    ckpt = trained / "checkpoint_final.lmbn"
    s1, out1, _ = run(["eval", "--checkpoint", ckpt, "--out", tmp_path / "a", "--dump"], capsys)
    s2, out2, _ = run(["eval", "--checkpoint", ckpt, "--out", tmp_path / "b"], capsys)
    assert s1 == s2 == 0 and out1 == out2
    assert "map_modern=" in out1 and "map_legacy=" in out1
    assert (tmp_path / "a" / "cmc.csv").read_text() == (tmp_path / "b" / "cmc.csv").read_text()
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["rank1"] == pytest.approx(json.loads((trained / "summary.json").read_text())["rank1"])


def test_eval_incompatible_checkpoint(trained, tmp_path, capsys):
    base = (trained / "config.txt").read_text()
    (tmp_path / "c.txt").write_text(base.replace("backbone_width = 8", "backbone_width = 16"))
    status, _, err = run(["eval", "--checkpoint", trained / "checkpoint_final.lmbn", "--config",
                          tmp_path / "c.txt", "--out", tmp_path], capsys)
    assert_error(status, err, 1)
    assert "weight" in err


def test_eval_missing_gallery_is_usage_error(trained, tmp_path, capsys):
    write_market_layout(synth_dataset(3, 4, 1), tmp_path / "data")
    for p in (tmp_path / "data" / "bounding_box_test").iterdir():
        p.unlink()
    status, _, err = run(["eval", "--checkpoint", trained / "checkpoint_final.lmbn", "--dataset",
                          tmp_path / "data", "--out", tmp_path], capsys)
    assert_error(status, err, 1)
    assert "gallery" in err


def test_retrieve(trained, tmp_path, capsys):
    ckpt = trained / "checkpoint_final.lmbn"
    run(["eval", "--checkpoint", ckpt, "--out", tmp_path, "--dump"], capsys)
    index = synth_dataset(6, 4, 3)
    g0 = index.positions("gallery")[2]
    write_image(tmp_path / "probe.png", index.image(g0))
    status, out, _ = run(["retrieve", "--checkpoint", ckpt, "--probe", tmp_path / "probe.png",
                          "--gallery", tmp_path / "gallery.emb", "--top-k", 100], capsys)
    assert status == 0
    rows = list(csv.DictReader(out.splitlines()))
    assert len(rows) == len(index.positions("gallery"))
    assert int(rows[0]["index"]) == 2 and float(rows[0]["similarity"]) > 0.999
    sims = [float(r["similarity"]) for r in rows]
    assert sims == sorted(sims, reverse=True)


def test_retrieve_unreadable_probe(trained, tmp_path, capsys):
    run(["eval", "--checkpoint", trained / "checkpoint_final.lmbn", "--out", tmp_path, "--dump"], capsys)
    (tmp_path / "junk.png").write_text("not an image")
    status, _, err = run(["retrieve", "--checkpoint", trained / "checkpoint_final.lmbn", "--probe",
                          tmp_path / "junk.png", "--gallery", tmp_path / "gallery.emb"], capsys)
    assert_error(status, err, 2)


def test_ablate_small_matrix(tmp_path, capsys):
    matrix = tmp_path / "m.csv"
    matrix.write_text("branches,wca\nG,1\nG,1\nP,0\n")
    status, out, _ = run(["ablate", *FAST, "--epochs", "3", "--matrix", matrix, "--out", tmp_path / "abl"], capsys)
    assert status == 0
    rows = list(csv.DictReader(open(tmp_path / "abl" / "ablation.csv")))
    assert [r["branches"] for r in rows] == ["G", "P"]
    assert {"r1", "map_modern", "map_legacy"} <= set(rows[0])
    assert "mAP(legacy)" in out


def test_ablate_empty_matrix(tmp_path, capsys):
    (tmp_path / "m.csv").write_text("branches\n")
    status, _, err = run(["ablate", "--matrix", tmp_path / "m.csv"], capsys)
    assert_error(status, err, 1)


def test_usage_errors(tmp_path, capsys):
    assert_error(*run(["train", "--bogus"], capsys)[::2], 1)
    status, _, err = run(["train", "--set", "epochs=abc"], capsys)
    assert_error(status, err, 1)
    assert "field=epochs" in err.splitlines()[0]
    status, _, err = run(["train", "--branches", "G+X"], capsys)
    assert_error(status, err, 1)
    assert_error(*run([], capsys)[::2], 1)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_loss_aborts_with_dump(tmp_path, capsys):
    status, _, err = run(["train", *FAST, "--epochs", "3", "--set", "lr_peak=1e30", "--set", "lr_floor=1e20",
                          "--out", tmp_path], capsys)
    assert_error(status, err, 3)
    dump = json.loads((tmp_path / "nan_dump.json").read_text())
    assert {"epoch", "batch", "terms"} <= set(dump)


def test_config_round_trip():
    cfg = RunConfig(branches="G+P", wca=False, lr_peak=1e-3)
    assert dump_config(load_config_text(dump_config(cfg))) == dump_config(cfg)


def load_config_text(text):
    from lightmbn.config import parse_config_text

    return RunConfig(**parse_config_text(text))
