from __future__ import annotations

import hashlib
import json

import numpy as np
import pytest

from tickguard.cli import main
from tickguard.dataset import load_dataset, save_dataset
from tickguard.match import discover_matches, list_scorable_kills, load_match

from conftest import random_windows

TINY_TOML = """
[train]
max_epochs = 2
batch_size = 16
base_lr = 1e-3

[train.model]
n_layers = 1
d_ff = 8
d_hidden = 4
"""


def sha(path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def without_timing(manifest_path) -> dict:
    data = json.loads(manifest_path.read_text())
    for stage in data["stages"].values():
        stage.pop("timing")
    return data


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "matches"), "--matches", "5", "--seed", "3"]) == 0
    assert main(["extract", "--in", str(root / "matches"), "--out", str(root / "all.acpt")]) == 0
    assert main(["split", "--in", str(root / "all.acpt"), "--out", str(root / "split"),
                 "--train", "0.6", "--val", "0.2", "--test", "0.2"]) == 0
    (root / "run.toml").write_text(TINY_TOML)
    assert main(["train", "--config", str(root / "run.toml"), "--train",
                 str(root / "split" / "train.acpt"), "--val", str(root / "split" / "val.acpt"),
                 "--out", str(root / "model")]) == 0
    return root


def test_extract_one_window_per_scorable_kill(small_run):
    stems = discover_matches(small_run / "matches")
    assert len(stems) == 5
    expected = sum(len(list_scorable_kills(load_match(s))) for s in stems)
    assert len(load_dataset(small_run / "all.acpt")) == expected
    manifest = json.loads((small_run / "manifest.json").read_text())
    assert "extract:all.acpt" in manifest["stages"]


def test_usage_errors(capsys):
    assert main(["frobnicate"]) == 1
    assert main(["extract", "--in", "x", "--out", "y", "--bogus"]) == 1
    assert main(["extract"]) == 1
    assert main(["synth", "--out", "x", "--threads", "0"]) == 1
    assert "usage:" in capsys.readouterr().err


def test_bad_config_is_usage_error(tmp_path):
    (tmp_path / "bad.toml").write_text("[train]\nepochs = 3\n")
    assert main(["train", "--config", str(tmp_path / "bad.toml"), "--train", "a", "--val", "b",
                 "--out", str(tmp_path)]) == 1
    assert main(["train", "--config", str(tmp_path / "missing.toml"), "--train", "a",
                 "--val", "b", "--out", str(tmp_path)]) == 1


def test_data_errors(tmp_path, small_run):
    assert main(["extract", "--in", str(tmp_path), "--out", str(tmp_path / "w.acpt")]) == 2
    (tmp_path / "junk.acpt").write_bytes(b"not a dataset")
    assert main(["eval", "--checkpoint", str(small_run / "model" / "best.ckpt"),
                 "--data", str(tmp_path / "junk.acpt")]) == 2
    assert main(["eval", "--checkpoint", str(tmp_path / "nope.ckpt"),
                 "--data", str(small_run / "all.acpt")]) == 2


def test_numeric_error_exit_code(tmp_path, small_run):
    ws = random_windows(8, seed=1, label_fn=lambda i: i % 2)
    values = np.array(ws.windows[0].values)
    values[10, 3] = np.nan
    ws.windows[0] = ws.windows[0].with_values(values)
    save_dataset(ws, tmp_path / "nan.acpt")
    code = main(["train", "--config", str(small_run / "run.toml"), "--train",
                 str(tmp_path / "nan.acpt"), "--val", str(small_run / "split" / "val.acpt"),
                 "--out", str(tmp_path / "m")])
    assert code == 3


def test_train_is_reproducible(tmp_path, small_run):
    args = ["train", "--config", str(small_run / "run.toml"),
            "--train", str(small_run / "split" / "train.acpt"),
            "--val", str(small_run / "split" / "val.acpt")]
    assert main(args + ["--out", str(tmp_path / "again")]) == 0
    for name in ("best.ckpt", "last.ckpt", "history.csv"):
        assert sha(tmp_path / "again" / name) == sha(small_run / "model" / name)
    a = without_timing(small_run / "model" / "manifest.json")
    b = without_timing(tmp_path / "again" / "manifest.json")
    assert a["stages"]["train"]["outputs"] == [
        dict(o, path=o["path"].replace(str(tmp_path / "again"), str(small_run / "model")))
        for o in b["stages"]["train"]["outputs"]
    ]
    assert a["stages"]["train"]["config"] == b["stages"]["train"]["config"]


def test_flags_override_config(tmp_path, small_run):
    assert main(["train", "--config", str(small_run / "run.toml"), "--epochs", "1",
                 "--train", str(small_run / "split" / "train.acpt"),
                 "--val", str(small_run / "split" / "val.acpt"),
                 "--out", str(tmp_path / "m")]) == 0
    lines = (tmp_path / "m" / "history.csv").read_text().splitlines()
    assert len(lines) == 2
    cfg = json.loads((tmp_path / "m" / "manifest.json").read_text())["stages"]["train"]["config"]
    assert cfg["max_epochs"] == 1 and cfg["batch_size"] == 16 and cfg["model"]["n_layers"] == 1


def test_eval_report(tmp_path, small_run, capsys):
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(small_run / "model" / "best.ckpt"),
                 "--data", str(small_run / "all.acpt"), "--threshold", "0.7",
                 "--out", str(tmp_path)]) == 0
    summary = json.loads(capsys.readouterr().out)
    for key in ("accuracy", "precision", "recall", "f1", "specificity", "auc", "confusion"):
        assert key in summary
    assert summary["threshold"] == 0.7
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["auc"] == summary["auc"] and report["roc"][0][2] is None
    assert (tmp_path / "roc.csv").read_text().startswith("fpr,tpr,threshold\n")
    assert set(json.loads((tmp_path / "manifest.json").read_text())["stages"]) == {"eval"}


def test_infer_prints_logit_and_probability(small_run, capsys):
    stem = discover_matches(small_run / "matches")[0]
    capsys.readouterr()
    assert main(["infer", "--checkpoint", str(small_run / "model" / "best.ckpt"),
                 "--match", str(stem)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "match_id,kill_tick,attacker_id,logit,probability"
    assert len(lines) - 1 == len(list_scorable_kills(load_match(stem)))
    logit, prob = map(float, lines[1].split(",")[3:])
    assert abs(prob - 1 / (1 + np.exp(-logit))) < 1e-6
    assert main(["infer", "--checkpoint", str(small_run / "model" / "best.ckpt"),
                 "--data", str(small_run / "split" / "test.acpt")]) == 0


def test_timeline_csv(tmp_path, small_run):
    stem = discover_matches(small_run / "matches")[0]
    player = list_scorable_kills(load_match(stem))[0].attacker_id
    out = tmp_path / "tl.csv"
    assert main(["timeline", "--checkpoint", str(small_run / "model" / "best.ckpt"),
                 "--match", str(stem), "--player", player, "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "kill_index,kill_tick,probability" and len(lines) >= 2
    assert main(["timeline", "--checkpoint", str(small_run / "model" / "best.ckpt"),
                 "--match", str(stem), "--player", "nobody"]) == 2


def test_results_independent_of_threads(tmp_path):
    for threads in ("1", "3"):
        d = tmp_path / f"t{threads}"
        assert main(["synth", "--out", str(d / "m"), "--matches", "4", "--seed", "8",
                     "--threads", threads]) == 0
        assert main(["extract", "--in", str(d / "m"), "--out", str(d / "w.acpt"),
                     "--threads", threads]) == 0
    assert sha(tmp_path / "t1" / "w.acpt") == sha(tmp_path / "t3" / "w.acpt")
    names = sorted(p.name for p in (tmp_path / "t1" / "m").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "t3" / "m").iterdir())
    for n in names:
        if n != "manifest.json":
            assert sha(tmp_path / "t1" / "m" / n) == sha(tmp_path / "t3" / "m" / n)


def test_stages_do_not_mutate_inputs(tmp_path, small_run):
    before = sha(small_run / "all.acpt")
    assert main(["augment", "--in", str(small_run / "all.acpt"),
                 "--out", str(tmp_path / "aug.acpt")]) == 0
    assert sha(small_run / "all.acpt") == before
    assert main(["augment", "--in", str(tmp_path / "aug.acpt"),
                 "--out", str(tmp_path / "aug2.acpt")]) == 2
    first = sha(tmp_path / "aug.acpt")
    assert main(["augment", "--in", str(small_run / "all.acpt"),
                 "--out", str(tmp_path / "aug.acpt")]) == 0
    assert sha(tmp_path / "aug.acpt") == first
