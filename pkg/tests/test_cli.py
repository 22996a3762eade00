import json
import os
import subprocess
import sys

import pytest

from quadfuse import checkpoint
from quadfuse.cli import SWEEP_DEFAULTS, _parse_values, main

TINY = ["--set", "vit.image_size=16", "--set", "vit.patch_size=4", "--set", "vit.embed_dim=16",
        "--set", "vit.n_layers=1", "--set", "vit.n_heads=2", "--set", "vit.mlp_dim=32",
        "--set", "gcn.hidden=8", "--set", "fusion.d_model=16", "--set", "fusion.n_heads=2",
        "--epochs", "2", "--batch-size", "8"]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli") / "d"
    assert main(["gen-data", "--out", str(root), "--n", "40", "--size", "16", "--seed", "3"]) == 0
    return root


@pytest.fixture(scope="module")
def full_ckpt(data, tmp_path_factory):
    path = tmp_path_factory.mktemp("ck") / "full.vgck"
    assert main(["train", "--data", str(data), "--out", str(path), *TINY]) == 0
    return path


def test_gen_data_split_rows(tmp_path, capsys):
    assert main(["gen-data", "--out", str(tmp_path / "d"), "--n", "600", "--seed", "42"]) == 0
    rows = (tmp_path / "d" / "manifest.csv").read_text().splitlines()[1:]
    counts = {s: sum(r.endswith("," + s) for r in rows) for s in ("train", "val", "test")}
    assert counts == {"train": 420, "val": 60, "test": 120}
    assert "train 420" in capsys.readouterr().out


def test_gen_data_rerun_identical(tmp_path):
    for name in ("a", "b"):
        assert main(["gen-data", "--out", str(tmp_path / name), "--n", "20", "--size", "16", "--seed", "5"]) == 0
    for f in ("manifest.csv", "dataset.json", "images/img_0013.pgm"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_gen_data_env_seed(tmp_path, monkeypatch):
    monkeypatch.setenv("QUADFUSE_SEED", "5")
    assert main(["gen-data", "--out", str(tmp_path / "e"), "--n", "20", "--size", "16"]) == 0
    monkeypatch.delenv("QUADFUSE_SEED")
    assert main(["gen-data", "--out", str(tmp_path / "f"), "--n", "20", "--size", "16", "--seed", "5"]) == 0
    assert (tmp_path / "e/images/img_0000.pgm").read_bytes() == (tmp_path / "f/images/img_0000.pgm").read_bytes()


@pytest.mark.parametrize("argv", [
    ["gen-data", "--out", "x", "--n", "5"],
    ["gen-data", "--out", "x", "--size", "15"],
    ["gen-data", "--out", "x", "--abnormal-frac", "1.5"],
    ["frobnicate"],
    ["train", "--data", "x"],
])
def test_usage_errors(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2


def test_bad_env_seed(tmp_path, monkeypatch):
    monkeypatch.setenv("QUADFUSE_SEED", "abc")
    assert main(["gen-data", "--out", str(tmp_path / "d"), "--n", "20", "--size", "16"]) == 2


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["gen-data", "--out", str(blocker / "d"), "--n", "20", "--size", "16"]) == 3


def test_train_outputs(full_ckpt):
    hist = full_ckpt.with_suffix(".history.csv").read_text().splitlines()
    assert hist[0] == "epoch,train_loss,val_loss,val_acc,val_prec,val_rec,val_f1"
    assert 1 <= len(hist) - 1 <= 2
    meta = json.loads((full_ckpt.parent / (full_ckpt.name + ".json")).read_text())
    assert meta["mode"] == "full" and meta["config"]["vit.image_size"] == 16
    names = checkpoint.load(full_ckpt)
    assert any(n.startswith("fusion.") for n in names)


def test_train_byte_deterministic(data, full_ckpt, tmp_path):
    again = tmp_path / "again.vgck"
    assert main(["train", "--data", str(data), "--out", str(again), *TINY]) == 0
    assert again.read_bytes() == full_ckpt.read_bytes()
    assert again.with_suffix(".history.csv").read_bytes() == full_ckpt.with_suffix(".history.csv").read_bytes()


def test_train_config_file_and_unknown_key(data, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"train.lrr": 1}))
    assert main(["train", "--data", str(data), "--config", str(cfg), "--out", str(tmp_path / "m"), *TINY]) == 2


def test_train_size_mismatch(data, tmp_path):
    assert main(["train", "--data", str(data), "--out", str(tmp_path / "m.vgck"), "--epochs", "1"]) == 2


def test_train_missing_data(tmp_path):
    assert main(["train", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "m"), *TINY]) == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_nan_exit(data, tmp_path):
    assert main(["train", "--data", str(data), "--out", str(tmp_path / "m"), *TINY, "--lr", "1e30"]) == 4


def test_vit_only_checkpoint(data, tmp_path):
    path = tmp_path / "v.vgck"
    assert main(["train", "--data", str(data), "--out", str(path), "--mode", "vit_only", *TINY]) == 0
    names = checkpoint.load(path)
    assert not any(n.startswith(("gcn.", "fusion.")) for n in names)
    img = data / "images" / "img_0000.pgm"
    assert main(["heatmap", "--ckpt", str(path), "--image", str(img), "--mode", "quadrant",
                 "--out", str(tmp_path / "q.ppm")]) == 2
    assert main(["heatmap", "--ckpt", str(path), "--image", str(img), "--mode", "patch",
                 "--out", str(tmp_path / "p.ppm")]) == 0


def test_eval(data, full_ckpt, tmp_path, capsys):
    out = tmp_path / "m.csv"
    assert main(["eval", "--data", str(data), "--ckpt", str(full_ckpt), "--split", "test", "--out", str(out)]) == 0
    printed = capsys.readouterr().out.splitlines()
    assert printed[0] == "config,accuracy,precision,recall,f1"
    assert printed[1].startswith("full,")
    first = out.read_bytes()
    assert main(["eval", "--data", str(data), "--ckpt", str(full_ckpt), "--out", str(out)]) == 0
    assert out.read_bytes() == first


def test_eval_missing_checkpoint(data, tmp_path):
    assert main(["eval", "--data", str(data), "--ckpt", str(tmp_path / "none.vgck")]) == 3


def test_eval_corrupt_checkpoint(data, full_ckpt, tmp_path):
    bad = tmp_path / "bad.vgck"
    bad.write_bytes(full_ckpt.read_bytes()[:-1] + b"\x00")
    (tmp_path / "bad.vgck.json").write_bytes((full_ckpt.parent / (full_ckpt.name + ".json")).read_bytes())
    assert main(["eval", "--data", str(data), "--ckpt", str(bad)]) == 3


@pytest.mark.parametrize("mode", ["quadrant", "patch"])
def test_heatmap(data, full_ckpt, tmp_path, mode):
    from quadfuse.data import read_pgm, read_ppm
    img = data / "images" / "img_0001.pgm"
    a, b = tmp_path / "a.ppm", tmp_path / "b.ppm"
    for p in (a, b):
        assert main(["heatmap", "--ckpt", str(full_ckpt), "--image", str(img), "--mode", mode, "--out", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert read_ppm(a).shape[:2] == read_pgm(img).shape


def test_ablate(data, tmp_path, capsys):
    out = tmp_path / "abl"
    assert main(["ablate", "--data", str(data), "--out", str(out), *TINY]) == 0
    rows = (out / "ablation.csv").read_text().splitlines()
    assert rows[0] == "config,accuracy,precision,recall,f1"
    assert [r.split(",")[0] for r in rows[1:]] == ["ViT-only", "GNN-only", "w/o Attention", "Full"]
    assert (out / "ablation.txt").read_text().startswith("Configuration")
    seeds = {json.loads((out / f"{m}.vgck.json").read_text())["config"]["train.seed"]
             for m in ("vit_only", "gnn_only", "no_attention", "full")}
    assert len(seeds) == 1
    assert "w/o Attention" in capsys.readouterr().out


def test_sweep(data, tmp_path, capsys):
    out = tmp_path / "s.csv"
    argv = ["sweep", "--data", str(data), "--param", "tau", "--values", "0.1,1.0", "--out", str(out), *TINY]
    assert main(argv) == 0
    lines = out.read_text().splitlines()
    assert [l.split(",")[0] for l in lines[1:]] == ["tau=0.1", "tau=1"]


def test_sweep_defaults():
    assert _parse_values(None, "lr") == [1e-5, 5e-6, 1e-6]
    assert _parse_values(None, "tau") == [0.1, 0.5, 1.0]
    assert SWEEP_DEFAULTS["lr"] == (1e-5, 5e-6, 1e-6)


def test_sweep_bad_values(data):
    assert main(["sweep", "--data", str(data), "--param", "lr", "--values", "a,b"]) == 2


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "quadfuse.cli", "gen-data", "--out", str(tmp_path / "d"),
                           "--n", "3"], capture_output=True, text=True)
    assert proc.returncode == 2
    assert "at least 10" in proc.stderr
