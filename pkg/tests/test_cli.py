import csv
import hashlib
import json

import pytest
from conftest import tiny_config

from presort.cli import main
from presort.segmenter import load_store


def digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def cfg_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.ini"
    path.write_text(tiny_config().to_ini())
    return path


@pytest.fixture(scope="module")
def corpus(cfg_file, tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert main(["synth", "--config", str(cfg_file), "--out", str(out)]) == 0
    return out


def test_synth_outputs_and_determinism(cfg_file, tmp_path):
    for name in ("a", "b"):
        assert main(["synth", "--config", str(cfg_file), "--seed", "7", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "manifest.csv").is_file()
    assert (tmp_path / "a" / "ground_truth.csv").is_file()
    assert "seed = 7" in (tmp_path / "a" / "config.ini").read_text()
    assert digest(tmp_path / "a") == digest(tmp_path / "b")


def test_usage_errors_exit_2(tmp_path, capsys):
    assert main(["synth", "--config", str(tmp_path / "missing.ini"), "--out", str(tmp_path)]) == 2
    assert "not found" in capsys.readouterr().err
    assert main(["synth"]) == 2
    assert main(["synth", "--out", str(tmp_path), "--set", "train.nosuch=1"]) == 2
    assert main(["run", "--manifest", "x", "--out", str(tmp_path), "--epochs", "1,2,3"]) == 2


def test_runtime_failure_exit_1(tmp_path, cfg_file):
    (tmp_path / "m.csv").write_text("clip_id,path,label,duration_s,split\n"
                                    "a,gone.wav,background,1.0,train\n")
    assert main(["preprocess", "--config", str(cfg_file), "--manifest", str(tmp_path / "m.csv"),
                 "--out", str(tmp_path / "o")]) == 1


def test_preprocess_default_geometry(corpus, tmp_path):
    out = tmp_path / "pre"
    assert main(["preprocess", "--manifest", str(corpus), "--out", str(out)]) == 0
    segs = load_store(out / "train.seg")
    assert segs[0].shape == (128, 88)


def test_stage_by_stage_chain(corpus, cfg_file, tmp_path, capsys):
    c = ["--config", str(cfg_file)]
    pre = tmp_path / "pre"
    assert main(["preprocess", *c, "--manifest", str(corpus), "--out", str(pre), "--thresholding"]) == 0
    for split in ("train", "val", "test"):
        assert (pre / f"{split}.seg").is_file() and (pre / f"{split}.thresholded.seg").is_file()
    first = digest(pre)
    assert main(["preprocess", *c, "--manifest", str(corpus), "--out", str(pre), "--thresholding"]) == 0
    assert digest(pre) == first

    assert main(["train-binary", *c, "--data", str(pre), "--out", str(tmp_path / "bin")]) == 0
    assert main(["presort", *c, "--data", str(pre), "--model", str(tmp_path / "bin" / "binary.ckpt"),
                 "--tau", "0.5", "--ground-truth", str(corpus / "ground_truth.csv"),
                 "--out", str(tmp_path / "rel")]) == 0
    with (tmp_path / "rel" / "relabels.csv").open() as fh:
        header = next(csv.reader(fh))
    assert header == ["clip_id", "segment_index", "old_label", "new_label", "background_probability"]
    assert "relabel_threshold = 0.5" in (tmp_path / "rel" / "config.ini").read_text()

    assert main(["train-multiclass", *c, "--data", str(tmp_path / "rel"),
                 "--init", str(tmp_path / "bin" / "binary.ckpt"), "--out", str(tmp_path / "mc")]) == 0
    capsys.readouterr()
    assert main(["evaluate", *c, "--data", str(tmp_path / "rel"),
                 "--model", str(tmp_path / "mc" / "multiclass.ckpt"), "--out", str(tmp_path / "ev")]) == 0
    printed = capsys.readouterr().out
    assert "Accuracy" in printed and "UAR" in printed and "F1" in printed
    report = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    assert set(report["splits"]) == {"val", "test"}
    assert (tmp_path / "ev" / "confusion_test.csv").is_file()
    assert (tmp_path / "ev" / "confusion_test.pgm").is_file()

    assert main(["evaluate", *c, "--data", str(pre), "--model", str(tmp_path / "bin" / "binary.ckpt"),
                 "--split", "test", "--out", str(tmp_path / "evb")]) == 0
    assert (tmp_path / "evb" / "mismatch_test.csv").is_file()


def test_presort_rejects_multiclass_model(corpus, cfg_file, tmp_path):
    c = ["--config", str(cfg_file)]
    pre = tmp_path / "pre"
    assert main(["preprocess", *c, "--manifest", str(corpus), "--out", str(pre)]) == 0
    assert main(["train-multiclass", *c, "--data", str(pre), "--out", str(tmp_path / "mc")]) == 0
    assert main(["presort", *c, "--data", str(pre), "--model", str(tmp_path / "mc" / "multiclass.ckpt"),
                 "--out", str(tmp_path / "x")]) == 2


def test_run_command(corpus, cfg_file, tmp_path, capsys):
    assert main(["run", "--config", str(cfg_file), "--manifest", str(corpus), "--regime", "presort",
                 "--epochs", "1,1", "--out", str(tmp_path / "r")]) == 0
    data = json.loads((tmp_path / "r" / "report.json").read_text())
    assert data["config"]["train"]["epochs_binary"] == 1
    assert data["relabel"] is not None
    for name in ("config.ini", "binary.ckpt", "multiclass.ckpt", "relabels.csv", "mismatch_test.pgm"):
        assert (tmp_path / "r" / name).is_file()
    assert "regime presort" in capsys.readouterr().out
