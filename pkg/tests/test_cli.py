import json
from pathlib import Path

import pytest

from pcbdet.cli import main

TINY = """\
preset = "toy_dcac"
data.source = "synthetic"
data.n_train_val_boards = 6
data.n_test_boards = 2
train.epochs = 1
train.batch_size = 4
"""


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.cfg").write_text(TINY)
    assert main(["train", "--config", str(root / "tiny.cfg"), "--out", str(root / "run"), "--quiet"]) == 0
    return root


def _synth(out, n, size, n_test=0):
    assert main(["synth", "--out", str(out), "--n-train-val", str(n), "--n-test", str(n_test), "--size", str(size)]) == 0


def _patchify(src, out, *extra):
    return main(["patchify", "--boards", str(src / "boards"), "--annotations", str(src / "annotations.jsonl"), "--out", str(out), *extra])


def test_patchify_single_board(tmp_path):
    _synth(tmp_path / "s", 1, 512)
    assert _patchify(tmp_path / "s", tmp_path / "p") == 0
    summary = json.loads((tmp_path / "p" / "summary.json").read_text())
    assert summary["n_patches"] == 1 and len(list((tmp_path / "p" / "patches").glob("*.png"))) == 1


def test_patchify_counts(tmp_path):
    _synth(tmp_path / "s", 3, 1024, n_test=1)
    assert _patchify(tmp_path / "s", tmp_path / "p") == 0
    summary = json.loads((tmp_path / "p" / "summary.json").read_text())
    assert summary["n_patches"] == 16
    assert summary["split_counts"]["test"] == 4
    assert summary["split_counts"]["train"] + summary["split_counts"]["val"] == 12
    assert set(summary["patches_per_board"].values()) == {4}


def test_patchify_unreadable_annotations_leaves_nothing(tmp_path):
    _synth(tmp_path / "s", 1, 512)
    (tmp_path / "s" / "annotations.jsonl").write_text("{not json\n")
    assert _patchify(tmp_path / "s", tmp_path / "p") != 0
    assert not (tmp_path / "p").exists()
    assert not any(p.name.startswith(".p.partial") for p in tmp_path.iterdir())


def test_train_outputs(trained):
    run = trained / "run"
    names = {p.name for p in run.iterdir()}
    assert {"config.cfg", "split_manifest.tsv", "train_log.jsonl", "checkpoints", "run_manifest.json"} <= names
    manifest = json.loads((run / "run_manifest.json").read_text())
    assert manifest["epochs"] == 1 and manifest["aborted"] is None
    assert set(manifest["weights_sha256"]) >= {"init", "last"}


def test_train_zero_epochs(tmp_path):
    (tmp_path / "c.cfg").write_text(TINY.replace("train.epochs = 1", "train.epochs = 0"))
    assert main(["train", "--config", str(tmp_path / "c.cfg"), "--out", str(tmp_path / "r"), "--quiet"]) == 0
    assert [p.name for p in (tmp_path / "r" / "checkpoints").iterdir()] == ["init"]
    assert not (tmp_path / "r" / "train_log.jsonl").exists()
    assert json.loads((tmp_path / "r" / "run_manifest.json").read_text())["steps"] == 0


def test_train_bad_field(tmp_path, capsys):
    (tmp_path / "c.cfg").write_text(TINY + "train.epoks = 3\n")
    assert main(["train", "--config", str(tmp_path / "c.cfg"), "--out", str(tmp_path / "r")]) == 1
    assert "train.epoks" in capsys.readouterr().err
    assert main(["train", "--config", str(tmp_path / "c.cfg"), "--out", str(tmp_path / "r"), "--set", "x"]) == 1


def test_usage_error_is_exit_one():
    with pytest.raises(SystemExit) as info:
        main(["eval"])
    assert info.value.code == 1


def test_eval_byte_identical(trained, tmp_path):
    ckpt = str(trained / "run" / "checkpoints" / "last")
    assert main(["eval", "--checkpoint", ckpt, "--out", str(tmp_path / "a")]) == 0
    assert main(["eval", "--checkpoint", ckpt, "--out", str(tmp_path / "b")]) == 0
    for name in ("eval_val.json", "eval_val.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    report = json.loads((tmp_path / "a" / "eval_val.json").read_text())
    assert report["config"]["split"] == "val" and "nms_iou" in report["config"]


def test_eval_guards(trained, tmp_path):
    ckpt = str(trained / "run" / "checkpoints" / "last")
    assert main(["eval", "--checkpoint", ckpt, "--split", "train"]) == 1
    assert main(["eval", "--checkpoint", ckpt, "--split", "train", "--allow-train"]) == 0
    empty = tmp_path / "empty"
    empty.mkdir()
    (empty / "patches").mkdir()
    (empty / "patches.jsonl").write_text("")
    (empty / "manifest.tsv").write_text("# patch_id\tboard_id\tx0\ty0\tsize\tsplit\n")
    assert main(["eval", "--checkpoint", ckpt, "--data", str(empty)]) != 0


def test_predict(trained, tmp_path, capsys):
    _synth(tmp_path / "s", 1, 128)
    image = next((tmp_path / "s" / "boards").glob("*.png"))
    ckpt = str(trained / "run" / "checkpoints" / "last")
    assert main(["predict", "--checkpoint", ckpt, "--image", str(image), "--out", str(tmp_path / "o")]) == 0
    lines = (tmp_path / "o" / f"{image.stem}.detections.jsonl").read_text().splitlines()
    for line in lines:
        d = json.loads(line)
        assert 0.0 <= d["score"] <= 1.0 and len(d["box"]) == 4
    capsys.readouterr()
    assert main(["predict", "--checkpoint", ckpt, "--image", str(image)]) == 0
    assert capsys.readouterr().out.splitlines() == lines
    assert main(["predict", "--checkpoint", ckpt, "--image", str(tmp_path / "missing.png")]) == 1


def test_bench_single_model(trained, tmp_path):
    ckpt = str(trained / "run" / "checkpoints" / "last")
    out = tmp_path / "b"
    assert main(["bench", "--checkpoint", ckpt, "--out", str(out), "--iters", "10", "--warmup", "1"]) == 0
    rows = (out / "comparison.csv").read_text().splitlines()
    header, row = rows[0].split(","), rows[1].split(",")
    assert float(row[header.index("latency_ratio")]) == 1.0
    assert {p.name for p in out.iterdir()} >= {"comparison.txt", "comparison.csv"}


def test_bench_rejects_few_iters(trained, tmp_path):
    ckpt = str(trained / "run" / "checkpoints" / "last")
    assert main(["bench", "--checkpoint", ckpt, "--out", str(tmp_path / "b"), "--iters", "5"]) != 0
    assert not Path(tmp_path / "b").exists()


def test_manifest_reexecutes_run(trained, tmp_path):
    manifest = trained / "run" / "run_manifest.json"
    assert main(["train", "--config", str(manifest), "--out", str(tmp_path / "again"), "--quiet"]) == 0
    for name in ("train_log.jsonl", "config.cfg", "split_manifest.tsv"):
        assert (tmp_path / "again" / name).read_bytes() == (trained / "run" / name).read_bytes()
    assert main(["train", "--config", str(trained / "run" / "eval.json"), "--out", str(tmp_path / "x")]) == 1


def test_eval_class_count_mismatch(trained, tmp_path):
    assert main(["synth", "--out", str(tmp_path / "s"), "--n-train-val", "4", "--n-test", "1", "--size", "128",
                 "--num-classes", "6", "--imbalance", "1.0"]) == 0
    assert _patchify(tmp_path / "s", tmp_path / "p", "--patch-size", "128") == 0
    ckpt = str(trained / "run" / "checkpoints" / "last")
    assert main(["eval", "--checkpoint", ckpt, "--data", str(tmp_path / "p"), "--split", "test"]) == 1
