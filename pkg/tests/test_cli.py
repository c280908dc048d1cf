import csv
import json
from pathlib import Path

import numpy as np
import pytest

from cer_mtl import tensor
from cer_mtl.cli import main
from cer_mtl.data import load_recordings
from cer_mtl.losses import ccc
from cer_mtl.model import load_checkpoint

FAST = ["--lr", "3e-3", "--epochs", "2", "--patience", "2", "--center-stride", "20", "--batch-size", "64"]


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert main(["synth", "--seed", "3", "--frames", "1200", "--recordings", "6", "--out", str(out)]) == 0
    return out / "manifest.json"


@pytest.fixture(scope="module")
def trained(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--data", str(corpus), "--out", str(out), "--folds", "3", *FAST]) == 0
    return out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_synth_twice_is_byte_identical(tmp_path):
    args = ["synth", "--seed", "7", "--frames", "20000", "--recordings", "2"]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
    assert a == b and "manifest.json" in a


def test_synth_manifest_loads(corpus):
    recs = load_recordings(corpus)
    assert len(recs) == 6
    assert {m: r.dim for m, r in recs[0].features.items()} == {"speech": 39, "body": 24}
    assert len(recs[0]) == 1200


def _oracle_ccc(manifest) -> float:
    """Least-squares activation readout from the fused features, scored in sample."""
    recs = load_recordings(manifest)
    x = np.vstack([np.hstack([r.features["speech"].vectors, r.features["body"].vectors]) for r in recs])
    y = np.concatenate([r.labels.values["activation"] for r in recs])
    x = np.hstack([x, np.ones((len(x), 1))])
    coef, *_ = np.linalg.lstsq(x, y, rcond=None)
    return ccc(x @ coef, y)


def test_hard_is_harder_than_easy(tmp_path):
    scores = {}
    for level in ("easy", "hard"):
        out = tmp_path / level
        main(["synth", "--seed", "1", "--frames", "1500", "--recordings", "2", "--difficulty", level, "--out", str(out)])
        scores[level] = _oracle_ccc(out / "manifest.json")
    assert scores["hard"] < scores["easy"]


def test_train_outputs(trained):
    assert {p.name for p in trained.iterdir()} >= {"config.toml", "epoch_log.csv", "timing.csv", "best.ckpt",
                                                   "parameters.json"}
    assert "wall" not in (trained / "epoch_log.csv").read_text()
    assert json.loads((trained / "parameters.json").read_text())["total"] == 6190


def test_missing_label_file_exit_2(corpus, tmp_path, capsys):
    data = tmp_path / "data"
    data.mkdir()
    entries = json.loads(corpus.read_text())
    for e in entries:
        for rel in e["feature_paths"].values():
            (data / rel).write_bytes((corpus.parent / rel).read_bytes())
        e["label_path"] = "missing_" + e["label_path"]
    (data / "manifest.json").write_text(json.dumps(entries))
    capsys.readouterr()
    code = main(["train", "--data", str(data / "manifest.json"), "--out", str(tmp_path / "run")])
    assert code == 2
    err = json.loads(capsys.readouterr().err)
    assert err["path"].endswith("missing_rec000_labels.csv")
    # the resolved config is written before data loading and holds the published defaults
    text = (tmp_path / "run" / "config.toml").read_text()
    for line in ("learning_rate = 5e-05", "batch_size = 256", "max_epochs = 100", "patience_epochs = 20"):
        assert line in text


def test_stl_valence(corpus, tmp_path):
    out = tmp_path / "stl"
    assert main(["train", "--data", str(corpus), "--out", str(out), "--folds", "3",
                 "--mode", "stl", "--task", "valence", *FAST]) == 0
    cfg = load_checkpoint(out / "best.ckpt").config
    assert cfg.mode == "stl" and cfg.tasks == ("valence",)
    assert read_csv(out / "epoch_log.csv")[0].keys() == {"epoch", "train_J", "val_J", "val_ccc_valence"}


def test_stl_needs_task(corpus, tmp_path):
    assert main(["train", "--data", str(corpus), "--out", str(tmp_path), "--mode", "stl"]) == 2


def test_eval_reproduces_logged_val_ccc(corpus, trained, tmp_path):
    ck = load_checkpoint(trained / "best.ckpt")
    assert main(["eval", "--checkpoint", str(trained / "best.ckpt"), "--data", str(corpus),
                 "--split", "val", "--window", "10", "--out", str(tmp_path)]) == 0
    metrics = {r["task"]: float(r["ccc"]) for r in read_csv(tmp_path / "metrics.csv")}
    for t, v in ck.meta["val_ccc"].items():
        assert metrics[t] == pytest.approx(v, abs=1e-12)
    logged = read_csv(trained / "epoch_log.csv")[ck.epoch - 1]
    assert float(logged["val_ccc_activation"]) == pytest.approx(metrics["activation"], abs=1e-12)


def test_eval_sliding_length_and_oracle(corpus, tmp_path):
    rec = load_recordings(corpus)[0]
    pred = tmp_path / "oracle.csv"
    with pred.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["recording", "frame", "activation", "valence", "dominance"])
        for i in range(256):
            w.writerow([rec.id, i, *(rec.labels.values[t][i] for t in ("activation", "valence", "dominance"))])
    assert main(["eval", "--predictions", str(pred), "--data", str(corpus), "--out", str(tmp_path / "ev")]) == 0
    metrics = read_csv(tmp_path / "ev" / "metrics.csv")
    assert [float(m["ccc"]) for m in metrics] == [1.0, 1.0, 1.0]
    assert len(read_csv(tmp_path / "ev" / "sliding_ccc.csv")) == 256 - 100 + 1


def test_eval_needs_one_source(corpus, tmp_path):
    assert main(["eval", "--data", str(corpus), "--out", str(tmp_path)]) == 2


def test_eval_corrupt_checkpoint(corpus, trained, tmp_path, capsys):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes((trained / "best.ckpt").read_bytes()[:-7])
    assert main(["eval", "--checkpoint", str(bad), "--data", str(corpus), "--out", str(tmp_path)]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "CheckpointError"


def test_gradcheck_same_seed_same_report(capsys):
    reports = []
    for _ in range(2):
        assert main(["gradcheck", "--seed", "4", "--points", "1", "--sizes", "4,6,3,2,8"]) == 0
        reports.append(capsys.readouterr().out)
    assert reports[0] == reports[1] and "mtl_objective" in reports[0]


def test_gradcheck_catches_corrupted_backward(monkeypatch, capsys):
    monkeypatch.setattr(tensor, "_tanh_grad", lambda y: 1.0 - y)  # wrong derivative
    assert main(["gradcheck", "--points", "1", "--sizes", "4,6,3,2,8"]) == 1
    err = capsys.readouterr().err
    assert "gru_step" in err and "dense" in err and "matmul" in err


def test_sweep_window_table(corpus, tmp_path):
    out = tmp_path / "sweep"
    assert main(["sweep", "--axis", "window", "--values", "20,40,60", "--data", str(corpus), "--out", str(out),
                 "--folds", "3", "--epochs", "1", "--center-stride", "40", "--lr", "3e-3"]) == 0
    rows = read_csv(out / "sweep_window.csv")
    assert [r["N"] for r in rows] == ["20", "40", "60"]
    assert (out / "sweep_window.md").read_text().count("\n") == 5


def test_bad_config_file(corpus, tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[model]\nlayers = 9\n")
    assert main(["train", "--config", str(cfg), "--data", str(corpus), "--out", str(tmp_path / "o")]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "ConfigError"
