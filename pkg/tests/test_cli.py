import csv
import json
from pathlib import Path

import numpy as np
import pytest

from edafm.cli import DEFAULTS, main
from edafm.ingest import format_e4_eda
from edafm.synthetic import labeled_cohort


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Raw tree -> archive -> decompositions -> labelled shards, built once."""
    root = tmp_path_factory.mktemp("cli")
    tree = root / "raw"
    labels = []
    for d, ds in enumerate(("alpha", "beta")):
        for rec, intervals in labeled_cohort(3, 16, seed=d):
            user = f"{ds}_{rec.user_id}"
            folder = tree / ds / user / "session1"
            folder.mkdir(parents=True)
            rec.user_id = user
            (folder / "EDA.csv").write_text(format_e4_eda(rec))
            labels += [(user, i.t0, i.t1, i.label) for i in intervals]
    with open(root / "labels.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["user_id", "t0", "t1", "label"])
        wr.writerows(labels)
    assert main(["ingest", "--root", str(tree), "--out", str(root / "archive")]) == 0
    assert main(["preprocess", "--archive", str(root / "archive"), "--out", str(root / "decomp")]) == 0
    assert main(["window", "--archive", str(root / "archive"), "--decomp", str(root / "decomp"),
                 "--out", str(root / "shards"), "--labels", str(root / "labels.csv")]) == 0
    return root


def test_window_outputs(pipeline):
    shards = sorted((pipeline / "shards").rglob("*.shard"))
    assert len(shards) == 6
    cfg = json.loads((pipeline / "shards" / "resolved_config.json").read_text())
    assert cfg["command"] == "window" and cfg["step"] == 240


def test_features_embed_evaluate(pipeline, capsys, tmp_path):
    r = pipeline
    for kind in ("generic", "eda"):
        code, out, _ = run(capsys, "features", "--shards", r / "shards", "--out", tmp_path / f"{kind}.csv",
                           "--kind", kind)
        assert code == 0 and json.loads(out)["windows"] == 96
    code, out, _ = run(capsys, "train", "--shards", r / "shards", "--out", tmp_path / "model",
                       "--max-epochs", 2, "--batch-size", 32)
    assert code == 0 and json.loads(out)["epochs"] == 2
    assert (tmp_path / "model" / "loss_curves.csv").exists()
    code, out, _ = run(capsys, "embed", "--checkpoint", tmp_path / "model" / "encoder.npz",
                       "--shards", r / "shards", "--out", tmp_path / "emb.csv")
    assert code == 0 and json.loads(out)["dim"] == 64
    code, _, _ = run(capsys, "evaluate", "--matrix", tmp_path / "generic.csv", "--matrix", tmp_path / "emb.csv",
                     "--out", tmp_path / "results.csv", "--plan", tmp_path / "plan.json", "--task", "stress")
    assert code == 0
    with open(tmp_path / "results.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [row["method"] for row in rows] == ["generic", "dummy", "emb", "dummy"]
    assert {"balanced_accuracy_mean", "balanced_accuracy_se", "mcc_mean", "f1_se"} <= set(rows[0])
    assert all(row["n_folds"] == "6" for row in rows)
    # stored plan is reused
    code, out, _ = run(capsys, "evaluate", "--matrix", tmp_path / "generic.csv",
                       "--out", tmp_path / "again.csv", "--plan", tmp_path / "plan.json", "--protocol", "TA")
    assert code == 0 and json.loads(out)["folds"] == 6
    code, out, _ = run(capsys, "probe", "--matrix", tmp_path / "eda.csv", "--out", tmp_path / "probe.json")
    assert code == 0 and json.loads(out)["chosen_C"] in (0.01, 0.1, 1.0, 10.0)


def test_byte_identical_reruns(pipeline, capsys, tmp_path):
    r = pipeline
    for rep in ("a", "b"):
        d = tmp_path / rep
        assert run(capsys, "features", "--shards", r / "shards", "--out", d / "f.csv", "--kind", "eda")[0] == 0
        assert run(capsys, "train", "--shards", r / "shards", "--out", d / "m", "--max-epochs", 1,
                   "--batch-size", 48, "--seed", 3)[0] == 0
        assert run(capsys, "evaluate", "--matrix", d / "f.csv", "--out", d / "res.csv", "--protocol", "TA")[0] == 0
    for name in ("f.csv", "m/encoder.npz", "m/loss_curves.csv", "res.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_corpus_stats(pipeline, capsys, tmp_path):
    code, out, _ = run(capsys, "corpus-stats", "--archive", pipeline / "archive", "--out", tmp_path)
    assert code == 0 and json.loads(out) == {"datasets": 2}
    with open(tmp_path / "datasets.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [row["dataset_id"] for row in rows] == ["alpha", "beta"]
    assert all(row["users"] == "3" and float(row["hours"]) == pytest.approx(0.8) for row in rows)
    with open(tmp_path / "histogram.csv") as fh:
        hist = list(csv.DictReader(fh))
    assert len(hist) == 100 and float(hist[-1]["bin_hi"]) == 2.5


def test_augment_preview_and_bench(pipeline, capsys, tmp_path):
    code, _, _ = run(capsys, "augment-preview", "--shards", pipeline / "shards", "--out", tmp_path / "aug.csv")
    assert code == 0
    with open(tmp_path / "aug.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 18 * 3 * 240 and len({row["kind"] for row in rows}) == 18
    code, out, _ = run(capsys, "bench", "--shards", pipeline / "shards", "--out", tmp_path / "bench.csv",
                       "--encoder", "tiny")
    assert code == 0 and set(json.loads(out)) == {"generic", "eda", "encoder"}


def test_stats_command(capsys, tmp_path):
    (tmp_path / "s.csv").write_text("method,e1,e2,e3,e4,e5\na,3,3,3,3,3\nb,2,2,2,2,2\nc,1,1,1,1,1\n")
    code, out, _ = run(capsys, "stats", "--scores", tmp_path / "s.csv", "--out", tmp_path / "s.json")
    assert code == 0 and json.loads(out)["chi2"] == pytest.approx(10.0)


def test_config_file_and_overrides(capsys, tmp_path):
    (tmp_path / "s.csv").write_text("method,e1,e2\na,1,2\nb,0,1\n")
    cfg = {"stats": {"scores": str(tmp_path / "s.csv"), "out": str(tmp_path / "x.json")}}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    code, _, _ = run(capsys, "stats", "--config", tmp_path / "c.json", "--out", tmp_path / "y.json")
    assert code == 0 and (tmp_path / "y.json").exists() and not (tmp_path / "x.json").exists()
    resolved = json.loads((tmp_path / "resolved_config.json").read_text())
    assert resolved["out"] == str(tmp_path / "y.json")
    (tmp_path / "bad.json").write_text(json.dumps({"bogus": 1}))
    code, _, err = run(capsys, "stats", "--config", tmp_path / "bad.json")
    assert code == 2 and json.loads(err)["error"] == "cli.UsageError"


def test_usage_and_error_codes(capsys, tmp_path):
    assert run(capsys, "frobnicate")[0] == 2
    assert run(capsys)[0] == 2
    code, _, err = run(capsys, "features", "--out", tmp_path / "f.csv")
    assert code == 2 and "--shards" in json.loads(err)["message"]
    code, _, err = run(capsys, "features", "--shards", tmp_path / "nothing", "--out", tmp_path / "f.csv")
    assert code == 3 and json.loads(err)["error"] == "train.EmptyData"
    (tmp_path / "s.csv").write_text("method,e1\na,1\n")
    code, _, err = run(capsys, "stats", "--scores", tmp_path / "s.csv", "--out", tmp_path / "o.json")
    assert code == 3 and json.loads(err)["error"] == "eval.TooFewMethods"


def test_every_command_has_help():
    assert set(DEFAULTS) >= {"ingest", "preprocess", "window", "augment-preview", "train", "embed",
                             "features", "probe", "evaluate", "bench", "corpus-stats"}
