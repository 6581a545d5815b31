import csv
import json

import pytest

from vsql.cli import main
from vsql.data import load_dataset


def _write(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


def _last_json(out):
    return json.loads(out.strip().splitlines()[-1])


def test_gen_train_eval_round_trip(tmp_path, capsys):
    ds = tmp_path / "qsd.json"
    assert main(["gen", "qsd-binary", "--out", str(ds), "--seed", "7"]) == 0
    assert _last_json(capsys.readouterr().out) == {"states": 300, "per_label": {"0": 100, "1": 200}}
    splits, doc = load_dataset(ds)
    assert (len(splits["train"]), len(splits["test"])) == (240, 60)
    assert doc["qubit_order"] == "big-endian"

    cfg = _write(
        tmp_path / "train.json",
        {
            "experiment": "dataset",
            "data_path": str(ds),
            "ansatz": {"kind": "qsd"},
            "train": {"learning_rate": 0.03, "max_iterations": 150, "eval_every": 50},
        },
    )
    ckpt = tmp_path / "model.json"
    assert main(["train", "--config", cfg, "--out", str(ckpt), "--seed", "1"]) == 0
    run = _last_json(capsys.readouterr().out)
    assert run["iterations"] == 150 and run["parameters"] == 1 + 2 + 1
    rows = list(csv.reader((tmp_path / "model.metrics.csv").open()))
    assert rows[0] == ["iteration", "loss", "train_acc", "val_acc"] and len(rows) == 151

    assert main(["eval", "--ckpt", str(ckpt), "--data", str(ds)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("accuracy ") and "confusion" in out
    preds = list(csv.reader((tmp_path / "model.predictions.csv").open()))
    assert preds[0] == ["index", "label", "predicted"] and len(preds) == 61


def test_train_repeat_reports_mean(tmp_path, capsys):
    cfg = _write(
        tmp_path / "t.json",
        {
            "experiment": "noisy",
            "dataset": {"noise_cap": 0.1, "count_per_class": 10},
            "ansatz": {"kind": "mnist", "n_qsc": 2, "depth": 1},
            "train": {"learning_rate": 0.1, "max_iterations": 5},
            "repeat": 2,
        },
    )
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "m.json")]) == 0
    summary = _last_json(capsys.readouterr().out)
    assert set(summary) == {"mean_accuracy", "std_accuracy"}
    assert (tmp_path / "m.r1.json").exists() and (tmp_path / "m.metrics.r1.csv").exists()


@pytest.mark.parametrize(
    "doc",
    [
        {"experiment": "qsd-binary"},
        {"experiment": "qsd-binary", "ansatz": {"kind": "qsd"}, "train": {"learning_rate": -1}},
        {"experiment": "noisy", "ansatz": {"kind": "qsd"}, "dataset": {"noise_cap": 1.5}},
        {"experiment": "qsd-binary", "ansatz": {"kind": "qsd"}, "bogus": 1},
        {"experiment": "dataset", "ansatz": {"kind": "qsd"}},
        {"experiment": "qsd-binary", "ansatz": {"kind": "mnist", "n_qsc": 3}},
    ],
)
def test_bad_train_configs_exit_2(tmp_path, doc):
    cfg = _write(tmp_path / "bad.json", doc)
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "x.json")]) == 2


def test_malformed_json_and_missing_files_exit_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "x.json")]) == 2
    assert main(["eval", "--ckpt", str(tmp_path / "nope.json"), "--data", str(bad)]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_eval_dimension_mismatch_exits_2(tmp_path, capsys):
    ds = tmp_path / "noisy.json"
    assert main(["gen", "noisy", "--out", str(ds)]) == 0
    qsd = tmp_path / "qsd.json"
    assert main(["gen", "qsd-binary", "--out", str(qsd)]) == 0
    cfg = _write(
        tmp_path / "t.json",
        {"experiment": "dataset", "data_path": str(qsd), "ansatz": {"kind": "qsd"}, "train": {"max_iterations": 2}},
    )
    ckpt = tmp_path / "m.json"
    assert main(["train", "--config", cfg, "--out", str(ckpt)]) == 0
    assert main(["eval", "--ckpt", str(ckpt), "--data", str(ds)]) == 2


@pytest.mark.parametrize("which", ["theorem3", "corollary1"])
def test_verify_reports_pass(tmp_path, capsys, which):
    out = tmp_path / "r.json"
    assert main(["verify", which, "--out", str(out)]) == 0
    assert json.loads(out.read_text())["passed"] is True


def test_verify_bp_scan_and_landscape_csv(tmp_path, capsys):
    cfg = _write(tmp_path / "bp.json", {"pairs": [[10, 2], [20, 2]], "trials": 500})
    out = tmp_path / "bp.csv"
    assert main(["verify", "bp-scan", "--config", cfg, "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0] == "n,n_qsc,trials,mean,variance"
    assert json.loads(out.with_suffix(".report.json").read_text())["passed"]

    cfg = _write(tmp_path / "ls.json", {"grid_size": 10, "compare_n_qsc": 6})
    out = tmp_path / "ls.csv"
    assert main(["verify", "landscape", "--config", cfg, "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 101


def test_verify_failure_exits_1(tmp_path, capsys):
    # a wide circuit compared against a narrow one reverses the expected ordering
    cfg = _write(tmp_path / "ls.json", {"n": 10, "n_qsc": 10, "grid_size": 5, "compare_n_qsc": 2})
    assert main(["verify", "landscape", "--config", cfg]) == 1
    assert "FAILED range_shrinks" in capsys.readouterr().err


def test_verify_bad_pair_exits_2(tmp_path):
    cfg = _write(tmp_path / "bp.json", {"pairs": [[2, 4]]})
    assert main(["verify", "bp-scan", "--config", cfg]) == 2


def test_threads_flag(tmp_path):
    assert main(["gen", "qsd-three", "--out", str(tmp_path / "d.json"), "--threads", "1"]) == 0
    assert main(["gen", "qsd-three", "--out", str(tmp_path / "d.json"), "--threads", "0"]) == 2
