import csv
import hashlib
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from fairsurv.augmentation import DeltaParams
from fairsurv.cli import main
from fairsurv.dataset import SurvivalDataset, save_dataset
from fairsurv.models import AftScale, LinearModel, init_mlp
from fairsurv.training import TrainConfig, TrainedModel

SYNTH = {"n": 300, "p": 3, "beta": [0.5, 1.0, 1.0], "bias_strength": 2.0, "bias_mode": "shift", "seed": 1}


def _json(path, obj):
    path.write_text(json.dumps(obj))
    return path


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def data(tmp_path):
    spec = _json(tmp_path / "spec.json", SYNTH)
    assert main(["synth", str(spec), "--out", str(tmp_path / "data.csv")]) == 0
    return tmp_path / "data.csv"


def _train(tmp_path, data, out, **train):
    cfg = {"dataset": str(data), "split": {"ratios": [0.6, 0.2, 0.2], "seed": 3},
           "train": {"scenario": "LinearAFT", "method": "Vanilla", "epochs": 60, "learning_rate": 0.05, **train}}
    path = _json(tmp_path / f"{out}.json", cfg)
    return main(["train", "--config", str(path), "--out", str(tmp_path / out)])


def test_synth_writes_files(data, capsys):
    assert data.exists() and data.with_suffix(".schema.json").exists()


def test_synth_prints_censoring(tmp_path, capsys):
    spec = _json(tmp_path / "s.json", {"n": 100, "seed": 0})
    assert main(["synth", str(spec), "--out", str(tmp_path / "d.csv")]) == 0
    assert "censored fraction" in capsys.readouterr().out


def test_synth_malformed_json(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["synth", str(bad), "--out", str(tmp_path / "d.csv")]) == 2
    assert "malformed JSON" in capsys.readouterr().err


def test_synth_unreachable_output(tmp_path):
    spec = _json(tmp_path / "s.json", {"n": 50})
    # a regular file cannot hold a directory
    assert main(["synth", str(spec), "--out", str(spec / "d.csv")]) == 3


def test_train_then_evaluate(tmp_path, data):
    assert _train(tmp_path, data, "run") == 0
    for name in ("checkpoint.json", "history.jsonl", "manifest.json"):
        assert (tmp_path / "run" / name).exists()
    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert manifest["dataset_sha256"] == _sha(data)
    assert manifest["seed"] == 0 and len(manifest["config_sha256"]) == 64
    code = main(["evaluate", "--checkpoint", str(tmp_path / "run" / "checkpoint.json"),
                 "--dataset", str(data), "--out", str(tmp_path / "eval")])
    assert code == 0
    report = json.loads((tmp_path / "eval" / "report.json").read_text())
    assert 0.5 < report["aAUC"] <= 1
    assert _rows(tmp_path / "eval" / "report.csv")[0]["method"] == "Vanilla"


def test_train_is_reproducible(tmp_path, data):
    assert _train(tmp_path, data, "a", method="CMIA", lambda1=10.0, noise={"m": 5}) == 0
    assert _train(tmp_path, data, "b", method="CMIA", lambda1=10.0, noise={"m": 5}) == 0
    for name in ("checkpoint.json", "history.jsonl", "manifest.json"):
        assert _sha(tmp_path / "a" / name) == _sha(tmp_path / "b" / name)


def test_train_negative_lambda(tmp_path, data, capsys):
    assert _train(tmp_path, data, "neg", lambda1=-1.0) == 2
    assert "lambda1" in capsys.readouterr().err


def test_train_seed_flag_overrides(tmp_path, data):
    cfg = _json(tmp_path / "c.json", {"dataset": str(data), "train": {"epochs": 3}})
    assert main(["train", "--config", str(cfg), "--seed", "9", "--out", str(tmp_path / "r")]) == 0
    assert json.loads((tmp_path / "r" / "manifest.json").read_text())["seed"] == 9


def _oracle_fixture(tmp_path, groups):
    # x = log T and a near-deterministic AFT model: S(t) ~ I(T > t)
    T = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0])
    ds = SurvivalDataset(np.log(T)[:, None], T, np.ones(8, dtype=int), groups, ["logt"], ["a", "b"],
                         [2.5, 5.5])
    save_dataset(ds, tmp_path / "oracle.csv")
    tm = TrainedModel("LinearAFT", "Vanilla", LinearModel([1.0], 0.0), AftScale(math.log(0.01)), None,
                      DeltaParams([]), TrainConfig(scenario="LinearAFT"), ("logt",), ("a", "b"), (2.5, 5.5))
    tm.save(tmp_path / "oracle_ckpt.json")
    return tmp_path / "oracle.csv", tmp_path / "oracle_ckpt.json"


def test_evaluate_perfect_oracle(tmp_path):
    data, ckpt = _oracle_fixture(tmp_path, [0, 1, 0, 1, 0, 1, 0, 1])
    assert main(["evaluate", "--checkpoint", str(ckpt), "--dataset", str(data), "--whole",
                 "--out", str(tmp_path / "e")]) == 0
    report = json.loads((tmp_path / "e" / "report.json").read_text())
    assert report["aAUC"] == 1.0 and report["adTPR"] == 0.0 and report["adFPR"] == 0.0


def test_evaluate_absent_group_warns(tmp_path, capsys):
    data, ckpt = _oracle_fixture(tmp_path, [0] * 8)
    assert main(["evaluate", "--checkpoint", str(ckpt), "--dataset", str(data), "--whole",
                 "--out", str(tmp_path / "e")]) == 0
    assert "warning" in capsys.readouterr().err


def test_evaluate_dimension_mismatch(tmp_path, data):
    tm = TrainedModel("LinearAFT", "Vanilla", LinearModel([1.0, 2.0], 0.0), AftScale(0.0), None,
                      DeltaParams([]), TrainConfig(scenario="LinearAFT"))
    tm.save(tmp_path / "c.json")
    assert main(["evaluate", "--checkpoint", str(tmp_path / "c.json"), "--dataset", str(data),
                 "--out", str(tmp_path / "e")]) == 2


def _plan(tmp_path, methods, scenarios=("LinearCOX", "LinearAFT"), seeds=(0, 1, 2, 3, 4), **extra):
    plan = {"datasets": [{"name": "synth", "synth": SYNTH}], "scenarios": list(scenarios),
            "methods": list(methods), "seeds": list(seeds), "split": {"ratios": [0.6, 0.2, 0.2]},
            "train": {"epochs": 10, "lambda1": 50.0, "noise": {"m": 5}}, **extra}
    return _json(tmp_path / "plan.json", plan)


def test_benchmark_tables(tmp_path):
    plan = _plan(tmp_path, ["Vanilla", "CMIA"])
    assert main(["benchmark", str(plan), "--out", str(tmp_path / "b")]) == 0
    rows = _rows(tmp_path / "b" / "results.csv")
    assert len(rows) == 20 and all(r["status"] == "ok" for r in rows)
    summary = _rows(tmp_path / "b" / "summary.csv")
    assert [r["method"] for r in summary] == ["Vanilla", "CMIA", "Vanilla", "CMIA", "%CMIA", "%CMIA"]
    van = [r for r in rows if r["scenario"] == "LinearCOX" and r["method"] == "Vanilla"]
    assert abs(float(summary[0]["adTPR"]) - np.mean([float(r["adTPR"]) for r in van])) < 1e-12
    radar = _rows(tmp_path / "b" / "radar.csv")
    assert len(radar) == 4
    assert abs(float(radar[0]["U_AUC"]) - (0.5 + 2 * float(summary[0]["aAUC"]))) < 1e-12


def test_benchmark_ablation_methods(tmp_path):
    plan = _plan(tmp_path, ["CMIA", "CMIA_NoReg", "CMIA_NoAug"], scenarios=["LinearAFT"], seeds=[0])
    assert main(["benchmark", str(plan), "--out", str(tmp_path / "b")]) == 0
    assert [r["method"] for r in _rows(tmp_path / "b" / "summary.csv")] == ["CMIA", "CMIA_NoReg", "CMIA_NoAug"]


def test_benchmark_empty_methods(tmp_path):
    assert main(["benchmark", str(_plan(tmp_path, [])), "--out", str(tmp_path / "b")]) == 2


def test_benchmark_cell_isolation(tmp_path):
    # an absent file makes every cell of one dataset fail; the other dataset is unaffected
    plan = _plan(tmp_path, ["Vanilla"], scenarios=["LinearAFT"], seeds=[0, 1])
    raw = json.loads(plan.read_text())
    raw["datasets"].append({"name": "gone", "path": str(tmp_path / "absent.csv"),
                            "schema": {"time": "time", "event": "event", "groups": ["g"]}})
    plan.write_text(json.dumps(raw))
    assert main(["benchmark", str(plan), "--out", str(tmp_path / "b")]) == 0
    rows = _rows(tmp_path / "b" / "results.csv")
    assert [r["status"] == "ok" for r in rows] == [True, True, False, False]
    alone = _plan(tmp_path, ["Vanilla"], scenarios=["LinearAFT"], seeds=[0, 1])
    assert main(["benchmark", str(alone), "--out", str(tmp_path / "c")]) == 0
    for seed in (0, 1):
        cell = f"cells/synth/LinearAFT/Vanilla/seed{seed}/checkpoint.json"
        assert _sha(tmp_path / "b" / cell) == _sha(tmp_path / "c" / cell)


def test_benchmark_all_cells_fail(tmp_path):
    plan = _plan(tmp_path, ["Vanilla"], scenarios=["LinearAFT"], seeds=[0])
    raw = json.loads(plan.read_text())
    raw["datasets"] = [{"name": "gone", "path": str(tmp_path / "absent.csv"),
                        "schema": {"time": "time", "event": "event", "groups": ["g"]}}]
    plan.write_text(json.dumps(raw))
    assert main(["benchmark", str(plan), "--out", str(tmp_path / "b")]) != 0


def test_benchmark_jobs_deterministic(tmp_path):
    plan = _plan(tmp_path, ["Vanilla", "GD"], scenarios=["LinearCOX"], seeds=[0, 1])
    assert main(["benchmark", str(plan), "--out", str(tmp_path / "one"), "--jobs", "1"]) == 0
    assert main(["benchmark", str(plan), "--out", str(tmp_path / "two"), "--jobs", "2"]) == 0
    for name in ("results.csv", "summary.csv", "radar.csv"):
        assert _sha(tmp_path / "one" / name) == _sha(tmp_path / "two" / name)


def _landscape(tmp_path, data, ckpt, **extra):
    spec = {"checkpoint": str(ckpt), "dataset": str(data), "coefficients": ["x0", "x1"],
            "axes": [[-1, 1, 2], [-1, 1, 2]], "split": {"ratios": [0.6, 0.2, 0.2], "seed": 3}, **extra}
    return main(["landscape", str(_json(tmp_path / "land.json", spec)), "--out", str(tmp_path / "land")])


def test_landscape_grid(tmp_path, data):
    assert _train(tmp_path, data, "cm", method="CMIA", lambda1=10.0, noise={"m": 5}) == 0
    assert _landscape(tmp_path, data, tmp_path / "cm" / "checkpoint.json") == 0
    rows = _rows(tmp_path / "land" / "landscape.csv")
    assert len(rows) == 8
    assert [r["augmentation"] for r in rows] == ["before"] * 4 + ["after"] * 4
    summary = json.loads((tmp_path / "land" / "landscape_summary.json").read_text())
    for name in ("before", "after"):
        part = [r for r in rows if r["augmentation"] == name]
        best = min(part, key=lambda r: float(r["L"]))
        assert summary[name]["min_L"] == [float(best["c1"]), float(best["c2"])]
        for r in part:
            assert abs(float(r["total"]) - float(r["L"]) - float(r["R"])) < 1e-9 * abs(float(r["total"]))


def test_landscape_vanilla_toggles_identical(tmp_path, data):
    assert _train(tmp_path, data, "van") == 0
    assert _landscape(tmp_path, data, tmp_path / "van" / "checkpoint.json") == 0
    rows = _rows(tmp_path / "land" / "landscape.csv")
    strip = [{k: v for k, v in r.items() if k != "augmentation"} for r in rows]
    assert strip[:4] == strip[4:]


def test_landscape_rejects_mlp(tmp_path, data):
    tm = TrainedModel("DeepAFT", "Vanilla", init_mlp(3, np.random.default_rng(0), hidden=(4,)), AftScale(0.0),
                      None, DeltaParams([]), TrainConfig(scenario="DeepAFT"), ("x0", "x1", "x2"))
    tm.save(tmp_path / "mlp.json")
    assert _landscape(tmp_path, data, tmp_path / "mlp.json") == 2


def test_module_entry_point(tmp_path):
    spec = _json(tmp_path / "s.json", {"n": 40})
    out = subprocess.run([sys.executable, "-m", "fairsurv", "synth", str(spec), "--out", str(tmp_path / "d.csv")],
                         capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    bad = subprocess.run([sys.executable, "-m", "fairsurv", "train", "--config", str(tmp_path / "nope.json"),
                          "--out", str(tmp_path / "r")], capture_output=True, text=True)
    assert bad.returncode == 3
