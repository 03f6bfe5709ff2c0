"""Command line: synth, train, evaluate, benchmark, landscape.

Exit codes: 0 success, 2 validation or configuration error, 3 I/O error,
4 numeric divergence.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .augmentation import DeltaParams, augment
from .dataset import (Schema, SplitSpec, SynthSpec, censoring_rates, load_dataset, save_dataset,
                      split, synthesize)
from .errors import FairSurvError, ShapeError, ValidationError
from .fairness import eo_regularizer
from .metrics import COLUMNS, evaluate
from .training import METHODS, SCENARIOS, TrainConfig, TrainedModel, foundational_loss, train, write_history

logger = logging.getLogger("fairsurv")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(FairSurvError):
    pass


# --------------------------------------------------------------------------
# helpers


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc})") from None


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def _sha256_bytes(b) -> str:
    return hashlib.sha256(b).hexdigest()


def _sha256_file(path) -> str:
    return _sha256_bytes(Path(path).read_bytes())


def _write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _resolve(base, p):
    if p is None:
        return None
    p = Path(p)
    return p if p.is_absolute() else Path(base) / p


def _load_schema(dataset_path, schema):
    """Schema from a dict, a JSON file, or the ``<stem>.schema.json`` sidecar."""
    if isinstance(schema, dict):
        return Schema.from_dict(schema)
    if schema is None:
        sidecar = Path(dataset_path).with_suffix(".schema.json")
        if not sidecar.exists():
            raise ConfigError(f"no schema given and no sidecar {sidecar}")
        schema = sidecar
    return Schema.from_dict(_read_json(schema))


def _csv_text(rows, fieldnames):
    out = []
    buf = _Lines(out)
    w = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(v) for k, v in r.items()})
    return "".join(out)


class _Lines:
    def __init__(self, out):
        self.out = out

    def write(self, s):
        self.out.append(s)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


# --------------------------------------------------------------------------
# synth


def cmd_synth(args):
    spec = SynthSpec.from_dict(_read_json(args.spec))
    ds = synthesize(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    sidecar = save_dataset(ds, out)
    for label, rate in censoring_rates(ds).items():
        print(f"group {label}: censored fraction {rate:.4f}")
    print(f"wrote {out} and {sidecar}")
    return EXIT_OK


# --------------------------------------------------------------------------
# train


def _train_inputs(args):
    cfg_path = Path(args.config)
    raw = _read_json(cfg_path)
    base = cfg_path.parent
    dataset = Path(args.dataset) if args.dataset else _resolve(base, raw.get("dataset"))
    if dataset is None:
        raise ConfigError("no dataset given (config key 'dataset' or --dataset)")
    schema = args.schema or raw.get("schema")
    if isinstance(schema, str) and not args.schema:
        schema = _resolve(base, schema)
    train_cfg = dict(raw.get("train", {}))
    if args.seed is not None:
        train_cfg["seed"] = args.seed
    split_raw = dict(raw.get("split", {}))
    split_raw.setdefault("seed", train_cfg.get("seed", 0))
    return dataset, schema, train_cfg, split_raw


def cmd_train(args):
    dataset, schema, train_cfg, split_raw = _train_inputs(args)
    config = TrainConfig.from_dict(train_cfg)
    spec = SplitSpec(**split_raw)
    ds = load_dataset(dataset, _load_schema(dataset, schema))
    if not ds.eval_times and config.fairness_term == "cmi":
        raise ConfigError("CMI methods need eval_times in the dataset schema")
    tr, va, _ = split(ds, spec)
    trained = train(tr, va, config)

    out = Path(args.out)
    ckpt = trained.to_dict()
    ckpt["split"] = spec.to_dict()
    _write_text(out / "checkpoint.json", _dump(ckpt))
    out.mkdir(parents=True, exist_ok=True)
    write_history(trained.history, out / "history.jsonl")
    manifest = {
        "command": "train",
        "version": __version__,
        "config": config.to_dict(),
        "config_sha256": _sha256_bytes(_canonical({"train": config.to_dict(), "split": spec.to_dict()})),
        "dataset": str(dataset),
        "dataset_sha256": _sha256_file(dataset),
        "seed": config.seed,
        "split": spec.to_dict(),
        "checkpoint_sha256": _sha256_file(out / "checkpoint.json"),
    }
    _write_text(out / "manifest.json", _dump(manifest))
    print(f"best epoch {trained.best_epoch}; checkpoint {out / 'checkpoint.json'}")
    return EXIT_OK


# --------------------------------------------------------------------------
# evaluate


def _load_checkpoint(path):
    raw = _read_json(path)
    try:
        return TrainedModel.from_dict(raw), raw
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: not a checkpoint ({exc})") from None


def cmd_evaluate(args):
    trained, raw = _load_checkpoint(args.checkpoint)
    ds = load_dataset(args.dataset, _load_schema(args.dataset, args.schema))
    if ds.n_features != trained.model.n_inputs:
        raise ShapeError(f"dataset has {ds.n_features} features, checkpoint expects {trained.model.n_inputs}")
    if not ds.eval_times:
        ds = ds.replace(eval_times=trained.eval_times)
    split_raw = dict(raw.get("split") or {})
    if args.ratios:
        split_raw["ratios"] = args.ratios
    if args.seed is not None:
        split_raw["seed"] = args.seed
    part = ds if args.whole else split(ds, SplitSpec(**split_raw))[2]
    report = evaluate(trained, part, dataset=Path(args.dataset).stem, seed=split_raw.get("seed"))
    out = Path(args.out)
    _write_text(out / "report.json", report.to_json())
    _write_text(out / "report.csv", report.to_csv())
    for flag in report.flags:
        print(f"warning: {flag}", file=sys.stderr)
    print(" ".join(f"{k}={getattr(report, k):.4f}" for k in COLUMNS))
    return EXIT_OK


# --------------------------------------------------------------------------
# benchmark


def _plan_datasets(plan, base):
    out = []
    for entry in plan.get("datasets", []):
        name = entry.get("name")
        if not name:
            raise ConfigError("every plan dataset needs a 'name'")
        if "synth" in entry:
            out.append({"name": name, "synth": entry["synth"]})
        elif "path" in entry:
            schema = entry.get("schema")
            if isinstance(schema, str):
                schema = str(_resolve(base, schema))
            out.append({"name": name, "path": str(_resolve(base, entry["path"])), "schema": schema})
        else:
            raise ConfigError(f"dataset {name!r} needs 'synth' or 'path'")
    return out


def _cell_config(plan, scenario, method, seed):
    cfg = dict(plan.get("train", {}))
    overrides = plan.get("overrides", {})
    for key in (scenario, method, f"{scenario}/{method}"):
        cfg.update(overrides.get(key, {}))
    cfg.update(scenario=scenario, method=method, seed=seed)
    return cfg


def _load_plan_dataset(entry):
    if "synth" in entry:
        return synthesize(SynthSpec.from_dict(entry["synth"]))
    return load_dataset(entry["path"], _load_schema(entry["path"], entry.get("schema")))


def run_cell(cell):
    """Train and evaluate one (dataset, scenario, method, seed) cell.

    Never raises: failures are returned in the row's ``status``.
    """
    row = {"dataset": cell["dataset"]["name"], "scenario": cell["scenario"],
           "method": cell["method"], "seed": cell["seed"]}
    out = Path(cell["out"])
    try:
        ds = _load_plan_dataset(cell["dataset"])
        spec = SplitSpec(cell["split"]["ratios"], cell["seed"])
        tr, va, te = split(ds, spec)
        config = TrainConfig.from_dict(cell["train"])
        trained = train(tr, va, config)
        report = evaluate(trained, te, dataset=row["dataset"], seed=cell["seed"])
        ckpt = trained.to_dict()
        ckpt["split"] = spec.to_dict()
        _write_text(out / "checkpoint.json", _dump(ckpt))
        write_history(trained.history, out / "history.jsonl")
        _write_text(out / "report.json", report.to_json())
        row.update({k: getattr(report, k) for k in COLUMNS})
        row["best_epoch"] = trained.best_epoch
        row["status"] = "ok"
    except Exception as exc:  # cell isolation: record and continue
        row.update({k: math.nan for k in COLUMNS})
        row["status"] = f"failed: {type(exc).__name__}: {exc}"
        out.mkdir(parents=True, exist_ok=True)
        _write_text(out / "error.txt", traceback.format_exc())
    return row


def summarize(rows):
    """Seed-averaged rows per (dataset, scenario, method) plus % change rows
    of every non-vanilla method against Vanilla."""
    keys = []
    groups = {}
    for r in rows:
        if r.get("status") != "ok":
            continue
        k = (r["dataset"], r["scenario"], r["method"])
        if k not in groups:
            keys.append(k)
            groups[k] = []
        groups[k].append(r)
    summary = []
    means = {}
    for k in keys:
        m = {c: float(np.mean([r[c] for r in groups[k]])) for c in COLUMNS}
        means[k] = m
        summary.append({"dataset": k[0], "scenario": k[1], "method": k[2], "n_seeds": len(groups[k]), **m})
    for k in keys:
        if k[2] == "Vanilla":
            continue
        van = means.get((k[0], k[1], "Vanilla"))
        if van is None:
            continue
        pct = {c: (100.0 * (means[k][c] - van[c]) / van[c]) if van[c] else math.nan for c in COLUMNS}
        summary.append({"dataset": k[0], "scenario": k[1], "method": f"%{k[2]}", "n_seeds": len(groups[k]), **pct})
    return summary


def radar_rows(summary):
    out = []
    for r in summary:
        if r["method"].startswith("%"):
            continue
        out.append({"dataset": r["dataset"], "scenario": r["scenario"], "method": r["method"],
                    "U_AUC": 0.5 + 2 * r["aAUC"], "U_Brier": 0.5 - r["aBrier"],
                    "U_dtpr": -r["adTPR"], "U_dfpr": -r["adFPR"]})
    return out


def plan_cells(plan, base, out):
    for key in ("scenarios", "methods", "seeds"):
        if not plan.get(key):
            raise ConfigError(f"benchmark plan needs a non-empty {key!r} list")
    for s in plan["scenarios"]:
        if s not in SCENARIOS:
            raise ConfigError(f"unknown scenario {s!r}")
    for m in plan["methods"]:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}")
    datasets = _plan_datasets(plan, base)
    if not datasets:
        raise ConfigError("benchmark plan needs at least one dataset")
    split_raw = plan.get("split", {"ratios": [0.8, 0.1, 0.1]})
    cells = []
    for d in datasets:
        for scenario in plan["scenarios"]:
            for method in plan["methods"]:
                for seed in plan["seeds"]:
                    cfg = _cell_config(plan, scenario, method, int(seed))
                    TrainConfig.from_dict(cfg)  # validate up front
                    cells.append({
                        "dataset": d, "scenario": scenario, "method": method, "seed": int(seed),
                        "split": {"ratios": split_raw.get("ratios", [0.8, 0.1, 0.1])}, "train": cfg,
                        "out": str(Path(out) / "cells" / d["name"] / scenario / method / f"seed{seed}"),
                    })
    return cells


def run_benchmark(plan, base, out, jobs=1):
    cells = plan_cells(plan, base, out)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(run_cell, cells))
    else:
        rows = [run_cell(c) for c in cells]
    summary = summarize(rows)
    out = Path(out)
    fields = ["dataset", "scenario", "method", "seed", *COLUMNS, "best_epoch", "status"]
    _write_text(out / "results.csv", _csv_text(rows, fields))
    _write_text(out / "summary.csv", _csv_text(summary, ["dataset", "scenario", "method", "n_seeds", *COLUMNS]))
    _write_text(out / "radar.csv", _csv_text(radar_rows(summary),
                                             ["dataset", "scenario", "method", "U_AUC", "U_Brier", "U_dtpr", "U_dfpr"]))
    return rows, summary


def cmd_benchmark(args):
    plan_path = Path(args.plan)
    plan = _read_json(plan_path)
    out = Path(args.out or plan.get("out") or "benchmark_out")
    rows, _ = run_benchmark(plan, plan_path.parent, out, args.jobs)
    failed = [r for r in rows if r["status"] != "ok"]
    for r in failed:
        print(f"cell {r['dataset']}/{r['scenario']}/{r['method']}/seed{r['seed']}: {r['status']}", file=sys.stderr)
    print(f"{len(rows) - len(failed)} of {len(rows)} cells succeeded; results in {out}")
    if rows and len(failed) == len(rows):
        return EXIT_NUMERIC
    return EXIT_OK


# --------------------------------------------------------------------------
# landscape


def _argmin_point(rows, key):
    best = min(rows, key=lambda r: r[key])
    return [best["c1"], best["c2"]]


def landscape(trained, ds, coefficients, axes, with_augmentation=True, fairness_weight=1.0):
    """Loss grids over two linear coefficients.

    Returns ``(rows, summary)``; each row holds the augmentation toggle, the
    two coefficient values, the foundational loss ``L``, the fairness term
    ``R`` and ``total = L + fairness_weight * R``.
    """
    if trained.model.kind != "linear":
        raise ValidationError("landscapes need a linear model (coefficients are named by feature)")
    names = list(trained.feature_names)
    idx = []
    for c in coefficients:
        if isinstance(c, int):
            k = c
        elif c in names:
            k = names.index(c)
        else:
            raise ValidationError(f"coefficient {c!r} is not a model feature")
        if not 0 <= k < trained.model.n_inputs:
            raise ValidationError(f"coefficient index {k} out of range")
        idx.append(k)
    grids = []
    for lo, hi, steps in axes:
        if int(steps) < 2:
            raise ValidationError("each landscape axis needs at least 2 steps")
        grids.append(np.linspace(float(lo), float(hi), int(steps)))
    if not ds.eval_times:
        ds = ds.replace(eval_times=trained.eval_times)

    toggles = [("before", DeltaParams.zeros(ds))]
    if with_augmentation:
        if len(trained.deltas) != ds.censored_index.shape[0]:
            raise ValidationError("checkpoint extra durations do not match this split's censored records; "
                                  "use the training split")
        toggles.append(("after", trained.deltas))
    log_sigma = trained.scale.log_sigma if trained.scale is not None else None
    noise = trained.config.noise
    rows, summary = [], {}
    for name, deltas in toggles:
        data = augment(ds, deltas)
        block = []
        for c1 in grids[0]:
            for c2 in grids[1]:
                params = trained.model.params.copy()
                params[idx[0]] = c1
                params[idx[1]] = c2
                scores = trained.model.with_params(params).forward(data.X)
                L = foundational_loss(scores, data, trained.scenario, log_sigma)[0]
                R = eo_regularizer(scores, data, noise)[0].total
                block.append({"augmentation": name, "c1": float(c1), "c2": float(c2),
                              "L": L, "R": R, "total": L + fairness_weight * R})
        rows.extend(block)
        summary[name] = {"min_L": _argmin_point(block, "L"), "min_R": _argmin_point(block, "R"),
                         "min_total": _argmin_point(block, "total")}
    return rows, summary


def cmd_landscape(args):
    spec_path = Path(args.spec)
    spec = _read_json(spec_path)
    base = spec_path.parent
    try:
        ckpt_path = _resolve(base, spec["checkpoint"])
        data_path = _resolve(base, spec["dataset"])
        coefficients = spec["coefficients"]
        axes = spec["axes"]
    except KeyError as exc:
        raise ConfigError(f"landscape spec lacks {exc.args[0]!r}") from None
    if len(coefficients) != 2 or len(axes) != 2:
        raise ConfigError("landscape needs exactly two coefficients and two axes")
    trained, raw = _load_checkpoint(ckpt_path)
    schema = spec.get("schema")
    if isinstance(schema, str):
        schema = _resolve(base, schema)
    ds = load_dataset(data_path, _load_schema(data_path, schema))
    part_name = spec.get("part", "train")
    parts = dict(zip(("train", "val", "test"), split(ds, SplitSpec(**(spec.get("split") or raw.get("split") or {})))))
    if part_name not in parts:
        raise ConfigError(f"unknown split part {part_name!r}")
    rows, summary = landscape(trained, parts[part_name], coefficients, axes,
                              with_augmentation=spec.get("toggle", True),
                              fairness_weight=float(spec.get("fairness_weight", 1.0)))
    out = Path(args.out)
    _write_text(out / "landscape.csv", _csv_text(rows, ["augmentation", "c1", "c2", "L", "R", "total"]))
    _write_text(out / "landscape_summary.json", _dump(summary))
    for name, s in summary.items():
        print(f"{name}: min L at {s['min_L']}, min R at {s['min_R']}, min total at {s['min_total']}")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="fairsurv", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic biased survival dataset")
    s.add_argument("spec", help="JSON synth spec")
    s.add_argument("--out", required=True, help="output CSV path")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train one model")
    s.add_argument("--config", required=True)
    s.add_argument("--dataset")
    s.add_argument("--schema")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="evaluate a checkpoint on the test split")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--schema")
    s.add_argument("--seed", type=int, help="split seed (default: the checkpoint's)")
    s.add_argument("--ratios", type=float, nargs=3)
    s.add_argument("--whole", action="store_true", help="evaluate on the whole dataset instead of the test split")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("benchmark", help="run a dataset x scenario x method x seed sweep")
    s.add_argument("plan")
    s.add_argument("--out")
    s.add_argument("--jobs", type=int, default=int(os.environ.get("FAIRSURV_JOBS", "1")))
    s.set_defaults(func=cmd_benchmark)

    s = sub.add_parser("landscape", help="loss grids over two linear coefficients")
    s.add_argument("spec")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_landscape)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FairSurvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
