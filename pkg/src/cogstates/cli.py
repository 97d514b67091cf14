"""Command-line front door: synth | train | evaluate | importance | behavior | report.

Configuration is an INI file (flat key = value under sections); command-line
``--set section.key=value`` overrides win over the file, which wins over
built-in defaults. Every command writes into a fresh run directory that
receives the fully resolved config and seed (enough to replay the run), an
``_INCOMPLETE`` marker that is removed only on success, and deterministic
artifacts: repeating a command with the same config and seed reproduces
every report byte for byte. Wall-clock timings go to ``timing.json``, which
is the one deliberately non-reproducible file.

Exit codes: 0 success, 2 configuration error, 3 data validation error,
4 runtime numeric error. ``COGSTATES_OUT_ROOT`` relocates relative output
paths and overrides nothing else.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import os
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import behavior as bh
from . import data as dio
from . import importance as imp
from . import metrics as mt
from . import models as md
from . import synth as sy
from . import training as tr
from .tensor import TensorError

ENV_OUT_ROOT = "COGSTATES_OUT_ROOT"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class ConfigError(Exception):
    pass


DEFAULTS = {
    "run": {"seed": "0"},
    "data": {"dataset": "", "grouping": ""},
    "model": {"kind": "cnn", "dropout_rate": "", "dtype": "float64"},
    "train": {
        "batch_size": "32", "max_epochs": "200", "patience": "10",
        "lr_initial": "1e-3", "lr_factor": "0.5", "lr_patience": "5",
        "lr_min": "1e-5", "class_weights": "false",
    },
    "grid": {"dropout_rate": "", "batch_size": "", "learning_rate": ""},
    "split": {"train": "0.70", "validation": "0.10", "test": "0.20"},
    "noise": {"mean": "0.0", "std": "1.0", "repeats": "5"},
    "ebq": {"min_segments": "10", "rest_inherits_ebq": "true"},
    "synth": {
        "n_subjects": "12", "sessions_per_subject": "4", "amplitude": "1.2",
        "noise_exponent": "1.0", "coupling": "true",
        "length_min": "290", "length_max": "800",
    },
}


def load_config(path: str | None, overrides: list[str]) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    cp.read_dict(DEFAULTS)
    if path:
        if not Path(path).exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        key, value = item.split("=", 1)
        section, option = key.split(".", 1)
        if section not in cp or option not in cp[section]:
            raise ConfigError(f"unknown config option {section}.{option}")
        cp[section][option] = value
    return cp


def _get(cp, section, option, conv, what=None):
    raw = cp[section][option]
    try:
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {section}.{option}: {raw!r}") from exc


def _bool(raw: str) -> bool:
    lower = raw.strip().lower()
    if lower in ("1", "true", "yes", "on"):
        return True
    if lower in ("0", "false", "no", "off"):
        return False
    raise ValueError(raw)


def model_config(cp) -> md.ModelConfig:
    rate = cp["model"]["dropout_rate"].strip()
    try:
        return md.ModelConfig(
            kind=cp["model"]["kind"],
            dropout_rate=float(rate) if rate else None,
            seed=_get(cp, "run", "seed", int),
            dtype=cp["model"]["dtype"])
    except md.ModelError as exc:
        raise ConfigError(str(exc)) from exc


def train_config(cp) -> tr.TrainConfig:
    try:
        return tr.TrainConfig(
            batch_size=_get(cp, "train", "batch_size", int),
            max_epochs=_get(cp, "train", "max_epochs", int),
            patience=_get(cp, "train", "patience", int),
            lr=tr.LRSchedule(
                initial=_get(cp, "train", "lr_initial", float),
                factor=_get(cp, "train", "lr_factor", float),
                patience=_get(cp, "train", "lr_patience", int),
                min_lr=_get(cp, "train", "lr_min", float)),
            seed=_get(cp, "run", "seed", int),
            class_weights=_get(cp, "train", "class_weights", _bool))
    except tr.TrainingError as exc:
        raise ConfigError(str(exc)) from exc


def split_spec(cp) -> dio.SplitSpec:
    try:
        return dio.SplitSpec(
            train=_get(cp, "split", "train", float),
            validation=_get(cp, "split", "validation", float),
            test=_get(cp, "split", "test", float),
            seed=_get(cp, "run", "seed", int))
    except dio.DataError as exc:
        raise ConfigError(str(exc)) from exc


def noise_spec(cp) -> imp.NoiseSpec:
    try:
        return imp.NoiseSpec(
            mean=_get(cp, "noise", "mean", float),
            std=_get(cp, "noise", "std", float),
            seed=_get(cp, "run", "seed", int),
            repeats=_get(cp, "noise", "repeats", int))
    except imp.ImportanceError as exc:
        raise ConfigError(str(exc)) from exc


def synth_spec(cp) -> sy.SynthSpec:
    lo = _get(cp, "synth", "length_min", int)
    hi = _get(cp, "synth", "length_max", int)
    try:
        return sy.SynthSpec(
            n_subjects=_get(cp, "synth", "n_subjects", int),
            sessions_per_subject=_get(cp, "synth", "sessions_per_subject", int),
            length_ranges={t: (lo, hi) for t in dio.TASKS},
            signatures=sy.default_signatures(_get(cp, "synth", "amplitude", float)),
            noise_exponent=_get(cp, "synth", "noise_exponent", float),
            behavior=sy.BehaviorModel(coupling=_get(cp, "synth", "coupling", _bool)),
            seed=_get(cp, "run", "seed", int))
    except sy.SynthError as exc:
        raise ConfigError(str(exc)) from exc


def resolve_out(path: str) -> Path:
    root = os.environ.get(ENV_OUT_ROOT, "")
    out = Path(path)
    if root and not out.is_absolute():
        out = Path(root) / out
    return out


def prepare_run_dir(path: Path, cp) -> Path:
    if path.exists() and any(path.iterdir()):
        raise ConfigError(f"output directory {path} exists and is not empty "
                          f"(run directories are write-once)")
    path.mkdir(parents=True, exist_ok=True)
    (path / "_INCOMPLETE").write_text("run did not finish\n")
    with open(path / "config.resolved.ini", "w") as fh:
        cp.write(fh)
    (path / "seed.txt").write_text(cp["run"]["seed"] + "\n")
    return path


def finish_run_dir(path: Path) -> None:
    (path / "_INCOMPLETE").unlink()


def _write_timing(path: Path, timings: dict) -> None:
    (path / "timing.json").write_text(json.dumps(timings, indent=2, sort_keys=True))


def _require_dataset(cp, args) -> Path:
    dataset = getattr(args, "data", None) or cp["data"]["dataset"]
    if not dataset:
        raise ConfigError("no dataset given (flag --data or config data.dataset)")
    root = Path(dataset)
    if not (root / "manifest.csv").exists():
        raise dio.DataError(f"{root}: not a dataset (missing manifest.csv)")
    return root


def _load_split(cp, dataset: Path):
    recordings = dio.load_recordings(dataset)
    segments = []
    for rec in recordings:
        segments.extend(dio.segment(dio.zscore(rec)))
    return dio.split(segments, split_spec(cp))


def _grouping_path(cp, args, dataset: Path) -> Path:
    grouping = getattr(args, "grouping", None) or cp["data"]["grouping"]
    path = Path(grouping) if grouping else dataset / "grouping.csv"
    if not path.exists():
        raise dio.DataError(f"grouping file not found: {path}")
    return path


def _write_split_audit(out: Path, result: dio.SplitResult) -> None:
    payload = {
        "achieved": result.achieved,
        "sizes": {k: len(v) for k, v in result.as_dict().items()},
        "assignment": {f"{s}|{t}": name for (s, t), name in sorted(result.assignment.items())},
    }
    (out / "split.json").write_text(json.dumps(payload, indent=2, sort_keys=True))


def cmd_synth(args, cp) -> int:
    out = prepare_run_dir(resolve_out(args.out), cp)
    started = time.perf_counter()
    sy.generate(synth_spec(cp), out)
    _write_timing(out, {"synth_s": time.perf_counter() - started})
    finish_run_dir(out)
    print(f"synthetic dataset written to {out}")
    return EXIT_OK


def cmd_train(args, cp) -> int:
    dataset = _require_dataset(cp, args)
    out = prepare_run_dir(resolve_out(args.out), cp)
    timings = {}
    started = time.perf_counter()
    result = _load_split(cp, dataset)
    _write_split_audit(out, result)
    train_arrays = dio.segments_to_arrays(result.train)
    val_arrays = dio.segments_to_arrays(result.validation)
    timings["prepare_s"] = time.perf_counter() - started

    mcfg = model_config(cp)
    tcfg = train_config(cp)
    started = time.perf_counter()
    if args.grid:
        grid = {}
        for axis in tr.GRID_AXES:
            raw = cp["grid"][axis].strip()
            if raw:
                grid[axis] = [float(v) if axis != "batch_size" else int(float(v))
                              for v in raw.split(",")]
        if not grid:
            raise ConfigError("--grid given but the [grid] section has no values")
        best, board = tr.grid_search(mcfg, grid, train_arrays, val_arrays, tcfg)
        (out / "leaderboard.json").write_text(tr.leaderboard_to_json(board))
        mcfg = md.ModelConfig(kind=mcfg.kind,
                              dropout_rate=best.config.get("dropout_rate", mcfg.dropout_rate),
                              seed=best.seed, dtype=mcfg.dtype)
        lr_sched = tr.LRSchedule(
            initial=best.config.get("learning_rate", tcfg.lr.initial),
            factor=tcfg.lr.factor, patience=tcfg.lr.patience, min_lr=tcfg.lr.min_lr)
        tcfg = tr.TrainConfig(batch_size=int(best.config.get("batch_size", tcfg.batch_size)),
                              max_epochs=tcfg.max_epochs, patience=tcfg.patience,
                              lr=lr_sched, seed=best.seed, class_weights=tcfg.class_weights)
    model = md.build_model(mcfg)
    model, report = tr.train(model, train_arrays, val_arrays, tcfg)
    timings["train_s"] = time.perf_counter() - started

    md.save_checkpoint(out / "model.ckpt", model)
    (out / "train_report.json").write_text(report.to_json())
    report.curves_to_csv(out / "curves.csv")
    (out / "model_summary.json").write_text(model.summary().to_json())
    timings["wall_time_s"] = report.wall_time_s
    _write_timing(out, timings)
    finish_run_dir(out)
    print(f"trained {mcfg.kind}: best epoch {report.best_epoch}, "
          f"val loss {report.best.val_loss:.4f}, val acc {report.best.val_acc:.4f}")
    print(f"artifacts in {out}")
    return EXIT_OK


def _load_checkpoint(args) -> md.Model:
    path = Path(args.checkpoint)
    if not path.exists():
        raise dio.DataError(f"checkpoint not found: {path}")
    return md.load_checkpoint(path)


def cmd_evaluate(args, cp) -> int:
    dataset = _require_dataset(cp, args)
    model = _load_checkpoint(args)
    out = prepare_run_dir(resolve_out(args.out), cp)
    started = time.perf_counter()
    result = _load_split(cp, dataset)
    _write_split_audit(out, result)
    x_te, y_te = dio.segments_to_arrays(result.test)
    probs, labels = md.predict(model, x_te)
    cm = mt.confusion(y_te, labels)
    (out / "metrics.json").write_text(mt.metrics_to_json(cm))
    mt.confusion_to_csv(out / "confusion.csv", cm)
    outcomes = bh.outcomes_from_predictions(result.test, labels)
    payload = {
        "model_kind": model.config.kind,
        "outcomes": [{
            "segment_id": o.segment_id, "subject_id": o.subject_id,
            "session_index": o.session_index, "true_label": o.true_label,
            "predicted_label": o.predicted_label, "correct": o.correct,
        } for o in outcomes],
    }
    (out / "outcomes.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    _write_timing(out, {"evaluate_s": time.perf_counter() - started})
    finish_run_dir(out)
    print(f"test accuracy {mt.accuracy(cm):.4f} over {cm.total} segments; artifacts in {out}")
    return EXIT_OK


def cmd_importance(args, cp) -> int:
    dataset = _require_dataset(cp, args)
    model = _load_checkpoint(args)
    grouping = dio.load_grouping(_grouping_path(cp, args, dataset))
    out = prepare_run_dir(resolve_out(args.out), cp)
    started = time.perf_counter()
    result = _load_split(cp, dataset)
    x_te, y_te = dio.segments_to_arrays(result.test)
    report = imp.build_report(model, x_te, y_te, grouping, noise_spec(cp))
    imp.write_report(out, report)
    summary = {"raw": imp.summarize(report), "normalized": imp.summarize(report, normalized=True)}
    (out / "importance_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    _write_timing(out, {"importance_s": time.perf_counter() - started})
    finish_run_dir(out)
    print(f"importance over {len(report.network_ids)} networks, "
          f"baseline accuracy {report.baseline_accuracy:.4f}; artifacts in {out}")
    return EXIT_OK


def _read_outcomes(path: Path) -> tuple[str, list[bh.PredictionOutcome]]:
    if not path.exists():
        raise dio.DataError(f"outcomes file not found: {path}")
    payload = json.loads(path.read_text())
    outcomes = [bh.PredictionOutcome(o["segment_id"], o["subject_id"],
                                     o["session_index"], o["true_label"],
                                     o["predicted_label"])
                for o in payload["outcomes"]]
    return payload["model_kind"], outcomes


def cmd_behavior(args, cp) -> int:
    dataset = _require_dataset(cp, args)
    rows = dio.read_manifest(dataset / "manifest.csv")
    records = bh.performance_records_from_manifest(rows)
    out = prepare_run_dir(resolve_out(args.out), cp)
    started = time.perf_counter()

    tables = []
    for task in bh.SCORED_TASKS:
        task_records = [r for r in records if r.task == task]
        if task_records:
            tables.append(bh.task_quartiles(task_records))
    roster = sorted({(r.subject_id, r.session_index) for r in rows})
    table = bh.effective_behavior_quartile(tables, all_sessions=roster)
    (out / "ebq_table.json").write_text(table.to_json())

    rest_flag = _get(cp, "ebq", "rest_inherits_ebq", _bool)
    min_segments = _get(cp, "ebq", "min_segments", int)
    outcomes_by_model = {}
    for path in [args.outcomes] + ([args.outcomes_b] if args.outcomes_b else []):
        kind, outcomes = _read_outcomes(Path(path))
        bh.annotate_outcomes(outcomes, table, rest_inherits_ebq=rest_flag)
        key = kind if kind not in outcomes_by_model else f"{kind}_b"
        outcomes_by_model[key] = outcomes

    comparisons = bh.group_comparison_report(outcomes_by_model, min_segments)
    (out / "comparisons.json").write_text(bh.comparisons_to_json(comparisons))

    fractions_payload = {}
    for kind, outcomes in outcomes_by_model.items():
        fractions, excluded = bh.fraction_incorrect(outcomes, min_segments)
        fractions_payload[kind] = {"fractions": fractions, "excluded": excluded}
    cross = None
    if len(outcomes_by_model) == 2:
        (kind_a, pa), (kind_b, pb) = fractions_payload.items()
        common = sorted(set(pa["fractions"]) & set(pb["fractions"]))
        if len(common) >= 3:
            try:
                r, p = bh.pearson_r([pa["fractions"][s] for s in common],
                                    [pb["fractions"][s] for s in common])
                cross = {"models": [kind_a, kind_b], "n_subjects": len(common),
                         "pearson_r": r, "p": p}
            except bh.BehaviorError as exc:
                cross = {"models": [kind_a, kind_b], "n_subjects": len(common),
                         "unavailable": str(exc)}
        else:
            cross = {"models": [kind_a, kind_b], "n_subjects": len(common),
                     "unavailable": "fewer than 3 common subjects"}
    (out / "behavior.json").write_text(json.dumps({
        "fraction_incorrect": fractions_payload,
        "cross_model_correlation": cross,
    }, indent=2, sort_keys=True))

    with open(out / "ebq_table.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "session_index", "average_quartile", "ebq"])
        for (subject, session), row in sorted(table.rows.items()):
            writer.writerow([subject, session, repr(row.average), row.ebq])

    _write_timing(out, {"behavior_s": time.perf_counter() - started})
    finish_run_dir(out)
    print(f"behavior analysis over {len(outcomes_by_model)} model(s); artifacts in {out}")
    return EXIT_OK


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def cmd_report(args, cp) -> int:
    out = prepare_run_dir(resolve_out(args.out), cp)
    index = {"runs": {}}
    csv_dir = out / "csv"
    csv_dir.mkdir()
    for run in args.runs:
        run_path = Path(run)
        if not run_path.is_dir():
            raise dio.DataError(f"run directory not found: {run_path}")
        files = {}
        for path in sorted(run_path.rglob("*")):
            if path.is_file():
                rel = path.relative_to(run_path).as_posix()
                files[rel] = _sha256(path)
                if path.suffix == ".csv":
                    shutil.copyfile(path, csv_dir / f"{run_path.name}__{path.name}")
        index["runs"][run_path.name] = {
            "path": str(run_path), "files": files,
            "incomplete": (run_path / "_INCOMPLETE").exists(),
        }
    (out / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True))
    finish_run_dir(out)
    print(f"report index over {len(args.runs)} run(s) in {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cogstates",
        description="Cognitive-state classification pipeline: synthesize data, "
                    "train, evaluate, explain, and relate errors to behavior.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE", help="override a config value (flags win)")
        p.add_argument("--out", required=True, help="fresh run directory for artifacts")

    p = sub.add_parser("synth", help="generate a synthetic dataset with planted structure")
    common(p)

    p = sub.add_parser("train", help="train one model kind (optionally a hyperparameter grid)")
    common(p)
    p.add_argument("--data", help="dataset directory (overrides data.dataset)")
    p.add_argument("--grid", action="store_true", help="run the [grid] search before the final fit")

    p = sub.add_parser("evaluate", help="confusion matrix and per-class metrics on the test split")
    common(p)
    p.add_argument("--data")
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("importance", help="grouped permutation importance on the test split")
    common(p)
    p.add_argument("--data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--grouping", help="network grouping CSV (default: dataset/grouping.csv)")

    p = sub.add_parser("behavior", help="EBQ table and correctness comparisons from outcomes")
    common(p)
    p.add_argument("--data")
    p.add_argument("--outcomes", required=True, help="outcomes.json from an evaluate run")
    p.add_argument("--outcomes-b", help="second model's outcomes for cross-model analyses")

    p = sub.add_parser("report", help="bundle run artifacts into one index plus plot-ready CSVs")
    common(p)
    p.add_argument("--runs", nargs="+", required=True, help="run directories to index")
    return parser


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "importance": cmd_importance,
    "behavior": cmd_behavior,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cp = load_config(args.config, args.overrides)
        return COMMANDS[args.command](args, cp)
    except (ConfigError, tr.TrainingError) as exc:
        print(f"error: configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (dio.DataError, sy.SynthError, md.ModelError, bh.BehaviorError,
            imp.ImportanceError, mt.MetricsError) as exc:
        print(f"error: data validation: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TensorError as exc:
        print(f"error: numeric: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
