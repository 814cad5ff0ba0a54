"""Command-line front end.

One JSON config drives every command; each command reads its own section,
fills in defaults, rejects unknown keys, and writes the fully resolved
document back as ``config_echo.json`` next to its outputs. Re-running a
command from its echo with the same seed reproduces the data and summary
files byte for byte.

Subcommands: ``gen-data``, ``experiment fewshot|standard|da``, ``inspect``,
``eval``. ``--seed`` and ``--out`` override the config. Log verbosity comes
from the ``CROPSSL_LOG`` environment variable (DEBUG/INFO/WARNING/ERROR).

Exit codes: 0 success, 2 configuration error, 3 I/O or input-format error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .data import (Task, TaskDataset, band_distribution_report, ingest_csv,
                   make_domain, write_csv)
from .errors import ConfigError, DataFormatError, NumericalError
from .model import TaskActivation, load_checkpoint, save_checkpoint
from .synth import DomainShift, scenario
from .train import (ExperimentReport, PatiencePolicy, TrainConfig, evaluate,
                    train_domain_adaptation, train_fewshot, train_standard)

log = logging.getLogger("cropssl")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


# ---------------------------------------------------------------------------
# Config schema: {key: (type, default)}; REQUIRED means no default. Nested
# dicts recurse. Unknown keys anywhere are rejected.

REQUIRED = object()

_SHIFT_SPEC = {
    "offset": (float, 0.08),
    "gain": (float, 1.15),
    "peak_shift": (float, 1.0),
    "noise_std": (float, 0.02),
}

_GEN_DATA_SPEC = {
    "out_dir": (str, "cropssl_out/gen-data"),
    "n_source_per_class": (int, 2000),
    "n_few_per_class": (int, 100),
    "n_target_per_class": (int, 2000),
    "t_steps": (int, 10),
    "bands": (int, 7),
    "noise_std": (float, 0.02),
    "gain_jitter": (float, 0.15),
    "offset_jitter": (float, 0.03),
    "shift": (_SHIFT_SPEC, None),
}

_TRAIN_SPEC = {
    "lr": (float, 0.001),
    "main_epochs": (int, 2000),
    "ssl_epochs": ((int, type(None)), None),
    "batch_size": (int, 256),
    "cutoff": (int, 2),
    "hidden": (list, [64, 32]),
    "eval_every": (int, 100),
    "log_every": (int, 25),
}

_PATIENCE_SPEC = {
    "patience": (int, 25),
    "lr_halving": (bool, True),
    "min_lr": (float, 0.00005),
    "max_epochs": (int, 1000),
}

_SPLITS_SPEC = {
    "train_per_class": (int, 200),
    "val_per_class": (int, 300),
    "test_per_class": (int, 1500),
}

_DOMAIN_EVAL_SPEC = {
    "source_csv": (str, REQUIRED),
    "target_csv": (str, REQUIRED),
}

_EXPERIMENT_SPEC = {
    "kind": (str, REQUIRED),
    "out_dir": (str, "cropssl_out/experiment"),
    "source_csv": (str, REQUIRED),
    "fewshot_csv": ((str, type(None)), None),
    "target_csv": ((str, type(None)), None),
    "scale": (float, 1.0),
    "variants": (list, ["baseline"]),
    "shots": (list, [5, 10, 20, 50, 100]),
    "repeats": (int, 1),
    "train": (_TRAIN_SPEC, None),
    "patience": (_PATIENCE_SPEC, None),
    "splits": (_SPLITS_SPEC, None),
    "domain_eval": ((_DOMAIN_EVAL_SPEC, type(None)), None),
}

_INSPECT_SPEC = {
    "out_dir": (str, "cropssl_out/inspect"),
    "source_csv": (str, REQUIRED),
    "target_csv": (str, REQUIRED),
    "scale": (float, 1.0),
    "bins": (int, 50),
}

_EVAL_SPEC = {
    "out_dir": (str, "cropssl_out/eval"),
    "checkpoint": (str, REQUIRED),
    "data_csv": (str, REQUIRED),
    "scale": (float, 1.0),
    "task": (str, "crop"),
    "domain": ((str, type(None)), None),
}

_SECTION_SPECS = {
    "gen_data": _GEN_DATA_SPEC,
    "experiment": _EXPERIMENT_SPEC,
    "inspect": _INSPECT_SPEC,
    "eval": _EVAL_SPEC,
}


def _check_type(value, types, path: str):
    if not isinstance(types, tuple):
        types = (types,)
    for t in types:
        if t is float and isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if t in (int, bool):
            if isinstance(value, t) and (t is not int or not isinstance(value, bool)):
                return value
        elif t is not float and isinstance(value, t):
            return value
    names = "/".join("null" if t is type(None) else t.__name__ for t in types)
    raise ConfigError(f"config key {path}: expected {names}, got {value!r}")


def _resolve_section(section, spec: dict, path: str) -> dict:
    if section is None:
        section = {}
    if not isinstance(section, dict):
        raise ConfigError(f"config key {path}: expected an object")
    unknown = set(section) - set(spec)
    if unknown:
        raise ConfigError(f"unknown config key(s) under {path}: {sorted(unknown)}")
    resolved = {}
    for key, (types, default) in spec.items():
        child = f"{path}.{key}" if path else key
        if isinstance(types, dict):
            resolved[key] = _resolve_section(section.get(key), types, child)
        elif isinstance(types, tuple) and any(isinstance(t, dict) for t in types):
            # nested-or-null section
            sub_spec = next(t for t in types if isinstance(t, dict))
            if key not in section or section[key] is None:
                resolved[key] = None
            else:
                resolved[key] = _resolve_section(section[key], sub_spec, child)
        elif key in section:
            value = section[key]
            if value is None and type(None) in (types if isinstance(types, tuple) else (types,)):
                resolved[key] = None
            else:
                resolved[key] = _check_type(value, types, child)
        elif default is REQUIRED:
            raise ConfigError(f"missing required config key {child}")
        else:
            resolved[key] = default
    return resolved


def load_config(path: str | None, seed_override: int | None,
                out_override: str | None, command: str) -> dict:
    """Load, validate, and resolve the config document for one command.

    Every section present in the document is schema-validated; the active
    command's section is resolved (defaults filled in) even when absent.
    """
    doc = {}
    if path is not None:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    unknown = set(doc) - set(_SECTION_SPECS) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown top-level config key(s): {sorted(unknown)}")
    resolved = {"seed": _check_type(doc.get("seed", 0), int, "seed")}
    for name, spec in _SECTION_SPECS.items():
        if name == command:
            resolved[name] = _resolve_section(doc.get(name), spec, name)
        elif name in doc:
            resolved[name] = _resolve_section(doc[name], spec, name)
    if seed_override is not None:
        resolved["seed"] = seed_override
    if out_override is not None:
        resolved[command]["out_dir"] = out_override
    return resolved


def _write_echo(resolved: dict, command: str, out_dir: Path) -> None:
    # The echo keeps only the active command's section (plus the seed), so
    # re-running it cannot silently validate unrelated stale sections.
    echo = {"seed": resolved["seed"], command: resolved[command]}
    with open(out_dir / "config_echo.json", "w") as fh:
        json.dump(echo, fh, indent=2)
        fh.write("\n")


def _write_csv_rows(path: Path, header: list[str], rows: list[list]) -> None:
    def fmt(v):
        if isinstance(v, float):
            return repr(v)
        return v

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


# ---------------------------------------------------------------------------
# Commands


def cmd_gen_data(resolved: dict) -> int:
    cfg = resolved["gen_data"]
    seed = resolved["seed"]
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    shift = DomainShift(**cfg["shift"])
    source, few, target = scenario(
        seed,
        n_source=cfg["n_source_per_class"],
        n_few=cfg["n_few_per_class"],
        n_target=cfg["n_target_per_class"],
        shift=shift,
        t_steps=cfg["t_steps"],
        bands=cfg["bands"],
        noise_std=cfg["noise_std"],
        gain_jitter=cfg["gain_jitter"],
        offset_jitter=cfg["offset_jitter"],
    )
    for name, ds, domain in (("source.csv", source, "source"),
                             ("fewshot.csv", few, "source"),
                             ("target.csv", target, "target")):
        write_csv(out_dir / name, ds, domain)
        counts = np.bincount(ds.labels, minlength=ds.num_classes)
        print(f"{name}: {len(ds)} samples, per-class counts "
              f"{counts.tolist()} -> {out_dir / name}")
    _write_echo(resolved, "gen_data", out_dir)
    return EXIT_OK


def _train_config(exp: dict, tasks: TaskActivation, seed: int, repeats: int,
                  shots: int | None = None, main_epochs: int | None = None) -> TrainConfig:
    train = exp["train"]
    return TrainConfig(
        lr=train["lr"],
        main_epochs=main_epochs if main_epochs is not None else train["main_epochs"],
        ssl_epochs=train["ssl_epochs"],
        batch_size=train["batch_size"],
        seed=seed,
        tasks=tasks,
        cutoff=train["cutoff"],
        repeats=repeats,
        hidden=tuple(train["hidden"]),
        shots=shots,
        eval_every=train["eval_every"],
        log_every=train["log_every"],
    )


def _history_rows(context: list, report: ExperimentReport) -> list[list]:
    rows = []
    for i, run in enumerate(report.runs):
        for rec in run.history:
            acc = "" if rec.accuracy is None else rec.accuracy
            rows.append(context + [i, rec.epoch, rec.task, rec.loss, acc])
    return rows


def _stratified_split(dataset: TaskDataset, sizes: dict, seed: int):
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(31,)))
    wanted = (sizes["train_per_class"], sizes["val_per_class"], sizes["test_per_class"])
    parts: list[list[np.ndarray]] = [[], [], []]
    for cls in range(dataset.num_classes):
        idx = np.flatnonzero(dataset.labels == cls)
        if idx.size < sum(wanted):
            raise ConfigError(
                f"class {cls} has {idx.size} samples, splits need {sum(wanted)}"
            )
        idx = rng.permutation(idx)
        offset = 0
        for part, n in zip(parts, wanted):
            part.append(idx[offset:offset + n])
            offset += n
    return tuple(dataset.subset(np.concatenate(part)) for part in parts)


def _save_cell_outputs(out_dir: Path, name: str, report: ExperimentReport,
                       reports_doc: list) -> None:
    if report.final_graph is not None:
        ckpt_dir = out_dir / "checkpoints"
        ckpt_dir.mkdir(exist_ok=True)
        save_checkpoint(report.final_graph, ckpt_dir / f"{name}.json")
    reports_doc.append(report.to_dict())


def cmd_experiment(kind: str, resolved: dict) -> int:
    exp = resolved["experiment"]
    if exp["kind"] != kind:
        raise ConfigError(
            f"experiment section has kind={exp['kind']!r} but the command "
            f"requested {kind!r}"
        )
    seed = resolved["seed"]
    out_dir = Path(exp["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    scale = exp["scale"]
    variants = [TaskActivation.from_variant(v) for v in exp["variants"]]

    reports_doc: list = []
    history_rows: list[list] = []
    summary_header: list[str] = []
    summary_rows: list[list] = []

    if kind == "fewshot":
        if exp["fewshot_csv"] is None:
            raise ConfigError("fewshot experiment needs fewshot_csv")
        source = ingest_csv(exp["source_csv"], scale, domain="source")
        pool = ingest_csv(exp["fewshot_csv"], scale, domain="source")
        summary_header = ["variant", "shots", "repeats", "mean_accuracy",
                          "std_accuracy"]
        for tasks in variants:
            if tasks.domain:
                raise ConfigError("few-shot variants cannot include the domain task")
            for k in exp["shots"]:
                config = _train_config(exp, tasks, seed, exp["repeats"], shots=int(k))
                report = train_fewshot(config, pool, source, source)
                name = f"{tasks.variant_name()}_k{k}"
                log.info("fewshot %s: mean accuracy %.4f (std %.4f)",
                         name, report.mean_accuracy, report.std_accuracy)
                summary_rows.append([tasks.variant_name(), int(k), exp["repeats"],
                                     report.mean_accuracy, report.std_accuracy])
                history_rows.extend(
                    _history_rows([tasks.variant_name(), int(k)], report))
                _save_cell_outputs(out_dir, name, report, reports_doc)
        history_header = ["variant", "shots", "repeat", "epoch", "task",
                          "loss", "accuracy"]

    elif kind == "standard":
        source = ingest_csv(exp["source_csv"], scale, domain="source")
        train_set, val_set, test_set = _stratified_split(source, exp["splits"], seed)
        policy = PatiencePolicy(**exp["patience"])
        summary_header = ["variant", "repeats", "mean_accuracy", "std_accuracy",
                          "best_epoch", "epochs_trained"]
        for tasks in variants:
            if tasks.domain:
                raise ConfigError("standard variants cannot include the domain task")
            config = _train_config(exp, tasks, seed, exp["repeats"],
                                   main_epochs=policy.max_epochs)
            report = train_standard(config, policy, train_set, val_set, test_set)
            run = report.runs[-1]
            name = tasks.variant_name()
            print(f"standard {name}: best epoch {run.best_epoch}, "
                  f"test accuracy {report.mean_accuracy:.4f}")
            summary_rows.append([name, exp["repeats"], report.mean_accuracy,
                                 report.std_accuracy, run.best_epoch,
                                 run.extras["epochs_trained"]])
            history_rows.extend(_history_rows([name], report))
            _save_cell_outputs(out_dir, name, report, reports_doc)
        history_header = ["variant", "repeat", "epoch", "task", "loss", "accuracy"]

    elif kind == "da":
        if exp["target_csv"] is None:
            raise ConfigError("da experiment needs target_csv")
        source = ingest_csv(exp["source_csv"], scale, domain="source")
        target = ingest_csv(exp["target_csv"], scale, domain="target")
        domain_eval = None
        if exp["domain_eval"] is not None:
            eval_source = ingest_csv(exp["domain_eval"]["source_csv"], scale,
                                     domain="source")
            eval_target = ingest_csv(exp["domain_eval"]["target_csv"], scale,
                                     domain="target")
            domain_eval = make_domain(eval_source, eval_target)
        summary_header = ["variant", "repeats", "mean_accuracy", "std_accuracy",
                          "domain_eval_accuracy"]
        for tasks in variants:
            config = _train_config(exp, tasks, seed, exp["repeats"])
            report = train_domain_adaptation(config, source, target, target,
                                             domain_eval=domain_eval)
            name = tasks.variant_name()
            domain_acc = [run.extras.get("domain_eval_accuracy")
                          for run in report.runs]
            domain_mean = ("" if domain_acc[0] is None
                           else float(np.mean([a for a in domain_acc])))
            log.info("da %s: target accuracy %.4f (std %.4f)",
                     name, report.mean_accuracy, report.std_accuracy)
            summary_rows.append([name, exp["repeats"], report.mean_accuracy,
                                 report.std_accuracy, domain_mean])
            history_rows.extend(_history_rows([name], report))
            _save_cell_outputs(out_dir, name, report, reports_doc)
        history_header = ["variant", "repeat", "epoch", "task", "loss", "accuracy"]

    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown experiment kind {kind!r}")

    with open(out_dir / "report.json", "w") as fh:
        json.dump({"kind": kind, "cells": reports_doc}, fh)
    _write_csv_rows(out_dir / "history.csv", history_header, history_rows)
    _write_csv_rows(out_dir / "summary.csv", summary_header, summary_rows)
    _write_echo(resolved, "experiment", out_dir)
    print(f"wrote {out_dir / 'summary.csv'}")
    return EXIT_OK


def cmd_inspect(resolved: dict) -> int:
    cfg = resolved["inspect"]
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    source = ingest_csv(cfg["source_csv"], cfg["scale"], domain="source")
    target = ingest_csv(cfg["target_csv"], cfg["scale"], domain="target")

    curve_rows = []
    hist_rows = []
    gap_rows = []
    classes = sorted(set(source.labels.tolist()) & set(target.labels.tolist()))
    classes = [c for c in classes if c >= 0]
    for cls in classes:
        for band in range(source.bands):
            reports = {}
            for domain_name, ds in (("source", source), ("target", target)):
                rep = band_distribution_report(ds, cls, band, bins=cfg["bins"])
                reports[domain_name] = rep
                for t in range(ds.t_steps):
                    curve_rows.append([domain_name, cls, band, t,
                                       float(rep.mean[t]), float(rep.std[t])])
                    for b in range(cfg["bins"]):
                        count = int(rep.hist[t, b])
                        if count:
                            hist_rows.append([domain_name, cls, band, t, b,
                                              float(rep.bin_edges[b]),
                                              float(rep.bin_edges[b + 1]), count])
            gap = np.abs(reports["source"].mean - reports["target"].mean)
            for t in range(source.t_steps):
                gap_rows.append([cls, band, t, float(gap[t])])

    _write_csv_rows(out_dir / "curves.csv",
                    ["domain", "class", "band", "timestep", "mean", "std"],
                    curve_rows)
    _write_csv_rows(out_dir / "hist.csv",
                    ["domain", "class", "band", "timestep", "bin", "lo", "hi",
                     "count"], hist_rows)
    _write_csv_rows(out_dir / "gap.csv",
                    ["class", "band", "timestep", "mean_gap"], gap_rows)
    _write_echo(resolved, "inspect", out_dir)
    print(f"wrote {out_dir / 'curves.csv'} ({len(curve_rows)} rows)")
    return EXIT_OK


def cmd_eval(resolved: dict) -> int:
    cfg = resolved["eval"]
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    graph = load_checkpoint(cfg["checkpoint"])
    dataset = ingest_csv(cfg["data_csv"], cfg["scale"], domain=cfg["domain"])
    try:
        task = Task(cfg["task"])
    except ValueError:
        raise ConfigError(f"unknown task {cfg['task']!r}") from None
    result = evaluate(graph, dataset, task)
    print(f"accuracy: {result.accuracy:.6f}")
    print("confusion (rows = true class):")
    for row in result.confusion:
        print("  " + " ".join(f"{v:8d}" for v in row))
    with open(out_dir / "eval.json", "w") as fh:
        json.dump({"accuracy": result.accuracy,
                   "confusion": result.confusion.tolist()}, fh)
    _write_echo(resolved, "eval", out_dir)
    return EXIT_OK


# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cropssl",
        description="Self-supervised crop time-series classification toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="path to the JSON run config")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="seed (overrides config)")

    add_common(sub.add_parser("gen-data", help="write synthetic source/few-shot/target CSVs"))
    exp = sub.add_parser("experiment", help="run a training protocol end to end")
    exp.add_argument("kind", choices=["fewshot", "standard", "da"])
    add_common(exp)
    add_common(sub.add_parser("inspect", help="per-class/band distribution reports"))
    add_common(sub.add_parser("eval", help="evaluate a checkpoint on a CSV dataset"))
    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("CROPSSL_LOG", "INFO").upper()
    logging.basicConfig(
        level=level if level in ("DEBUG", "INFO", "WARNING", "ERROR") else "INFO",
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "gen-data":
            resolved = load_config(args.config, args.seed, args.out, "gen_data")
            return cmd_gen_data(resolved)
        if args.command == "experiment":
            resolved = load_config(args.config, args.seed, args.out, "experiment")
            return cmd_experiment(args.kind, resolved)
        if args.command == "inspect":
            resolved = load_config(args.config, args.seed, args.out, "inspect")
            return cmd_inspect(resolved)
        if args.command == "eval":
            resolved = load_config(args.config, args.seed, args.out, "eval")
            return cmd_eval(resolved)
        raise ConfigError(f"unknown command {args.command!r}")  # pragma: no cover
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (DataFormatError, OSError) as exc:
        log.error("input error: %s", exc)
        return EXIT_IO
    except (NumericalError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
