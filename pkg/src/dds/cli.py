"""Command line: simulate, ingest, train, report.

Each command writes the effective configuration next to its outputs as a flat
``key = value`` file (values are JSON literals) so a run can be repeated from
that file and the seed alone. Errors go to stderr as one JSON object with a
machine-readable ``error`` category.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from dds.model import BehaviorParams, ModelConfig
from dds.pipeline import (
    IngestError,
    aggregate,
    find_datasets,
    pad_and_encode,
    parse_trips,
    read_dataset,
    split_index,
    write_dataset,
)
from dds.simulator import SimConfig, generate_driver
from dds.trainer import TrainConfig, TrainingDiverged, TrainReport, config_from_dict, config_to_dict, sbptt_train

log = logging.getLogger("dds")

EXIT_INPUT = 3
EXIT_DIVERGED = 4
EXIT_IO = 5
REPORT_COLUMNS = ("run_id", "epoch", "metric", "value")


class CliError(Exception):
    def __init__(self, category: str, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.category = category
        self.code = code


# --------------------------------------------------------------------------
# flat config files


def dump_config(values: dict) -> str:
    return "".join(f"{k} = {json.dumps(values[k])}\n" for k in sorted(values))


def load_config(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CliError("bad_config", f"config line {n}: expected 'key = value'")
        try:
            out[key.strip()] = json.loads(value.strip())
        except json.JSONDecodeError as exc:
            raise CliError("bad_config", f"config line {n}: {exc}") from exc
    return out


def _read_config(path) -> dict:
    if path is None:
        return {}
    try:
        return load_config(Path(path).read_text())
    except OSError as exc:
        raise CliError("io_error", f"cannot read config {path}: {exc}", EXIT_IO) from exc


def sim_config_to_dict(cfg: SimConfig) -> dict:
    d = asdict(cfg)
    d.update({f"generator.{k}": v for k, v in d.pop("generator").items()})
    d.update({f"model.{k}": v for k, v in d.pop("model").items()})
    return d


def sim_config_from_dict(d: dict) -> SimConfig:
    d = dict(d)
    gen = {k.split(".", 1)[1]: d.pop(k) for k in list(d) if k.startswith("generator.")}
    model = {k.split(".", 1)[1]: d.pop(k) for k in list(d) if k.startswith("model.")}
    base = SimConfig()
    generator = BehaviorParams.from_dict({**base.generator.to_dict(), **gen})
    return SimConfig(**d, generator=generator, model=ModelConfig(**model))


def _merge(defaults: dict, config_file: dict, overrides: dict) -> dict:
    unknown = set(config_file) - set(defaults)
    if unknown:
        raise CliError("bad_config", f"unknown config keys {sorted(unknown)}")
    merged = {**defaults, **config_file}
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return merged


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise CliError("io_error", f"cannot write to {out}: {exc}", EXIT_IO) from exc
    return out


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> Path:
    cfg = _merge(sim_config_to_dict(SimConfig()), _read_config(args.config), {
        "seed": args.seed, "days": args.days, "width": args.width,
        "noise_std_eps": args.noise_eps, "noise_std_eta": args.noise_eta,
    })
    sim_cfg = sim_config_from_dict(cfg)
    out = _out_dir(args.out)
    result = generate_driver(sim_cfg)
    write_dataset(out, result.history, {"source": "simulator", "pad_value": None, "split_index": None,
                                        "config": cfg})
    _write_json(out / "truth.json", {"generator": sim_cfg.generator.to_dict(),
                                     "lambda": result.trajectory.lambdas.tolist(),
                                     "beta": result.trajectory.betas.tolist()})
    (out / "config.txt").write_text(dump_config(cfg))
    log.info("simulated %d days into %s", sim_cfg.days, out)
    return out


def cmd_ingest(args) -> Path:
    cfg = _merge({"drivers": 10, "seed": 0, "train_fraction": 0.4, "global_mean": False},
                 _read_config(args.config),
                 {"drivers": args.drivers, "seed": args.seed, "train_fraction": args.train_fraction,
                  "global_mean": args.global_mean or None})
    trips, report = parse_trips(args.csv)
    report.drivers_available = len({t.taxi_id for t in trips})
    sequences = aggregate(trips, cfg["drivers"], cfg["seed"])
    bundles = pad_and_encode(sequences, cfg["global_mean"])
    out = _out_dir(args.out)
    report.drivers_sampled = [b.driver_id for b in bundles]
    for k, b in enumerate(bundles):
        split = split_index(b.n_days, cfg["train_fraction"]) if b.n_days >= 2 else None
        write_dataset(out / f"driver_{k:02d}", b.history(), {
            "source": "chicago", "pad_value": b.pad_value, "split_index": split,
            "dates": list(b.dates), "config": cfg})
    _write_json(out / "ingest_report.json", report.to_dict())
    (out / "config.txt").write_text(dump_config(cfg))
    log.info("ingested %d rows (%d dropped), %d drivers", report.rows_read, report.dropped, len(bundles))
    return out


def _parse_samples(text) -> list[int] | None:
    if text is None:
        return None
    try:
        vals = [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise CliError("bad_option", f"--samples expects integers, got {text!r}") from exc
    if not vals or min(vals) < 1:
        raise CliError("bad_option", "--samples values must be >= 1")
    return vals


def cmd_train(args) -> Path:
    datasets = find_datasets(args.dataset)
    has_truth = all((d / "truth.json").exists() for d in datasets)
    defaults = config_to_dict(TrainConfig(train_initial_state=not has_truth))
    defaults.update({"samples": [defaults["samples"]], "train_fraction": None, "baseline": None})
    file_cfg = _read_config(args.config)
    if "samples" in file_cfg and not isinstance(file_cfg["samples"], list):
        file_cfg["samples"] = [file_cfg["samples"]]
    cfg = _merge(defaults, file_cfg, {
        "seed": args.seed, "samples": _parse_samples(args.samples), "epochs": args.epochs,
        "learning_rate": args.lr, "model_kind": args.model,
        "update_mode": args.update_mode.replace("-", "_") if args.update_mode else None,
        "temperature": args.temperature, "mask_mode": args.mask_mode.replace("-", "_") if args.mask_mode else None,
        "train_fraction": args.train_fraction, "baseline": args.baseline,
    })
    out = _out_dir(args.out)
    base = {k: v for k, v in cfg.items() if k not in ("samples", "train_fraction", "baseline")}

    runs = [(cfg["model_kind"], r) for r in cfg["samples"]]
    if cfg["baseline"]:
        runs.append((cfg["baseline"], 1))
    summary = []
    for ds_dir in datasets:
        history, meta = read_dataset(ds_dir)
        truth = None
        if (ds_dir / "truth.json").exists():
            truth = BehaviorParams.from_dict(json.loads((ds_dir / "truth.json").read_text())["generator"])
        split = meta.get("split_index")
        if cfg["train_fraction"] is not None:
            split = split_index(history.n_days, cfg["train_fraction"])
        for kind, r in runs:
            tc = config_from_dict({**base, "samples": r, "model_kind": kind})
            run_id = f"{kind}_R{r}" if len(datasets) == 1 else f"{ds_dir.name}/{kind}_R{r}"
            try:
                report = sbptt_train(history, tc, truth, split_index=split)
            except TrainingDiverged as exc:
                raise CliError("diverged", f"{run_id}: {exc}", EXIT_DIVERGED) from exc
            run_dir = out / run_id
            run_dir.mkdir(parents=True, exist_ok=True)
            (run_dir / "report.json").write_text(report.to_json() + "\n")
            (run_dir / "epochs.csv").write_text(report.to_csv())
            summary.append(_summary_row(run_id, ds_dir.name, kind, r, report))
    _write_json(out / "summary.json", summary)
    (out / "config.txt").write_text(dump_config(cfg))
    return out


def _summary_row(run_id, dataset, kind, r, report: TrainReport) -> dict:
    row = {"run_id": run_id, "dataset": dataset, "model": kind, "samples": r,
           "train_decision_acc": report.train.decision_acc[-1], "train_loss": report.train.loss[-1],
           "final_params": report.final_params}
    if report.test:
        row.update(test_decision_acc=report.test.decision_acc[-1], test_loss=report.test.loss[-1])
    if report.lambda_error:
        row.update(lambda_err=report.lambda_error[-1], beta_err=report.beta_error[-1])
    return row


REQUIRED_REPORT_KEYS = {"config", "train", "final_params", "mean_lambda", "mean_beta"}


def _tidy_rows(run_id: str, report: dict):
    missing = REQUIRED_REPORT_KEYS - set(report)
    if missing:
        raise CliError("schema_mismatch", f"{run_id}: report lacks {sorted(missing)}")
    series = {}
    for split in ("train", "test"):
        if report.get(split):
            for metric, values in report[split].items():
                series[f"{split}_{metric}"] = values
    for key in ("lambda_error", "beta_error", "mean_lambda", "mean_beta"):
        if report.get(key):
            series[key] = report[key]
    for e, p in enumerate(report.get("params_history") or []):
        for name, v in p.items():
            series.setdefault(f"param_{name}", []).append(v)
    for metric in sorted(series):
        for e, v in enumerate(series[metric], start=1):
            yield {"run_id": run_id, "epoch": e, "metric": metric, "value": repr(float(v))}


def cmd_report(args) -> Path:
    reports = []
    for item in args.inputs:
        p = Path(item)
        if p.is_dir():
            for f in sorted(p.rglob("report.json")):
                reports.append((f.parent.relative_to(p).as_posix() or p.name, f))
        elif p.exists():
            reports.append((p.parent.name, p))
        else:
            raise CliError("missing_input", f"{p} does not exist")
    if not reports:
        raise CliError("empty_input", "no report.json files found")
    ids = [rid for rid, _ in reports]
    if len(set(ids)) != len(ids):
        reports = [(f"{f.parent.parent.name}/{rid}", f) for rid, f in reports]
    out = Path(args.out)
    if out.suffix != ".csv":
        out = _out_dir(out) / "report.csv"
    rows = []
    for run_id, f in reports:
        try:
            data = json.loads(f.read_text())
        except json.JSONDecodeError as exc:
            raise CliError("schema_mismatch", f"{f}: {exc}") from exc
        rows.extend(_tidy_rows(run_id, data))
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return out


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dds", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("simulate", help="generate a synthetic driver dataset")
    common(s)
    s.add_argument("--days", type=int)
    s.add_argument("--width", type=int)
    s.add_argument("--noise-eps", type=float)
    s.add_argument("--noise-eta", type=float)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("ingest", help="turn a taxi-trip CSV into per-driver datasets")
    common(s)
    s.add_argument("csv")
    s.add_argument("--drivers", type=int)
    s.add_argument("--train-fraction", type=float)
    s.add_argument("--global-mean", action="store_true", help="pad with the mean fare over all drivers")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("train", help="fit DDS (or a baseline) with sampled BPTT")
    common(s)
    s.add_argument("dataset")
    s.add_argument("--samples", help="noise samples R; a comma list runs a sweep, e.g. 1,8,32")
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--model", choices=["dds", "ds", "s"])
    s.add_argument("--update-mode", choices=["per-day-reverse", "full-batch"])
    s.add_argument("--temperature", type=float)
    s.add_argument("--mask-mode", choices=["all-slots", "prefix-plus-one"])
    s.add_argument("--train-fraction", type=float)
    s.add_argument("--baseline", choices=["ds", "s"], help="also train this baseline")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("report", help="merge training reports into one tidy CSV")
    s.add_argument("inputs", nargs="+", help="report.json files or directories holding them")
    s.add_argument("--out", required=True, help="CSV path or output directory")
    s.set_defaults(func=cmd_report)
    return p


def _fail(category: str, message: str, code: int) -> int:
    print(json.dumps({"error": category, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("DDS_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except CliError as exc:
        return _fail(exc.category, str(exc), exc.code)
    except IngestError as exc:
        return _fail(exc.category, str(exc), EXIT_INPUT)
    except TrainingDiverged as exc:
        return _fail("diverged", str(exc), EXIT_DIVERGED)
    except OSError as exc:
        return _fail("io_error", str(exc), EXIT_IO)
    except (ValueError, TypeError) as exc:
        return _fail("invalid_input", str(exc), EXIT_INPUT)
    return 0


if __name__ == "__main__":
    sys.exit(main())
