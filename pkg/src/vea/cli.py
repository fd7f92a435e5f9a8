"""``vea`` command line: train, eval, verify, report.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import kernels
from .backbone import build_model
from .config import KEYS, RunConfig, load_config
from .data import Dataset, load_idx_dataset, load_image_folder
from .errors import CheckpointError, CheckpointShapeError, ConfigError, DataError, NumericalError
from .metrics import METRIC_NAMES, report_to_csv
from .threads import configure_threads
from .training import epoch_stats_csv, evaluate, read_checkpoint, restore, train

log = logging.getLogger("vea")

EPOCHS_CSV = "epochs.csv"
CHECKPOINT = "checkpoint.veac"
MANIFEST = "manifest.json"
METRICS_CSV = "metrics.csv"
CONFUSION_CSV = "confusion.csv"
EVAL_JSON = "eval.json"
REPORT_COLUMNS = ("Accuracy", "Precision", "Sensitivity", "Specificity", "F1", "MCC",
                  "Training Time (s)", "Inference Time (s)")


def git_blob_hash(path: Path) -> str:
    data = path.read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _limit(ds: Dataset, n):
    return ds if n is None or n >= len(ds) else ds.subset(np.arange(n))


def load_split(cfg: RunConfig, split: str) -> Dataset:
    spec = cfg.preprocess()
    if cfg.dataset == "imagefolder":
        ds = load_image_folder(cfg.path(f"{split}_dir"), spec)
        names = cfg.class_names()
        if names is not None and tuple(names) != ds.class_names:
            raise DataError(f"class directories {ds.class_names} do not match class_names {names}")
    else:
        ds = load_idx_dataset(cfg.path(f"{split}_images"), cfg.path(f"{split}_labels"), cfg.class_names(), spec)
    n = cfg.resolved().get("num_classes")
    if n is not None and ds.num_classes != n:
        raise ConfigError(f"num_classes = {n} but the {split} data has {ds.num_classes} classes")
    return _limit(ds, cfg.get(f"{split}_limit"))


def input_files(cfg: RunConfig) -> list[Path]:
    if cfg.dataset == "imagefolder":
        files = []
        for key in ("train_dir", "test_dir"):
            files += sorted(p for p in cfg.path(key).rglob("*") if p.is_file())
        return files
    return [cfg.path(k) for k in ("train_images", "train_labels", "test_images", "test_labels")]


def _config_with_overrides(path, overrides) -> RunConfig:
    cfg = load_config(path)
    for key, value in overrides.items():
        if value is not None:
            cfg.set(key, value)
    return cfg.validate()


def cmd_train(config_path, overrides=None) -> int:
    cfg = _config_with_overrides(config_path, overrides or {})
    train_cfg = cfg.train_config()
    train_ds = load_split(cfg, "train")
    test_ds = load_split(cfg, "test")
    model = build_model(cfg.model, train_ds.num_classes, seed=train_cfg.seed)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    result = train(model, train_ds, test_ds, train_cfg)
    (out / EPOCHS_CSV).write_text(epoch_stats_csv(result.stats), encoding="utf-8")
    result.checkpoint.config["dataset"] = cfg.dataset
    (out / CHECKPOINT).write_bytes(result.checkpoint.to_bytes())
    manifest = {
        "config": cfg.resolved(),
        "seed": train_cfg.seed,
        "model": cfg.model,
        "dataset": cfg.dataset,
        "inputs": {str(p): git_blob_hash(p) for p in input_files(cfg)},
        "trainable_parameters": model.num_parameters(),
        "train_seconds": result.train_seconds,
        "kernel_backend": kernels.backend_name(),
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    last = result.stats[-1]
    print(f"trained {cfg.model} on {cfg.dataset}: {len(result.stats)} epochs, "
          f"test_acc={last.test_accuracy:.4f}, outputs in {out}")
    return 0


def cmd_eval(checkpoint_path, config_path, overrides=None) -> int:
    cfg = _config_with_overrides(config_path, overrides or {})
    try:
        ckpt = read_checkpoint(checkpoint_path)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {checkpoint_path}: {exc.strerror or exc}") from exc
    arch = ckpt.config.get("architecture", {})
    want = cfg.resolved().get("num_classes")
    if want is not None and arch.get("num_classes") != want:
        raise ConfigError(
            f"checkpoint has {arch.get('num_classes')} classes (fc head) but config expects {want}"
        )
    model = restore(ckpt)
    test_ds = load_split(cfg, "test")
    if test_ds.num_classes != model.num_classes:
        raise ConfigError(
            f"checkpoint has {model.num_classes} classes (fc head) but data has {test_ds.num_classes}"
        )
    cm, macro, seconds = evaluate(model, test_ds)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / METRICS_CSV).write_text(report_to_csv(cm), encoding="utf-8")
    (out / CONFUSION_CSV).write_text(cm.to_csv(), encoding="utf-8")
    train_seconds = None
    manifest = out / MANIFEST
    if manifest.exists():
        train_seconds = json.loads(manifest.read_text()).get("train_seconds")
    summary = {
        "model": arch.get("model"),
        "dataset": cfg.dataset,
        "metrics": macro.values(),
        "samples": cm.total,
        "train_seconds": train_seconds,
        "inference_seconds": seconds,
    }
    (out / EVAL_JSON).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(" ".join(f"{k}={v:.4f}" for k, v in macro.values().items()))
    return 0


def cmd_verify() -> int:
    from .verify import run_all

    return 0 if run_all() else 1


def _fmt(v):
    return "n/a" if v is None else f"{v:.4f}"


def cmd_report(run_dir) -> int:
    run_dir = Path(run_dir)
    files = sorted(run_dir.rglob(EVAL_JSON)) if run_dir.is_dir() else []
    if not files:
        raise DataError(f"no {EVAL_JSON} found under {run_dir}")
    rows = []
    for f in files:
        s = json.loads(f.read_text())
        m = s["metrics"]
        rows.append([s["model"], s["dataset"], *(m[k] for k in METRIC_NAMES),
                     s.get("train_seconds"), s.get("inference_seconds")])
    header = ["Model", "Dataset", *REPORT_COLUMNS]
    text_rows = [[r[0], r[1], *map(_fmt, r[2:])] for r in rows]

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(text_rows)
    (run_dir / "report.csv").write_text(buf.getvalue(), encoding="utf-8")

    widths = [max(len(str(c)) for c in col) for col in zip(header, *text_rows)]
    lines = ["  ".join(str(c).ljust(wd) if i < 2 else str(c).rjust(wd)
                       for i, (c, wd) in enumerate(zip(row, widths)))
             for row in [header, *text_rows]]
    lines.insert(1, "  ".join("-" * wd for wd in widths))
    table = "\n".join(lines) + "\n"
    (run_dir / "report.txt").write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    return 0


def _add_overrides(p):
    for key, typ in KEYS.items():
        flags = [f"--{key}"] + ([f"--{key.replace('_', '-')}"] if "_" in key else [])
        p.add_argument(*flags, dest=f"set_{key}", metavar=typ.__name__.upper(), default=None,
                       help=argparse.SUPPRESS)


def build_parser():
    ap = argparse.ArgumentParser(prog="vea", description="Vision Eagle Attention ResNet-18 toolkit")
    ap.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a run config",
                       description="Any config key can be overridden with --key VALUE.")
    p.add_argument("config")
    _add_overrides(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the config's test split")
    p.add_argument("checkpoint")
    p.add_argument("config")
    _add_overrides(p)

    sub.add_parser("verify", help="run the built-in oracle suites")

    p = sub.add_parser("report", help="tabulate eval results found under a directory")
    p.add_argument("run_dir")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("set_")}
    try:
        configure_threads()
        if args.command == "train":
            return cmd_train(args.config, overrides)
        if args.command == "eval":
            return cmd_eval(args.checkpoint, args.config, overrides)
        if args.command == "verify":
            return cmd_verify()
        return cmd_report(args.run_dir)
    # order matters: IDX and checkpoint errors also derive from ValueError
    except CheckpointShapeError as exc:
        code, exc_msg = 1, exc
    except (DataError, CheckpointError, OSError) as exc:
        code, exc_msg = 2, exc
    except NumericalError as exc:
        code, exc_msg = 3, exc
    except (ConfigError, ValueError) as exc:
        code, exc_msg = 1, exc
    print(f"vea: error: {exc_msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
