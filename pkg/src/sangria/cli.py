"""Command-line entry point: ``sangria {ingest,train,predict,evaluate,ablate,bench}``.

Settings come from a flat ``key = value`` config file (``--config``), then
from flags, which win. Recognized keys::

    data, format (uji|canonical), floor_height
    devices, train_devices, test_devices        comma-separated
    sae.learning_rate, sae.epochs, sae.batch_size, sae.seed, sae.optimizer
    gbt.iterations, gbt.depth, gbt.learning_rate, gbt.l2_leaf_reg,
    gbt.n_bins, gbt.feature_fraction, gbt.seed
    split.train_per_rp, split.test_per_rp, split.seed
    augment (true|false), knn.k, bench.repetitions, bench.queries, bench.warmup

Lines starting with ``#`` are comments. Run directories default to
``$SANGRIA_OUTPUT_DIR`` (else ``runs``) when ``--out`` is not given.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import fields
from pathlib import Path

from .evaluation import (
    ablation_sae,
    cross_device_matrix,
    emit_report,
    error_stats,
    knn_errors,
    latency_benchmark,
    run_directory,
    scans_from_database,
)
from .fingerprint_data import (
    UJI_NOT_DETECTED,
    IngestionError,
    SplitError,
    load_canonical_csv,
    load_uji_csv,
    split_by_device,
    split_per_rp,
    write_canonical_csv,
)
from .artifact import ArtifactError
from .gbt import GbtConfig
from .localization import PredictionError, load_model, locate, save_model, train_sangria
from .sae import SaeConfig, TrainingError

OUTPUT_ENV = "SANGRIA_OUTPUT_DIR"

DEFAULTS = {
    "format": "canonical",
    "floor_height": 4.0,
    "augment": True,
    "split.train_per_rp": 5,
    "split.test_per_rp": 1,
    "split.seed": 0,
    "knn.k": 3,
    "bench.repetitions": 5,
    "bench.queries": 100,
    "bench.warmup": 10,
}
DEFAULTS.update({f"sae.{f.name}": f.default for f in fields(SaeConfig) if f.name != "widths"})
DEFAULTS.update({f"gbt.{f.name}": f.default for f in fields(GbtConfig)})

# flag dest -> config key
FLAG_KEYS = {
    "data": "data",
    "format": "format",
    "floor_height": "floor_height",
    "devices": "devices",
    "train_devices": "train_devices",
    "test_devices": "test_devices",
    "sae_epochs": "sae.epochs",
    "sae_learning_rate": "sae.learning_rate",
    "sae_batch_size": "sae.batch_size",
    "sae_seed": "sae.seed",
    "iterations": "gbt.iterations",
    "depth": "gbt.depth",
    "learning_rate": "gbt.learning_rate",
    "l2_leaf_reg": "gbt.l2_leaf_reg",
    "n_bins": "gbt.n_bins",
    "feature_fraction": "gbt.feature_fraction",
    "gbt_seed": "gbt.seed",
    "train_per_rp": "split.train_per_rp",
    "test_per_rp": "split.test_per_rp",
    "split_seed": "split.seed",
    "augment": "augment",
    "k": "knn.k",
    "repetitions": "bench.repetitions",
    "queries": "bench.queries",
    "warmup": "bench.warmup",
}


class CliError(Exception):
    pass


def read_config(path) -> dict:
    conf = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CliError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        conf[key] = value
    return conf


def _typed(key: str, value):
    default = DEFAULTS.get(key)
    if value is None or not isinstance(value, str) or default is None:
        return value
    if isinstance(default, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise CliError(f"{key}: expected true/false, got {value!r}")
    try:
        return type(default)(value)
    except ValueError:
        raise CliError(f"{key}: cannot parse {value!r} as {type(default).__name__}") from None


def resolve(args) -> dict:
    conf = dict(DEFAULTS)
    if getattr(args, "config", None):
        conf.update(read_config(args.config))
    for dest, key in FLAG_KEYS.items():
        v = getattr(args, dest, None)
        if v is not None:
            conf[key] = v
    return {k: _typed(k, v) for k, v in conf.items()}


def sae_config(conf) -> SaeConfig:
    return SaeConfig(**{f.name: conf[f"sae.{f.name}"] for f in fields(SaeConfig) if f.name != "widths"})


def gbt_config(conf) -> GbtConfig:
    return GbtConfig(**{f.name: conf[f"gbt.{f.name}"] for f in fields(GbtConfig)})


def _devices(conf, key) -> list[str]:
    v = conf.get(key)
    if not v:
        return []
    return [d.strip() for d in str(v).split(",") if d.strip()]


def _load(conf, key="data"):
    path = conf.get(key)
    if not path:
        raise CliError(f"--{key.replace('_', '-')} is required")
    fmt = conf["format"]
    if fmt == "uji":
        return load_uji_csv(path, floor_height=conf["floor_height"])
    if fmt == "canonical":
        return load_canonical_csv(path)
    raise CliError(f"unknown format {fmt!r} (expected uji or canonical)")


def _out_root(args) -> Path:
    return Path(args.out or os.environ.get(OUTPUT_ENV) or "runs")


def _provenance(conf) -> dict:
    return {k: conf[k] for k in sorted(conf)}


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args, conf):
    db = _load(conf)
    summary = {
        "records": len(db),
        "aps": len(db.registry),
        "reference_points": len(db.label_set),
        "devices": db.device_set,
        "clamped_readings": db.quality.get("clamped", 0),
        "digest": db.digest(),
    }
    if args.out:
        write_canonical_csv(db, args.out)
    print(json.dumps(summary, sort_keys=True))


def cmd_train(args, conf):
    db = _load(conf)
    train_devices = _devices(conf, "train_devices")
    if train_devices:
        db, _ = split_by_device(db, train_devices, train_devices)
    model = train_sangria(db, sae_config(conf), gbt_config(conf), conf["augment"])
    model.metadata["run_config"] = _provenance(conf)
    digest = save_model(model, args.out)
    print(f"{args.out} sha256={digest}")


def _read_scan(path) -> list[tuple[str, float]]:
    """AP id / dBm pairs; cells holding the UJI sentinel 100 count as not detected."""
    return [(k, v) for k, v in _read_scan_cells(path) if v != UJI_NOT_DETECTED]


def _read_scan_cells(path) -> list[tuple[str, float]]:
    text = Path(path).read_text(encoding="utf-8")
    if str(path).endswith(".json") or text.lstrip().startswith(("{", "[")):
        doc = json.loads(text)
        items = doc.items() if isinstance(doc, dict) else doc
        return [(str(k), float(v)) for k, v in items]
    rows = [r for r in csv.reader(text.splitlines()) if r]
    if len(rows) == 2 and len(rows[0]) == len(rows[1]):
        return [(k.strip(), float(v)) for k, v in zip(rows[0], rows[1])]
    # two-column layout: ap_id,dbm per line, optional header
    items = []
    for r in rows:
        if len(r) != 2:
            raise CliError(f"{path}: scan CSV must be header+row or ap_id,dbm pairs")
        try:
            items.append((r[0].strip(), float(r[1])))
        except ValueError:
            if items:
                raise CliError(f"{path}: bad dBm value {r[1]!r}") from None
    return items


def cmd_predict(args, conf):
    model = load_model(args.model)
    pred = locate(model, _read_scan(args.scan))
    loc = pred.location
    print(f"{loc.x!r},{loc.y!r},{loc.z!r},{pred.rp_label}")
    if pred.low_confidence:
        print("warning: scan shares no AP with the model registry", file=sys.stderr)


def cmd_evaluate(args, conf):
    db = _load(conf)
    devices = _devices(conf, "devices") or db.device_set
    sae_cfg, gbt_cfg = sae_config(conf), gbt_config(conf)
    matrix, errors = cross_device_matrix(
        db, devices, sae_cfg, gbt_cfg,
        conf["split.train_per_rp"], conf["split.test_per_rp"], conf["split.seed"],
        conf["augment"], return_errors=True,
    )
    matrix.config["run_config"] = _provenance(conf)
    out = run_directory(_out_root(args), _provenance(conf))
    emit_report(matrix, out / "matrix.csv", "csv")
    emit_report(matrix, out / "matrix.json", "json")
    all_errors = [e for k in sorted(errors) for e in errors[k]]
    if all_errors:
        emit_report(error_stats(all_errors), out / "stats.json", "json")
    print(out)


def cmd_ablate(args, conf):
    db = _load(conf)
    train_devs, test_devs = _devices(conf, "train_devices"), _devices(conf, "test_devices")
    if not train_devs or not test_devs:
        raise CliError("--train-devices and --test-devices are required")
    train, test = split_by_device(db, train_devs, test_devs)
    if set(train_devs) & set(test_devs):
        # a train device also under test: hold out samples per RP instead
        train, held = split_per_rp(train, conf["split.train_per_rp"], conf["split.test_per_rp"], conf["split.seed"])
        others = [d for d in test_devs if d not in train_devs]
        test = held.concat(split_by_device(db, others, others)[0]) if others else held
    result = ablation_sae(train, test, sae_config(conf), gbt_config(conf))
    result.config["run_config"] = _provenance(conf)
    result.config["knn_mean_error"] = float(knn_errors(train, test, conf["knn.k"]).mean())
    out = run_directory(_out_root(args), _provenance(conf))
    emit_report(result, out / "ablation.json", "json")
    print(out)


def cmd_bench(args, conf):
    model = load_model(args.model)
    if args.scan:
        queries = [dict(_read_scan(args.scan))]
    else:
        db = _load(conf)
        queries = scans_from_database(db)[: conf["bench.queries"]]
    report = latency_benchmark(model, queries, conf["bench.repetitions"], conf["bench.warmup"])
    out = run_directory(_out_root(args), _provenance(conf))
    emit_report(report, out / "latency.json", "json")
    print(f"{out} average_ms={report.average_ms:.1f}")


# ---------------------------------------------------------------------------
# parser


def _d(key) -> str:
    return f"(default: {DEFAULTS[key]})" if key in DEFAULTS else "(default: unset)"


def _add_data(p, required=False):
    p.add_argument("--data", required=required, help="dataset CSV path (default: from config)")
    p.add_argument("--format", choices=("uji", "canonical"), help=f"dataset layout {_d('format')}")
    p.add_argument("--floor-height", type=float, help=f"meters per UJI floor {_d('floor_height')}")


def _add_training(p):
    p.add_argument("--sae-epochs", type=int, help=f"SAE epochs {_d('sae.epochs')}")
    p.add_argument("--sae-learning-rate", type=float, help=f"SAE learning rate {_d('sae.learning_rate')}")
    p.add_argument("--sae-batch-size", type=int, help=f"SAE batch size {_d('sae.batch_size')}")
    p.add_argument("--sae-seed", type=int, help=f"SAE seed {_d('sae.seed')}")
    p.add_argument("--iterations", type=int, help=f"boosting rounds {_d('gbt.iterations')}")
    p.add_argument("--depth", type=int, help=f"tree depth {_d('gbt.depth')}")
    p.add_argument("--learning-rate", type=float, help=f"boosting shrinkage {_d('gbt.learning_rate')}")
    p.add_argument("--l2-leaf-reg", type=float, help=f"leaf L2 penalty {_d('gbt.l2_leaf_reg')}")
    p.add_argument("--n-bins", type=int, help=f"histogram bins {_d('gbt.n_bins')}")
    p.add_argument("--feature-fraction", type=float, help=f"features per round {_d('gbt.feature_fraction')}")
    p.add_argument("--gbt-seed", type=int, help=f"boosting seed {_d('gbt.seed')}")
    aug = p.add_mutually_exclusive_group()
    aug.add_argument("--augment", dest="augment", action="store_const", const=True,
                     help=f"train with SAE augmentation {_d('augment')}")
    aug.add_argument("--no-augment", dest="augment", action="store_const", const=False,
                     help="skip SAE augmentation (default: off)")


def _add_split(p):
    p.add_argument("--train-per-rp", type=int, help=f"train samples per RP {_d('split.train_per_rp')}")
    p.add_argument("--test-per-rp", type=int, help=f"test samples per RP {_d('split.test_per_rp')}")
    p.add_argument("--split-seed", type=int, help=f"split seed {_d('split.seed')}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sangria", description="Wi-Fi fingerprint localization")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--config", help="key = value config file (default: none)")
        return p

    p = add("ingest", "load a dataset, print a summary, optionally write canonical CSV")
    _add_data(p)
    p.add_argument("--out", help="canonical CSV to write (default: none)")
    p.set_defaults(func=cmd_ingest)

    p = add("train", "train a model and write the artifact")
    _add_data(p)
    _add_training(p)
    p.add_argument("--train-devices", help="restrict training to these devices (default: all)")
    p.add_argument("--out", required=True, help="model artifact path")
    p.set_defaults(func=cmd_train)

    p = add("predict", "predict the location of one scan; prints x,y,z,rp_label")
    p.add_argument("--model", required=True, help="model artifact path")
    p.add_argument("--scan", required=True, help="scan file: CSV header+row, ap_id,dbm pairs, or JSON")
    p.set_defaults(func=cmd_predict)

    p = add("evaluate", "cross-device error matrix")
    _add_data(p)
    _add_training(p)
    _add_split(p)
    p.add_argument("--devices", help="comma-separated device order (default: all, sorted)")
    p.add_argument("--out", help=f"run root (default: ${OUTPUT_ENV} or runs)")
    p.set_defaults(func=cmd_evaluate)

    p = add("ablate", "paired runs with and without SAE augmentation")
    _add_data(p)
    _add_training(p)
    _add_split(p)
    p.add_argument("--train-devices", help="comma-separated training devices (default: unset)")
    p.add_argument("--test-devices", help="comma-separated test devices (default: unset)")
    p.add_argument("--k", type=int, help=f"KNN baseline neighbours {_d('knn.k')}")
    p.add_argument("--out", help=f"run root (default: ${OUTPUT_ENV} or runs)")
    p.set_defaults(func=cmd_ablate)

    p = add("bench", "time single predictions")
    p.add_argument("--model", required=True, help="model artifact path")
    _add_data(p)
    p.add_argument("--scan", help="time this one scan instead of dataset records (default: none)")
    p.add_argument("--queries", type=int, help=f"dataset records used as queries {_d('bench.queries')}")
    p.add_argument("--repetitions", type=int, help=f"passes over the queries {_d('bench.repetitions')}")
    p.add_argument("--warmup", type=int, help=f"untimed warm-up calls {_d('bench.warmup')}")
    p.add_argument("--out", help=f"run root (default: ${OUTPUT_ENV} or runs)")
    p.set_defaults(func=cmd_bench)
    return parser


def run_command(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        conf = resolve(args)
        args.func(args, conf)
    except (CliError, IngestionError, SplitError, ArtifactError, PredictionError, TrainingError,
            ValueError, OSError) as exc:
        print(f"sangria {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
