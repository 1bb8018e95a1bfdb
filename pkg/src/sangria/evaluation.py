"""Cross-device error matrices, error summaries, SAE ablation and latency."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from .fingerprint_data import FingerprintDatabase, SplitError, split_by_device, split_per_rp
from .gbt import GbtConfig
from .localization import SangriaModel, knn_predict_many, predict_location, train_sangria
from .localization import _sae_cfg_dict as _cfg_dict
from .sae import SaeConfig

REPORT_FILES = {
    "ErrorMatrix": "matrix",
    "ErrorStats": "stats",
    "AblationResult": "ablation",
    "LatencyReport": "latency",
}


@dataclass
class ErrorStats:
    min: float
    mean: float
    max: float
    n: int

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "ErrorStats":
        return cls(d["min"], d["mean"], d["max"], d["n"])


def error_stats(errors: Sequence[float]) -> ErrorStats:
    e = np.asarray(errors, dtype=np.float64).reshape(-1)
    if e.size == 0:
        raise ValueError("no errors to summarize")
    return ErrorStats(float(e.min()), float(e.mean()), float(e.max()), int(e.size))


def localization_errors(model: SangriaModel, test: FingerprintDatabase) -> np.ndarray:
    """Per-record Euclidean error of the model on ``test`` (meters)."""
    if len(test) == 0:
        return np.zeros(0)
    _, coords = model.predict_vectors(test.rssi)
    return np.sqrt(np.sum((coords - test.locations) ** 2, axis=1))


def knn_errors(train: FingerprintDatabase, test: FingerprintDatabase, k: int = 3) -> np.ndarray:
    coords = knn_predict_many(train, test.rssi, k)
    return np.sqrt(np.sum((coords - test.locations) ** 2, axis=1))


# ---------------------------------------------------------------------------
# cross-device matrix


@dataclass
class ErrorMatrix:
    """Mean error of a model trained on ``devices[i]`` and tested on ``devices[j]``.

    Absent cells hold NaN with a reason in ``absent``.
    """

    devices: list[str]
    cells: np.ndarray
    counts: np.ndarray
    absent: dict[str, str] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def cell(self, train_device: str, test_device: str) -> float:
        return float(self.cells[self.devices.index(train_device), self.devices.index(test_device)])

    def to_dict(self) -> dict:
        return {
            "devices": list(self.devices),
            "cells": [[None if math.isnan(v) else float(v) for v in row] for row in self.cells],
            "counts": [[int(v) for v in row] for row in self.counts],
            "absent": dict(sorted(self.absent.items())),
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d) -> "ErrorMatrix":
        cells = np.array([[np.nan if v is None else v for v in row] for row in d["cells"]], dtype=np.float64)
        return cls(list(d["devices"]), cells.reshape(len(d["devices"]), -1),
                   np.array(d["counts"], dtype=np.int64).reshape(len(d["devices"]), -1),
                   dict(d.get("absent", {})), dict(d.get("config", {})))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["train\\test"] + list(self.devices))
        for dev, row in zip(self.devices, self.cells):
            w.writerow([dev] + ["" if math.isnan(v) else repr(float(v)) for v in row])
        return buf.getvalue()


def cross_device_matrix(
    db: FingerprintDatabase,
    devices: Sequence[str],
    sae_cfg: SaeConfig = SaeConfig(),
    gbt_cfg: GbtConfig = GbtConfig(),
    train_per_rp: int = 5,
    test_per_rp: int = 1,
    split_seed: int = 0,
    augment_data: bool = True,
    return_errors: bool = False,
):
    """Train on each device, test on each device.

    Diagonal cells hold out ``test_per_rp`` samples per RP of the device and
    train on ``train_per_rp``; off-diagonal cells use every record of both
    sides. One model is trained per train device and per diagonal split.
    """
    devices = [str(d) for d in devices]
    if len(set(devices)) != len(devices):
        raise ValueError("device list has duplicates")
    missing = [d for d in devices if d not in set(db.devices)]
    if missing:
        raise ValueError(f"devices without records: {missing}")
    n = len(devices)
    cells = np.full((n, n), np.nan)
    counts = np.zeros((n, n), dtype=np.int64)
    absent: dict[str, str] = {}
    errors: dict[tuple[str, str], np.ndarray] = {}
    per_device = {d: split_by_device(db, [d], [d])[0] for d in devices}

    for i, tr_dev in enumerate(devices):
        full = per_device[tr_dev]
        off_model = None
        for j, te_dev in enumerate(devices):
            key = f"{tr_dev}->{te_dev}"
            if i == j:
                try:
                    train, test = split_per_rp(full, train_per_rp, test_per_rp, split_seed)
                except SplitError as exc:
                    absent[key] = str(exc)
                    continue
                if len(train) == 0 or len(test) == 0:
                    absent[key] = "empty split"
                    continue
                model = train_sangria(train, sae_cfg, gbt_cfg, augment_data)
            else:
                if off_model is None:
                    off_model = train_sangria(full, sae_cfg, gbt_cfg, augment_data)
                model, test = off_model, per_device[te_dev]
            err = localization_errors(model, test)
            errors[(tr_dev, te_dev)] = err
            cells[i, j] = float(err.mean())
            counts[i, j] = err.size

    config = {
        "sae_config": _cfg_dict(sae_cfg),
        "gbt_config": asdict(gbt_cfg),
        "train_per_rp": train_per_rp,
        "test_per_rp": test_per_rp,
        "split_seed": split_seed,
        "augment": augment_data,
        "dataset_digest": db.digest(),
    }
    matrix = ErrorMatrix(devices, cells, counts, absent, config)
    return (matrix, errors) if return_errors else matrix


# ---------------------------------------------------------------------------
# ablation


@dataclass
class AblationResult:
    with_sae: ErrorStats
    without_sae: ErrorStats
    relative_mean_delta: float
    with_training_digest: str = ""
    without_training_digest: str = ""
    n_fit_with: int = 0
    n_fit_without: int = 0
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["with_sae"] = self.with_sae.to_dict()
        d["without_sae"] = self.without_sae.to_dict()
        return d

    @classmethod
    def from_dict(cls, d) -> "AblationResult":
        d = dict(d)
        d["with_sae"] = ErrorStats.from_dict(d["with_sae"])
        d["without_sae"] = ErrorStats.from_dict(d["without_sae"])
        return cls(**d)


def ablation_sae(
    train: FingerprintDatabase,
    test: FingerprintDatabase,
    sae_cfg: SaeConfig = SaeConfig(),
    gbt_cfg: GbtConfig = GbtConfig(),
    return_models: bool = False,
):
    """Two models with identical seeds that differ only in augmentation."""
    with_model = train_sangria(train, sae_cfg, gbt_cfg, augment_data=True)
    without_model = train_sangria(train, sae_cfg, gbt_cfg, augment_data=False)
    w = error_stats(localization_errors(with_model, test))
    wo = error_stats(localization_errors(without_model, test))
    delta = (wo.mean - w.mean) / wo.mean if wo.mean > 0 else 0.0
    result = AblationResult(
        with_sae=w,
        without_sae=wo,
        relative_mean_delta=float(delta),
        with_training_digest=with_model.metadata["training_set_digest"],
        without_training_digest=without_model.metadata["training_set_digest"],
        n_fit_with=with_model.metadata["n_fit_records"],
        n_fit_without=without_model.metadata["n_fit_records"],
        config={
            "sae_config": _cfg_dict(sae_cfg),
            "gbt_config": asdict(gbt_cfg),
            "train_digest": train.digest(),
            "test_digest": test.digest(),
        },
    )
    return (result, with_model, without_model) if return_models else result


# ---------------------------------------------------------------------------
# latency


@dataclass
class LatencyReport:
    times_ms: list[float]
    average_ms: float
    warmup: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "LatencyReport":
        return cls(list(d["times_ms"]), d["average_ms"], d.get("warmup", 0))


def latency_benchmark(model: SangriaModel, queries: Sequence, repetitions: int = 1, warmup: int = 10) -> LatencyReport:
    """Wall-clock time of single :func:`predict_location` calls.

    ``queries`` are raw scans (AP id -> dBm). ``warmup`` untimed calls run
    first, cycling through the queries.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    if not queries:
        raise ValueError("no queries to time")
    for i in range(warmup):
        predict_location(model, queries[i % len(queries)])
    times = []
    for _ in range(repetitions):
        for q in queries:
            t0 = time.perf_counter_ns()
            predict_location(model, q)
            times.append(round((time.perf_counter_ns() - t0) / 1e6, 1))
    return LatencyReport(times, sum(times) / len(times), warmup)


def scans_from_database(db: FingerprintDatabase) -> list[dict[str, float]]:
    """Raw dBm scans (detected APs only) rebuilt from normalized records."""
    out = []
    for row in db.rssi:
        nz = np.flatnonzero(row)
        out.append({db.registry.ap_ids[k]: float(-100.0 + 100.0 * row[k]) for k in nz})
    return out


# ---------------------------------------------------------------------------
# reports


def _report_doc(results) -> dict:
    kind = type(results).__name__
    if kind not in REPORT_FILES:
        raise TypeError(f"cannot report a {kind}")
    return {"type": kind, "data": results.to_dict()}


def emit_report(results, path, format: str = "json") -> Path:
    """Write one result object as ``json`` or ``csv`` with a stable layout."""
    path = Path(path)
    if format == "json":
        text = json.dumps(_report_doc(results), sort_keys=True, indent=2) + "\n"
    elif format == "csv":
        if isinstance(results, ErrorMatrix):
            text = results.to_csv()
        else:
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["key", "value"])
            for k, v in _flatten(results.to_dict()):
                w.writerow([k, v])
            text = buf.getvalue()
    else:
        raise ValueError(f"unknown report format {format!r}")
    path.write_text(text, encoding="utf-8")
    return path


def _flatten(d, prefix=""):
    for k in sorted(d):
        v = d[k]
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            yield from _flatten(v, key + ".")
        elif isinstance(v, list):
            yield key, json.dumps(v)
        else:
            yield key, v


_TYPES = {"ErrorMatrix": ErrorMatrix, "ErrorStats": ErrorStats, "AblationResult": AblationResult,
          "LatencyReport": LatencyReport}


def load_report(path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return _TYPES[doc["type"]].from_dict(doc["data"])


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()[:10]


def run_directory(root, config: dict, now: datetime | None = None) -> Path:
    """``root/<UTC timestamp>-<config hash>``, created if needed."""
    now = now or datetime.now(timezone.utc)
    path = Path(root) / f"{now.strftime('%Y%m%dT%H%M%SZ')}-{config_hash(config)}"
    path.mkdir(parents=True, exist_ok=True)
    return path
