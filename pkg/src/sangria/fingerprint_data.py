"""Fingerprint ingestion, RSS normalization, AP registry and train/test splits.

RSS values are stored on the unit interval everywhere past ingestion:
-100 dBm (no signal) maps to 0.0 and 0 dBm (strongest) maps to 1.0.
"""

from __future__ import annotations

import csv
import hashlib
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

DBM_MIN = -100.0
DBM_MAX = 0.0
UJI_NOT_DETECTED = 100.0
UJI_N_APS = 520
UJI_META_COLUMNS = (
    "LONGITUDE",
    "LATITUDE",
    "FLOOR",
    "BUILDINGID",
    "SPACEID",
    "RELATIVEPOSITION",
    "USERID",
    "PHONEID",
    "TIMESTAMP",
)
CANONICAL_META_COLUMNS = ("device", "rp_label", "x", "y", "z")


class IngestionError(ValueError):
    """A dataset file could not be turned into a FingerprintDatabase."""


class SplitError(ValueError):
    pass


# ---------------------------------------------------------------------------
# normalization


def normalize_rssi(dbm: float, counter: Counter | None = None) -> float:
    """Map a dBm reading onto [0, 1].

    Readings outside [-100, 0] are clamped to the nearer endpoint; when a
    ``counter`` is given its ``"clamped"`` entry is incremented for each one.
    """
    dbm = float(dbm)
    if not math.isfinite(dbm):
        raise ValueError(f"non-finite RSS value {dbm!r}")
    if dbm < DBM_MIN or dbm > DBM_MAX:
        if counter is not None:
            counter["clamped"] += 1
        dbm = min(max(dbm, DBM_MIN), DBM_MAX)
    return (dbm - DBM_MIN) / (DBM_MAX - DBM_MIN)


def denormalize_rssi(value: float) -> float:
    return DBM_MIN + float(value) * (DBM_MAX - DBM_MIN)


def normalize_array(dbm: np.ndarray) -> tuple[np.ndarray, int]:
    """Vectorized :func:`normalize_rssi`; returns (normalized, n_clamped)."""
    dbm = np.asarray(dbm, dtype=np.float64)
    if not np.all(np.isfinite(dbm)):
        raise ValueError("non-finite RSS value in input")
    out_of_range = (dbm < DBM_MIN) | (dbm > DBM_MAX)
    clipped = np.clip(dbm, DBM_MIN, DBM_MAX)
    return (clipped - DBM_MIN) / (DBM_MAX - DBM_MIN), int(out_of_range.sum())


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class Location:
    x: float
    y: float
    z: float = 0.0

    def __post_init__(self):
        for name in ("x", "y", "z"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"location coordinate {name}={v!r} is not finite")
            object.__setattr__(self, name, v)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


@dataclass(frozen=True)
class ApRegistry:
    """Ordered AP identifiers; position in the tuple is the feature index."""

    ap_ids: tuple[str, ...]

    def __post_init__(self):
        ids = tuple(str(a) for a in self.ap_ids)
        dupes = [a for a, c in Counter(ids).items() if c > 1]
        if dupes:
            raise ValueError(f"duplicate AP identifiers: {sorted(dupes)}")
        object.__setattr__(self, "ap_ids", ids)
        object.__setattr__(self, "_index", {a: i for i, a in enumerate(ids)})

    def __len__(self) -> int:
        return len(self.ap_ids)

    def __contains__(self, ap_id) -> bool:
        return ap_id in self._index

    def index(self, ap_id: str) -> int:
        return self._index[ap_id]

    def vector_from_scan(self, scan: Mapping[str, float] | Iterable[tuple[str, float]]):
        """Assemble a normalized vector from raw dBm readings keyed by AP id.

        Unknown APs are ignored, missing ones read as -100 dBm. Returns
        ``(vector, n_known)``.
        """
        items = scan.items() if isinstance(scan, Mapping) else scan
        vec = np.zeros(len(self.ap_ids))
        n_known = 0
        for ap_id, dbm in items:
            i = self._index.get(str(ap_id))
            if i is None:
                continue
            vec[i] = normalize_rssi(dbm)
            n_known += 1
        return vec, n_known


@dataclass(frozen=True)
class FingerprintRecord:
    rssi: np.ndarray
    location: Location
    rp_label: str
    device: str
    synthetic: bool = False


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FingerprintDatabase:
    """Immutable columnar store of fingerprints conforming to one registry."""

    registry: ApRegistry
    rssi: np.ndarray  # (n, n_aps) in [0, 1]
    locations: np.ndarray  # (n, 3) meters
    rp_labels: tuple[str, ...]
    devices: tuple[str, ...]
    rp_coordinates: Mapping[str, Location]
    synthetic: np.ndarray = None  # (n,) bool
    quality: Mapping[str, int] = field(default_factory=dict)
    origin: tuple[float, float] | None = None

    def __post_init__(self):
        n_aps = len(self.registry)
        rssi = np.asarray(self.rssi, dtype=np.float64).reshape(-1, n_aps)
        n = rssi.shape[0]
        locations = np.asarray(self.locations, dtype=np.float64).reshape(n, 3)
        synthetic = (
            np.zeros(n, dtype=bool)
            if self.synthetic is None
            else np.asarray(self.synthetic, dtype=bool).reshape(n)
        )
        if len(self.rp_labels) != n or len(self.devices) != n:
            raise ValueError("labels/devices length does not match record count")
        if n and (rssi.min() < 0.0 or rssi.max() > 1.0):
            raise ValueError("RSS vectors must lie in [0, 1]")
        missing = set(self.rp_labels) - set(self.rp_coordinates)
        if missing:
            raise ValueError(f"rp_coordinates missing labels {sorted(missing)[:5]}")
        object.__setattr__(self, "rssi", _readonly(rssi))
        object.__setattr__(self, "locations", _readonly(locations))
        object.__setattr__(self, "synthetic", _readonly(synthetic))
        object.__setattr__(self, "rp_labels", tuple(str(s) for s in self.rp_labels))
        object.__setattr__(self, "devices", tuple(str(s) for s in self.devices))
        object.__setattr__(self, "rp_coordinates", dict(self.rp_coordinates))
        object.__setattr__(self, "quality", dict(self.quality))

    def __len__(self) -> int:
        return self.rssi.shape[0]

    def __getitem__(self, i: int) -> FingerprintRecord:
        return FingerprintRecord(
            rssi=self.rssi[i],
            location=Location(*self.locations[i]),
            rp_label=self.rp_labels[i],
            device=self.devices[i],
            synthetic=bool(self.synthetic[i]),
        )

    @property
    def records(self) -> list[FingerprintRecord]:
        return [self[i] for i in range(len(self))]

    @property
    def device_set(self) -> list[str]:
        return sorted(set(self.devices))

    @property
    def label_set(self) -> list[str]:
        return sorted(set(self.rp_labels))

    def subset(self, indices: Sequence[int]) -> "FingerprintDatabase":
        idx = np.asarray(indices, dtype=np.intp).reshape(-1)
        return FingerprintDatabase(
            registry=self.registry,
            rssi=self.rssi[idx],
            locations=self.locations[idx],
            rp_labels=tuple(self.rp_labels[i] for i in idx),
            devices=tuple(self.devices[i] for i in idx),
            rp_coordinates=self.rp_coordinates,
            synthetic=self.synthetic[idx],
            origin=self.origin,
        )

    def concat(self, other: "FingerprintDatabase") -> "FingerprintDatabase":
        if other.registry != self.registry:
            raise ValueError("cannot concatenate databases with different registries")
        coords = dict(self.rp_coordinates)
        coords.update(other.rp_coordinates)
        return FingerprintDatabase(
            registry=self.registry,
            rssi=np.vstack([self.rssi, other.rssi]),
            locations=np.vstack([self.locations, other.locations]),
            rp_labels=self.rp_labels + other.rp_labels,
            devices=self.devices + other.devices,
            rp_coordinates=coords,
            synthetic=np.concatenate([self.synthetic, other.synthetic]),
            origin=self.origin,
        )

    def with_devices(self, mapping: Mapping[str, str]) -> "FingerprintDatabase":
        """Copy with device identifiers renamed through ``mapping``."""
        return FingerprintDatabase(
            registry=self.registry,
            rssi=self.rssi,
            locations=self.locations,
            rp_labels=self.rp_labels,
            devices=tuple(mapping.get(d, d) for d in self.devices),
            rp_coordinates=self.rp_coordinates,
            synthetic=self.synthetic,
            origin=self.origin,
        )

    def digest(self) -> str:
        """SHA-256 over the canonical content of the records (row order matters)."""
        h = hashlib.sha256()
        h.update("\x1f".join(self.registry.ap_ids).encode())
        h.update(np.ascontiguousarray(self.rssi, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.locations, dtype="<f8").tobytes())
        h.update("\x1f".join(self.rp_labels).encode())
        h.update("\x1f".join(self.devices).encode())
        h.update(self.synthetic.astype(np.uint8).tobytes())
        return h.hexdigest()

    def row_digests(self) -> list[str]:
        """Per-record digests, used to compare training sets record by record."""
        out = []
        for i in range(len(self)):
            h = hashlib.sha256()
            h.update(np.ascontiguousarray(self.rssi[i], dtype="<f8").tobytes())
            h.update(np.ascontiguousarray(self.locations[i], dtype="<f8").tobytes())
            h.update(f"{self.rp_labels[i]}\x1f{self.devices[i]}".encode())
            out.append(h.hexdigest())
        return out


def empty_like(db: FingerprintDatabase) -> FingerprintDatabase:
    return db.subset([])


# ---------------------------------------------------------------------------
# loaders


def _read_rows(path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8-sig") as fh:
            rows = [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]
    except OSError as exc:
        raise IngestionError(f"{path}: {exc.strerror or exc}") from exc
    if not rows:
        raise IngestionError(f"{path}: empty file")
    header = [c.strip() for c in rows[0]]
    return header, rows[1:]


def _to_float(cell: str, row_no: int, column: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise IngestionError(f"row {row_no}, column {column}: non-numeric cell {cell!r}") from None
    if not math.isfinite(v):
        raise IngestionError(f"row {row_no}, column {column}: non-finite cell {cell!r}")
    return v


def _fmt_num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def load_uji_csv(
    path,
    floor_height: float = 4.0,
    origin: tuple[float, float] | None = None,
) -> FingerprintDatabase:
    """Load a file with the UJIIndoorLoc column layout.

    ``origin`` is the (longitude, latitude) subtracted from coordinates;
    it defaults to the per-file minimum. Pass the training file's
    ``db.origin`` when loading a matching validation file so both share a
    frame. RP coordinates are the centroid of the label's records.
    """
    header, rows = _read_rows(path)
    ap_cols = [f"WAP{i:03d}" for i in range(1, UJI_N_APS + 1)]
    col = {name: i for i, name in enumerate(header)}
    missing = [c for c in ap_cols + list(UJI_META_COLUMNS) if c not in col]
    if missing:
        raise IngestionError(f"{path}: missing columns {missing[:5]}{'...' if len(missing) > 5 else ''}")
    if not rows:
        raise IngestionError(f"{path}: no data rows")

    ap_idx = [col[c] for c in ap_cols]
    raw = np.empty((len(rows), UJI_N_APS))
    meta = np.empty((len(rows), len(UJI_META_COLUMNS)))
    meta_idx = [col[c] for c in UJI_META_COLUMNS]
    for r, row in enumerate(rows):
        row_no = r + 2
        if len(row) != len(header):
            raise IngestionError(f"row {row_no}: expected {len(header)} cells, got {len(row)}")
        try:
            raw[r] = [float(row[i]) for i in ap_idx]
            meta[r] = [float(row[i]) for i in meta_idx]
        except ValueError:
            for name, i in zip(ap_cols + list(UJI_META_COLUMNS), ap_idx + meta_idx):
                _to_float(row[i], row_no, name)
            raise
        if not np.all(np.isfinite(raw[r])) or not np.all(np.isfinite(meta[r])):
            raise IngestionError(f"row {row_no}: non-finite cell")

    raw[raw == UJI_NOT_DETECTED] = DBM_MIN
    rssi, n_clamped = normalize_array(raw)

    lon, lat, floor, building, space, relpos, _user, phone, _ts = meta.T
    if origin is None:
        origin = (float(lon.min()), float(lat.min()))
    locations = np.column_stack([lon - origin[0], lat - origin[1], floor * floor_height])
    labels = tuple(
        f"{_fmt_num(b)}:{_fmt_num(f)}:{_fmt_num(s)}:{_fmt_num(p)}"
        for b, f, s, p in zip(building, floor, space, relpos)
    )
    devices = tuple(_fmt_num(p) for p in phone)

    sums: dict[str, np.ndarray] = {}
    counts: Counter = Counter()
    for lab, loc in zip(labels, locations):
        sums[lab] = sums.get(lab, 0.0) + loc
        counts[lab] += 1
    rp_coordinates = {lab: Location(*(sums[lab] / counts[lab])) for lab in sorted(sums)}

    return FingerprintDatabase(
        registry=ApRegistry(tuple(ap_cols)),
        rssi=rssi,
        locations=locations,
        rp_labels=labels,
        devices=devices,
        rp_coordinates=rp_coordinates,
        quality={"clamped": n_clamped},
        origin=origin,
    )


def load_canonical_csv(path) -> FingerprintDatabase:
    """Load ``device,rp_label,x,y,z,<ap ids...>`` with RSS cells in dBm."""
    header, rows = _read_rows(path)
    if tuple(header[:5]) != CANONICAL_META_COLUMNS:
        raise IngestionError(
            f"{path}: header must start with {','.join(CANONICAL_META_COLUMNS)}, got {header[:5]}"
        )
    ap_ids = header[5:]
    dupes = sorted(a for a, c in Counter(ap_ids).items() if c > 1)
    if dupes:
        raise IngestionError(f"{path}: duplicate AP columns {dupes}")
    if any(not a for a in ap_ids):
        raise IngestionError(f"{path}: blank AP column name")

    n_aps = len(ap_ids)
    raw = np.empty((len(rows), n_aps))
    locations = np.empty((len(rows), 3))
    labels, devices = [], []
    rp_coordinates: dict[str, Location] = {}
    for r, row in enumerate(rows):
        row_no = r + 2
        if len(row) != len(header):
            raise IngestionError(f"row {row_no}: expected {len(header)} cells, got {len(row)}")
        device, label = row[0].strip(), row[1].strip()
        loc = [_to_float(row[2 + k], row_no, name) for k, name in enumerate("xyz")]
        raw[r] = [_to_float(row[5 + k], row_no, ap) for k, ap in enumerate(ap_ids)]
        prev = rp_coordinates.get(label)
        here = Location(*loc)
        if prev is not None and prev != here:
            raise IngestionError(
                f"row {row_no}: rp_label {label!r} at {loc} conflicts with earlier "
                f"({prev.x}, {prev.y}, {prev.z})"
            )
        rp_coordinates[label] = here
        locations[r] = loc
        labels.append(label)
        devices.append(device)

    rssi, n_clamped = normalize_array(raw)
    return FingerprintDatabase(
        registry=ApRegistry(tuple(ap_ids)),
        rssi=rssi,
        locations=locations,
        rp_labels=tuple(labels),
        devices=tuple(devices),
        rp_coordinates=rp_coordinates,
        quality={"clamped": n_clamped},
    )


def write_canonical_csv(db: FingerprintDatabase, path) -> None:
    """Write ``db`` in canonical layout (dBm cells), the inverse of the loader."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(CANONICAL_META_COLUMNS) + list(db.registry.ap_ids))
        dbm = DBM_MIN + db.rssi * (DBM_MAX - DBM_MIN)
        for i in range(len(db)):
            w.writerow(
                [db.devices[i], db.rp_labels[i]]
                + [repr(float(v)) for v in db.locations[i]]
                + [repr(float(v)) for v in dbm[i]]
            )


# ---------------------------------------------------------------------------
# splits


def split_per_rp(
    db: FingerprintDatabase, train_per_rp: int, test_per_rp: int, seed: int = 0
) -> tuple[FingerprintDatabase, FingerprintDatabase]:
    """Seeded per-RP split: ``train_per_rp`` records of each RP to train,
    the next ``test_per_rp`` to test. Output keeps the database order."""
    if train_per_rp < 0 or test_per_rp < 0:
        raise SplitError("per-RP counts must be non-negative")
    need = train_per_rp + test_per_rp
    by_label: dict[str, list[int]] = {}
    for i, lab in enumerate(db.rp_labels):
        by_label.setdefault(lab, []).append(i)
    deficient = sorted(lab for lab, idx in by_label.items() if len(idx) < need)
    if deficient:
        shown = ", ".join(f"{lab} ({len(by_label[lab])})" for lab in deficient[:10])
        raise SplitError(f"{len(deficient)} RPs have fewer than {need} samples: {shown}")

    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for lab in sorted(by_label):
        idx = np.asarray(by_label[lab])
        perm = idx[rng.permutation(len(idx))]
        train_idx.extend(perm[:train_per_rp])
        test_idx.extend(perm[train_per_rp:need])
    return db.subset(sorted(train_idx)), db.subset(sorted(test_idx))


def split_by_device(
    db: FingerprintDatabase, train_devices: Iterable[str], test_devices: Iterable[str]
) -> tuple[FingerprintDatabase, FingerprintDatabase]:
    train_devices, test_devices = set(map(str, train_devices)), set(map(str, test_devices))
    if not train_devices or not test_devices:
        raise SplitError("device sets must be non-empty")
    unknown = (train_devices | test_devices) - set(db.devices)
    if unknown:
        raise SplitError(f"unknown devices {sorted(unknown)}; database has {db.device_set}")
    train = [i for i, d in enumerate(db.devices) if d in train_devices]
    test = [i for i, d in enumerate(db.devices) if d in test_devices]
    return db.subset(train), db.subset(test)
