"""End-to-end pipeline: normalize, augment with the SAE, boost, predict.

Also hosts the Euclidean error metric and a k-nearest-neighbour baseline.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping

import numpy as np

from . import artifact
from .fingerprint_data import ApRegistry, FingerprintDatabase, Location
from .gbt import GbtConfig, GbtEnsemble, apply_link, ensemble_from_dict, ensemble_to_dict, fit_ensemble
from .sae import SaeConfig, StackedAutoencoder, augment, sae_from_dict, sae_to_dict, train_sae

MODEL_KIND = "sangria-model"


class PredictionError(ValueError):
    pass


@dataclass(eq=False)
class SangriaModel:
    registry: ApRegistry
    ensemble: GbtEnsemble
    rp_coordinates: dict[str, Location]
    sae: StackedAutoencoder | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        missing = set(self.ensemble.class_labels) - set(self.rp_coordinates)
        if missing:
            raise ValueError(f"classes without coordinates: {sorted(missing)[:5]}")
        self._coords = np.array([self.rp_coordinates[c].as_array() for c in self.ensemble.class_labels])

    def predict_vectors(self, x) -> tuple[list[str], np.ndarray]:
        """Labels and coordinates for normalized RSS vectors (one per row)."""
        s = self.ensemble.raw_scores(np.atleast_2d(x))
        idx = np.argmax(s, axis=1)
        return [self.ensemble.class_labels[i] for i in idx], self._coords[idx]


@dataclass(frozen=True)
class Prediction:
    location: Location
    rp_label: str
    probability: float
    n_known_aps: int

    @property
    def low_confidence(self) -> bool:
        """True when the scan shares no AP with the registry."""
        return self.n_known_aps == 0


def train_sangria(
    train: FingerprintDatabase,
    sae_cfg: SaeConfig = SaeConfig(),
    gbt_cfg: GbtConfig = GbtConfig(),
    augment_data: bool = True,
) -> SangriaModel:
    """Fit the SAE on ``train``, concatenate its reconstructions, boost on the union.

    With ``augment_data=False`` the SAE is skipped and the ensemble sees only
    ``train``; this is the ablation arm.
    """
    if len(train) == 0:
        raise ValueError("training set is empty")
    sae = None
    fit_on = train
    if augment_data:
        sae = train_sae(train.rssi, sae_cfg)
        fit_on = augment(sae, train)
    ensemble = fit_ensemble(fit_on, gbt_cfg)
    metadata = {
        "augment": bool(augment_data),
        "sae_config": _sae_cfg_dict(sae_cfg),
        "gbt_config": asdict(gbt_cfg),
        "dataset_digest": train.digest(),
        "training_set_digest": fit_on.digest(),
        "n_train_records": len(train),
        "n_fit_records": len(fit_on),
    }
    coords = {lab: train.rp_coordinates[lab] for lab in sorted(set(train.rp_labels))}
    return SangriaModel(train.registry, ensemble, coords, sae, metadata)


def _sae_cfg_dict(cfg: SaeConfig) -> dict:
    d = asdict(cfg)
    d["widths"] = list(cfg.widths.as_tuple()) if cfg.widths else None
    return d


def _scan_items(scan) -> list[tuple[str, float]]:
    items = scan.items() if isinstance(scan, Mapping) else scan
    return [(str(k), float(v)) for k, v in items]


def locate(model: SangriaModel, scan: Mapping[str, float] | Iterable[tuple[str, float]]) -> Prediction:
    """Predict from raw dBm readings keyed by AP id, with diagnostics."""
    if len(model.registry) == 0:
        raise PredictionError("model has an empty AP registry")
    vec, n_known = model.registry.vector_from_scan(_scan_items(scan))
    raw = model.ensemble.raw_scores(vec)
    i = int(np.argmax(raw))
    p = apply_link(raw, model.ensemble.link)
    label = model.ensemble.class_labels[i]
    return Prediction(model.rp_coordinates[label], label, float(p[i]), n_known)


def predict_location(model: SangriaModel, scan) -> Location:
    return locate(model, scan).location


def euclidean_error(a, b) -> float:
    """Straight-line distance in meters between two 3-D locations."""
    pa = a.as_array() if isinstance(a, Location) else np.asarray(a, dtype=np.float64)
    pb = b.as_array() if isinstance(b, Location) else np.asarray(b, dtype=np.float64)
    # math.dist scales internally, so tiny or huge differences do not under/overflow
    return math.dist(pa.tolist(), pb.tolist())


def knn_predict(train: FingerprintDatabase, x, k: int = 3) -> Location:
    """Centroid of the ``k`` nearest training fingerprints (Euclidean, normalized RSS).

    Equal distances keep the lower record index.
    """
    if len(train) == 0:
        raise ValueError("training set is empty")
    if not 1 <= k <= len(train):
        raise ValueError(f"k must be in [1, {len(train)}], got {k}")
    x = np.asarray(x, dtype=np.float64)
    d2 = np.sum((train.rssi - x) ** 2, axis=1)
    nearest = np.argsort(d2, kind="stable")[:k]
    return Location(*train.locations[nearest].mean(axis=0))


def knn_predict_many(train: FingerprintDatabase, x, k: int = 3) -> np.ndarray:
    """Row-wise :func:`knn_predict` returning an ``(n, 3)`` coordinate array."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if len(train) == 0:
        raise ValueError("training set is empty")
    if not 1 <= k <= len(train):
        raise ValueError(f"k must be in [1, {len(train)}], got {k}")
    sq = np.sum(train.rssi**2, axis=1)
    out = np.empty((x.shape[0], 3))
    for i, row in enumerate(x):
        d2 = sq - 2.0 * train.rssi @ row + row @ row
        nearest = np.argsort(d2, kind="stable")[:k]
        out[i] = train.locations[nearest].mean(axis=0)
    return out


# ---------------------------------------------------------------------------
# artifacts


def model_to_bytes(model: SangriaModel) -> bytes:
    payload = {
        "registry": list(model.registry.ap_ids),
        "rp_coordinates": {k: [v.x, v.y, v.z] for k, v in sorted(model.rp_coordinates.items())},
        "ensemble": ensemble_to_dict(model.ensemble),
        "sae": sae_to_dict(model.sae) if model.sae is not None else None,
        "metadata": model.metadata,
    }
    return artifact.dumps(MODEL_KIND, payload)


def model_from_bytes(data: bytes) -> SangriaModel:
    p = artifact.loads(data, MODEL_KIND)
    # json floats round-trip exactly through repr
    coords = {lab: Location(*xyz) for lab, xyz in p["rp_coordinates"].items()}
    return SangriaModel(
        registry=ApRegistry(tuple(p["registry"])),
        ensemble=ensemble_from_dict(p["ensemble"]),
        rp_coordinates=coords,
        sae=sae_from_dict(p["sae"]) if p["sae"] is not None else None,
        metadata=p["metadata"],
    )


def save_model(model: SangriaModel, path) -> str:
    """Write the model artifact; returns its SHA-256."""
    data = model_to_bytes(model)
    with open(path, "wb") as fh:
        fh.write(data)
    return hashlib.sha256(data).hexdigest()


def load_model(path) -> SangriaModel:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
