"""Simulated survey campaigns written in the UJIIndoorLoc column layout.

Used where the real dataset is not at hand. Signal strength follows a
log-distance path-loss model with per-(AP, RP) shadowing that is shared by all
phones, plus temporal noise. Each phone distorts the true RSS with its own
gain, offset and detection floor, which is the device-heterogeneity effect
the augmentation is meant to absorb.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fingerprint_data import UJI_META_COLUMNS, UJI_N_APS, UJI_NOT_DETECTED


@dataclass(frozen=True)
class PhoneProfile:
    gain: float = 1.0
    offset_db: float = 0.0
    noise_db: float = 2.0
    floor_dbm: float = -92.0


DEFAULT_PHONES = {
    "1": PhoneProfile(1.00, 0.0, 4.0, -92.0),
    "2": PhoneProfile(0.92, -5.0, 4.5, -88.0),
    "3": PhoneProfile(1.06, 3.0, 5.0, -95.0),
}


def _path(n_rps: int) -> np.ndarray:
    """RPs 1 m apart along an L-shaped corridor."""
    leg = n_rps // 2
    pts = [(float(i), 0.0) for i in range(leg)]
    pts += [(float(leg - 1), float(j)) for j in range(1, n_rps - leg + 1)]
    return np.array(pts)


def simulate_rows(
    n_rps: int = 70,
    samples_per_rp: int = 6,
    phones: dict[str, PhoneProfile] | None = None,
    n_floors: int = 1,
    n_aps: int = UJI_N_APS,
    building_id: int = 0,
    path_loss_exponent: float = 3.5,
    tx_dbm: float = -40.0,
    shadowing_db: float = 6.0,
    shadowing_decorrelation_m: float = 5.0,
    floor_loss_db: float = 15.0,
    site_size: tuple[float, float] = (200.0, 150.0),
    miss_prob: float = 0.1,
    seed: int = 0,
) -> list[list[float]]:
    """Rows in UJI column order: WAP001..WAPnnn, then the nine metadata columns."""
    phones = DEFAULT_PHONES if phones is None else phones
    rng = np.random.default_rng(seed)
    floor_height = 4.0
    rp_xy = _path(n_rps)
    # the surveyed path sits inside a larger site whose APs are mostly out of range
    centre = (rp_xy.max(axis=0) + rp_xy.min(axis=0)) / 2.0
    ap_floor = rng.integers(0, max(n_floors, 3), n_aps)
    ap_xyz = np.column_stack(
        [
            centre[0] + rng.uniform(-site_size[0] / 2, site_size[0] / 2, n_aps),
            centre[1] + rng.uniform(-site_size[1] / 2, site_size[1] / 2, n_aps),
            ap_floor * floor_height + 2.5,
        ]
    )
    rows = []
    ts = 1_371_700_000
    for floor in range(n_floors):
        rp_xyz = np.column_stack([rp_xy, np.full(n_rps, floor * floor_height + 1.2)])
        dist = np.linalg.norm(rp_xyz[:, None, :] - ap_xyz[None, :, :], axis=2)
        # shared by every phone: the environment, not the radio. Exponentially
        # correlated along the survey path.
        sep = np.linalg.norm(rp_xy[:, None, :] - rp_xy[None, :, :], axis=2)
        corr = np.exp(-sep / shadowing_decorrelation_m)
        chol = np.linalg.cholesky(corr + 1e-9 * np.eye(n_rps))
        shadow = shadowing_db * chol @ rng.normal(size=dist.shape)
        floors_between = np.abs(ap_floor[None, :] - floor)
        true_rss = (
            tx_dbm
            - 10.0 * path_loss_exponent * np.log10(np.maximum(dist, 1.0))
            - floor_loss_db * floors_between
            + shadow
        )
        for phone_id, prof in phones.items():
            for r in range(n_rps):
                for s in range(samples_per_rp):
                    obs = prof.gain * true_rss[r] + prof.offset_db + rng.normal(0.0, prof.noise_db, n_aps)
                    obs = np.round(np.clip(obs, -104.0, 0.0))
                    obs[(obs < prof.floor_dbm) | (rng.random(n_aps) < miss_prob)] = UJI_NOT_DETECTED
                    meta = [
                        -7600.0 + rp_xy[r, 0],
                        4864900.0 + rp_xy[r, 1],
                        float(floor),
                        float(building_id),
                        float(100 + r // 2),
                        float(1 + r % 2),
                        float(s + 1),
                        float(phone_id),
                        float(ts),
                    ]
                    ts += 1
                    rows.append(list(obs) + meta)
    return rows


def write_uji_csv(rows, path, n_aps: int = UJI_N_APS) -> Path:
    path = Path(path)
    header = [f"WAP{i:03d}" for i in range(1, n_aps + 1)] + list(UJI_META_COLUMNS)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:g}" if abs(v) < 1e6 else f"{v:.1f}" for v in row])
    return path


def simulate_uji_csv(path, **kwargs) -> Path:
    """Write a simulated campaign to ``path``; keyword args go to :func:`simulate_rows`."""
    return write_uji_csv(simulate_rows(**kwargs), path, kwargs.get("n_aps", UJI_N_APS))
