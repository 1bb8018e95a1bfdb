"""
Building a fingerprint database
===============================

Load a survey in the UJIIndoorLoc layout, look at how RSS is normalized,
and split it the way the experiments do: five samples per reference point
for training, one for testing, and by phone for cross-device runs.

Set ``SANGRIA_UJI_CSV`` to a real UJIIndoorLoc training file to use it;
otherwise a simulated three-phone campaign is written to a temp directory.
"""

# %%
import os
import tempfile
from pathlib import Path

import numpy as np

from sangria import load_uji_csv, normalize_rssi, split_by_device, split_per_rp
from sangria.synthetic import simulate_uji_csv

path = os.environ.get("SANGRIA_UJI_CSV")
if not path:
    path = Path(tempfile.mkdtemp()) / "campaign.csv"
    simulate_uji_csv(path, n_rps=20, samples_per_rp=6, seed=0)

# %%
# dBm maps linearly onto [0, 1]; -100 dBm is "no signal"
for dbm in (-100, -75, -50, 0):
    print(f"{dbm:5d} dBm -> {normalize_rssi(dbm):.2f}")

# %%
db = load_uji_csv(path)
print(f"{len(db)} records, {len(db.registry)} APs, {len(db.label_set)} RPs, phones {db.device_set}")
visible = (db.rssi > 0).sum(axis=1)
print(f"APs heard per scan: median {np.median(visible):.0f}, range {visible.min()}-{visible.max()}")

# rp labels are namespaced building:floor:space:position
lab = db.rp_labels[0]
print(lab, "->", db.rp_coordinates[lab])

# %%
# same-phone protocol: 5 train / 1 test per RP, seeded
phone = split_by_device(db, ["1"], ["1"])[0]
train, test = split_per_rp(phone, 5, 1, seed=0)
print(f"phone 1: {len(train)} train, {len(test)} test")

# cross-device protocol: everything from one phone against the others
train, test = split_by_device(db, ["1"], ["2", "3"])
print(f"phone 1 -> phones 2,3: {len(train)} train, {len(test)} test")
