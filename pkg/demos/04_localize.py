"""
Training and querying a localization model
==========================================

Train the full pipeline on one phone, save it, reload it, and localize raw
scans from other phones. A k-nearest-neighbour baseline gives a reference.
"""

# %%
import tempfile
from pathlib import Path

import numpy as np

from sangria import (
    GbtConfig,
    SaeConfig,
    euclidean_error,
    load_model,
    load_uji_csv,
    locate,
    save_model,
    split_by_device,
    train_sangria,
)
from sangria.evaluation import knn_errors, localization_errors, scans_from_database
from sangria.synthetic import simulate_uji_csv

work = Path(tempfile.mkdtemp())
simulate_uji_csv(work / "campaign.csv", n_rps=30, samples_per_rp=6, seed=0)
db = load_uji_csv(work / "campaign.csv")
train, test = split_by_device(db, ["1"], ["2", "3"])

# %%
model = train_sangria(train, SaeConfig(epochs=50), GbtConfig())
digest = save_model(model, work / "model.bin")
model = load_model(work / "model.bin")
print(f"model artifact sha256 {digest[:16]}..., {len(model.ensemble.trees)} trees")

# %%
# a raw scan is just AP id -> dBm; unknown APs are ignored
scan = scans_from_database(test)[0]
scan["SOME-OTHER-AP"] = -40.0
pred = locate(model, scan)
truth = test[0].location
print(f"predicted {pred.rp_label} at {pred.location}, p={pred.probability:.2f}")
print(f"error {euclidean_error(pred.location, truth):.2f} m, APs recognized {pred.n_known_aps}")

# %%
err = localization_errors(model, test)
knn = knn_errors(train, test, k=3)
print(f"cross-device mean error: model {err.mean():.2f} m, KNN(k=3) {knn.mean():.2f} m")
