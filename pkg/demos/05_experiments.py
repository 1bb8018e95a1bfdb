"""
Cross-device matrix, ablation and latency
=========================================

The experiment drivers behind the CLI's ``evaluate``, ``ablate`` and
``bench`` subcommands, writing the same report files.
"""

# %%
import tempfile
from pathlib import Path

from sangria import GbtConfig, SaeConfig, load_uji_csv, split_by_device
from sangria.evaluation import (
    ablation_sae,
    cross_device_matrix,
    emit_report,
    latency_benchmark,
    run_directory,
    scans_from_database,
)
from sangria.localization import train_sangria
from sangria.synthetic import simulate_uji_csv

work = Path(tempfile.mkdtemp())
simulate_uji_csv(work / "campaign.csv", n_rps=20, samples_per_rp=6, seed=0)
db = load_uji_csv(work / "campaign.csv")
sae_cfg, gbt_cfg = SaeConfig(epochs=30), GbtConfig(iterations=30)
run = run_directory(work / "runs", {"demo": 5})

# %%
# diagonal: 5/1 split of the same phone; off-diagonal: all records of each side
matrix = cross_device_matrix(db, ["1", "2", "3"], sae_cfg, gbt_cfg)
emit_report(matrix, run / "matrix.csv", "csv")
emit_report(matrix, run / "matrix.json", "json")
print((run / "matrix.csv").read_text())

# %%
train, test = split_by_device(db, ["1"], ["2", "3"])
ab = ablation_sae(train, test, sae_cfg, gbt_cfg)
emit_report(ab, run / "ablation.json")
print(f"mean error with SAE {ab.with_sae.mean:.2f} m, without {ab.without_sae.mean:.2f} m "
      f"(relative change {ab.relative_mean_delta:+.1%})")

# %%
model = train_sangria(train, sae_cfg, gbt_cfg)
lat = latency_benchmark(model, scans_from_database(test)[:100])
emit_report(lat, run / "latency.json")
print(f"single-scan prediction: {lat.average_ms:.2f} ms on average")
print("reports in", run)
