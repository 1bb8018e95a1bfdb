"""
Stacked autoencoder augmentation
================================

Three autoencoders are trained greedily. AE1 compresses the fingerprint,
AE3 compresses AE1's code, and AE2 is assembled from copies of their inner
layers plus a fresh bottleneck, then fine-tuned end to end. Passing every
fingerprint through the stack yields one synthetic twin per record.
"""

# %%
import tempfile
from pathlib import Path

import numpy as np

from sangria import SaeConfig, augment, fine_tune, greedy_pretrain, load_uji_csv, split_by_device
from sangria.synthetic import simulate_uji_csv

path = Path(tempfile.mkdtemp()) / "campaign.csv"
simulate_uji_csv(path, n_rps=20, samples_per_rp=6, seed=0)
train = split_by_device(load_uji_csv(path), ["1"], ["1"])[0]

# %%
cfg = SaeConfig(epochs=60)
sae = greedy_pretrain(train.rssi, cfg)
print("widths d, h, q, o:", sae.widths.as_tuple())
for name, count in sae.param_table().items():
    print(f"  {name}: {count} parameters")

# AE2's outer layers are exact copies of the trained donors
print("AE2-L1 is AE1-L2:", np.array_equal(sae.ae2.layers[0].weights, sae.ae1.layers[1].weights))

# %%
sae = fine_tune(sae, train.rssi, cfg)
for stage, hist in sae.loss_history.items():
    print(f"{stage}: MSE {hist[0]:.4f} -> {hist[-1]:.4f}")

# %%
big = augment(sae, train)
print(f"{len(train)} records -> {len(big)} after augmentation")
heard = train.rssi > 0
err = np.abs(big.rssi[len(train):] - train.rssi)
print(f"mean abs difference on heard APs {err[heard].mean():.3f}, on silent APs {err[~heard].mean():.4f}")
