"""Wi-Fi fingerprint localization robust to device heterogeneity.

A stacked autoencoder synthesizes extra fingerprints from the survey data and
a gradient-boosted ensemble of oblivious trees classifies scans into
reference points.
"""

from .fingerprint_data import (
    ApRegistry,
    FingerprintDatabase,
    FingerprintRecord,
    IngestionError,
    Location,
    SplitError,
    load_canonical_csv,
    load_uji_csv,
    normalize_rssi,
    split_by_device,
    split_per_rp,
    write_canonical_csv,
)
from .sae import SaeConfig, StackedAutoencoder, augment, fine_tune, greedy_pretrain, train_sae
from .gbt import GbtConfig, GbtEnsemble, fit_ensemble, predict_label, predict_scores
from .localization import (
    Prediction,
    PredictionError,
    SangriaModel,
    euclidean_error,
    knn_predict,
    load_model,
    locate,
    predict_location,
    save_model,
    train_sangria,
)
from .evaluation import ablation_sae, cross_device_matrix, emit_report, error_stats, latency_benchmark

__version__ = "0.1.0"
