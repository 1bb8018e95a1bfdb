"""Greedy layer-wise stacked autoencoder used to synthesize fingerprints.

Three autoencoders share weights. With widths ``d > h > q > o``:

    AE1:  d -> h -> q -> d          trained on the fingerprints
    AE3:  q -> q -> o -> q          trained on AE1 second-layer codes
    AE2:  h -> q -> o -> o -> q -> d
          L1 = AE1-L2, L2 = AE3-L2, L3 fresh, L4 = AE3-L3, L5 = AE1-L3

AE2 reads the AE1 first-layer representation and is fine-tuned to
reproduce the original fingerprint, so a synthetic sample is
``AE2(AE1-L1(x))``. Copy targets force AE3-L1 and the AE2 bottleneck to be
square; that is the only way the four donated layers chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "sigmoid", "identity")


class TrainingError(RuntimeError):
    pass


def layer_param_count(in_dim: int, out_dim: int) -> int:
    if in_dim < 1 or out_dim < 1:
        raise ValueError("layer dimensions must be >= 1")
    return out_dim * (in_dim + 1)


def _sigmoid(z):
    # split by sign to avoid overflow in exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return _sigmoid(z)
    return z


def _activation_grad(z, a, kind):
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    if kind == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out_dim, in_dim)
    biases: np.ndarray  # (out_dim,)
    activation: str = "relu"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64).reshape(-1)
        if self.weights.ndim != 2 or self.weights.shape[0] != self.biases.shape[0]:
            raise ValueError(f"bad layer shapes {self.weights.shape} / {self.biases.shape}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @classmethod
    def init(cls, in_dim: int, out_dim: int, activation: str, rng: np.random.Generator):
        """Uniform fan-in init on [-1/sqrt(in_dim), 1/sqrt(in_dim)]."""
        bound = 1.0 / math.sqrt(in_dim)
        w = rng.uniform(-bound, bound, size=(out_dim, in_dim))
        b = rng.uniform(-bound, bound, size=out_dim)
        return cls(w, b, activation)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def n_params(self) -> int:
        return layer_param_count(self.in_dim, self.out_dim)

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.biases.copy(), self.activation)

    def forward(self, x):
        return _activate(x @ self.weights.T + self.biases, self.activation)


@dataclass
class Autoencoder:
    layers: list[DenseLayer]
    bottleneck_index: int | None = None

    def __post_init__(self):
        if not self.layers:
            raise ValueError("autoencoder needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError(f"layer chain mismatch: {a.out_dim} -> {b.in_dim}")
        if self.bottleneck_index is None:
            dims = [l.out_dim for l in self.layers]
            self.bottleneck_index = int(np.argmin(dims))

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def n_params(self) -> int:
        return sum(l.n_params for l in self.layers)

    def copy(self) -> "Autoencoder":
        return Autoencoder([l.copy() for l in self.layers], self.bottleneck_index)

    def forward(self, x, upto: int | None = None):
        """Run layers ``[0, upto)`` (all by default) on a vector or batch."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"input dimension {x.shape[-1]} != autoencoder input {self.in_dim}")
        for layer in self.layers[:upto]:
            x = layer.forward(x)
        return x

    def check_funnel(self) -> bool:
        """Widths never grow before the bottleneck and never shrink after it."""
        dims = [self.in_dim] + [l.out_dim for l in self.layers]
        b = self.bottleneck_index + 1
        down = all(x >= y for x, y in zip(dims[:b], dims[1 : b + 1]))
        up = all(x <= y for x, y in zip(dims[b:], dims[b + 1 :]))
        return down and up and dims[b] == min(dims)


def reconstruct(ae: Autoencoder, x) -> np.ndarray:
    return ae.forward(x)


# ---------------------------------------------------------------------------
# loss and gradients


def reconstruction_loss(ae: Autoencoder, x, target=None) -> float:
    """Training objective: squared error summed over features, averaged over samples."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    target = x if target is None else np.atleast_2d(target)
    diff = ae.forward(x) - target
    return float(np.sum(diff * diff) / x.shape[0])


def loss_and_gradients(ae: Autoencoder, x, target=None):
    """Objective of :func:`reconstruction_loss` and its gradient per layer.

    Returns ``(loss, [(dW, db), ...])`` aligned with ``ae.layers``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    target = x if target is None else np.atleast_2d(np.asarray(target, dtype=np.float64))
    n = x.shape[0]
    acts, pre = [x], []
    for layer in ae.layers:
        z = acts[-1] @ layer.weights.T + layer.biases
        pre.append(z)
        acts.append(_activate(z, layer.activation))
    diff = acts[-1] - target
    loss = float(np.sum(diff * diff) / n)

    grads = [None] * len(ae.layers)
    delta = 2.0 * diff / n
    for k in range(len(ae.layers) - 1, -1, -1):
        layer = ae.layers[k]
        delta = delta * _activation_grad(pre[k], acts[k + 1], layer.activation)
        grads[k] = (delta.T @ acts[k], delta.sum(axis=0))
        if k:
            delta = delta @ layer.weights
    return loss, grads


# ---------------------------------------------------------------------------
# configuration and training


@dataclass(frozen=True)
class WidthConfig:
    input_dim: int
    hidden: int
    code: int
    bottleneck: int

    @classmethod
    def default(cls, d: int) -> "WidthConfig":
        return cls(d, math.ceil(d / 2), math.ceil(d / 4), math.ceil(d / 8))

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.input_dim, self.hidden, self.code, self.bottleneck)


@dataclass(frozen=True)
class SaeConfig:
    learning_rate: float = 0.001
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    widths: WidthConfig | None = None  # None: derived from data dimension
    optimizer: str = "adam"  # or "sgd"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


class _Adam:
    def __init__(self, layers, lr, beta1=0.9, beta2=0.999, eps=1e-7):
        self.lr, self.b1, self.b2, self.eps, self.t = lr, beta1, beta2, eps, 0
        self.m = [(np.zeros_like(l.weights), np.zeros_like(l.biases)) for l in layers]
        self.v = [(np.zeros_like(l.weights), np.zeros_like(l.biases)) for l in layers]

    def step(self, layers, grads):
        self.t += 1
        c1, c2 = 1.0 - self.b1**self.t, 1.0 - self.b2**self.t
        for layer, (dw, db), m, v in zip(layers, grads, self.m, self.v):
            for param, grad, mi, vi in ((layer.weights, dw, m[0], v[0]), (layer.biases, db, m[1], v[1])):
                mi *= self.b1
                mi += (1.0 - self.b1) * grad
                vi *= self.b2
                vi += (1.0 - self.b2) * grad * grad
                param -= self.lr * (mi / c1) / (np.sqrt(vi / c2) + self.eps)


def train_autoencoder(ae: Autoencoder, data, cfg: SaeConfig, targets=None, seed: int | None = None):
    """Mini-batch training (Adam or plain SGD) on the reconstruction objective.

    Trains a copy; returns ``(trained_ae, loss_history)`` where each entry is
    the per-element mean squared error over the full data after an epoch.
    """
    x = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if x.shape[0] == 0:
        raise ValueError("training data is empty")
    if x.shape[1] != ae.in_dim:
        raise ValueError(f"data dimension {x.shape[1]} != autoencoder input {ae.in_dim}")
    t = x if targets is None else np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if t.shape != (x.shape[0], ae.out_dim):
        raise ValueError(f"targets shape {t.shape} incompatible with output {ae.out_dim}")

    ae = ae.copy()
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    n, history = x.shape[0], []
    adam = _Adam(ae.layers, cfg.learning_rate) if cfg.optimizer == "adam" else None
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            _, grads = loss_and_gradients(ae, x[batch], t[batch])
            if adam is not None:
                adam.step(ae.layers, grads)
                continue
            for layer, (dw, db) in zip(ae.layers, grads):
                layer.weights -= cfg.learning_rate * dw
                layer.biases -= cfg.learning_rate * db
        mse = reconstruction_loss(ae, x, t) / ae.out_dim
        if not math.isfinite(mse):
            raise TrainingError(f"loss diverged at epoch {epoch + 1}")
        history.append(mse)
    return ae, history


@dataclass
class StackedAutoencoder:
    ae1: Autoencoder
    ae3: Autoencoder
    ae2: Autoencoder
    widths: WidthConfig
    loss_history: dict = field(default_factory=dict)

    @property
    def n_params(self) -> int:
        return self.ae1.n_params + self.ae2.n_params + self.ae3.n_params

    def param_table(self) -> dict[str, int]:
        """Trainable parameters per layer, keyed like ``AE1-L1``."""
        out = {}
        for name, ae in (("AE1", self.ae1), ("AE2", self.ae2), ("AE3", self.ae3)):
            for i, layer in enumerate(ae.layers, 1):
                out[f"{name}-L{i}"] = layer.n_params
        return out

    def encode_first(self, x) -> np.ndarray:
        return self.ae1.layers[0].forward(np.asarray(x, dtype=np.float64))

    def synthesize(self, x) -> np.ndarray:
        """Full-stack reconstruction: AE1-L1 then AE2 (whose last layer is AE1-L3)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.widths.input_dim:
            raise ValueError(f"input dimension {x.shape[-1]} != SAE input {self.widths.input_dim}")
        return self.ae2.forward(self.encode_first(x))

    def copy(self) -> "StackedAutoencoder":
        return StackedAutoencoder(
            self.ae1.copy(), self.ae3.copy(), self.ae2.copy(), self.widths,
            {k: list(v) for k, v in self.loss_history.items()},
        )


def _build_ae(dims, activations, rng, bottleneck_index=None) -> Autoencoder:
    layers = [
        DenseLayer.init(i, o, act, rng) for (i, o), act in zip(zip(dims, dims[1:]), activations)
    ]
    return Autoencoder(layers, bottleneck_index)


def greedy_pretrain(data, cfg: SaeConfig) -> StackedAutoencoder:
    x = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if x.shape[0] == 0:
        raise ValueError("training data is empty")
    w = cfg.widths or WidthConfig.default(x.shape[1])
    if w.input_dim != x.shape[1]:
        raise ValueError(f"width config expects input {w.input_dim}, data has {x.shape[1]}")
    d, h, q, o = w.as_tuple()
    rng = np.random.default_rng(cfg.seed)

    ae1 = _build_ae([d, h, q, d], ["relu", "relu", "sigmoid"], rng, bottleneck_index=1)
    ae1, hist1 = train_autoencoder(ae1, x, cfg, seed=cfg.seed)

    codes = ae1.forward(x, upto=2)
    # AE3 reconstructs non-negative ReLU codes; its last layer is hidden inside AE2
    ae3 = _build_ae([q, q, o, q], ["relu", "relu", "relu"], rng, bottleneck_index=1)
    ae3, hist3 = train_autoencoder(ae3, codes, cfg, seed=cfg.seed + 1)

    fresh = DenseLayer.init(o, o, "relu", rng)
    ae2 = Autoencoder(
        [
            ae1.layers[1].copy(),
            ae3.layers[1].copy(),
            fresh,
            ae3.layers[2].copy(),
            ae1.layers[2].copy(),
        ],
        bottleneck_index=2,
    )
    return StackedAutoencoder(ae1, ae3, ae2, w, {"ae1": hist1, "ae3": hist3})


def fine_tune(sae: StackedAutoencoder, data, cfg: SaeConfig) -> StackedAutoencoder:
    """Train AE2 end to end from AE1-L1 codes back to the fingerprints.

    AE1 and AE3 stay frozen; AE2 holds its own copies of the donated layers.
    """
    x = np.atleast_2d(np.asarray(data, dtype=np.float64))
    out = sae.copy()
    ae2, hist = train_autoencoder(out.ae2, out.encode_first(x), cfg, targets=x, seed=cfg.seed + 2)
    out.ae2 = ae2
    out.loss_history["ae2"] = hist
    return out


def train_sae(data, cfg: SaeConfig) -> StackedAutoencoder:
    return fine_tune(greedy_pretrain(data, cfg), data, cfg)


def augment(sae: StackedAutoencoder, db, resolution: float | None = 0.01):
    """Return ``db`` followed by one synthetic record per original.

    Synthetic RSS is snapped to ``resolution`` (0.01 = 1 dBm, the granularity
    of real scans), so reconstructions of absent APs read as exactly 0.
    ``None`` keeps the raw reconstruction.
    """
    from .fingerprint_data import FingerprintDatabase

    if len(db.registry) != sae.widths.input_dim:
        raise ValueError(
            f"database has {len(db.registry)} APs but the SAE expects {sae.widths.input_dim}"
        )
    synth = np.clip(sae.synthesize(db.rssi), 0.0, 1.0) if len(db) else db.rssi
    if resolution:
        synth = np.round(synth / resolution) * resolution
    fake = FingerprintDatabase(
        registry=db.registry,
        rssi=synth,
        locations=db.locations,
        rp_labels=db.rp_labels,
        devices=db.devices,
        rp_coordinates=db.rp_coordinates,
        synthetic=np.ones(len(db), dtype=bool),
        origin=db.origin,
    )
    return db.concat(fake)


# ---------------------------------------------------------------------------
# serialization (arrays go through the shared codec in .artifact)


def sae_to_dict(sae: StackedAutoencoder) -> dict:
    from .artifact import encode_array

    def ae_dict(ae):
        return {
            "bottleneck_index": ae.bottleneck_index,
            "layers": [
                {"activation": l.activation, "weights": encode_array(l.weights), "biases": encode_array(l.biases)}
                for l in ae.layers
            ],
        }

    return {
        "widths": list(sae.widths.as_tuple()),
        "ae1": ae_dict(sae.ae1),
        "ae2": ae_dict(sae.ae2),
        "ae3": ae_dict(sae.ae3),
        "loss_history": {k: [float(v) for v in hist] for k, hist in sorted(sae.loss_history.items())},
    }


def sae_from_dict(doc: dict) -> StackedAutoencoder:
    from .artifact import decode_array

    def ae_obj(d):
        layers = [
            DenseLayer(decode_array(l["weights"]), decode_array(l["biases"]), l["activation"])
            for l in d["layers"]
        ]
        return Autoencoder(layers, d["bottleneck_index"])

    return StackedAutoencoder(
        ae_obj(doc["ae1"]), ae_obj(doc["ae3"]), ae_obj(doc["ae2"]),
        WidthConfig(*doc["widths"]),
        {k: list(v) for k, v in doc.get("loss_history", {}).items()},
    )

