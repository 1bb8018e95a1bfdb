"""Multiclass gradient boosting over oblivious (symmetric) trees.

One tree per round with a per-class leaf vector. Leaves take the Newton step
``-G / (H + l2_leaf_reg)`` of the softmax log-loss, every tree is shrunk by the
same learning rate, and the raw scores pass through a monotone link.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from numba import njit

from .artifact import decode_array, encode_array

LINKS = ("softmax", "identity")


@dataclass(frozen=True)
class GbtConfig:
    iterations: int = 50
    depth: int = 7
    learning_rate: float = 0.1
    l2_leaf_reg: float = 5.0
    n_bins: int = 32
    feature_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.l2_leaf_reg < 0:
            raise ValueError("l2_leaf_reg must be >= 0")
        if not 2 <= self.n_bins <= 256:
            raise ValueError("n_bins must be in [2, 256]")
        if not 0 < self.feature_fraction <= 1:
            raise ValueError("feature_fraction must be in (0, 1]")


# ---------------------------------------------------------------------------
# binning


@dataclass(frozen=True, eq=False)
class BinningScheme:
    """Per-feature strictly increasing bin edges.

    The bin of value ``v`` is the number of edges strictly below ``v``.
    """

    edges: tuple[np.ndarray, ...]
    n_bins: int

    @property
    def n_features(self) -> int:
        return len(self.edges)

    @property
    def n_edges(self) -> np.ndarray:
        return np.array([len(e) for e in self.edges], dtype=np.intp)

    def transform(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {x.shape[1]}")
        out = np.empty(x.shape, dtype=np.uint8)
        for j, e in enumerate(self.edges):
            out[:, j] = np.searchsorted(e, x[:, j], side="left")
        return out

    def __eq__(self, other):
        return (
            isinstance(other, BinningScheme)
            and self.n_bins == other.n_bins
            and len(self.edges) == len(other.edges)
            and all(np.array_equal(a, b) for a, b in zip(self.edges, other.edges))
        )


def build_bins(feature_matrix, n_bins: int = 32) -> BinningScheme:
    """Quantile edges over each feature's distinct values.

    Features with at most ``n_bins`` distinct values get midpoints between
    consecutive distinct values instead.
    """
    x = np.atleast_2d(np.asarray(feature_matrix, dtype=np.float64))
    if x.shape[0] == 0:
        raise ValueError("need at least one sample to build bins")
    qs = np.arange(1, n_bins) / n_bins
    edges = []
    for j in range(x.shape[1]):
        u = np.unique(x[:, j])
        if len(u) <= n_bins:
            e = (u[:-1] + u[1:]) / 2.0
        else:
            e = np.unique(np.quantile(u, qs))
            # an edge equal to the max would leave the top bin empty
            e = e[e < u[-1]]
        edges.append(np.ascontiguousarray(e, dtype=np.float64))
    return BinningScheme(tuple(edges), n_bins)


# ---------------------------------------------------------------------------
# loss pieces


def softmax(scores, axis=-1):
    s = np.asarray(scores, dtype=np.float64)
    z = s - s.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_grad_hess(scores, true_class):
    """Gradient and diagonal Hessian of softmax log-loss w.r.t. the scores.

    Works on a single score vector or a batch ``(n, n_classes)`` with an
    index array ``true_class``.
    """
    p = softmax(scores)
    g = p.copy()
    if p.ndim == 1:
        g[true_class] -= 1.0
    else:
        g[np.arange(p.shape[0]), np.asarray(true_class)] -= 1.0
    return g, p * (1.0 - p)


def log_loss(scores, y) -> float:
    s = np.atleast_2d(scores)
    z = s - s.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(lse - z[np.arange(s.shape[0]), y]))


# ---------------------------------------------------------------------------
# oblivious trees


@dataclass(eq=False)
class ObliviousTree:
    """``splits[k] = (feature, bin_threshold)`` shared by every node on level k.

    A sample's leaf index has bit k set when its binned value of
    ``splits[k][0]`` exceeds ``splits[k][1]``.
    """

    splits: list[tuple[int, int]]
    leaf_values: np.ndarray  # (2**depth, n_classes)
    level_gains: list[float] = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.splits)

    def leaf_index(self, binned) -> np.ndarray:
        b = np.atleast_2d(binned)
        idx = np.zeros(b.shape[0], dtype=np.intp)
        for k, (f, t) in enumerate(self.splits):
            idx |= (b[:, f] > t).astype(np.intp) << k
        return idx

    def predict(self, binned) -> np.ndarray:
        return self.leaf_values[self.leaf_index(binned)]

    def __eq__(self, other):
        return (
            isinstance(other, ObliviousTree)
            and [tuple(map(int, s)) for s in self.splits] == [tuple(map(int, s)) for s in other.splits]
            and np.array_equal(self.leaf_values, other.leaf_values)
        )


@njit(cache=True)
def _level_scores(binned, leaf, n_leaves, g, h, lam, features, n_edges, n_bins):
    """Partition score of every (feature, threshold) candidate for one level.

    Entry (i, t) of the result is the sum over refined leaves and classes of
    ``G^2 / (H + lam)`` after splitting every current leaf on
    ``binned[:, features[i]] > t``; non-candidate thresholds hold -inf.
    Histogram cells are visited only where samples fall, so deep levels with
    mostly empty (leaf, bin) cells stay cheap.
    """
    n, c = g.shape
    out = np.full((features.shape[0], n_bins - 1), -np.inf)
    tot_g = np.zeros((n_leaves, c))
    tot_h = np.zeros((n_leaves, c))
    leaf_n = np.zeros(n_leaves, np.int64)
    for i in range(n):
        l = leaf[i]
        leaf_n[l] += 1
        for k in range(c):
            tot_g[l, k] += g[i, k]
            tot_h[l, k] += h[i, k]
    hg = np.zeros((n_leaves, n_bins, c))
    hh = np.zeros((n_leaves, n_bins, c))
    cnt = np.zeros((n_leaves, n_bins), np.int64)
    gl = np.empty(c)
    hl = np.empty(c)
    for fi in range(features.shape[0]):
        f = features[fi]
        m = min(n_edges[f], n_bins - 1)
        if m <= 0:
            continue
        for i in range(n):
            l = leaf[i]
            b = binned[i, f]
            cnt[l, b] += 1
            for k in range(c):
                hg[l, b, k] += g[i, k]
                hh[l, b, k] += h[i, k]
        row = np.zeros(m)
        for l in range(n_leaves):
            if leaf_n[l] == 0:
                continue
            gl[:] = 0.0
            hl[:] = 0.0
            term = 0.0
            for t in range(m):
                if cnt[l, t] > 0 or t == 0:
                    for k in range(c):
                        gl[k] += hg[l, t, k]
                        hl[k] += hh[l, t, k]
                    term = 0.0
                    for k in range(c):
                        d = hl[k] + lam
                        if d > 0:
                            term += gl[k] * gl[k] / d
                        gr = tot_g[l, k] - gl[k]
                        d = tot_h[l, k] - hl[k] + lam
                        if d > 0:
                            term += gr * gr / d
                row[t] += term
        out[fi, :m] = row
        for i in range(n):
            l = leaf[i]
            b = binned[i, f]
            cnt[l, b] = 0
            for k in range(c):
                hg[l, b, k] = 0.0
                hh[l, b, k] = 0.0
    return out


def leaf_values_for(leaf, n_leaves, g, h, lam) -> np.ndarray:
    """Newton leaf values ``-sum(g) / (sum(h) + lam)``; empty leaves get 0."""
    agg = sp.csr_matrix(
        (np.ones(len(leaf)), (leaf, np.arange(len(leaf)))), shape=(n_leaves, len(leaf))
    )
    G, H = np.asarray(agg @ g), np.asarray(agg @ h)
    denom = H + lam
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(denom > 0, -G / denom, 0.0)


def fit_oblivious_tree(binned, g, h, depth: int, lam: float, feature_subset=None, n_bins: int | None = None,
                       n_edges=None) -> ObliviousTree:
    """Greedy level-by-level oblivious tree on binned features.

    Each level picks, among ``feature_subset``, the split with the largest
    partition score; ties go to the lowest feature index, then the lowest
    threshold. A threshold ``t`` is a candidate for feature ``f`` when
    ``t < n_edges[f]``. If no feature has a candidate the level stores
    ``(0, n_bins - 1)``, which sends every sample to the 0 side.
    """
    binned = np.atleast_2d(np.asarray(binned))
    g = np.atleast_2d(np.asarray(g, dtype=np.float64))
    h = np.atleast_2d(np.asarray(h, dtype=np.float64))
    n, n_features = binned.shape
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if feature_subset is None:
        feature_subset = np.arange(n_features)
    features = np.unique(np.asarray(feature_subset, dtype=np.intp))
    if features.size == 0:
        raise ValueError("feature_subset must be non-empty")
    if n_bins is None:
        n_bins = int(binned.max()) + 1 if n else 1
        n_bins = max(n_bins, 2)
    if n_edges is None:
        n_edges = binned.max(axis=0).astype(np.intp) if n else np.zeros(n_features, np.intp)
    n_edges = np.asarray(n_edges)

    binned = np.ascontiguousarray(binned, dtype=np.uint8)
    g, h = np.ascontiguousarray(g), np.ascontiguousarray(h)
    n_edges = np.ascontiguousarray(n_edges, dtype=np.int64)
    leaf = np.zeros(n, dtype=np.int64)
    splits, gains = [], []
    features = features.astype(np.int64)
    has_candidate = bool((n_edges[features] > 0).any())
    for level in range(depth):
        if has_candidate:
            scores = _level_scores(binned, leaf, 1 << level, g, h, float(lam), features, n_edges, n_bins)
            i, t = np.unravel_index(int(np.argmax(scores)), scores.shape)
            f, best = int(features[i]), float(scores[i, t])
        else:
            f, t = 0, n_bins - 1
            best = float("nan")
        splits.append((f, int(t)))
        leaf |= (binned[:, f] > t).astype(np.int64) << level
        gains.append(best)
    values = leaf_values_for(leaf, 1 << depth, g, h, lam)
    return ObliviousTree(splits, values, gains)


# ---------------------------------------------------------------------------
# ensemble


@dataclass(eq=False)
class GbtEnsemble:
    trees: list[ObliviousTree]
    learning_rate: float
    class_labels: list[str]
    binning: BinningScheme
    base_score: np.ndarray
    link: str = "softmax"
    config: GbtConfig = field(default_factory=GbtConfig)
    train_loss: list[float] = field(default_factory=list)
    n_train: int = 0

    def __post_init__(self):
        if self.link not in LINKS:
            raise ValueError(f"unknown link {self.link!r}")
        self._stack = None

    @property
    def n_classes(self) -> int:
        return len(self.class_labels)

    def _stacked(self):
        if self._stack is None and self.trees:
            feats = np.array([[f for f, _ in t.splits] for t in self.trees], dtype=np.intp)
            thr = np.array([[th for _, th in t.splits] for t in self.trees], dtype=np.intp)
            vals = np.stack([t.leaf_values for t in self.trees])
            used = np.unique(feats)
            pos = np.searchsorted(used, feats)
            self._stack = (feats, thr, vals, used, pos)
        return self._stack

    def raw_scores(self, x, n_trees: int | None = None) -> np.ndarray:
        """``base_score + learning_rate * sum of leaf vectors`` before the link."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.binning.n_features:
            raise ValueError(f"expected {self.binning.n_features} features, got {x.shape[1]}")
        out = np.tile(self.base_score, (x.shape[0], 1))
        trees = self.trees if n_trees is None else self.trees[:n_trees]
        if trees and n_trees is None:
            feats, thr, vals, used, pos = self._stacked()
            xb = np.empty((x.shape[0], len(used)), dtype=np.intp)
            for j, f in enumerate(used):
                xb[:, j] = np.searchsorted(self.binning.edges[f], x[:, f], side="left")
            bits = xb[:, pos] > thr[None]  # (n, T, depth)
            leaf = (bits.astype(np.intp) << np.arange(thr.shape[1])).sum(axis=2)
            out += self.learning_rate * vals[np.arange(len(trees))[None, :], leaf].sum(axis=1)
        elif trees:
            xb = self.binning.transform(x)
            for t in trees:
                out += self.learning_rate * t.predict(xb)
        return out[0] if single else out


def apply_link(scores, link: str):
    return softmax(scores) if link == "softmax" else np.asarray(scores, dtype=np.float64)


def predict_scores(ensemble: GbtEnsemble, x, link: str | None = None) -> np.ndarray:
    return apply_link(ensemble.raw_scores(x), link or ensemble.link)


def predict_label(ensemble: GbtEnsemble, x):
    # argmax on raw scores: the link preserves order, but in floating point
    # softmax can merge scores that differ by less than its resolution
    s = ensemble.raw_scores(x)
    if s.ndim == 1:
        return ensemble.class_labels[int(np.argmax(s))]
    return [ensemble.class_labels[i] for i in np.argmax(s, axis=1)]


def _canonical_order(x, y):
    # lexsort's last key is primary: class first, then feature columns
    keys = [x[:, j] for j in range(x.shape[1] - 1, -1, -1)] + [y]
    return np.lexsort(keys)


def fit_arrays(x, labels, cfg: GbtConfig = GbtConfig()) -> GbtEnsemble:
    """Boost on a feature matrix and a sequence of string class labels."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    labels = [str(l) for l in labels]
    if x.shape[0] == 0 or not labels:
        raise ValueError("training set is empty")
    if len(labels) != x.shape[0]:
        raise ValueError("labels and features disagree on sample count")
    classes = sorted(set(labels))
    index = {c: i for i, c in enumerate(classes)}
    y = np.array([index[l] for l in labels], dtype=np.intp)

    # record order must not change the model
    order = _canonical_order(x, y)
    x, y = x[order], y[order]
    n, n_features = x.shape
    n_classes = len(classes)

    binning = build_bins(x, cfg.n_bins)
    xb = binning.transform(x)
    n_edges = binning.n_edges
    base = np.log(np.bincount(y, minlength=n_classes) / n)
    scores = np.tile(base, (n, 1))
    rng = np.random.default_rng(cfg.seed)
    k = max(1, math.ceil(cfg.feature_fraction * n_features))

    trees, losses = [], [log_loss(scores, y)]
    for _ in range(cfg.iterations):
        g, h = softmax_grad_hess(scores, y)
        subset = np.sort(rng.choice(n_features, size=k, replace=False))
        tree = fit_oblivious_tree(xb, g, h, cfg.depth, cfg.l2_leaf_reg, subset, cfg.n_bins, n_edges)
        scores += cfg.learning_rate * tree.leaf_values[tree.leaf_index(xb)]
        trees.append(tree)
        losses.append(log_loss(scores, y))
    return GbtEnsemble(
        trees=trees,
        learning_rate=cfg.learning_rate,
        class_labels=classes,
        binning=binning,
        base_score=base,
        config=cfg,
        train_loss=losses,
        n_train=n,
    )


def fit_ensemble(train, cfg: GbtConfig = GbtConfig()) -> GbtEnsemble:
    """Fit on a FingerprintDatabase: RSS vectors in, rp_labels as classes."""
    if len(train) == 0:
        raise ValueError("training set is empty")
    return fit_arrays(train.rssi, train.rp_labels, cfg)


# ---------------------------------------------------------------------------
# serialization


def ensemble_to_dict(ens: GbtEnsemble) -> dict:
    edges = ens.binning.edges
    return {
        "config": asdict(ens.config),
        "learning_rate": ens.learning_rate,
        "link": ens.link,
        "class_labels": list(ens.class_labels),
        "base_score": encode_array(ens.base_score),
        "binning": {
            "n_bins": ens.binning.n_bins,
            "offsets": encode_array(np.cumsum([0] + [len(e) for e in edges])),
            "edges": encode_array(np.concatenate(edges) if edges else np.zeros(0)),
        },
        "trees": [
            {
                "splits": [[int(f), int(t)] for f, t in tr.splits],
                "leaf_values": encode_array(tr.leaf_values),
                "level_gains": encode_array(np.asarray(tr.level_gains, dtype=np.float64)),
            }
            for tr in ens.trees
        ],
        "train_loss": encode_array(np.asarray(ens.train_loss, dtype=np.float64)),
        "n_train": ens.n_train,
    }


def ensemble_from_dict(doc: dict) -> GbtEnsemble:
    b = doc["binning"]
    offsets, flat = decode_array(b["offsets"]), decode_array(b["edges"])
    edges = tuple(flat[offsets[i] : offsets[i + 1]].copy() for i in range(len(offsets) - 1))
    trees = [
        ObliviousTree(
            [(int(f), int(t)) for f, t in tr["splits"]],
            decode_array(tr["leaf_values"]),
            decode_array(tr["level_gains"]).tolist(),
        )
        for tr in doc["trees"]
    ]
    return GbtEnsemble(
        trees=trees,
        learning_rate=doc["learning_rate"],
        class_labels=list(doc["class_labels"]),
        binning=BinningScheme(edges, b["n_bins"]),
        base_score=decode_array(doc["base_score"]),
        link=doc["link"],
        config=GbtConfig(**doc["config"]),
        train_loss=decode_array(doc["train_loss"]).tolist(),
        n_train=doc["n_train"],
    )
