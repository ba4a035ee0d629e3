"""A small random forest with fully pinned-down tie-breaking.

Reproducibility is the point: the same matrix, labels, and config must
produce byte-identical serialized models on every run and platform. All
randomness flows through numpy SeedSequence substreams keyed by (seed,
tree index); every tie in split search is broken the same way (lowest
feature index, then lowest threshold); node layout is preorder.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (BadModelFile, EmptyMatrix, LengthMismatch,
                     SingleClassTraining)
from .vectorize import FeatureMatrix

MODEL_MAGIC = b"DLF1"
MODEL_VERSION = 1
_GAIN_EPS = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    n_trees: int = 100
    max_features: int | None = None
    min_samples_split: int = 2
    max_depth: int | None = None
    bootstrap: bool = True
    seed: int = 0

    def resolved_max_features(self, width: int) -> int:
        if self.max_features is not None:
            return max(1, min(self.max_features, width))
        return max(1, min(int(math.floor(math.sqrt(width))), width))


@dataclass
class Tree:
    feature: np.ndarray      # i4, -1 marks a leaf
    left: np.ndarray         # i4
    right: np.ndarray        # i4
    threshold: np.ndarray    # f8
    counts: np.ndarray       # f8 (n_nodes, 2), class sample mass

    @property
    def n_nodes(self) -> int:
        return len(self.feature)


@dataclass
class ForestModel:
    config: TrainConfig
    width: int
    trees: list[Tree]
    importances: np.ndarray
    fingerprint: bytes = b"\x00" * 32

    def to_bytes(self) -> bytes:
        cfg = self.config
        parts = [MODEL_MAGIC,
                 struct.pack("<IQ", MODEL_VERSION,
                             cfg.seed & 0xFFFFFFFFFFFFFFFF),
                 struct.pack("<IIIIB3x", cfg.n_trees,
                             cfg.max_features or 0, cfg.min_samples_split,
                             cfg.max_depth or 0, int(cfg.bootstrap)),
                 struct.pack("<I", self.width),
                 self.fingerprint,
                 self.importances.astype("<f8").tobytes()]
        for tree in self.trees:
            parts.append(struct.pack("<I", tree.n_nodes))
            parts.append(tree.feature.astype("<i4").tobytes())
            parts.append(tree.left.astype("<i4").tobytes())
            parts.append(tree.right.astype("<i4").tobytes())
            parts.append(tree.threshold.astype("<f8").tobytes())
            parts.append(tree.counts.astype("<f8").tobytes())
        return b"".join(parts)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ForestModel":
        pos = 0

        def take(n):
            nonlocal pos
            if pos + n > len(blob):
                raise BadModelFile("truncated model file")
            chunk = blob[pos:pos + n]
            pos += n
            return chunk

        if take(4) != MODEL_MAGIC:
            raise BadModelFile("not a model file")
        version, seed = struct.unpack("<IQ", take(12))
        if version != MODEL_VERSION:
            raise BadModelFile(f"unsupported model version {version}")
        n_trees, max_features, min_split, max_depth, bootstrap = \
            struct.unpack("<IIIIB3x", take(20))
        (width,) = struct.unpack("<I", take(4))
        fingerprint = take(32)
        importances = np.frombuffer(take(8 * width), dtype="<f8").copy()
        config = TrainConfig(n_trees, max_features or None, min_split,
                             max_depth or None, bool(bootstrap), seed)
        trees = []
        for _ in range(n_trees):
            (n_nodes,) = struct.unpack("<I", take(4))
            feature = np.frombuffer(take(4 * n_nodes), dtype="<i4").copy()
            left = np.frombuffer(take(4 * n_nodes), dtype="<i4").copy()
            right = np.frombuffer(take(4 * n_nodes), dtype="<i4").copy()
            threshold = np.frombuffer(take(8 * n_nodes), dtype="<f8").copy()
            counts = np.frombuffer(take(16 * n_nodes),
                                   dtype="<f8").copy().reshape(n_nodes, 2)
            if n_nodes == 0:
                raise BadModelFile("empty tree")
            bad = (feature >= 0) & ((left < 0) | (left >= n_nodes)
                                    | (right < 0) | (right >= n_nodes))
            if bad.any() or (feature >= width).any():
                raise BadModelFile("tree structure out of range")
            trees.append(Tree(feature, left, right, threshold, counts))
        if pos != len(blob):
            raise BadModelFile("trailing bytes after model")
        return cls(config, width, trees, importances, fingerprint)

    @classmethod
    def load(cls, path) -> "ForestModel":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _as_dense(X) -> np.ndarray:
    if isinstance(X, FeatureMatrix):
        return X.toarray()
    return np.asarray(X, dtype=np.float64)


def _best_split(X: np.ndarray, samples: np.ndarray, ysub: np.ndarray,
                candidates: np.ndarray, node_gini: float):
    """Best (feature, threshold, gain) over the candidate columns.

    Candidates are scanned in ascending index order and a challenger must
    beat the incumbent by more than the epsilon, so equal-gain races always
    go to the lowest feature index. Within a column the first best boundary
    wins, which is the lowest threshold.
    """
    n = len(ysub)
    best_gain = 0.0
    best = None
    for f in candidates:
        col = X[samples, f]
        order = np.argsort(col, kind="stable")
        sv = col[order]
        if sv[0] == sv[-1]:
            continue
        sy = ysub[order]
        cum1 = np.cumsum(sy)
        bounds = np.nonzero(sv[1:] != sv[:-1])[0]
        n_left = (bounds + 1).astype(np.float64)
        n_right = n - n_left
        ones_left = cum1[bounds].astype(np.float64)
        ones_right = float(cum1[-1]) - ones_left
        p1l = ones_left / n_left
        p1r = ones_right / n_right
        gini_left = 1.0 - p1l * p1l - (1.0 - p1l) * (1.0 - p1l)
        gini_right = 1.0 - p1r * p1r - (1.0 - p1r) * (1.0 - p1r)
        gain = node_gini - (n_left * gini_left + n_right * gini_right) / n
        j = int(np.argmax(gain))
        if gain[j] > best_gain + _GAIN_EPS:
            best_gain = float(gain[j])
            lo = float(sv[bounds[j]])
            hi = float(sv[bounds[j] + 1])
            threshold = (lo + hi) / 2.0
            if threshold >= hi:   # adjacent floats can round the midpoint up
                threshold = lo
            best = (int(f), threshold)
    if best is None:
        return None
    return best[0], best[1], best_gain


def _grow_tree(X: np.ndarray, y: np.ndarray, cfg: TrainConfig,
               tree_index: int, raw_importance: np.ndarray) -> Tree:
    n, width = X.shape
    seed = np.random.SeedSequence((cfg.seed & 0xFFFFFFFFFFFFFFFF,
                                   tree_index))
    rng = np.random.Generator(np.random.PCG64(seed))
    if cfg.bootstrap:
        rows = rng.integers(0, n, n)
    else:
        rows = np.arange(n)
    mf = cfg.resolved_max_features(width)

    feature: list[int] = []
    left: list[int] = []
    right: list[int] = []
    threshold: list[float] = []
    counts: list[tuple[float, float]] = []

    stack = [(rows, 0, -1, False)]
    while stack:
        samples, depth, parent, is_left = stack.pop()
        slot = len(feature)
        if parent >= 0:
            if is_left:
                left[parent] = slot
            else:
                right[parent] = slot
        feature.append(-1)
        left.append(-1)
        right.append(-1)
        threshold.append(0.0)
        ys = y[samples]
        ones = float(ys.sum())
        zeros = float(len(ys)) - ones
        counts.append((zeros, ones))

        if ones == 0.0 or zeros == 0.0:
            continue
        if len(samples) < cfg.min_samples_split:
            continue
        if cfg.max_depth is not None and depth >= cfg.max_depth:
            continue
        p1 = ones / len(ys)
        node_gini = 2.0 * p1 * (1.0 - p1)
        candidates = np.sort(rng.choice(width, size=mf, replace=False))
        split = _best_split(X, samples, ys, candidates, node_gini)
        if split is None:
            continue
        f, theta, gain = split
        go_left = X[samples, f] <= theta
        feature[slot] = f
        threshold[slot] = theta
        raw_importance[f] += (len(samples) / n) * gain
        # push right first so the left child is materialized next (preorder)
        stack.append((samples[~go_left], depth + 1, slot, False))
        stack.append((samples[go_left], depth + 1, slot, True))

    return Tree(np.asarray(feature, dtype=np.int32),
                np.asarray(left, dtype=np.int32),
                np.asarray(right, dtype=np.int32),
                np.asarray(threshold, dtype=np.float64),
                np.asarray(counts, dtype=np.float64).reshape(-1, 2))


def train_forest(X, y, cfg: TrainConfig = TrainConfig()) -> ForestModel:
    dense = _as_dense(X)
    if dense.ndim != 2 or dense.shape[0] == 0 or dense.shape[1] == 0:
        raise EmptyMatrix(f"cannot train on shape {dense.shape}")
    labels = np.asarray(y, dtype=np.int64)
    if len(labels) != dense.shape[0]:
        raise LengthMismatch(f"{dense.shape[0]} rows but "
                             f"{len(labels)} labels")
    if len(np.unique(labels)) < 2:
        raise SingleClassTraining("training labels contain one class")

    width = dense.shape[1]
    raw = np.zeros((cfg.n_trees, width), dtype=np.float64)
    trees = []
    for t in range(cfg.n_trees):
        trees.append(_grow_tree(dense, labels, cfg, t, raw[t]))
    sums = raw.sum(axis=1, keepdims=True)
    np.divide(raw, sums, out=raw, where=sums > 0)
    importances = raw.mean(axis=0)
    total = importances.sum()
    if total > 0:
        importances = importances / total

    digest = hashlib.sha256()
    digest.update(struct.pack("<QQ", dense.shape[0], width))
    digest.update(labels.astype("<i8").tobytes())
    digest.update(dense.astype("<f8").tobytes())
    return ForestModel(cfg, width, trees, importances, digest.digest())


def _tree_scores(tree: Tree, X: np.ndarray) -> np.ndarray:
    node = np.zeros(X.shape[0], dtype=np.int64)
    while True:
        feats = tree.feature[node]
        live = np.nonzero(feats >= 0)[0]
        if len(live) == 0:
            break
        cur = node[live]
        go_left = X[live, tree.feature[cur]] <= tree.threshold[cur]
        node[live] = np.where(go_left, tree.left[cur], tree.right[cur])
    leaf = tree.counts[node]
    mass = leaf.sum(axis=1)
    out = np.full(X.shape[0], 0.5)
    np.divide(leaf[:, 1], mass, out=out, where=mass > 0)
    return out


def predict_scores(model: ForestModel, X) -> np.ndarray:
    """Mean malware fraction over leaf counts, one score per row."""
    dense = _as_dense(X)
    if dense.ndim == 1:
        dense = dense.reshape(1, -1)
    if dense.shape[1] != model.width:
        raise LengthMismatch(f"model expects width {model.width}, "
                             f"got {dense.shape[1]}")
    acc = np.zeros(dense.shape[0], dtype=np.float64)
    for tree in model.trees:
        acc += _tree_scores(tree, dense)
    return acc / len(model.trees)


def predict_labels(model: ForestModel, X) -> np.ndarray:
    return (predict_scores(model, X) >= 0.5).astype(np.int64)


def predict(model: ForestModel, x) -> int:
    """Label for a single feature row; score ties go to the positive class."""
    return int(predict_labels(model, np.asarray(x, dtype=np.float64)
                              .reshape(1, -1))[0])


def rank_features(model: ForestModel) -> np.ndarray:
    """Column indices sorted by importance, highest first, ties by index."""
    order = np.lexsort((np.arange(model.width), -model.importances))
    return order
