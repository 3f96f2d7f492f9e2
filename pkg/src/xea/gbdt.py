"""Black-box target classifier: gradient-boosted regression trees on logistic loss.

Trees are grown leaf-wise (best-first): each boosting round fits a regression
tree to the residuals y - p by greedy variance-reduction splits over exact
midpoint candidates, then sets leaf values with a Newton step sum(g)/sum(h),
h = p(1-p), clipped to [-4, 4].  Equal-gain splits resolve to the lowest
feature index, then the lowest threshold, so training is fully deterministic.

The attack side never sees the model; it gets a ScoreOracle that exposes
score() only and counts queries.
"""

from __future__ import annotations

import json
import struct
import threading
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .mlp import _sigmoid

GBDT_MAGIC = b"XEAGBT1"

LEAF_VALUE_CLIP = 4.0
_HESS_EPS = 1e-12


class TrainingError(RuntimeError):
    pass


class ModelFormatError(ValueError):
    pass


@dataclass
class Tree:
    # parallel node arrays; feature == -1 marks a leaf
    feature: np.ndarray    # int32
    threshold: np.ndarray  # float64
    left: np.ndarray       # int32
    right: np.ndarray      # int32
    value: np.ndarray      # float64 (leaves only)

    @property
    def n_leaves(self) -> int:
        return int((self.feature == -1).sum())

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        idx = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            feats = self.feature[idx]
            active = feats >= 0
            if not active.any():
                break
            ai = np.flatnonzero(active)
            go_left = X[ai, feats[ai]] <= self.threshold[idx[ai]]
            idx[ai] = np.where(go_left, self.left[idx[ai]], self.right[idx[ai]])
        return self.value[idx]


@dataclass
class GbdtModel:
    trees: list[Tree]
    learning_rate: float
    base_score: float  # log-odds of the class prior
    n_leaves_max: int
    trained: bool = False


def _best_split(X: np.ndarray, r: np.ndarray):
    """Best variance-reduction split of residuals r; returns (gain, feature, threshold)."""
    m = X.shape[0]
    if m < 2:
        return None
    tot = r.sum()
    parent = tot * tot / m
    best = None  # (-gain, feature, threshold)
    for f in range(X.shape[1]):
        col = X[:, f]
        order = np.argsort(col, kind="stable")
        xs = col[order]
        cum = np.cumsum(r[order])
        cuts = np.flatnonzero(xs[:-1] < xs[1:])
        if cuts.size == 0:
            continue
        nl = cuts + 1
        sl = cum[cuts]
        gain = sl * sl / nl + (tot - sl) ** 2 / (m - nl) - parent
        k = int(np.argmax(gain))
        if gain[k] <= 1e-12:
            continue
        thr = 0.5 * (xs[cuts[k]] + xs[cuts[k] + 1])
        cand = (-float(gain[k]), f, float(thr))
        if best is None or cand < best:
            best = cand
    if best is None:
        return None
    return (-best[0], best[1], best[2])


def _fit_tree(X: np.ndarray, r: np.ndarray, g: np.ndarray, h: np.ndarray,
              max_leaves: int) -> Tree:
    feature = [np.int32(-1)]
    threshold = [0.0]
    left = [np.int32(-1)]
    right = [np.int32(-1)]
    value = [0.0]
    # open leaves: node id -> (sample indices, cached best split)
    all_idx = np.arange(X.shape[0])
    leaves = {0: (all_idx, _best_split(X, r))}
    order_created = {0: 0}
    n_created = 1
    while len(leaves) < max_leaves:
        splittable = [(nid, s) for nid, (_, s) in leaves.items() if s is not None]
        if not splittable:
            break
        # highest gain; ties by oldest leaf
        nid, (gain, f, thr) = min(splittable,
                                  key=lambda t: (-t[1][0], order_created[t[0]]))
        idx, _ = leaves.pop(nid)
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[nid] = np.int32(f)
        threshold[nid] = thr
        for child_idx in (li, ri):
            cid = len(feature)
            feature.append(np.int32(-1))
            threshold.append(0.0)
            left.append(np.int32(-1))
            right.append(np.int32(-1))
            value.append(0.0)
            leaves[cid] = (child_idx, _best_split(X[child_idx], r[child_idx]))
            order_created[cid] = n_created
            n_created += 1
        left[nid] = np.int32(len(feature) - 2)
        right[nid] = np.int32(len(feature) - 1)
    for nid, (idx, _) in leaves.items():
        v = g[idx].sum() / (h[idx].sum() + _HESS_EPS)
        value[nid] = float(np.clip(v, -LEAF_VALUE_CLIP, LEAF_VALUE_CLIP))
    return Tree(np.array(feature, dtype=np.int32), np.array(threshold),
                np.array(left, dtype=np.int32), np.array(right, dtype=np.int32),
                np.array(value))


def train_gbdt(dataset: Dataset | tuple[np.ndarray, np.ndarray], n_trees: int = 50,
               max_leaves: int = 15, learning_rate: float = 0.1,
               seed: int = 0) -> GbdtModel:
    """Boost ``n_trees`` rounds of logistic loss.  ``seed`` is accepted for
    interface symmetry; the procedure itself is deterministic."""
    if isinstance(dataset, Dataset):
        X, y = dataset.X, dataset.y
    else:
        X, y = dataset
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[0] == 0:
        raise TrainingError("empty training set")
    classes = set(np.unique(y))
    if classes != {0.0, 1.0}:
        raise TrainingError(f"need both classes present, got labels {sorted(classes)}")

    prior = y.mean()
    base = float(np.log(prior / (1.0 - prior)))
    raw = np.full(X.shape[0], base)
    trees: list[Tree] = []
    for _ in range(n_trees):
        p = _sigmoid(raw)
        g = y - p          # negative gradient of logistic loss
        h = p * (1.0 - p)  # hessian
        tree = _fit_tree(X, g, g, h, max_leaves)
        raw = raw + learning_rate * tree.predict(X)
        trees.append(tree)
    return GbdtModel(trees, learning_rate, base, max_leaves, trained=True)


def raw_score(model: GbdtModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.full(X.shape[0], model.base_score)
    for tree in model.trees:
        out += model.learning_rate * tree.predict(X)
    return out


def score(model: GbdtModel, x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("score takes a single sample; use score_batch")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite feature value")
    return float(_sigmoid(raw_score(model, x))[0])


def score_batch(model: GbdtModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite feature value")
    return _sigmoid(raw_score(model, X))


def logistic_loss(model: GbdtModel, X: np.ndarray, y: np.ndarray,
                  n_trees: int | None = None) -> float:
    """Training loss after the first ``n_trees`` rounds (all rounds by default)."""
    sub = model.trees if n_trees is None else model.trees[:n_trees]
    raw = np.full(np.atleast_2d(X).shape[0], model.base_score)
    for tree in sub:
        raw += model.learning_rate * tree.predict(X)
    p = _sigmoid(raw)
    eps = 1e-12
    return float(-np.mean(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps)))


class ScoreOracle:
    """Black-box handle over a trained model: score access only, queries counted."""

    def __init__(self, score_fn, batch_fn=None):
        self._score = score_fn
        self._batch = batch_fn
        self._lock = threading.Lock()
        self._queries = 0

    @property
    def queries(self) -> int:
        return self._queries

    def score(self, x: np.ndarray) -> float:
        s = self._score(x)
        with self._lock:
            self._queries += 1
        return s

    def score_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        if self._batch is not None:
            out = self._batch(X)
        else:
            out = np.array([self._score(row) for row in X])
        with self._lock:
            self._queries += X.shape[0]
        return out


def as_oracle(model: GbdtModel) -> ScoreOracle:
    if not model.trained:
        raise ValueError("cannot build an oracle over an untrained model")
    return ScoreOracle(lambda x: score(model, x), lambda X: score_batch(model, X))


# --- serialization --------------------------------------------------------
# per tree: n_nodes int32, then per node feature int32, left int32, right int32,
# threshold f64, value f64 (little-endian)

def save_gbdt(model: GbdtModel, path) -> None:
    header = {
        "n_trees": len(model.trees),
        "learning_rate": model.learning_rate,
        "base_score": model.base_score,
        "n_leaves_max": model.n_leaves_max,
        "trained": model.trained,
        "version": 1,
    }
    blob = json.dumps(header, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(GBDT_MAGIC + b"\n")
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for tree in model.trees:
            n = tree.feature.size
            fh.write(struct.pack("<i", n))
            fh.write(np.ascontiguousarray(tree.feature, dtype="<i4").tobytes())
            fh.write(np.ascontiguousarray(tree.left, dtype="<i4").tobytes())
            fh.write(np.ascontiguousarray(tree.right, dtype="<i4").tobytes())
            fh.write(np.ascontiguousarray(tree.threshold, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(tree.value, dtype="<f8").tobytes())


def load_gbdt(path) -> GbdtModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(GBDT_MAGIC + b"\n"):
        raise ModelFormatError("bad model magic")
    off = len(GBDT_MAGIC) + 1
    if len(data) < off + 4:
        raise ModelFormatError("truncated model file")
    (hlen,) = struct.unpack_from("<I", data, off)
    off += 4
    try:
        header = json.loads(data[off:off + hlen])
    except ValueError as e:
        raise ModelFormatError(f"bad model header: {e}") from e
    if header.get("version") != 1:
        raise ModelFormatError(f"unsupported model version {header.get('version')}")
    off += hlen
    trees = []
    for _ in range(header["n_trees"]):
        if len(data) < off + 4:
            raise ModelFormatError("truncated model file")
        (n,) = struct.unpack_from("<i", data, off)
        off += 4
        need = n * (4 + 4 + 4 + 8 + 8)
        if len(data) < off + need:
            raise ModelFormatError("truncated model file")
        feature = np.frombuffer(data, "<i4", n, off).copy(); off += 4 * n
        left = np.frombuffer(data, "<i4", n, off).copy(); off += 4 * n
        right = np.frombuffer(data, "<i4", n, off).copy(); off += 4 * n
        threshold = np.frombuffer(data, "<f8", n, off).copy(); off += 8 * n
        value = np.frombuffer(data, "<f8", n, off).copy(); off += 8 * n
        trees.append(Tree(feature, threshold, left, right, value))
    return GbdtModel(trees, header["learning_rate"], header["base_score"],
                     header["n_leaves_max"], trained=header["trained"])
