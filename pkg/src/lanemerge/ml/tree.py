"""Greedy CART trees (Gini for classification, squared error for regression).

Trees are stored as flat arrays. Every node, internal or leaf, keeps its
value, so a tree grown to depth D answers queries for any depth d <= D by
truncation; since split choice never looks at the depth limit, that
truncation is exactly the tree a depth-d fit would have grown.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TIE_TOL = 1e-12


@dataclass
class Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (n_nodes, n_classes) distributions or (n_nodes, 1) means
    depth: np.ndarray
    n_samples: np.ndarray

    @property
    def max_depth(self) -> int:
        return int(self.depth.max()) if len(self.depth) else 0

    def apply(self, X: np.ndarray, max_depth: int | None = None) -> np.ndarray:
        """Index of the node each row lands in, stopping at ``max_depth``."""
        X = np.asarray(X, dtype=float)
        node = np.zeros(len(X), dtype=np.int64)
        limit = self.max_depth if max_depth is None else max_depth
        rows = np.arange(len(X))
        for _ in range(limit):
            internal = (self.feature[node] >= 0) & (self.depth[node] < limit)
            if not internal.any():
                break
            r = rows[internal]
            n = node[r]
            go_left = X[r, self.feature[n]] <= self.threshold[n]
            node[r] = np.where(go_left, self.left[n], self.right[n])
        return node

    def predict_value(self, X: np.ndarray, max_depth: int | None = None) -> np.ndarray:
        return self.value[self.apply(X, max_depth)]

    def predict(self, X: np.ndarray, max_depth: int | None = None) -> np.ndarray:
        # argmax returns the first maximum, i.e. the lower class index on ties
        return np.argmax(self.predict_value(X, max_depth), axis=1)

    def truncated(self, depth: int) -> "Tree":
        """Copy with every node at ``depth`` turned into a leaf."""
        keep = self.depth <= depth
        remap = -np.ones(len(keep), dtype=np.int64)
        remap[keep] = np.arange(keep.sum())
        feature = self.feature[keep].copy()
        feature[self.depth[keep] >= depth] = -1
        internal = feature >= 0
        return Tree(
            feature=feature,
            threshold=np.where(internal, self.threshold[keep], 0.0),
            left=np.where(internal, remap[np.maximum(self.left[keep], 0)], -1),
            right=np.where(internal, remap[np.maximum(self.right[keep], 0)], -1),
            value=self.value[keep].copy(),
            depth=self.depth[keep].copy(),
            n_samples=self.n_samples[keep].copy(),
        )

    def to_json(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "depth": self.depth.tolist(),
            "n_samples": self.n_samples.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Tree":
        return cls(
            feature=np.array(doc["feature"], dtype=np.int64),
            threshold=np.array(doc["threshold"], dtype=float),
            left=np.array(doc["left"], dtype=np.int64),
            right=np.array(doc["right"], dtype=np.int64),
            value=np.array(doc["value"], dtype=float).reshape(len(doc["feature"]), -1),
            depth=np.array(doc["depth"], dtype=np.int64),
            n_samples=np.array(doc["n_samples"], dtype=float),
        )


def _best_split_classification(xs, ys_onehot_w, total_w):
    """Weighted-Gini split scan over one feature already sorted by value.

    Returns (impurity, position) of the best boundary or None. The impurity
    reported is the weighted child Gini sum times the node weight.
    """
    cum = np.cumsum(ys_onehot_w, axis=0)
    wl = cum[:-1].sum(axis=1)
    boundaries = np.nonzero(xs[1:] > xs[:-1])[0]
    if len(boundaries) == 0:
        return None
    cl = cum[boundaries]
    cr = cum[-1] - cl
    wl = wl[boundaries]
    wr = total_w - wl
    # n*weighted_gini = wl - sum(cl^2)/wl + wr - sum(cr^2)/wr
    score = total_w - (cl * cl).sum(axis=1) / wl - (cr * cr).sum(axis=1) / wr
    return score, boundaries


def _best_split_regression(xs, yw, w, total_w):
    cw = np.cumsum(w)[:-1]
    cy = np.cumsum(yw)[:-1]
    boundaries = np.nonzero(xs[1:] > xs[:-1])[0]
    if len(boundaries) == 0:
        return None
    wl = cw[boundaries]
    sl = cy[boundaries]
    wr = total_w - wl
    sr = yw.sum() - sl
    # SSE up to the constant sum(w*y^2)
    score = -(sl * sl) / wl - (sr * sr) / wr
    return score, boundaries


def build_tree(
    X: np.ndarray,
    y: np.ndarray,
    *,
    max_depth: int,
    n_classes: int | None = None,
    sample_weight: np.ndarray | None = None,
    max_features: int | None = None,
    rng_key: tuple[int, ...] | None = None,
    regression: bool = False,
    presorted: np.ndarray | None = None,
) -> Tree:
    """Grow a tree greedily.

    Candidate thresholds are midpoints of consecutive distinct values; ties
    go to the lowest feature index, then the lowest threshold. A node stops
    at ``max_depth``, when pure, or with total weight below 2. With
    ``max_features`` set, each node draws its candidate features from an RNG
    keyed by ``rng_key`` and the node's heap index, so the draw does not
    depend on the order nodes are visited.
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    if regression:
        yv = np.asarray(y, dtype=float)
        width = 1
    else:
        yi = np.asarray(y, dtype=np.int64)
        width = int(n_classes if n_classes is not None else yi.max() + 1)
        onehot = np.zeros((n, width))
        onehot[np.arange(n), yi] = 1.0
    if presorted is None:
        presorted = np.argsort(X, axis=0, kind="stable")

    feature, threshold, left, right, value, depth, n_samples = [], [], [], [], [], [], []

    def new_node(rows, dep):
        ww = w[rows]
        tw = float(ww.sum())
        if regression:
            val = [float((yv[rows] * ww).sum() / tw)] if tw > 0 else [0.0]
        else:
            counts = (onehot[rows] * ww[:, None]).sum(axis=0)
            val = (counts / tw).tolist() if tw > 0 else [1.0 / width] * width
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(val)
        depth.append(dep)
        n_samples.append(tw)
        return len(feature) - 1

    root_rows = np.nonzero(w > 0)[0]
    # (node id, member rows in ascending order, heap key)
    stack = [(new_node(root_rows, 0), root_rows, 1)]
    while stack:
        node, rows, key = stack.pop()
        dep = depth[node]
        tw = n_samples[node]
        if dep >= max_depth or tw < 2:
            continue
        if regression:
            yy = yv[rows]
            if np.all(yy == yy[0]):
                continue
        elif max(value[node]) >= 1.0 - 1e-15:
            continue

        if max_features is not None and max_features < d:
            rng = np.random.default_rng([*(rng_key or (0,)), key])
            feats = np.sort(rng.choice(d, size=max_features, replace=False))
        else:
            feats = range(d)

        big = len(rows) * 16 >= n
        if big:
            member = np.zeros(n, dtype=bool)
            member[rows] = True
        best = None  # (score, feature, threshold)
        for f in feats:
            if big:
                col = presorted[:, f]
                order = col[member[col]]
            else:
                order = rows[np.argsort(X[rows, f], kind="stable")]
            xs = X[order, f]
            if regression:
                res = _best_split_regression(xs, yv[order] * w[order], w[order], tw)
            else:
                res = _best_split_classification(xs, onehot[order] * w[order][:, None], tw)
            if res is None:
                continue
            score, bnd = res
            smin = score.min()
            pos = bnd[np.nonzero(score <= smin + TIE_TOL * (1.0 + abs(smin)))[0][0]]
            if best is None or smin < best[0] - TIE_TOL * (1.0 + abs(best[0])):
                best = (smin, int(f), (xs[pos] + xs[pos + 1]) / 2.0)
        if best is None:
            continue
        _, f, thr = best
        go_left = X[rows, f] <= thr
        lrows, rrows = rows[go_left], rows[~go_left]
        feature[node] = f
        threshold[node] = thr
        li = new_node(lrows, dep + 1)
        ri = new_node(rrows, dep + 1)
        left[node], right[node] = li, ri
        stack.append((ri, rrows, 2 * key + 1))
        stack.append((li, lrows, 2 * key))

    return Tree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=float),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value, dtype=float).reshape(len(feature), width),
        depth=np.array(depth, dtype=np.int64),
        n_samples=np.array(n_samples, dtype=float),
    )


class DecisionTree:
    algorithm = "dt"

    def __init__(self, max_depth: int = 11, seed: int = 0):
        self.max_depth = max_depth
        self.seed = seed
        self.tree_: Tree | None = None
        self.n_classes_ = 0

    def fit(self, X, y, n_classes: int | None = None) -> "DecisionTree":
        y = np.asarray(y, dtype=np.int64)
        if len(y) < 2:
            raise ValueError("a decision tree needs at least 2 samples")
        self.n_classes_ = int(n_classes if n_classes is not None else y.max() + 1)
        self.tree_ = build_tree(X, y, max_depth=self.max_depth, n_classes=self.n_classes_)
        return self

    def predict(self, X, max_depth: int | None = None) -> np.ndarray:
        return self.tree_.predict(X, max_depth)

    def hyperparameters(self) -> dict:
        return {"max_depth": self.max_depth, "seed": self.seed}


def sqrt_features(d: int) -> int:
    return max(1, int(math.floor(math.sqrt(d))))
