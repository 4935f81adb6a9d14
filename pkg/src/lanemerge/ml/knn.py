from __future__ import annotations

import numpy as np

_CHUNK = 256
_SLACK = 16


class KNearestNeighbours:
    """Majority vote over the k nearest standardised training points.

    Neighbours are ordered by exact Euclidean distance, ties by lower
    training index; vote ties go to the lower class.
    """

    algorithm = "knn"

    def __init__(self, k: int = 50):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = k
        self.mean_: np.ndarray | None = None
        self.scale_: np.ndarray | None = None
        self.X_: np.ndarray | None = None
        self.y_: np.ndarray | None = None
        self.n_classes_ = 0

    def fit(self, X, y, n_classes: int | None = None) -> "KNearestNeighbours":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=np.int64)
        if self.k > len(X):
            raise ValueError(f"k={self.k} exceeds the {len(X)} training samples")
        self.mean_ = X.mean(axis=0)
        std = X.std(axis=0)
        self.scale_ = np.where(std > 0, std, 1.0)
        self.X_ = (X - self.mean_) / self.scale_
        self.y_ = y
        self.n_classes_ = int(n_classes if n_classes is not None else y.max() + 1)
        return self

    def _standardise(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean_) / self.scale_

    def neighbours(self, X, k: int | None = None) -> np.ndarray:
        """Indices of the k nearest training rows for each query, nearest first."""
        k = self.k if k is None else k
        if k > len(self.X_):
            raise ValueError(f"k={k} exceeds the {len(self.X_)} training samples")
        Q = self._standardise(X)
        T = self.X_
        tn = (T * T).sum(axis=1)
        m = min(k + _SLACK, len(T))
        out = np.empty((len(Q), k), dtype=np.int64)
        for start in range(0, len(Q), _CHUNK):
            q = Q[start : start + _CHUNK]
            # cheap shortlist via the expanded form, then exact re-ranking
            approx = tn[None, :] - 2.0 * q @ T.T
            if m < len(T):
                cand = np.argpartition(approx, m - 1, axis=1)[:, :m]
            else:
                cand = np.broadcast_to(np.arange(len(T)), (len(q), len(T)))
            for r in range(len(q)):
                c = np.sort(cand[r])
                diff = T[c] - q[r]
                d2 = (diff * diff).sum(axis=1)
                out[start + r] = c[np.lexsort((c, d2))[:k]]
        return out

    def vote(self, neighbour_idx: np.ndarray, k: int) -> np.ndarray:
        labels = self.y_[neighbour_idx[:, :k]]
        counts = np.zeros((len(labels), self.n_classes_), dtype=np.int64)
        for j in range(k):
            counts[np.arange(len(labels)), labels[:, j]] += 1
        return np.argmax(counts, axis=1)

    def predict(self, X, k: int | None = None) -> np.ndarray:
        k = self.k if k is None else k
        return self.vote(self.neighbours(X, k), k)

    def hyperparameters(self) -> dict:
        return {"k": self.k}
