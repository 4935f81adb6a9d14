from __future__ import annotations

import numpy as np

from .tree import Tree, build_tree

_P_CLIP = 1e-6


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def ovr_log_loss(scores: np.ndarray, Y: np.ndarray) -> float:
    """Mean over samples of the summed per-class binary logistic losses."""
    # log(1 + exp(-z)) for y=1 and log(1 + exp(z)) for y=0, computed stably
    z = np.where(Y > 0, scores, -scores)
    return float(np.logaddexp(0.0, -z).sum(axis=1).mean())


class GradientBoosting:
    """One-vs-rest gradient boosting with logistic loss.

    Each round fits, per class, a regression tree to the residuals
    ``y_k - sigmoid(F_k)`` and adds ``learning_rate`` times its leaf means.
    """

    algorithm = "gbm"

    def __init__(self, n_estimators: int = 100, max_depth: int = 3, learning_rate: float = 0.1):
        if n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.init_: np.ndarray | None = None
        self.trees_: list[list[Tree]] = []
        self.n_classes_ = 0
        self.loss_history_: list[float] = []

    def fit(self, X, y, n_classes: int | None = None) -> "GradientBoosting":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=np.int64)
        if len(y) < 2:
            raise ValueError("boosting needs at least 2 samples")
        K = int(n_classes if n_classes is not None else y.max() + 1)
        self.n_classes_ = K
        Y = np.zeros((len(y), K))
        Y[np.arange(len(y)), y] = 1.0
        prior = np.clip(Y.mean(axis=0), _P_CLIP, 1 - _P_CLIP)
        self.init_ = np.log(prior / (1 - prior))
        F = np.tile(self.init_, (len(y), 1))
        presorted = np.argsort(X, axis=0, kind="stable")
        self.trees_ = []
        self.loss_history_ = [ovr_log_loss(F, Y)]
        for _ in range(self.n_estimators):
            round_trees = []
            for k in range(K):
                residual = Y[:, k] - sigmoid(F[:, k])
                tree = build_tree(X, residual, max_depth=self.max_depth, regression=True, presorted=presorted)
                F[:, k] += self.learning_rate * tree.predict_value(X)[:, 0]
                round_trees.append(tree)
            self.trees_.append(round_trees)
            self.loss_history_.append(ovr_log_loss(F, Y))
        return self

    def decision_function(self, X, n_estimators: int | None = None) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        F = np.tile(self.init_, (len(X), 1))
        for round_trees in self.trees_[: n_estimators or len(self.trees_)]:
            for k, tree in enumerate(round_trees):
                F[:, k] += self.learning_rate * tree.predict_value(X)[:, 0]
        return F

    def staged_decision_function(self, X):
        X = np.asarray(X, dtype=float)
        F = np.tile(self.init_, (len(X), 1))
        for round_trees in self.trees_:
            for k, tree in enumerate(round_trees):
                F[:, k] += self.learning_rate * tree.predict_value(X)[:, 0]
            yield F.copy()

    def predict_proba(self, X, n_estimators: int | None = None) -> np.ndarray:
        p = sigmoid(self.decision_function(X, n_estimators))
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X, n_estimators: int | None = None) -> np.ndarray:
        return np.argmax(self.decision_function(X, n_estimators), axis=1)

    def hyperparameters(self) -> dict:
        return {
            "n_estimators": self.n_estimators,
            "max_depth": self.max_depth,
            "learning_rate": self.learning_rate,
        }
