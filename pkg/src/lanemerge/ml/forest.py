from __future__ import annotations

import numpy as np

from .tree import Tree, build_tree, sqrt_features


class RandomForest:
    """Bagged CART trees with sqrt(d) candidate features per split and hard majority voting.

    Tree ``i`` draws its bootstrap from an RNG seeded with ``(seed, i)``, so a
    forest of ``n`` trees is the first ``n`` trees of any larger forest with
    the same seed.
    """

    algorithm = "rf"

    def __init__(
        self,
        n_estimators: int = 100,
        max_depth: int = 16,
        seed: int = 0,
        bootstrap: bool = True,
        feature_subsampling: bool = True,
    ):
        if n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.seed = seed
        self.bootstrap = bootstrap
        self.feature_subsampling = feature_subsampling
        self.trees_: list[Tree] = []
        self.n_classes_ = 0

    def fit(self, X, y, n_classes: int | None = None) -> "RandomForest":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=np.int64)
        if len(y) < 2:
            raise ValueError("a forest needs at least 2 samples")
        self.n_classes_ = int(n_classes if n_classes is not None else y.max() + 1)
        n, d = X.shape
        presorted = np.argsort(X, axis=0, kind="stable")
        mf = sqrt_features(d) if self.feature_subsampling else None
        self.trees_ = []
        for i in range(self.n_estimators):
            if self.bootstrap:
                rng = np.random.default_rng([self.seed, i])
                weight = np.bincount(rng.integers(0, n, size=n), minlength=n)
            else:
                weight = None
            self.trees_.append(
                build_tree(
                    X, y, max_depth=self.max_depth, n_classes=self.n_classes_,
                    sample_weight=weight, max_features=mf, rng_key=(self.seed, i),
                    presorted=presorted,
                )
            )
        return self

    def tree_votes(self, X, n_estimators: int | None = None, max_depth: int | None = None) -> np.ndarray:
        trees = self.trees_[: n_estimators or len(self.trees_)]
        return np.stack([t.predict(X, max_depth) for t in trees])

    def predict(self, X, n_estimators: int | None = None, max_depth: int | None = None) -> np.ndarray:
        votes = self.tree_votes(X, n_estimators, max_depth)
        counts = np.zeros((votes.shape[1], self.n_classes_), dtype=np.int64)
        for row in votes:
            counts[np.arange(votes.shape[1]), row] += 1
        return np.argmax(counts, axis=1)

    def hyperparameters(self) -> dict:
        return {
            "n_estimators": self.n_estimators,
            "max_depth": self.max_depth,
            "seed": self.seed,
            "bootstrap": self.bootstrap,
            "feature_subsampling": self.feature_subsampling,
        }
