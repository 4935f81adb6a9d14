from __future__ import annotations

from typing import Callable

import numpy as np


def accuracy_score(predictions, labels) -> float:
    """Exact-match fraction; 2-D inputs count a row as correct only if every label matches."""
    p = np.asarray(predictions)
    t = np.asarray(labels)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValueError("empty inputs")
    match = p == t
    if match.ndim > 1:
        match = match.reshape(len(match), -1).all(axis=1)
    return float(match.mean())


def group_folds(groups, folds: int, seed: int) -> list[np.ndarray]:
    """Row indices per fold; every group lands in exactly one fold."""
    groups = np.asarray(groups)
    unique = np.array(sorted(set(groups.tolist())))
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if len(unique) < folds:
        raise ValueError(f"{len(unique)} groups cannot fill {folds} folds")
    order = np.random.default_rng(seed).permutation(len(unique))
    assign = {}
    for fold, chunk in enumerate(np.array_split(unique[order], folds)):
        for g in chunk:
            assign[g] = fold
    fold_of = np.array([assign[g] for g in groups.tolist()])
    return [np.nonzero(fold_of == f)[0] for f in range(folds)]


def cross_val_score(
    make_model: Callable[[], object],
    X,
    y,
    groups,
    folds: int = 5,
    seed: int = 0,
    n_classes: int | None = None,
) -> list[float]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    n_classes = int(n_classes if n_classes is not None else y.max() + 1)
    scores = []
    for test_idx in group_folds(groups, folds, seed):
        train_mask = np.ones(len(y), dtype=bool)
        train_mask[test_idx] = False
        model = make_model().fit(X[train_mask], y[train_mask], n_classes=n_classes)
        scores.append(accuracy_score(model.predict(X[test_idx]), y[test_idx]))
    return scores
