"""Hyperparameter sweeps with train/validation overfit guards."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .boosting import GradientBoosting
from .forest import RandomForest
from .knn import KNearestNeighbours
from .metrics import accuracy_score
from .tree import DecisionTree

ESTIMATOR_GRID = (1, 2, 5, 10, 20, 35, 50, 75, 100)
DEPTH_GRID = tuple(range(1, 31))
K_GRID = tuple(range(1, 51))
GUARD_PP = {"rf": 1.5, "dt": 1.0}
KNN_K = 50
GBM_DEPTH = 3
ALGORITHMS = ("rf", "dt", "knn", "gbm")

_EPS = 1e-9


@dataclass
class SweepPoint:
    value: int
    train_accuracy: float
    validation_accuracy: float

    @property
    def gap_pp(self) -> float:
        return 100.0 * (self.train_accuracy - self.validation_accuracy)


@dataclass
class SweepReport:
    task: str
    algorithm: str
    curves: dict[str, list[SweepPoint]]
    chosen: dict[str, int]
    guard_parameter: str | None = None
    guard_pp: float | None = None
    guard_satisfied: bool = True
    test_accuracy: float | None = None
    extra: dict = field(default_factory=dict)

    def point(self, parameter: str, value: int) -> SweepPoint:
        return next(p for p in self.curves[parameter] if p.value == value)

    def to_json(self) -> dict:
        return {
            "task": self.task,
            "algorithm": self.algorithm,
            "curves": {k: [asdict(p) for p in v] for k, v in self.curves.items()},
            "chosen": self.chosen,
            "guard_parameter": self.guard_parameter,
            "guard_pp": self.guard_pp,
            "guard_satisfied": self.guard_satisfied,
            "test_accuracy": self.test_accuracy,
            "extra": self.extra,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SweepReport":
        return cls(
            task=doc["task"],
            algorithm=doc["algorithm"],
            curves={k: [SweepPoint(**p) for p in v] for k, v in doc["curves"].items()},
            chosen=doc["chosen"],
            guard_parameter=doc.get("guard_parameter"),
            guard_pp=doc.get("guard_pp"),
            guard_satisfied=doc.get("guard_satisfied", True),
            test_accuracy=doc.get("test_accuracy"),
            extra=doc.get("extra", {}),
        )


def guard_holds(report: SweepReport) -> bool:
    """Recheck the guard predicate from the report's own numbers."""
    if report.guard_parameter is None:
        return True
    p = report.point(report.guard_parameter, report.chosen[report.guard_parameter])
    return p.gap_pp <= report.guard_pp + _EPS


def choose_guarded(points: list[SweepPoint], guard_pp: float) -> tuple[int, bool]:
    """Largest grid value whose train-validation gap stays within ``guard_pp`` points.

    When no value qualifies, the smallest-gap value is returned with ``False``.
    """
    if not points:
        raise ValueError("empty grid")
    ok = [p for p in points if p.gap_pp <= guard_pp + _EPS]
    if ok:
        return max(ok, key=lambda p: p.value).value, True
    return min(points, key=lambda p: (p.gap_pp, p.value)).value, False


def choose_best(points: list[SweepPoint]) -> int:
    """Highest validation accuracy; ties go to the smaller value."""
    if not points:
        raise ValueError("empty grid")
    return max(points, key=lambda p: (p.validation_accuracy, -p.value)).value


def _acc(pred, y) -> float:
    return accuracy_score(pred, y)


def sweep_hyperparameters(
    task: str,
    algorithm: str,
    train: tuple[np.ndarray, np.ndarray],
    validation: tuple[np.ndarray, np.ndarray],
    *,
    n_classes: int | None = None,
    seed: int = 0,
    estimator_grid=ESTIMATOR_GRID,
    depth_grid=DEPTH_GRID,
    k_grid=K_GRID,
) -> tuple[SweepReport, object]:
    """Run the grid for one algorithm; returns the report and the model refit at the chosen values."""
    Xtr, ytr = np.asarray(train[0], dtype=float), np.asarray(train[1], dtype=np.int64)
    Xva, yva = np.asarray(validation[0], dtype=float), np.asarray(validation[1], dtype=np.int64)
    n_classes = int(n_classes if n_classes is not None else max(ytr.max(), yva.max()) + 1)

    if algorithm == "rf":
        if not estimator_grid or not depth_grid:
            raise ValueError("empty grid")
        big = RandomForest(max(estimator_grid), max(depth_grid), seed=seed).fit(Xtr, ytr, n_classes)
        est_curve = [
            SweepPoint(n, _acc(big.predict(Xtr, n_estimators=n), ytr), _acc(big.predict(Xva, n_estimators=n), yva))
            for n in estimator_grid
        ]
        n_best = choose_best(est_curve)
        depth_curve = [
            SweepPoint(
                d,
                _acc(big.predict(Xtr, n_estimators=n_best, max_depth=d), ytr),
                _acc(big.predict(Xva, n_estimators=n_best, max_depth=d), yva),
            )
            for d in depth_grid
        ]
        depth, ok = choose_guarded(depth_curve, GUARD_PP["rf"])
        # truncated trees are exactly the depth-limited fits, so no refit is needed
        model = RandomForest(n_best, depth, seed=seed)
        model.trees_ = [t.truncated(depth) for t in big.trees_[:n_best]]
        model.n_classes_ = n_classes
        report = SweepReport(
            task, algorithm, {"n_estimators": est_curve, "max_depth": depth_curve},
            {"n_estimators": n_best, "max_depth": depth}, "max_depth", GUARD_PP["rf"], ok,
        )
    elif algorithm == "dt":
        if not depth_grid:
            raise ValueError("empty grid")
        big = DecisionTree(max(depth_grid), seed=seed).fit(Xtr, ytr, n_classes)
        depth_curve = [
            SweepPoint(d, _acc(big.predict(Xtr, d), ytr), _acc(big.predict(Xva, d), yva)) for d in depth_grid
        ]
        depth, ok = choose_guarded(depth_curve, GUARD_PP["dt"])
        model = DecisionTree(depth, seed=seed)
        model.tree_ = big.tree_.truncated(depth)
        model.n_classes_ = n_classes
        report = SweepReport(
            task, algorithm, {"max_depth": depth_curve}, {"max_depth": depth}, "max_depth", GUARD_PP["dt"], ok
        )
    elif algorithm == "knn":
        if not k_grid:
            raise ValueError("empty grid")
        kmax = min(max(k_grid), len(Xtr))
        model = KNearestNeighbours(kmax).fit(Xtr, ytr, n_classes)
        ntr = model.neighbours(Xtr, kmax)
        nva = model.neighbours(Xva, kmax)
        k_curve = [
            SweepPoint(k, _acc(model.vote(ntr, k), ytr), _acc(model.vote(nva, k), yva))
            for k in k_grid
            if k <= kmax
        ]
        chosen_k = min(KNN_K, kmax)
        model.k = chosen_k
        report = SweepReport(task, algorithm, {"k": k_curve}, {"k": chosen_k})
    elif algorithm == "gbm":
        if not estimator_grid:
            raise ValueError("empty grid")
        big = GradientBoosting(max(estimator_grid), GBM_DEPTH).fit(Xtr, ytr, n_classes)
        grid = set(estimator_grid)
        acc_tr = {
            i + 1: _acc(np.argmax(F, axis=1), ytr)
            for i, F in enumerate(big.staged_decision_function(Xtr))
            if i + 1 in grid
        }
        acc_va = {
            i + 1: _acc(np.argmax(F, axis=1), yva)
            for i, F in enumerate(big.staged_decision_function(Xva))
            if i + 1 in grid
        }
        est_curve = [SweepPoint(n, acc_tr[n], acc_va[n]) for n in estimator_grid]
        n_best = choose_best(est_curve)
        model = GradientBoosting(n_best, GBM_DEPTH)
        model.init_, model.trees_, model.n_classes_ = big.init_, big.trees_[:n_best], n_classes
        model.loss_history_ = big.loss_history_[: n_best + 1]
        report = SweepReport(
            task, algorithm, {"n_estimators": est_curve}, {"n_estimators": n_best, "max_depth": GBM_DEPTH}
        )
    else:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    return report, model
