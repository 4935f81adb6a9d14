"""Versioned JSON model files for the four classifiers."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .boosting import GradientBoosting
from .forest import RandomForest
from .knn import KNearestNeighbours
from .tree import DecisionTree, Tree

SCHEMA_VERSION = 1


def model_to_json(model) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "algorithm": model.algorithm,
        "hyperparameters": model.hyperparameters(),
        "n_classes": model.n_classes_,
    }
    if isinstance(model, DecisionTree):
        doc["trees"] = [model.tree_.to_json()]
    elif isinstance(model, RandomForest):
        doc["trees"] = [t.to_json() for t in model.trees_]
    elif isinstance(model, GradientBoosting):
        doc["init"] = model.init_.tolist()
        doc["rounds"] = [[t.to_json() for t in rnd] for rnd in model.trees_]
    elif isinstance(model, KNearestNeighbours):
        doc["mean"] = model.mean_.tolist()
        doc["scale"] = model.scale_.tolist()
        doc["X"] = model.X_.tolist()
        doc["y"] = model.y_.tolist()
    else:
        raise TypeError(f"cannot serialise {type(model).__name__}")
    return doc


def model_from_json(doc: dict):
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema version {doc.get('schema_version')!r}")
    algo, hp = doc["algorithm"], doc["hyperparameters"]
    if algo == "dt":
        model = DecisionTree(**hp)
        model.tree_ = Tree.from_json(doc["trees"][0])
    elif algo == "rf":
        model = RandomForest(**hp)
        model.trees_ = [Tree.from_json(t) for t in doc["trees"]]
    elif algo == "gbm":
        model = GradientBoosting(**hp)
        model.init_ = np.array(doc["init"], dtype=float)
        model.trees_ = [[Tree.from_json(t) for t in rnd] for rnd in doc["rounds"]]
    elif algo == "knn":
        model = KNearestNeighbours(**hp)
        model.mean_ = np.array(doc["mean"], dtype=float)
        model.scale_ = np.array(doc["scale"], dtype=float)
        model.X_ = np.array(doc["X"], dtype=float)
        model.y_ = np.array(doc["y"], dtype=np.int64)
    else:
        raise ValueError(f"unknown algorithm {algo!r}")
    model.n_classes_ = int(doc["n_classes"])
    return model


def save_model(model, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_json(model), sort_keys=True) + "\n", encoding="utf-8")


def load_model(path: str | Path):
    return model_from_json(json.loads(Path(path).read_text(encoding="utf-8")))
