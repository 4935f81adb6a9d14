from __future__ import annotations

import math
from typing import Sequence, TypeVar

import numpy as np

T = TypeVar("T")

SPLIT_FRACTIONS = (0.7, 0.2, 0.1)  # train, test, validation
MIN_INSTANCES = 10


def split_counts(n: int) -> tuple[int, int, int]:
    n_train = int(math.floor(SPLIT_FRACTIONS[0] * n + 0.5))
    n_test = int(math.floor(SPLIT_FRACTIONS[1] * n + 0.5))
    return n_train, n_test, n - n_train - n_test


def split_instance_ids(instance_ids: Sequence[str], seed: int) -> tuple[list[str], list[str], list[str]]:
    ids = sorted(set(instance_ids))
    if len(ids) < MIN_INSTANCES:
        raise ValueError(f"need at least {MIN_INSTANCES} instances to split, got {len(ids)}")
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n_train, n_test, _ = split_counts(len(ids))
    return (
        sorted(shuffled[:n_train]),
        sorted(shuffled[n_train : n_train + n_test]),
        sorted(shuffled[n_train + n_test :]),
    )


def split_dataset(samples: Sequence[T], seed: int, key=lambda s: s.instance_id) -> tuple[list[T], list[T], list[T]]:
    """70/20/10 split on instance ids, so an instance never straddles two subsets."""
    train_ids, test_ids, val_ids = split_instance_ids([key(s) for s in samples], seed)
    where = {i: 0 for i in train_ids} | {i: 1 for i in test_ids} | {i: 2 for i in val_ids}
    out: tuple[list[T], list[T], list[T]] = ([], [], [])
    for s in samples:
        out[where[key(s)]].append(s)
    return out
