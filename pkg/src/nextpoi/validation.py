"""Input checks shared by the estimators."""

from __future__ import annotations

import numpy as np
from sklearn.utils import check_array

from .dataset import Dataset


def check_dataset(ds: Dataset, require_test: bool = True) -> Dataset:
    """Raise ``ValueError`` unless ``ds`` satisfies the Dataset invariants."""
    if not isinstance(ds, Dataset):
        raise TypeError(f"expected a Dataset, got {type(ds).__name__}")
    n = ds.n_pois
    if ds.poi_coords.shape != (n, 2):
        raise ValueError("poi_coords must have one (lat, lon) row per POI")
    if not (len(ds.train_seqs) == len(ds.train_times) == len(ds.test_pairs) == ds.n_users):
        raise ValueError("per-user sequences do not match the user list")
    for u in range(ds.n_users):
        seq, times, pairs = ds.train_seqs[u], ds.train_times[u], ds.test_pairs[u]
        if not seq:
            raise ValueError(f"user {u} has no train visits")
        if len(seq) != len(times):
            raise ValueError(f"user {u}: train POIs and timestamps differ in length")
        if require_test and not pairs:
            raise ValueError(f"user {u} has no test pairs")
        for p in seq:
            if not 0 <= p < n:
                raise ValueError(f"user {u}: POI index {p} out of range")
        for prev, tgt, t in pairs:
            if not (0 <= prev < n and 0 <= tgt < n):
                raise ValueError(f"user {u}: test pair ({prev}, {tgt}) out of range")
            if t < max(times):
                raise ValueError(f"user {u}: test visit precedes a train visit")
    return ds


def check_pairs(X, n_users: int, n_pois: int) -> np.ndarray:
    """Validate an ``(n, 2)`` integer array of ``(user, previous POI)`` queries."""
    X = check_array(X, dtype=np.int64, ensure_2d=True)
    if X.shape[1] != 2:
        raise ValueError(f"expected (user, previous POI) columns, got shape {X.shape}")
    if X[:, 0].min() < 0 or X[:, 0].max() >= n_users:
        raise ValueError("user index out of range")
    if X[:, 1].min() < 0 or X[:, 1].max() >= n_pois:
        raise ValueError("POI index out of range")
    return X
