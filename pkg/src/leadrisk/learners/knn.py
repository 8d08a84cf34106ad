"""Brute-force k-nearest-neighbors with Manhattan distance.

No spatial index: the training sets here are small enough that a full scan is
both affordable and trivially correct.  Distance ties are broken by the
smaller training-row index, preserved by the stable sort.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError

_CHUNK = 256


def manhattan_distances(queries: np.ndarray, train: np.ndarray) -> np.ndarray:
    """Pairwise L1 distances.

    Columns whose values are all 0/1 on both sides (one-hot blocks) reduce to
    |a-b| = a + b - 2ab and are handled with one matrix product; every term is
    an integer count, so the fast path is exact.  Remaining columns are
    accumulated one at a time to bound memory.
    """
    binary = np.ones(train.shape[1], dtype=bool)
    for X in (train, queries):
        binary &= ((X == 0.0) | (X == 1.0)).all(axis=0)
    out = np.zeros((queries.shape[0], train.shape[0]), dtype=np.float64)
    if binary.any():
        qb = queries[:, binary]
        tb = train[:, binary]
        out += qb.sum(axis=1)[:, None] + tb.sum(axis=1)[None, :] - 2.0 * (qb @ tb.T)
    for j in np.flatnonzero(~binary):
        out += np.abs(queries[:, j][:, None] - train[:, j][None, :])
    return out


@dataclass
class KnnModel:
    train_X: np.ndarray
    train_y: np.ndarray
    k: int
    params: dict = field(default_factory=dict)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1] != self.train_X.shape[1]:
            raise DataError(f"expected {self.train_X.shape[1]} columns, got {X.shape}")
        probs = np.empty(X.shape[0], dtype=np.float64)
        for start in range(0, X.shape[0], _CHUNK):
            chunk = X[start : start + _CHUNK]
            d = manhattan_distances(chunk, self.train_X)
            nearest = np.argsort(d, axis=1, kind="stable")[:, : self.k]
            probs[start : start + _CHUNK] = self.train_y[nearest].mean(axis=1)
        return probs

    def to_doc(self) -> dict:
        return {
            "kind": "knn",
            "k": self.k,
            "train_X": self.train_X.tolist(),
            "train_y": self.train_y.astype(int).tolist(),
            "params": dict(self.params),
        }

    @staticmethod
    def from_doc(doc: dict) -> "KnnModel":
        return KnnModel(
            train_X=np.asarray(doc["train_X"], dtype=np.float64),
            train_y=np.asarray(doc["train_y"], dtype=np.float64),
            k=int(doc["k"]),
            params=dict(doc.get("params", {})),
        )


def fit_knn(X, y, params: dict) -> KnnModel:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    k = int(params["k_neighbors"])
    if k > X.shape[0]:
        raise DataError(f"k={k} exceeds training size {X.shape[0]}")
    if k < 1:
        raise DataError("k must be at least 1")
    return KnnModel(train_X=X, train_y=y, k=k, params=dict(params))
