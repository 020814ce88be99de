"""Input checks shared by the estimators."""

from __future__ import annotations

import numpy as np


def check_sequences(X, n_codes: int | None = None, allow_empty: bool = False) -> list[np.ndarray]:
    """Coerce ``X`` into a list of 1-D int64 index arrays and range-check them.

    Accepts any iterable of integer sequences, including objects with an
    ``indices`` attribute (cohort sequences and patient records).
    """
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = list(X)
    out = []
    for i, s in enumerate(X):
        if hasattr(s, "indices"):
            s = s.indices
        arr = np.asarray(s, dtype=np.int64).ravel() if len(s) else np.zeros(0, dtype=np.int64)
        if arr.size == 0 and not allow_empty:
            raise ValueError(f"sequence {i} is empty")
        if arr.size and arr.min() < 0:
            raise ValueError(f"sequence {i} has a negative index")
        if n_codes is not None and arr.size and arr.max() >= n_codes:
            raise ValueError(f"sequence {i} has index {int(arr.max())} >= {n_codes}")
        out.append(arr)
    return out


def check_binary_labels(y, n: int) -> np.ndarray:
    y = np.asarray(y).ravel()
    if y.shape[0] != n:
        raise ValueError(f"got {y.shape[0]} labels for {n} samples")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    return y.astype(np.int64)
