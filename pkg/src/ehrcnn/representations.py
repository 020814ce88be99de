"""Fixed-length patient features for the baseline classifiers."""

from __future__ import annotations

import csv
from enum import Enum

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .embedding import EmbeddingMatrix, init_embedding
from .validation import check_sequences


class AggregationMode(str, Enum):
    BOFW = "BofW"
    W2V_AVE = "W2vAve"
    W2V_SUM = "W2vSum"
    W2V_MAX = "W2vMax"
    W2V_ALL = "W2vAll"
    RAND_SUM = "RandSum"


def bag_of_words(seq, vocab_size: int) -> np.ndarray:
    idx = np.asarray(seq, dtype=np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= vocab_size):
        raise ValueError(f"index outside [0, {vocab_size})")
    return np.bincount(idx, minlength=vocab_size).astype(np.float64)


def random_embedding(n_codes: int, dim: int, seed: int) -> np.ndarray:
    """Random table drawn like a fresh CBOW input matrix."""
    return init_embedding(n_codes, dim, seed)[0]


def aggregate_embeddings(seq, emb, mode, rand_seed: int = 0) -> np.ndarray:
    """Column-wise reduction of the looked-up embedding rows.

    ``emb`` is an :class:`EmbeddingMatrix` or a plain ``V x D`` array. The
    ``W2vAll`` layout is ``[sum | min | max]``.
    """
    mode = AggregationMode(mode)
    table = emb.input_vectors if isinstance(emb, EmbeddingMatrix) else np.asarray(emb, dtype=np.float64)
    idx = np.asarray(seq, dtype=np.int64).ravel()
    if idx.size == 0:
        raise ValueError("cannot aggregate an empty sequence")
    if idx.min() < 0 or idx.max() >= table.shape[0]:
        raise ValueError(f"index outside [0, {table.shape[0]})")
    if mode is AggregationMode.BOFW:
        raise ValueError("BofW is not an embedding aggregation; use bag_of_words")
    if mode is AggregationMode.RAND_SUM:
        table = random_embedding(table.shape[0], table.shape[1], rand_seed)
    rows = table[idx]
    if mode in (AggregationMode.W2V_SUM, AggregationMode.RAND_SUM):
        return rows.sum(axis=0)
    if mode is AggregationMode.W2V_AVE:
        return rows.mean(axis=0)
    if mode is AggregationMode.W2V_MAX:
        return rows.max(axis=0)
    return np.concatenate([rows.sum(axis=0), rows.min(axis=0), rows.max(axis=0)])


class SequenceFeaturizer(BaseEstimator, TransformerMixin):
    """Turn event-index sequences into a feature matrix.

    ``embedding`` may be omitted for ``BofW``, in which case ``vocab_size``
    is required.
    """

    def __init__(self, mode="BofW", embedding=None, vocab_size=None, rand_seed=0):
        self.mode = mode
        self.embedding = embedding
        self.vocab_size = vocab_size
        self.rand_seed = rand_seed

    def fit(self, X, y=None):
        mode = AggregationMode(self.mode)
        if mode is AggregationMode.BOFW:
            if self.vocab_size is None and self.embedding is None:
                raise ValueError("BofW needs vocab_size or an embedding")
            self.n_codes_ = (self.vocab_size if self.vocab_size is not None
                             else _table(self.embedding).shape[0])
            self._table = None
        else:
            if self.embedding is None:
                raise ValueError(f"{mode.value} needs an embedding")
            table = _table(self.embedding)
            if mode is AggregationMode.RAND_SUM:
                table = random_embedding(table.shape[0], table.shape[1], self.rand_seed)
            self.n_codes_ = table.shape[0]
            self._table = table
        self.mode_ = mode
        return self

    def transform(self, X):
        seqs = check_sequences(X, self.n_codes_, allow_empty=self.mode_ is AggregationMode.BOFW)
        if self.mode_ is AggregationMode.BOFW:
            return np.vstack([bag_of_words(s, self.n_codes_) for s in seqs]) if seqs else \
                np.zeros((0, self.n_codes_))
        # RandSum's table was drawn at fit time, so aggregate it as a plain sum
        mode = AggregationMode.W2V_SUM if self.mode_ is AggregationMode.RAND_SUM else self.mode_
        return np.vstack([aggregate_embeddings(s, self._table, mode) for s in seqs])


def _table(emb) -> np.ndarray:
    return emb.input_vectors if isinstance(emb, EmbeddingMatrix) else np.asarray(emb, dtype=np.float64)


def export_features(path, patient_ids, labels, features) -> None:
    features = np.asarray(features)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["patient_id", "label"] + [f"f{i}" for i in range(features.shape[1])])
        for pid, y, row in zip(patient_ids, labels, features):
            w.writerow([pid, int(y)] + [repr(float(v)) for v in row])
