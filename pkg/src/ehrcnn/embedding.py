"""CBOW event embeddings trained with negative sampling.

Every patient record is one training sequence. For a centre position the
context is every other position within ``window`` on each side (so up to
``2 * window`` events), the hidden vector is the context mean, and the
centre's output vector is pushed up against ``negatives`` noise codes drawn
from the unigram distribution raised to 0.75. As in the reference word2vec
tool, the accumulated hidden-layer error is added to every context vector
unscaled.

Random draws inside the kernel use SplitMix64 streams keyed by
``(seed, epoch, sequence)``, so single-worker training is bit-reproducible and
multi-worker training only differs by unsynchronised write races.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numba
import numpy as np
from sklearn.base import BaseEstimator

from .data import EventCode, Vocabulary

_U64 = np.uint64


@dataclass
class CbowConfig:
    dim: int = 200
    window: int = 20
    min_count: int = 5
    negatives: int = 5
    epochs: int = 5
    lr_start: float = 0.025
    lr_min: float = 1e-4
    sample: float = 0.0
    workers: int = 1
    seed: int = 0

    def validate(self) -> None:
        if self.dim < 1 or self.window < 1 or self.negatives < 1:
            raise ValueError("dim, window and negatives must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.min_count < 1:
            raise ValueError("min_count must be >= 1")
        if not self.lr_start > self.lr_min > 0:
            raise ValueError("need lr_start > lr_min > 0")
        if self.sample < 0:
            raise ValueError("sample must be >= 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EmbeddingMatrix:
    input_vectors: np.ndarray
    output_vectors: np.ndarray | None
    vocab: Vocabulary

    def __post_init__(self):
        if self.input_vectors.ndim != 2 or self.input_vectors.shape[0] != len(self.vocab):
            raise ValueError("input_vectors must have one row per vocabulary entry")
        if not np.all(np.isfinite(self.input_vectors)):
            raise ValueError("embedding contains non-finite values")

    @property
    def dim(self) -> int:
        return self.input_vectors.shape[1]

    def __len__(self) -> int:
        return self.input_vectors.shape[0]


# --- kernels ----------------------------------------------------------------

@numba.njit(cache=True, inline="always")
def _splitmix(state):
    state = state + _U64(0x9E3779B97F4A7C15)
    z = state
    z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
    return state, z ^ (z >> _U64(31))


@numba.njit(cache=True, inline="always")
def _uniform(state):
    state, z = _splitmix(state)
    return state, (z >> _U64(11)) * (1.0 / 9007199254740992.0)


@numba.njit(cache=True)
def _stream_seed(seed, epoch, seq):
    s = _U64(seed)
    s, a = _splitmix(s ^ (_U64(epoch) * _U64(0xD1B54A32D192ED03)))
    s, b = _splitmix(a ^ (_U64(seq) * _U64(0x8CB92BA72F3D8DD7)))
    return b


@numba.njit(cache=True)
def _sigmoid(x):
    if x > 30.0:
        return 1.0
    if x < -30.0:
        return 0.0
    return 1.0 / (1.0 + np.exp(-x))


@numba.njit(cache=True)
def _train_one(tokens, start, stop, w_in, w_out, cdf, keep, window, negatives,
               alpha0, alpha1, total, done0, state, h, err, buf):
    n = 0
    for p in range(start, stop):
        tok = tokens[p]
        if keep[tok] < 1.0:
            state, u = _uniform(state)
            if u >= keep[tok]:
                continue
        buf[n] = tok
        n += 1
    dim = w_in.shape[1]
    for t in range(n):
        done = done0 + t
        alpha = alpha0 + (alpha1 - alpha0) * (done / total)
        lo = max(0, t - window)
        hi = min(n, t + window + 1)
        cw = hi - lo - 1
        if cw <= 0:
            continue
        for d in range(dim):
            h[d] = 0.0
            err[d] = 0.0
        for c in range(lo, hi):
            if c != t:
                row = buf[c]
                for d in range(dim):
                    h[d] += w_in[row, d]
        for d in range(dim):
            h[d] /= cw
        centre = buf[t]
        for j in range(negatives + 1):
            if j == 0:
                target = centre
                label = 1.0
            else:
                state, u = _uniform(state)
                target = np.searchsorted(cdf, u, side="right")
                if target >= cdf.shape[0]:
                    target = cdf.shape[0] - 1
                if target == centre:
                    continue
                label = 0.0
            f = 0.0
            for d in range(dim):
                f += h[d] * w_out[target, d]
            g = (label - _sigmoid(f)) * alpha
            for d in range(dim):
                err[d] += g * w_out[target, d]
                w_out[target, d] += g * h[d]
        for c in range(lo, hi):
            if c != t:
                row = buf[c]
                for d in range(dim):
                    w_in[row, d] += err[d]
    return n


@numba.njit(cache=True)
def _train_serial(tokens, offsets, w_in, w_out, cdf, keep, window, negatives,
                  alpha0, alpha1, epochs, seed):
    n_seq = offsets.shape[0] - 1
    dim = w_in.shape[1]
    h = np.empty(dim)
    err = np.empty(dim)
    maxlen = 0
    for s in range(n_seq):
        maxlen = max(maxlen, offsets[s + 1] - offsets[s])
    buf = np.empty(maxlen, dtype=np.int64)
    total = float(max(1, epochs * tokens.shape[0]))
    for e in range(epochs):
        for s in range(n_seq):
            state = _stream_seed(seed, e, s)
            done0 = e * tokens.shape[0] + offsets[s]
            _train_one(tokens, offsets[s], offsets[s + 1], w_in, w_out, cdf, keep,
                       window, negatives, alpha0, alpha1, total, done0, state, h, err, buf)


@numba.njit(cache=True, parallel=True)
def _train_hogwild(tokens, offsets, w_in, w_out, cdf, keep, window, negatives,
                   alpha0, alpha1, epochs, seed, workers):
    n_seq = offsets.shape[0] - 1
    dim = w_in.shape[1]
    maxlen = 0
    for s in range(n_seq):
        maxlen = max(maxlen, offsets[s + 1] - offsets[s])
    total = float(max(1, epochs * tokens.shape[0]))
    for e in range(epochs):
        for wkr in numba.prange(workers):
            h = np.empty(dim)
            err = np.empty(dim)
            buf = np.empty(maxlen, dtype=np.int64)
            for s in range(wkr, n_seq, workers):
                state = _stream_seed(seed, e, s)
                done0 = e * tokens.shape[0] + offsets[s]
                _train_one(tokens, offsets[s], offsets[s + 1], w_in, w_out, cdf, keep,
                           window, negatives, alpha0, alpha1, total, done0, state, h, err, buf)


@numba.njit(cache=True)
def _ns_loss(tokens, offsets, w_in, w_out, cdf, window, negatives, seed):
    n_seq = offsets.shape[0] - 1
    dim = w_in.shape[1]
    h = np.empty(dim)
    loss = 0.0
    count = 0
    for s in range(n_seq):
        state = _stream_seed(seed, 0, s)
        a, b = offsets[s], offsets[s + 1]
        n = b - a
        for t in range(n):
            lo = max(0, t - window)
            hi = min(n, t + window + 1)
            cw = hi - lo - 1
            if cw <= 0:
                continue
            for d in range(dim):
                h[d] = 0.0
            for c in range(lo, hi):
                if c != t:
                    for d in range(dim):
                        h[d] += w_in[tokens[a + c], d]
            for d in range(dim):
                h[d] /= cw
            centre = tokens[a + t]
            for j in range(negatives + 1):
                if j == 0:
                    target = centre
                    sign = 1.0
                else:
                    state, u = _uniform(state)
                    target = min(np.searchsorted(cdf, u, side="right"), cdf.shape[0] - 1)
                    if target == centre:
                        continue
                    sign = -1.0
                f = 0.0
                for d in range(dim):
                    f += h[d] * w_out[target, d]
                z = sign * f
                # -log(sigmoid(z)), stable
                loss += np.log1p(np.exp(-abs(z))) + max(-z, 0.0)
            count += 1
    return loss / max(count, 1)


# --- public API -------------------------------------------------------------

def _pack(sequences, n_codes: int):
    seqs = [np.asarray(s, dtype=np.int64).ravel() for s in sequences]
    offsets = np.zeros(len(seqs) + 1, dtype=np.int64)
    if seqs:
        offsets[1:] = np.cumsum([len(s) for s in seqs])
    tokens = np.concatenate(seqs) if seqs else np.zeros(0, dtype=np.int64)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= n_codes):
        raise ValueError(f"sequence contains an index outside [0, {n_codes})")
    return tokens, offsets


def noise_distribution(counts, power: float = 0.75) -> np.ndarray:
    """Negative-sampling probabilities proportional to ``count ** power``."""
    w = np.asarray(counts, dtype=np.float64) ** power
    if w.sum() <= 0:
        raise ValueError("noise distribution needs at least one positive count")
    return w / w.sum()


def _noise_cdf(counts) -> np.ndarray:
    cdf = np.cumsum(noise_distribution(counts))
    cdf[-1] = 1.0
    return cdf


def sample_negatives(counts, n: int, seed: int = 0) -> np.ndarray:
    """Draw ``n`` noise codes with the same sampler the trainer uses."""
    return _draw_negatives(_noise_cdf(counts), n, _U64(seed & (2**64 - 1)))


@numba.njit(cache=True)
def _draw_negatives(cdf, n, seed):
    state = _stream_seed(seed, 0, 0)
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        state, u = _uniform(state)
        out[i] = min(np.searchsorted(cdf, u, side="right"), cdf.shape[0] - 1)
    return out


def _keep_probabilities(counts, sample: float) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    if sample <= 0:
        return np.ones_like(counts)
    threshold = sample * counts.sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        keep = (np.sqrt(counts / threshold) + 1.0) * threshold / counts
    return np.where(counts > 0, np.minimum(keep, 1.0), 1.0)


def _corpus_counts(tokens, n_codes):
    return np.bincount(tokens, minlength=n_codes).astype(np.float64)


def init_embedding(n_codes: int, dim: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    w_in = rng.uniform(-0.5 / dim, 0.5 / dim, size=(n_codes, dim))
    return w_in, np.zeros((n_codes, dim))


def train_cbow(sequences: Sequence, vocab: Vocabulary, config: CbowConfig | None = None) -> EmbeddingMatrix:
    """Train CBOW vectors over per-patient index sequences."""
    config = config or CbowConfig()
    config.validate()
    n_codes = len(vocab)
    if n_codes == 0:
        raise ValueError("empty vocabulary")
    tokens, offsets = _pack(sequences, n_codes)
    if not np.any(np.diff(offsets) >= 2):
        raise ValueError("need at least one sequence of length >= 2")
    w_in, w_out = init_embedding(n_codes, config.dim, config.seed)
    if config.epochs == 0:
        return EmbeddingMatrix(w_in, w_out, vocab)
    # noise weights come from the training corpus itself
    counts = _corpus_counts(tokens, n_codes)
    cdf = _noise_cdf(counts)
    keep = _keep_probabilities(counts, config.sample)
    seed = _U64(config.seed & (2**64 - 1))
    args = (tokens, offsets, w_in, w_out, cdf, keep, config.window, config.negatives,
            config.lr_start, config.lr_min, config.epochs, seed)
    if config.workers == 1:
        _train_serial(*args)
    else:
        _train_hogwild(*args, config.workers)
    return EmbeddingMatrix(w_in, w_out, vocab)


def cbow_loss(sequences, emb: EmbeddingMatrix, window: int = 20, negatives: int = 5, seed: int = 0) -> float:
    """Mean negative-sampling loss per centre position (fixed noise draws)."""
    if emb.output_vectors is None:
        raise ValueError("loss needs output vectors")
    tokens, offsets = _pack(sequences, len(emb))
    cdf = _noise_cdf(_corpus_counts(tokens, len(emb)))
    return float(_ns_loss(tokens, offsets, emb.input_vectors, emb.output_vectors, cdf,
                          window, negatives, _U64(seed & (2**64 - 1))))


def cosine_matrix(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = vectors / safe[:, None]
    return unit @ unit.T


def nearest_neighbors(emb: EmbeddingMatrix, query_index: int, k: int) -> list[tuple[int, float]]:
    """Top-``k`` rows by cosine similarity to ``query_index``, query excluded."""
    n = len(emb)
    if k < 0:
        raise ValueError("k must be >= 0")
    if not 0 <= query_index < n:
        raise IndexError(f"query index {query_index} outside vocabulary of size {n}")
    if k >= n:
        raise ValueError(f"k must be < vocabulary size ({n})")
    vecs = emb.input_vectors
    norms = np.linalg.norm(vecs, axis=1)
    q = vecs[query_index]
    qn = norms[query_index]
    denom = norms * qn
    sims = np.divide(vecs @ q, denom, out=np.zeros(n), where=denom > 0)
    order = [i for i in np.lexsort((np.arange(n), -sims)) if i != query_index]
    return [(int(i), float(sims[i])) for i in order[:k]]


def save_embeddings(emb: EmbeddingMatrix, path) -> None:
    rows = [f"{len(emb)} {emb.dim}"]
    for code, vec in zip(emb.vocab.codes, emb.input_vectors):
        rows.append(f"{code.code} {code.kind.value} " + " ".join(f"{v:.6f}" for v in vec))
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


class EmbeddingFormatError(ValueError):
    pass


def load_embeddings(path, vocab: Vocabulary | None = None) -> EmbeddingMatrix:
    """Read the text format; if ``vocab`` is given its codes must match row for row."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise EmbeddingFormatError(f"{path}: empty file")
    try:
        n, dim = (int(x) for x in lines[0].split())
    except ValueError:
        raise EmbeddingFormatError(f"{path}: header must be 'V D'") from None
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != n:
        raise EmbeddingFormatError(f"{path}: header declares {n} rows, found {len(body)}")
    codes, vecs = [], np.empty((n, dim))
    for i, ln in enumerate(body):
        parts = ln.split()
        if len(parts) != dim + 2:
            raise EmbeddingFormatError(f"{path}:{i + 2}: expected {dim} values")
        try:
            codes.append(EventCode.make(parts[0], parts[1]))
            vecs[i] = [float(x) for x in parts[2:]]
        except ValueError as exc:
            raise EmbeddingFormatError(f"{path}:{i + 2}: {exc}") from None
    if vocab is None:
        vocab = Vocabulary(tuple(codes), (0,) * n, min_count=0)
    elif tuple(codes) != vocab.codes:
        raise EmbeddingFormatError(f"{path}: rows do not match the given vocabulary")
    return EmbeddingMatrix(vecs, None, vocab)


class CbowEmbedder(BaseEstimator):
    """Estimator wrapper around :func:`train_cbow`.

    ``fit`` takes index sequences and the vocabulary they index into; the
    trained matrix is stored as ``embedding_``.
    """

    def __init__(self, dim=200, window=20, min_count=5, negatives=5, epochs=5,
                 lr_start=0.025, lr_min=1e-4, sample=0.0, workers=1, seed=0):
        self.dim = dim
        self.window = window
        self.min_count = min_count
        self.negatives = negatives
        self.epochs = epochs
        self.lr_start = lr_start
        self.lr_min = lr_min
        self.sample = sample
        self.workers = workers
        self.seed = seed

    def fit(self, X, y=None, vocab: Vocabulary | None = None):
        if vocab is None:
            raise ValueError("CbowEmbedder.fit needs the vocabulary the sequences index into")
        self.embedding_ = train_cbow(X, vocab, CbowConfig(**self.get_params()))
        return self

    @property
    def vectors_(self) -> np.ndarray:
        return self.embedding_.input_vectors

    def most_similar(self, index: int, k: int = 10):
        return nearest_neighbors(self.embedding_, index, k)
