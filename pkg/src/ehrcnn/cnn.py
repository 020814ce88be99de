"""Temporal CNN over embedded event sequences.

Architecture: embedding lookup -> one 1-D convolution layer made of several
filter banks (sizes 3, 4, 5 with 100 filters each by default), convolving
along time only -> tanh -> max-over-time pooling -> concatenation -> dense
layer -> 2-way softmax. Everything runs in float64.

Sequences in a batch are right-padded with :data:`PAD` (index ``-1``). Pad
rows embed to zero and pooling ignores any window that reaches into the
padding, except that a sequence shorter than a filter keeps its first window
(zero-padded to the filter width).
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

PAD = -1


class InputMode(str, Enum):
    W2V_FIXED = "W2vFixed"
    W2V_FINETUNE = "W2vFinetune"
    RAND = "Rand"
    RAW = "Raw"
    BOTH = "Both"

    @property
    def needs_pretrained(self) -> bool:
        return self in (InputMode.W2V_FIXED, InputMode.W2V_FINETUNE, InputMode.BOTH)


class GeometryError(ValueError):
    pass


@dataclass
class Conv1dBank:
    weights: np.ndarray  # (K, F, D_in)
    bias: np.ndarray  # (K,)

    def __post_init__(self):
        if self.weights.ndim != 3:
            raise ValueError("bank weights must be K x F x D_in")
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError("bank bias must have one entry per filter")

    @property
    def filter_count(self) -> int:
        return self.weights.shape[0]

    @property
    def filter_size(self) -> int:
        return self.weights.shape[1]

    @property
    def input_dim(self) -> int:
        return self.weights.shape[2]


@dataclass
class CnnConfig:
    input_mode: str = "W2vFinetune"
    filter_sizes: tuple = (3, 4, 5)
    filter_count: int = 100
    embed_dim: int = 200
    seed: int = 0

    def __post_init__(self):
        self.filter_sizes = tuple(int(f) for f in self.filter_sizes)
        self.input_mode = InputMode(self.input_mode).value

    def validate(self) -> None:
        if not self.filter_sizes or min(self.filter_sizes) < 1:
            raise ValueError("filter sizes must be >= 1")
        if self.filter_count < 1 or self.embed_dim < 1:
            raise ValueError("filter_count and embed_dim must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["filter_sizes"] = list(self.filter_sizes)
        return d


@dataclass
class CnnModel:
    input_mode: InputMode
    vocab_size: int
    banks: list[Conv1dBank]
    dense_weight: np.ndarray  # (sum K, 2)
    dense_bias: np.ndarray  # (2,)
    table: np.ndarray | None = None  # trainable embedding / projection, V x D
    frozen: np.ndarray | None = None  # fixed pretrained table, V x D
    embed_dim: int = field(init=False)

    def __post_init__(self):
        self.input_mode = InputMode(self.input_mode)
        mode = self.input_mode
        if mode is InputMode.W2V_FIXED:
            if self.frozen is None or self.table is not None:
                raise ValueError("W2vFixed uses only a frozen table")
        elif mode is InputMode.BOTH:
            if self.frozen is None or self.table is None or self.frozen.shape != self.table.shape:
                raise ValueError("Both needs frozen and trainable tables of equal shape")
        elif self.table is None or self.frozen is not None:
            raise ValueError(f"{mode.value} uses only a trainable table")
        ref = self.frozen if self.frozen is not None else self.table
        if ref.shape[0] != self.vocab_size:
            raise ValueError("embedding rows must equal vocab_size")
        self.embed_dim = ref.shape[1]
        d_in = self.input_dim
        if not self.banks:
            raise ValueError("need at least one filter bank")
        for b in self.banks:
            if b.input_dim != d_in:
                raise ValueError(f"bank input width {b.input_dim} != {d_in}")
        width = sum(b.filter_count for b in self.banks)
        if self.dense_weight.shape != (width, 2) or self.dense_bias.shape != (2,):
            raise ValueError(f"dense layer must be {width} x 2 plus a length-2 bias")

    @property
    def input_dim(self) -> int:
        return 2 * self.embed_dim if self.input_mode is InputMode.BOTH else self.embed_dim

    @property
    def max_filter(self) -> int:
        return max(b.filter_size for b in self.banks)

    def params(self) -> dict[str, np.ndarray]:
        """Trainable arrays by name (live references)."""
        p = {}
        if self.table is not None:
            p["embedding"] = self.table
        for i, b in enumerate(self.banks):
            p[f"conv{i}.weight"] = b.weights
            p[f"conv{i}.bias"] = b.bias
        p["dense.weight"] = self.dense_weight
        p["dense.bias"] = self.dense_bias
        return p

    def copy(self) -> "CnnModel":
        return copy.deepcopy(self)


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_model(config: CnnConfig, vocab_size: int, pretrained: np.ndarray | None = None) -> CnnModel:
    """Seeded model for ``config``; W2v modes copy ``pretrained`` (V x D)."""
    config.validate()
    mode = InputMode(config.input_mode)
    rng = np.random.default_rng(config.seed)
    table = frozen = None
    if mode.needs_pretrained:
        if pretrained is None:
            raise ValueError(f"{mode.value} needs a pretrained embedding")
        pretrained = np.array(pretrained, dtype=np.float64)
        if pretrained.shape[0] != vocab_size:
            raise ValueError("pretrained embedding rows must equal vocab_size")
        if mode is InputMode.W2V_FIXED:
            frozen = pretrained
        elif mode is InputMode.W2V_FINETUNE:
            table = pretrained
        else:
            frozen, table = pretrained, pretrained.copy()
        dim = pretrained.shape[1]
    else:
        dim = config.embed_dim
        if mode is InputMode.RAND:
            table = rng.uniform(-0.5 / dim, 0.5 / dim, size=(vocab_size, dim))
        else:
            # one-hot input times a V x D projection, stored as its rows
            table = _glorot(rng, (vocab_size, dim), vocab_size, dim)
    d_in = 2 * dim if mode is InputMode.BOTH else dim
    banks = []
    for f in config.filter_sizes:
        w = _glorot(rng, (config.filter_count, f, d_in), f * d_in, config.filter_count)
        banks.append(Conv1dBank(w, np.zeros(config.filter_count)))
    width = config.filter_count * len(config.filter_sizes)
    dense = _glorot(rng, (width, 2), width, 2)
    return CnnModel(mode, vocab_size, banks, dense, np.zeros(2), table, frozen)


# --- layer primitives -------------------------------------------------------

def conv1d_forward(X: np.ndarray, bank: Conv1dBank) -> np.ndarray:
    """Valid 1-D convolution along time: (T, D_in) -> (T - F + 1, K)."""
    X = np.asarray(X, dtype=np.float64)
    T = X.shape[0]
    F = bank.filter_size
    if X.ndim != 2 or X.shape[1] != bank.input_dim:
        raise GeometryError(f"expected a T x {bank.input_dim} input, got {X.shape}")
    if T < F:
        raise GeometryError(f"sequence length {T} is shorter than filter size {F}")
    return _conv_batch(X[None], bank)[0]


def _conv_batch(X: np.ndarray, bank: Conv1dBank) -> np.ndarray:
    """(B, T, D_in) -> (B, T - F + 1, K) via one matmul and a shifted sum."""
    B, T, D = X.shape
    K, F, _ = bank.weights.shape
    L = T - F + 1
    # Y[b, t, f, k] = X[b, t] . W[k, f]
    Y = (X.reshape(B * T, D) @ bank.weights.transpose(2, 1, 0).reshape(D, F * K)).reshape(B, T, F, K)
    out = np.broadcast_to(bank.bias, (B, L, K)).copy()
    for f in range(F):
        out += Y[:, f:f + L, f, :]
    return out


def max_pool_time(Y: np.ndarray, mask: np.ndarray | None = None):
    """Max over unmasked time steps of an (L, K) map.

    ``mask[t]`` is True for positions that take part. Returns the pooled
    length-K vector and the earliest arg-max of each column.
    """
    Y = np.asarray(Y, dtype=np.float64)
    pooled, am = _pool_batch(Y[None], None if mask is None else np.asarray(mask, dtype=bool)[None])
    return pooled[0], am[0]


def _pool_batch(Y: np.ndarray, mask: np.ndarray | None):
    if mask is not None:
        if not mask.any(axis=1).all():
            raise ValueError("every position is masked out")
        Y = np.where(mask[:, :, None], Y, -np.inf)
    am = np.argmax(Y, axis=1)  # first occurrence on ties
    pooled = np.take_along_axis(Y, am[:, None, :], axis=1)[:, 0, :]
    return pooled, am


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# --- model forward / backward ------------------------------------------------

def pad_batch(seqs, min_width: int = 1):
    """Stack index arrays into a (B, T) matrix right-padded with PAD."""
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    width = max(int(lengths.max()), min_width)
    idx = np.full((len(seqs), width), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        idx[i, :len(s)] = s
    return idx, lengths


def _lookup(model: CnnModel, idx: np.ndarray) -> np.ndarray:
    real = idx != PAD
    safe = np.where(real, idx, 0)
    parts = []
    if model.frozen is not None:
        parts.append(model.frozen[safe])
    if model.table is not None:
        parts.append(model.table[safe])
    X = parts[0] if len(parts) == 1 else np.concatenate(parts, axis=-1)
    return X * real[:, :, None]


def forward_batch(model: CnnModel, seqs, cache: bool = False):
    """Class probabilities (B, 2) for a list of index arrays."""
    idx, lengths = pad_batch(seqs, model.max_filter)
    if (lengths == 0).any():
        raise ValueError("cannot score an empty sequence")
    X = _lookup(model, idx)
    T = idx.shape[1]
    steps = np.arange(T)
    pooled_parts, bank_cache = [], []
    for bank in model.banks:
        F = bank.filter_size
        L = T - F + 1
        act = np.tanh(_conv_batch(X, bank))
        # a window is usable if it lies inside the sequence; short sequences keep window 0
        last = np.maximum(lengths - F, 0)
        mask = steps[None, :L] <= last[:, None]
        pooled, am = _pool_batch(act, mask)
        pooled_parts.append(pooled)
        bank_cache.append((act, am))
    H = np.concatenate(pooled_parts, axis=1)
    probs = softmax(H @ model.dense_weight + model.dense_bias)
    if not cache:
        return probs
    return probs, {"idx": idx, "X": X, "banks": bank_cache, "H": H, "probs": probs}


def _strip_pads(seq) -> np.ndarray:
    arr = np.asarray(seq, dtype=np.int64).ravel()
    pads = np.flatnonzero(arr == PAD)
    if pads.size:
        if not (arr[pads[0]:] == PAD).all():
            raise ValueError("pad tokens may only trail the sequence")
        arr = arr[:pads[0]]
    return arr


def forward(model: CnnModel, seq) -> np.ndarray:
    """Class probabilities for one sequence; trailing PAD tokens are ignored."""
    arr = _strip_pads(seq)
    if arr.size == 0:
        raise ValueError("cannot score an empty sequence")
    if arr.min() < 0 or arr.max() >= model.vocab_size:
        raise ValueError("index outside the vocabulary")
    return forward_batch(model, [arr])[0]


def loss_and_grads(model: CnnModel, seqs, labels, weights=None, need_grads: bool = True):
    """Weighted-mean cross-entropy and its exact gradients.

    Returns ``(loss, grads)`` where ``grads`` maps :meth:`CnnModel.params`
    names to arrays; frozen tables never appear.
    """
    labels = np.asarray(labels, dtype=np.int64)
    w = np.ones(len(labels)) if weights is None else np.asarray(weights, dtype=np.float64)
    w = w / w.sum()
    probs, c = forward_batch(model, seqs, cache=True)
    p_true = probs[np.arange(len(labels)), labels]
    loss = float(-np.sum(w * np.log(np.maximum(p_true, 1e-300))))
    if not need_grads:
        return loss, None
    return loss, backward(model, c, labels, w)


def backward(model: CnnModel, cache: dict, labels, weights) -> dict[str, np.ndarray]:
    """Backpropagate weighted cross-entropy through a cached forward pass.

    ``weights`` must already sum to one.
    """
    probs, H, X, idx = cache["probs"], cache["H"], cache["X"], cache["idx"]
    B = probs.shape[0]
    rows = np.arange(B)
    dlogits = probs.copy()
    dlogits[rows, labels] -= 1.0
    dlogits *= np.asarray(weights)[:, None]
    grads = {"dense.weight": H.T @ dlogits, "dense.bias": dlogits.sum(axis=0)}
    dH = dlogits @ model.dense_weight.T

    trainable = model.table is not None
    if trainable:
        d_in = model.input_dim
        offset = d_in - model.embed_dim  # trainable columns sit last in Both mode
        tok_parts, val_parts = [], []
    start = 0
    for i, (bank, (act, am)) in enumerate(zip(model.banks, cache["banks"])):
        K, F, _ = bank.weights.shape
        g = dH[:, start:start + K]
        start += K
        a = np.take_along_axis(act, am[:, None, :], axis=1)[:, 0, :]
        dpre = g * (1.0 - a * a)  # (B, K)
        dW = np.empty_like(bank.weights)
        for f in range(F):
            xs = X[rows[:, None], am + f]  # (B, K, D_in)
            dW[:, f, :] = np.einsum("bk,bkd->kd", dpre, xs)
            if trainable:
                tok = idx[rows[:, None], am + f]
                real = tok != PAD
                vals = dpre[:, :, None] * bank.weights[None, :, f, offset:]
                tok_parts.append(tok[real])
                val_parts.append(vals[real])
        grads[f"conv{i}.weight"] = dW
        grads[f"conv{i}.bias"] = dpre.sum(axis=0)
    if trainable:
        dT = np.zeros_like(model.table)
        np.add.at(dT, np.concatenate(tok_parts), np.concatenate(val_parts))
        grads["embedding"] = dT
    return grads
