"""Mini-batch training, prediction and gradient checking for the CNN."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .cnn import CnnConfig, CnnModel, forward_batch, init_model, loss_and_grads
from .metrics import auroc
from .optim import AdaDelta, NumericalError
from .validation import check_binary_labels, check_sequences

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    rho: float = 0.95
    eps: float = 1e-6
    seed: int = 0

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1 or self.patience < 1:
            raise ValueError("max_epochs and patience must be >= 1")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")

    def to_dict(self) -> dict:
        return asdict(self)


def predict_proba(model: CnnModel, seqs, batch_size: int = 64) -> np.ndarray:
    """Positive-class probability for each sequence."""
    seqs = check_sequences(seqs, model.vocab_size)
    if not seqs:
        return np.zeros(0)
    out = [forward_batch(model, seqs[i:i + batch_size])[:, 1]
           for i in range(0, len(seqs), batch_size)]
    return np.concatenate(out)


def _selection_score(model, seqs, labels):
    scores = predict_proba(model, seqs)
    if labels.min() != labels.max():
        return auroc(scores, labels)
    # single-class validation data: fall back to mean log-likelihood
    p = np.where(labels == 1, scores, 1.0 - scores)
    return float(np.mean(np.log(np.maximum(p, 1e-300))))


def fit_cnn(model: CnnModel, X_train, y_train, X_val, y_val, config: TrainConfig):
    """Train ``model`` in place with AdaDelta and early stopping.

    Returns the model holding the best-validation parameters and the per-epoch
    history.
    """
    config.validate()
    X_train = check_sequences(X_train, model.vocab_size)
    X_val = check_sequences(X_val, model.vocab_size)
    y_train = check_binary_labels(y_train, len(X_train))
    y_val = check_binary_labels(y_val, len(X_val))
    if not X_train or not X_val:
        raise ValueError("train and validation sets must be non-empty")
    rng = np.random.default_rng(config.seed)
    params = model.params()
    opt = AdaDelta(params, config.rho, config.eps)
    best_score, best_params, since_best = -np.inf, None, 0
    history = []
    n = len(X_train)
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            loss, grads = loss_and_grads(model, [X_train[i] for i in batch], y_train[batch])
            if not np.isfinite(loss):
                raise NumericalError(f"loss became non-finite in epoch {epoch}")
            try:
                opt.step(grads)
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch}: {exc}") from None
            total += loss * len(batch)
        score = _selection_score(model, X_val, y_val)
        history.append({"epoch": epoch, "train_loss": total / n, "val_auroc": score})
        log.info("epoch %d loss %.5f val %.5f", epoch, total / n, score)
        if score > best_score:
            best_score, since_best = score, 0
            best_params = {k: v.copy() for k, v in params.items()}
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    for k, v in best_params.items():
        params[k][...] = v
    return model, history


def train_cnn(dataset, model_config: CnnConfig, train_config: TrainConfig,
              pretrained=None, vocab_size: int | None = None):
    """Build a model from ``model_config`` and fit it on a cohort's train/val splits."""
    if pretrained is not None and not isinstance(pretrained, np.ndarray):
        pretrained = pretrained.input_vectors
    if vocab_size is None:
        if pretrained is None:
            raise ValueError("vocab_size is required without a pretrained embedding")
        vocab_size = pretrained.shape[0]
    model = init_model(model_config, vocab_size, pretrained)
    return fit_cnn(model, [s.indices for s in dataset.train], [s.label for s in dataset.train],
                   [s.indices for s in dataset.val], [s.label for s in dataset.val], train_config)


def gradient_check(model: CnnModel, examples, step: float = 1e-5, max_coords: int = 200,
                   seed: int = 0, details: bool = False):
    """Largest relative error between analytic and central-difference gradients.

    ``examples`` is ``(seq, label)`` or a list of such pairs. Up to
    ``max_coords`` seeded coordinates are probed per parameter group; frozen
    tables are not parameters and are skipped. Relative error is
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    if isinstance(examples, tuple) and len(examples) == 2 and np.isscalar(examples[1]):
        examples = [examples]
    seqs = [np.asarray(s, dtype=np.int64) for s, _ in examples]
    labels = np.array([y for _, y in examples], dtype=np.int64)
    _, grads = loss_and_grads(model, seqs, labels)
    params = model.params()
    rng = np.random.default_rng(seed)
    worst, per_group = 0.0, {}
    for name, p in params.items():
        flat = p.reshape(-1)
        coords = np.arange(flat.size)
        if flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        g = grads[name].reshape(-1)
        group_worst = 0.0
        for j in coords:
            orig = flat[j]
            flat[j] = orig + step
            up = loss_and_grads(model, seqs, labels, need_grads=False)[0]
            flat[j] = orig - step
            down = loss_and_grads(model, seqs, labels, need_grads=False)[0]
            flat[j] = orig
            num = (up - down) / (2 * step)
            err = abs(g[j] - num) / max(abs(g[j]), abs(num), 1e-8)
            group_worst = max(group_worst, err)
        per_group[name] = group_worst
        worst = max(worst, group_worst)
    return (worst, per_group) if details else worst


class CnnRiskClassifier(BaseEstimator, ClassifierMixin):
    """scikit-learn estimator around the temporal CNN.

    ``X`` is a list of event-index sequences (or objects with ``indices``).
    Validation data for early stopping comes from ``eval_set=(X_val, y_val)``
    or, failing that, from a seeded ``validation_fraction`` of the training
    data.
    """

    def __init__(self, input_mode="Rand", filter_sizes=(3, 4, 5), filter_count=100,
                 embed_dim=200, pretrained=None, vocab_size=None, batch_size=32,
                 max_epochs=100, patience=10, rho=0.95, eps=1e-6,
                 validation_fraction=0.125, seed=0):
        self.input_mode = input_mode
        self.filter_sizes = filter_sizes
        self.filter_count = filter_count
        self.embed_dim = embed_dim
        self.pretrained = pretrained
        self.vocab_size = vocab_size
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.rho = rho
        self.eps = eps
        self.validation_fraction = validation_fraction
        self.seed = seed

    def fit(self, X, y, eval_set=None):
        seqs = check_sequences(X)
        y = check_binary_labels(y, len(seqs))
        pretrained = self.pretrained
        if pretrained is not None and not isinstance(pretrained, np.ndarray):
            pretrained = pretrained.input_vectors
        vocab_size = self.vocab_size
        if vocab_size is None:
            vocab_size = pretrained.shape[0] if pretrained is not None else \
                1 + max(int(s.max()) for s in seqs)
        if eval_set is None:
            rng = np.random.default_rng(self.seed)
            order = rng.permutation(len(seqs))
            n_val = max(1, int(round(self.validation_fraction * len(seqs))))
            val, tr = order[:n_val], order[n_val:]
            X_val, y_val = [seqs[i] for i in val], y[val]
            seqs, y = [seqs[i] for i in tr], y[tr]
        else:
            X_val, y_val = eval_set
        mcfg = CnnConfig(self.input_mode, self.filter_sizes, self.filter_count, self.embed_dim, self.seed)
        tcfg = TrainConfig(self.batch_size, self.max_epochs, self.patience, self.rho, self.eps, self.seed)
        model = init_model(mcfg, vocab_size, pretrained)
        self.model_, self.history_ = fit_cnn(model, seqs, y, X_val, y_val, tcfg)
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        p = predict_proba(self.model_, X)
        return np.column_stack([1.0 - p, p])

    def decision_function(self, X):
        return self.predict_proba(X)[:, 1]

    def predict(self, X):
        # same >= 0.5 rule as the accuracy metric
        return (self.decision_function(X) >= 0.5).astype(np.int64)
