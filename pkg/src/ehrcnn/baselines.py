"""Baseline classifiers over fixed-length representations.

* L2-regularised logistic regression and linear SVM (hinge loss), fitted by
  full-batch gradient descent with a backtracking line search. The bias is
  not penalised.
* A random forest of Gini trees that grows one bootstrap tree at a time and
  stops once validation AUROC has not improved for ``patience`` trees, or at
  ``max_trees``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .metrics import auroc, evaluate_scores
from .representations import AggregationMode, SequenceFeaturizer

LOSS_KINDS = ("logistic", "hinge")


class BaselineError(ValueError):
    pass


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# --- linear models ----------------------------------------------------------

@dataclass
class LinearConfig:
    tol: float = 1e-6
    max_iter: int = 10_000
    armijo: float = 1e-4


@dataclass
class LinearModel:
    weights: np.ndarray
    bias: float
    loss_kind: str
    l2_lambda: float
    n_iter: int = 0
    objective_trace: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}")
        if not (np.all(np.isfinite(self.weights)) and np.isfinite(self.bias)):
            raise BaselineError("non-finite linear model parameters")


def _loss_terms(margins, kind):
    """Per-example loss and d loss / d score, given margins y*s (y in {-1, +1})."""
    if kind == "logistic":
        loss = np.logaddexp(0.0, -margins)
        dloss = -sigmoid(-margins)
    else:
        loss = np.maximum(0.0, 1.0 - margins)
        dloss = np.where(margins < 1.0, -1.0, 0.0)
    return loss, dloss


def linear_objective(w, b, X, y, loss_kind, l2_lambda):
    """Mean loss plus (lambda/2)||w||^2; ``y`` in {0, 1}."""
    ypm = 2.0 * np.asarray(y, dtype=np.float64) - 1.0
    loss, _ = _loss_terms(ypm * (X @ w + b), loss_kind)
    return float(loss.mean() + 0.5 * l2_lambda * w @ w)


def linear_gradient(w, b, X, y, loss_kind, l2_lambda):
    ypm = 2.0 * np.asarray(y, dtype=np.float64) - 1.0
    _, dloss = _loss_terms(ypm * (X @ w + b), loss_kind)
    r = dloss * ypm / X.shape[0]
    return X.T @ r + l2_lambda * w, float(r.sum())


def train_linear(X, y, loss_kind: str = "logistic", l2_lambda: float = 1e-2,
                 config: LinearConfig | None = None) -> LinearModel:
    """Minimise the regularised objective by line-searched gradient descent.

    Descent runs in rescaled coordinates ``v = scale * w`` with the
    intercept absorbing the column means. ``scale`` balances each
    coordinate's curvature (data term plus penalty), which leaves the
    objective unchanged but conditions the problem. Convergence is judged on
    the gradient in the original coordinates.
    """
    config = config or LinearConfig()
    if loss_kind not in LOSS_KINDS:
        raise ValueError(f"loss_kind must be one of {LOSS_KINDS}")
    if l2_lambda < 0:
        raise ValueError("l2_lambda must be >= 0")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be M x N with one label per row")
    if X.shape[0] < 2 or np.unique(y).size < 2:
        raise BaselineError("linear models need both classes in the training data")
    mu = X.mean(axis=0)
    # constant columns (up to round-off in the mean) carry no signal; pin them to zero
    const = np.ptp(X, axis=0) <= 1e-12 * (1.0 + np.abs(mu))
    scale = np.sqrt(0.25 * X.var(axis=0) + l2_lambda)
    scale[const | (scale == 0)] = 1.0
    Z = (X - mu) / scale
    Z[:, const] = 0.0
    inv2 = 1.0 / scale**2
    ypm = 2.0 * y.astype(np.float64) - 1.0
    M = Z.shape[0]

    def objective(v, c):
        loss, _ = _loss_terms(ypm * (Z @ v + c), loss_kind)
        return loss.mean() + 0.5 * l2_lambda * np.sum(v * v * inv2)

    def gradient(v, c):
        _, dloss = _loss_terms(ypm * (Z @ v + c), loss_kind)
        r = dloss * ypm / M
        return Z.T @ r + l2_lambda * v * inv2, r.sum()

    v = np.zeros(X.shape[1])
    c = 0.0
    f = objective(v, c)
    trace = [f]
    t = 1.0
    it = 0
    for it in range(1, config.max_iter + 1):
        gv, gc = gradient(v, c)
        # chain rule back to (w, b): v = scale * w and c = b + mu . w
        gw = gv * scale + mu * gc
        if np.sqrt(gw @ gw + gc * gc) < config.tol:
            break
        gnorm2 = gv @ gv + gc * gc
        t = min(t * 2.0, 1e6)
        while True:
            v_new, c_new = v - t * gv, c - t * gc
            f_new = objective(v_new, c_new)
            if f_new <= f - config.armijo * t * gnorm2:
                break
            t *= 0.5
            if t < 1e-20:
                break
        if t < 1e-20 or not f_new < f:
            # no step decreases the objective: a kink of the hinge loss or round-off
            break
        v, c, f = v_new, c_new, f_new
        trace.append(f)
    w = v / scale
    b = c - float(w @ mu)
    return LinearModel(w, b, loss_kind, l2_lambda, it, trace)


def predict_linear(model: LinearModel, x) -> np.ndarray:
    """Sigmoid of the margin ``w.x + b``; works on one row or a matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.weights.shape[0]:
        raise ValueError(f"expected {model.weights.shape[0]} features, got {x.shape[-1]}")
    return sigmoid(x @ model.weights + model.bias)


class LinearClassifier(BaseEstimator, ClassifierMixin):
    def __init__(self, loss="logistic", l2_lambda=1e-2, tol=1e-6, max_iter=10_000):
        self.loss = loss
        self.l2_lambda = l2_lambda
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        self.model_ = train_linear(X, y, self.loss, self.l2_lambda,
                                   LinearConfig(self.tol, self.max_iter))
        self.classes_ = np.array([0, 1])
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return X @ self.model_.weights + self.model_.bias

    def predict_proba(self, X):
        p = sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)


# --- random forest ------------------------------------------------------------

@dataclass
class DecisionTree:
    """Flat binary tree; ``feature[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # positive-class frequency at the node

    def apply(self, X) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            n = node[rows]
            go_left = X[rows, self.feature[n]] <= self.threshold[n]
            node[rows] = np.where(go_left, self.left[n], self.right[n])
            active[rows] = self.feature[node[rows]] >= 0
        return node

    def predict_proba(self, X) -> np.ndarray:
        return self.value[self.apply(np.asarray(X, dtype=np.float64))]

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]


def _best_split(X, y, rows, features, min_leaf):
    """Lowest weighted-Gini split over ``features``: (feature, threshold, gini) or None."""
    n = rows.size
    best = None
    for f in features:
        x = X[rows, f]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        ys = y[rows][order]
        n_left = np.arange(1, n)
        pos_left = np.cumsum(ys)[:-1]
        pos_total = ys.sum()
        ok = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n - n_left >= min_leaf)
        if not ok.any():
            continue
        n_right = n - n_left
        pl = pos_left / n_left
        pr = (pos_total - pos_left) / n_right
        gini = (n_left * 2 * pl * (1 - pl) + n_right * 2 * pr * (1 - pr)) / n
        gini = np.where(ok, gini, np.inf)
        i = int(np.argmin(gini))
        if best is None or gini[i] < best[2]:
            best = (int(f), 0.5 * (xs[i] + xs[i + 1]), float(gini[i]))
    return best


def build_tree(X, y, rng, max_features: int, min_leaf: int = 2) -> DecisionTree:
    """Grow a Gini tree until nodes are pure or too small to split."""
    n_feat = X.shape[1]
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(rows):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[rows].mean()))
        return len(feature) - 1

    stack = [(new_node(np.arange(X.shape[0])), np.arange(X.shape[0]))]
    while stack:
        node, rows = stack.pop()
        p = value[node]
        if p == 0.0 or p == 1.0 or rows.size < 2 * min_leaf:
            continue
        # like CART implementations, keep drawing features while none can split
        perm = rng.permutation(n_feat)
        split = None
        for lo in range(0, n_feat, max_features):
            split = _best_split(X, y, rows, perm[lo:lo + max_features], min_leaf)
            if split is not None:
                break
        if split is None:
            continue
        f, thr, _ = split
        mask = X[rows, f] <= thr
        l_rows, r_rows = rows[mask], rows[~mask]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(l_rows)
        right[node] = new_node(r_rows)
        stack.append((right[node], r_rows))
        stack.append((left[node], l_rows))
    return DecisionTree(np.array(feature, dtype=np.int64), np.array(threshold),
                        np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                        np.array(value))


@dataclass
class ForestModel:
    trees: list[DecisionTree]
    max_trees: int = 50
    max_features: int = 1
    seed: int = 0
    val_history: list = field(default_factory=list, repr=False)

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return np.mean([t.predict_proba(X) for t in self.trees], axis=0)


def _val_score(scores, y):
    if y.min() != y.max():
        return auroc(scores, y)
    p = np.where(y == 1, scores, 1.0 - scores)
    return float(np.mean(np.log(np.clip(p, 1e-12, 1.0))))


def train_forest(X, y, X_val, y_val, seed: int = 0, max_trees: int = 50, patience: int = 5,
                 min_leaf: int = 2, max_features: int | None = None) -> ForestModel:
    """Bootstrap Gini trees with tree-count early stopping on validation AUROC.

    The returned ensemble is the prefix with the best validation score.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).ravel().astype(np.int64)
    X_val = np.asarray(X_val, dtype=np.float64)
    y_val = np.asarray(y_val).ravel().astype(np.int64)
    if np.unique(y).size < 2:
        raise BaselineError("random forest needs both classes in the training data")
    if X_val.shape[0] == 0:
        raise BaselineError("random forest needs a non-empty validation set")
    if max_trees < 1:
        raise ValueError("max_trees must be >= 1")
    m, n = X.shape
    mtry = max_features or max(1, int(np.sqrt(n)))
    rng = np.random.default_rng(seed)
    trees, history = [], []
    running = np.zeros(X_val.shape[0])
    best, best_k, since = -np.inf, 0, 0
    while len(trees) < max_trees:
        boot = rng.integers(0, m, size=m)
        if np.unique(y[boot]).size < 2:
            continue
        tree = build_tree(X[boot], y[boot], rng, mtry, min_leaf)
        trees.append(tree)
        running += tree.predict_proba(X_val)
        score = _val_score(running / len(trees), y_val)
        history.append(score)
        if score > best:
            best, best_k, since = score, len(trees), 0
        else:
            since += 1
            if since >= patience:
                break
    return ForestModel(trees[:best_k], max_trees, mtry, seed, history)


class ForestClassifier(BaseEstimator, ClassifierMixin):
    """Early-stopped random forest; needs ``eval_set`` or carves one off with ``validation_fraction``."""

    def __init__(self, max_trees=50, patience=5, min_leaf=2, max_features=None,
                 validation_fraction=0.125, seed=0):
        self.max_trees = max_trees
        self.patience = patience
        self.min_leaf = min_leaf
        self.max_features = max_features
        self.validation_fraction = validation_fraction
        self.seed = seed

    def fit(self, X, y, eval_set=None):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y).ravel()
        if eval_set is None:
            order = np.random.default_rng(self.seed).permutation(X.shape[0])
            n_val = max(1, int(round(self.validation_fraction * X.shape[0])))
            val, tr = order[:n_val], order[n_val:]
            eval_set = (X[val], y[val])
            X, y = X[tr], y[tr]
        self.model_ = train_forest(X, y, eval_set[0], eval_set[1], self.seed, self.max_trees,
                                   self.patience, self.min_leaf, self.max_features)
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        p = self.model_.predict_proba(check_array(X, dtype=np.float64))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)


# --- suite ------------------------------------------------------------------------

CLASSIFIERS = ("LR", "SVM", "RF")
DEFAULT_LAMBDAS = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)


def _fit_cell(clf, Xtr, ytr, Xva, yva, lambdas, seed):
    """Fit one classifier; returns (scorer, chosen hyperparameters)."""
    if clf == "RF":
        forest = train_forest(Xtr, ytr, Xva, yva, seed=seed)
        return forest.predict_proba, {"n_trees": len(forest.trees)}
    kind = "logistic" if clf == "LR" else "hinge"
    best = None
    for lam in lambdas:
        model = train_linear(Xtr, ytr, kind, lam)
        score = _val_score(predict_linear(model, Xva), yva)
        if best is None or score > best[0]:
            best = (score, lam, model)
    model = best[2]
    return (lambda X: predict_linear(model, X)), {"l2_lambda": best[1]}


def run_baseline_suite(cohort, emb=None, modes=("BofW", "W2vAll"), classifiers=CLASSIFIERS,
                       lambdas=DEFAULT_LAMBDAS, vocab_size: int | None = None,
                       seed: int = 0, rand_seed: int | None = None) -> list[dict]:
    """Train every (classifier x representation) cell and report test metrics."""
    if vocab_size is None:
        if emb is None:
            raise ValueError("vocab_size is required when no embedding is given")
        vocab_size = len(emb)
    splits = {}
    for name in ("train", "val", "test"):
        seqs = cohort.split(name)
        if not seqs:
            raise BaselineError(f"cohort {name} split is empty")
        splits[name] = ([s.indices for s in seqs], np.array([s.label for s in seqs]))
    rows = []
    for mode in modes:
        mode = AggregationMode(mode)
        if mode is not AggregationMode.BOFW and emb is None:
            raise BaselineError(f"{mode.value} needs an embedding")
        feat = SequenceFeaturizer(mode.value, emb, vocab_size,
                                  rand_seed=seed + 1 if rand_seed is None else rand_seed)
        feat.fit(None)
        X = {k: feat.transform(v[0]) for k, v in splits.items()}
        for clf in classifiers:
            if clf not in CLASSIFIERS:
                raise ValueError(f"unknown classifier {clf!r}")
            try:
                scorer, chosen = _fit_cell(clf, X["train"], splits["train"][1],
                                           X["val"], splits["val"][1], lambdas, seed)
                metrics = evaluate_scores(scorer(X["test"]), splits["test"][1])
            except Exception as exc:
                raise BaselineError(f"{clf} x {mode.value}: {exc}") from exc
            rows.append({"classifier": clf, "representation": mode.value, **metrics, **chosen})
    return rows


REPORT_FIELDS = ("classifier", "representation", "accuracy", "auroc", "auprc", "max_f1")


def write_suite_report(rows, json_path, csv_path=None) -> None:
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump([{k: r[k] for k in REPORT_FIELDS} for r in rows], fh, indent=2)
        fh.write("\n")
    if csv_path is not None:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["Method", "Input", "Accuracy", "AUROC", "AUPRC", "Max F1"])
            for r in rows:
                w.writerow([r["classifier"], r["representation"]] +
                           [f"{r[k]:.4f}" for k in REPORT_FIELDS[2:]])
