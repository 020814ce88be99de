import numpy as np
import pytest

from ehrcnn.cnn import CnnConfig, init_model, loss_and_grads
from ehrcnn.cohort import CohortDataset, LabeledSequence
from ehrcnn.metrics import auroc
from ehrcnn.optim import NumericalError
from ehrcnn.training import (CnnRiskClassifier, TrainConfig, fit_cnn, gradient_check,
                             predict_proba, train_cnn)


def toy(rng, n, marker=7, V=10):
    seqs, y = [], []
    for i in range(n):
        s = rng.integers(0, marker, size=rng.integers(6, 15))
        if i % 2:
            s[rng.integers(len(s))] = marker
        seqs.append(s)
        y.append(i % 2)
    return seqs, np.array(y)


def as_cohort(seqs, y):
    items = [LabeledSequence(f"p{i}", int(l), tuple(int(v) for v in s), tuple(range(len(s))))
             for i, (s, l) in enumerate(zip(seqs, y))]
    n = len(items)
    return CohortDataset(items[:int(0.7 * n)], items[int(0.7 * n):int(0.8 * n)], items[int(0.8 * n):])


def test_separable_toy_reaches_full_training_accuracy():
    rng = np.random.default_rng(0)
    seqs, y = toy(rng, 80)
    ds = as_cohort(seqs, y)
    X = [s.indices for s in ds.train]
    y_tr = np.array([s.label for s in ds.train])
    m = init_model(CnnConfig("Rand", (3, 4, 5), 100, 50, seed=1), 10)
    accs = []
    for epoch in range(20):
        m, _ = fit_cnn(m, X, y_tr, X, y_tr, TrainConfig(batch_size=8, max_epochs=1, patience=1, seed=epoch))
        accs.append(np.mean((predict_proba(m, X) >= 0.5) == y_tr))
    assert max(accs) == 1.0


def test_gradient_vanishes_at_convergence():
    rng = np.random.default_rng(3)
    seqs, y = toy(rng, 24)
    m = init_model(CnnConfig("Rand", (2,), 4, 4, seed=0), 10)
    for epoch in range(200):
        model, _ = fit_cnn(m, seqs, y, seqs, y, TrainConfig(batch_size=24, max_epochs=1, patience=1))
        if np.all((predict_proba(model, seqs) >= 0.5) == y):
            break
    assert np.all((predict_proba(model, seqs) >= 0.5) == y)
    # separable data: the optimum lies at infinity along the separating ray of the output layer
    w0, b0 = model.dense_weight.copy(), model.dense_bias.copy()
    prev = np.inf
    for c in 2.0 ** np.arange(0, 24):
        model.dense_weight[...] = c * w0
        model.dense_bias[...] = c * b0
        loss, g = loss_and_grads(model, seqs, y)
        assert loss <= prev
        prev = loss
        norm = np.sqrt(sum(float(np.sum(v * v)) for v in g.values()))
        if norm < 1e-6:
            break
    assert norm < 1e-6


def test_training_determinism():
    rng = np.random.default_rng(4)
    seqs, y = toy(rng, 40)
    ds = as_cohort(seqs, y)
    mc, tc = CnnConfig("Raw", (2, 3), 5, 4, seed=9), TrainConfig(batch_size=4, max_epochs=4, patience=4, seed=5)
    a, ha = train_cnn(ds, mc, tc, vocab_size=10)
    b, hb = train_cnn(ds, mc, tc, vocab_size=10)
    assert ha == hb
    for k in a.params():
        assert np.array_equal(a.params()[k], b.params()[k])


def test_best_parameters_restored():
    rng = np.random.default_rng(6)
    seqs, y = toy(rng, 40)
    m = init_model(CnnConfig("Rand", (2,), 4, 4, seed=0), 10)
    model, hist = fit_cnn(m, seqs[:30], y[:30], seqs[30:], y[30:],
                          TrainConfig(batch_size=5, max_epochs=12, patience=3))
    best = max(h["val_auroc"] for h in hist)
    assert auroc(predict_proba(model, seqs[30:]), y[30:]) == best


def test_divergence_reports_epoch():
    rng = np.random.default_rng(0)
    seqs, y = toy(rng, 10)
    m = init_model(CnnConfig("Rand", (2,), 2, 2, seed=0), 10)
    m.dense_weight[...] = np.nan
    with pytest.raises(NumericalError, match="epoch 1"):
        fit_cnn(m, seqs, y, seqs, y, TrainConfig(max_epochs=2, patience=1))


@pytest.mark.parametrize("mode", ["Rand", "Raw", "W2vFixed", "W2vFinetune", "Both"])
@pytest.mark.parametrize("label", [0, 1])
def test_gradient_check_tiny_model(mode, label):
    pre = np.random.default_rng(5).normal(size=(10, 4))
    m = init_model(CnnConfig(mode, (2,), 3, 4, seed=0), 10, pre)
    seq = np.random.default_rng(1).integers(0, 10, size=6)
    assert gradient_check(m, (seq, label)) < 1e-4


def test_gradient_check_skips_frozen_table():
    pre = np.random.default_rng(0).normal(size=(10, 4))
    m = init_model(CnnConfig("W2vFixed", (2,), 3, 4, seed=0), 10, pre)
    _, groups = gradient_check(m, ([1, 2, 3, 4], 0), details=True)
    assert "embedding" not in groups


@pytest.mark.parametrize("step", [0.0, -1e-5])
def test_gradient_check_rejects_bad_step(step):
    m = init_model(CnnConfig("Rand", (2,), 3, 4, seed=0), 10)
    with pytest.raises(ValueError):
        gradient_check(m, ([1, 2, 3], 0), step=step)


def test_train_config_invariants():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0).validate()
    with pytest.raises(ValueError):
        TrainConfig(max_epochs=5, patience=6).validate()


def test_estimator():
    rng = np.random.default_rng(8)
    seqs, y = toy(rng, 60)
    clf = CnnRiskClassifier(input_mode="Rand", filter_count=100, embed_dim=50,
                            vocab_size=10, max_epochs=15, patience=15, batch_size=8, seed=1)
    assert clf.get_params()["filter_count"] == 100
    clf.fit(seqs, y)
    assert clf.predict_proba(seqs).shape == (60, 2)
    assert auroc(clf.decision_function(seqs), y) >= 0.9
    assert set(clf.predict(seqs)) <= {0, 1}
