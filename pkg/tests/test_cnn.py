import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ehrcnn.checkpoint import CheckpointError, MAGIC, load_model, save_model
from ehrcnn.cnn import (PAD, CnnConfig, Conv1dBank, GeometryError, InputMode, conv1d_forward,
                        forward, forward_batch, init_model, loss_and_grads, max_pool_time)

MODES = [m.value for m in InputMode]


def small_model(mode="Rand", V=12, D=4, K=3, sizes=(2, 3), seed=0):
    cfg = CnnConfig(input_mode=mode, filter_sizes=sizes, filter_count=K, embed_dim=D, seed=seed)
    pre = np.random.default_rng(seed + 100).normal(scale=0.5, size=(V, D))
    return init_model(cfg, V, pre if InputMode(mode).needs_pretrained else None)


def conv_oracle(X, W, b):
    T, F = X.shape[0], W.shape[1]
    out = np.zeros((T - F + 1, W.shape[0]))
    for t in range(T - F + 1):
        for k in range(W.shape[0]):
            out[t, k] = b[k] + np.sum(W[k] * X[t:t + F])
    return out


# --- convolution --------------------------------------------------------------------

def test_conv_length_example():
    bank = Conv1dBank(np.zeros((2, 3, 5)), np.zeros(2))
    out = conv1d_forward(np.ones((250, 5)), bank)
    assert out.shape == (248, 2) and not out.any()


def test_conv_scalar_example():
    bank = Conv1dBank(np.full((1, 1, 1), 2.0), np.zeros(1))
    np.testing.assert_array_equal(conv1d_forward(np.array([[1.0], [2.0], [3.0]]), bank)[:, 0], [2, 4, 6])


def test_conv_too_short():
    with pytest.raises(GeometryError):
        conv1d_forward(np.zeros((2, 1)), Conv1dBank(np.zeros((1, 3, 1)), np.zeros(1)))


@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(0, 10))
def test_conv_matches_direct_sum(seed, F, extra):
    rng = np.random.default_rng(seed)
    W, b = rng.normal(size=(3, F, 2)), rng.normal(size=3)
    X = rng.normal(size=(F + extra, 2))
    np.testing.assert_allclose(conv1d_forward(X, Conv1dBank(W, b)), conv_oracle(X, W, b), atol=1e-12)


# --- pooling ----------------------------------------------------------------------

def test_pool_examples():
    pooled, _ = max_pool_time(np.full((4, 3), 1.5))
    np.testing.assert_array_equal(pooled, [1.5] * 3)
    pooled, am = max_pool_time(np.array([[1.0, 5.0], [3.0, 2.0]]))
    np.testing.assert_array_equal(pooled, [3, 5])
    np.testing.assert_array_equal(am, [1, 0])
    pooled, _ = max_pool_time(np.array([[9.0, 1.0], [3.0, 2.0], [4.0, 0.0]]), [False, True, True])
    np.testing.assert_array_equal(pooled, [4, 2])
    with pytest.raises(ValueError):
        max_pool_time(np.zeros((2, 2)), [False, False])


def test_pool_earliest_argmax_on_ties():
    _, am = max_pool_time(np.array([[1.0], [2.0], [2.0]]))
    assert am[0] == 1


@given(st.integers(0, 2**32 - 1), st.integers(1, 8), st.integers(1, 5))
def test_pool_dominance(seed, L, K):
    rng = np.random.default_rng(seed)
    Y = rng.normal(size=(L, K))
    base, _ = max_pool_time(Y)
    t, k = rng.integers(L), rng.integers(K)
    Y2 = Y.copy()
    Y2[t, k] = base[k] + 1.0
    new, _ = max_pool_time(Y2)
    changed = np.flatnonzero(new != base)
    assert changed.tolist() == [k]


# --- forward ------------------------------------------------------------------------

@pytest.mark.parametrize("mode", MODES)
def test_forward_probabilities(mode):
    m = small_model(mode)
    rng = np.random.default_rng(1)
    for T in (1, 2, 5, 17):
        p = forward(m, rng.integers(0, 12, size=T))
        assert p.shape == (2,) and np.all((p > 0) & (p < 1))
        assert abs(p.sum() - 1.0) <= 1e-12


def test_zero_dense_gives_half():
    m = small_model("Raw")
    m.dense_weight[...] = 0
    m.dense_bias[...] = 0
    np.testing.assert_array_equal(forward(m, [1, 2, 3, 4]), [0.5, 0.5])


@pytest.mark.parametrize("mode", MODES)
def test_ten_pads_identical(mode):
    m = small_model(mode)
    seq = [3, 1, 4, 1, 5, 9, 2, 6]
    assert np.array_equal(forward(m, seq), forward(m, seq + [PAD] * 10))


def test_batch_matches_single():
    m = small_model("Both")
    rng = np.random.default_rng(2)
    seqs = [rng.integers(0, 12, size=n) for n in (1, 4, 9, 20)]
    batch = forward_batch(m, seqs)
    for s, p in zip(seqs, batch):
        np.testing.assert_allclose(p, forward(m, s), atol=1e-12, rtol=0)


def test_forward_errors():
    m = small_model()
    with pytest.raises(ValueError):
        forward(m, [])
    with pytest.raises(ValueError):
        forward(m, [PAD, PAD])
    with pytest.raises(ValueError):
        forward(m, [1, PAD, 2])
    with pytest.raises(ValueError):
        forward(m, [12])


def test_defaults_give_300_features():
    m = init_model(CnnConfig(input_mode="Rand", embed_dim=8), vocab_size=5)
    assert [b.filter_size for b in m.banks] == [3, 4, 5]
    assert [b.filter_count for b in m.banks] == [100] * 3
    assert m.dense_weight.shape == (300, 2)


def test_init_scales():
    m = small_model("Rand", V=50, D=10, K=6, sizes=(3,))
    assert np.all(np.abs(m.table) <= 0.05)
    limit = np.sqrt(6.0 / (3 * 10 + 6))
    assert np.all(np.abs(m.banks[0].weights) <= limit)
    assert not m.banks[0].bias.any()


def test_both_mode_input_width():
    m = small_model("Both", D=4)
    assert m.input_dim == 8 and m.banks[0].weights.shape[2] == 8
    np.testing.assert_array_equal(m.frozen, m.table)
    assert m.frozen is not m.table


def test_pretrained_required():
    with pytest.raises(ValueError):
        init_model(CnnConfig(input_mode="W2vFixed", embed_dim=4), 5)


# --- backward ---------------------------------------------------------------------

def test_fixed_mode_has_no_embedding_gradient():
    m = small_model("W2vFixed")
    _, g = loss_and_grads(m, [[1, 2, 3]], [1])
    assert "embedding" not in g and "embedding" not in m.params()


def test_doubling_weight_in_size_one_batch():
    m = small_model("Rand")
    _, g1 = loss_and_grads(m, [[1, 2, 3, 4]], [0], weights=[1.0])
    _, g2 = loss_and_grads(m, [[1, 2, 3, 4]], [0], weights=[2.0])
    for k in g1:
        np.testing.assert_array_equal(g1[k], g2[k])


def test_gradient_shapes_match_params():
    m = small_model("Both")
    _, g = loss_and_grads(m, [[1, 2], [3, 4, 5, 6, 7]], [0, 1])
    assert set(g) == set(m.params())
    for k, p in m.params().items():
        assert g[k].shape == p.shape


# --- checkpoint -------------------------------------------------------------------

@pytest.mark.parametrize("mode", MODES)
def test_checkpoint_round_trip(tmp_path, mode):
    m = small_model(mode)
    save_model(m, tmp_path / "m.ckpt")
    back = load_model(tmp_path / "m.ckpt")
    assert back.input_mode is m.input_mode
    for k, p in m.params().items():
        assert np.array_equal(back.params()[k], p)
    seq = [1, 5, 2, 7]
    assert np.array_equal(forward(back, seq), forward(m, seq))
    raw = (tmp_path / "m.ckpt").read_bytes()
    assert raw.startswith(MAGIC) and MAGIC == b"EHRCNN1\0"
    assert (tmp_path / "m.ckpt.json").exists()


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "bad.ckpt").write_bytes(b"NOTAMODEL" + bytes(40))
    with pytest.raises(CheckpointError):
        load_model(tmp_path / "bad.ckpt")
    m = small_model()
    save_model(m, tmp_path / "m.ckpt")
    data = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "cut.ckpt").write_bytes(data[:-8])
    with pytest.raises(CheckpointError):
        load_model(tmp_path / "cut.ckpt")
