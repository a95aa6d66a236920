import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clbf.nn import (
    Embedding,
    ModelConfig,
    OneHot,
    TrainingError,
    closed_form_param_count,
    default_encoding,
    evaluate,
    gradient_check,
    init_model,
    train,
)


def jitter_biases(model, rng):
    # zero biases put ReLU inputs exactly on the kink for dead upstream units
    for name, p in model.params.items():
        if name.startswith("b"):
            p[:] = rng.uniform(-0.5, 0.5, size=p.shape)


def tiny_model(seed, sizes=(6, 4, 5), hidden=(5, 4), encodings=None):
    encodings = encodings or [Embedding(3), OneHot(), Embedding(2)]
    cfg = ModelConfig(hidden_layers=list(hidden), encodings=encodings, seed=seed)
    return init_model(cfg, list(sizes))


def random_batch(sizes, n, rng):
    ids = np.stack([rng.integers(0, s, n) for s in sizes], axis=1)
    return ids, rng.integers(0, 2, n)


def test_default_encoding_rule():
    assert default_encoding(64) == OneHot()
    assert default_encoding(65) == Embedding(14)
    assert default_encoding(91) == Embedding(14)
    assert default_encoding(5018) == Embedding(26)
    assert default_encoding(60001) == Embedding(32)
    assert default_encoding(65, min_dim=20) == Embedding(20)


def test_same_seed_identical_parameters():
    a, b = tiny_model(5), tiny_model(5)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    c = tiny_model(6)
    assert not np.array_equal(a.params["W1"], c.params["W1"])


def test_init_scale_and_zero_biases():
    m = tiny_model(0)
    s = math.sqrt(6 / (m.concat_width + 5))
    assert np.abs(m.params["W1"]).max() <= s
    assert not m.params["b1"].any() and not m.params["bout"].any()


def test_embedding_param_counts():
    cfg = ModelConfig(hidden_layers=[1], encodings=[Embedding(32)])
    assert init_model(cfg, [489]).embedding_param_count() == 489 * 32 == 15_648
    big = init_model(cfg, [60000])
    assert big.embedding_param_count() == 1_920_000
    mb = big.embedding_param_count() * 4 / 2**20
    assert mb == pytest.approx(7.32, abs=0.01)
    assert abs(mb - 7.8) / 7.8 < 0.10


def test_embedding_memory_bytes():
    cfg = ModelConfig(hidden_layers=[1], encodings=[Embedding(32)])
    m = init_model(cfg, [489])
    assert 4 * m.embedding_param_count() == 62_592
    assert 62_592 / 2**20 == pytest.approx(0.0597, abs=1e-4)


def test_dense_param_closed_form():
    d = 40
    cfg = ModelConfig(hidden_layers=[64], encodings=[OneHot()])
    m = init_model(cfg, [d])
    assert m.param_count() == (d + 1) * 64 + 65
    assert m.memory_bytes() == 4 * m.param_count()


@settings(max_examples=40, deadline=None)
@given(sizes=st.lists(st.integers(1, 200), min_size=1, max_size=6),
       hidden=st.lists(st.integers(1, 20), min_size=1, max_size=3), data=st.data())
def test_param_count_identity(sizes, hidden, data):
    encs = [data.draw(st.one_of(st.just(OneHot()), st.builds(Embedding, st.integers(1, 8)))) for _ in sizes]
    m = init_model(ModelConfig(hidden_layers=hidden, encodings=encs), sizes)
    assert m.param_count() == closed_form_param_count(sizes, encs, hidden)


def test_zero_weights_give_one_half():
    m = tiny_model(0)
    for p in m.params.values():
        p[:] = 0
    assert m.forward([1, 2, 3]) == 0.5


def test_hand_computed_forward():
    cfg = ModelConfig(hidden_layers=[2], encodings=[Embedding(2), Embedding(2)])
    m = init_model(cfg, [3, 3], dtype=np.float64)
    m.params["E0"][:] = [[1, 0], [0, 1], [0.5, 0.5]]
    m.params["E1"][:] = [[1, 1], [-1, 0], [0, 2]]
    m.params["W1"][:] = [[1, -1], [0.5, 0], [0, 1], [2, 0.5]]
    m.params["b1"][:] = [0.1, -0.2]
    m.params["Wout"][:] = [[1], [-2]]
    m.params["bout"][:] = [0.3]
    # ids (1, 2): concat [0, 1, 0, 2]; hidden [4.6, 0.8]; logit 4.6 - 1.6 + 0.3
    expected = 1 / (1 + math.exp(-3.3))
    assert m.forward([1, 2]) == pytest.approx(expected, abs=1e-9)
    # ids (0, 1): concat [1, 0, -1, 0]; hidden relu([1.1, -2.2]) = [1.1, 0]; logit 1.4
    assert m.forward([0, 1]) == pytest.approx(1 / (1 + math.exp(-1.4)), abs=1e-9)


def test_onehot_equals_materialized_product(rng):
    cfg = ModelConfig(hidden_layers=[3], encodings=[OneHot(), OneHot()], seed=1)
    m = init_model(cfg, [4, 3], dtype=np.float64)
    ids = np.array([[2, 1]])
    x = np.zeros(7)
    x[2] = 1
    x[4 + 1] = 1
    h = np.maximum(x @ m.params["W1"] + m.params["b1"], 0)
    logit = h @ m.params["Wout"][:, 0] + m.params["bout"][0]
    assert m.logits(ids)[0] == pytest.approx(logit, abs=1e-12)


def test_batch_permutation_invariance(rng):
    m = tiny_model(2)
    ids, _ = random_batch((6, 4, 5), 10, rng)
    p = m.predict_proba(ids)
    perm = rng.permutation(10)
    assert np.array_equal(m.predict_proba(ids[perm]), p[perm])


def test_forward_rejects_out_of_range():
    m = tiny_model(0)
    with pytest.raises(ValueError, match="out of encoding range"):
        m.forward([6, 0, 0])
    with pytest.raises(ValueError):
        m.forward([0, 0])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), data=st.data())
def test_output_strictly_inside_unit_interval(seed, data):
    m = tiny_model(seed)
    ids = [data.draw(st.integers(0, s - 1)) for s in m.input_sizes]
    assert 0.0 < m.forward(ids) < 1.0


@pytest.mark.parametrize("seed", range(10))
def test_gradient_check_random_tiny_models(seed):
    rng = np.random.default_rng(seed)
    m = tiny_model(seed)
    jitter_biases(m, rng)
    ids, y = random_batch(m.input_sizes, 8, rng)
    assert gradient_check(m, ids, y) < 1e-4


def test_gradient_check_single_layer_onehot(rng):
    m = tiny_model(3, sizes=(5, 3), hidden=(4,), encodings=[OneHot(), Embedding(2)])
    jitter_biases(m, rng)
    ids, y = random_batch(m.input_sizes, 6, rng)
    assert gradient_check(m, ids, y) < 1e-4


def test_gradient_check_at_zero_gradient():
    m = tiny_model(0)
    for p in m.params.values():
        p[:] = 0
    # all-zero weights: only the output bias has a gradient, which the
    # finite differences reproduce exactly
    assert gradient_check(m, [[0, 0, 0], [1, 1, 1]], [1, 0]) < 1e-9


def test_degenerate_training_set():
    m = tiny_model(0)
    with pytest.raises(TrainingError, match="degenerate training set"):
        train(m, np.zeros((4, 3), int), np.ones(4, int), ModelConfig())


def test_zero_learning_rate_keeps_parameters(rng):
    m = tiny_model(0)
    before = {k: v.copy() for k, v in m.params.items()}
    ids, y = random_batch(m.input_sizes, 40, rng)
    cfg = ModelConfig(learning_rate=0.0, max_epochs=6, patience=100, holdout_fraction=0)
    report = train(m, ids, y, cfg)
    assert all(np.array_equal(before[k], m.params[k]) for k in before)
    assert len(set(report.loss_history)) == 1


def separable_set():
    ids = np.array([(a, b) for a in range(10) for b in range(10)])
    return ids, (ids[:, 0] < 5).astype(int)


def logistic_oracle_accuracy(ids, y, sizes):
    x = np.zeros((len(ids), sum(sizes)))
    x[np.arange(len(ids)), ids[:, 0]] = 1
    x[np.arange(len(ids)), sizes[0] + ids[:, 1]] = 1
    w = np.zeros(x.shape[1])
    b = 0.0
    for _ in range(2000):
        p = 1 / (1 + np.exp(-(x @ w + b)))
        w -= 0.5 * x.T @ (p - y) / len(y)
        b -= 0.5 * np.mean(p - y)
    return np.mean(((x @ w + b) > 0) == y)


def test_linearly_separable_toy():
    ids, y = separable_set()
    assert logistic_oracle_accuracy(ids, y, (10, 10)) == 1.0
    cfg = ModelConfig(hidden_layers=[16], encodings=[OneHot(), OneHot()], batch_size=16,
                      learning_rate=0.05, max_epochs=50, patience=50, seed=0)
    m = init_model(cfg, [11, 11])
    report = train(m, ids, y, cfg)
    assert report.epochs_run <= 50
    assert report.accuracy_on_holdout >= 0.99


def test_xor_cooccurrence():
    pos = [(i, i) for i in range(10)]
    neg = [(i, j) for i in range(10) for j in range(10) if i != j]
    ids = np.array(pos * 9 + neg)
    y = np.array([1] * 90 + [0] * 90)
    # no single column separates the classes
    assert {a for a, _ in pos} == {a for a, _ in neg}
    cfg = ModelConfig(hidden_layers=[64], encodings=[OneHot(), OneHot()], batch_size=16,
                      learning_rate=0.05, max_epochs=150, patience=150, holdout_fraction=0, seed=0)
    m = init_model(cfg, [11, 11])
    train(m, ids, y, cfg)
    assert evaluate(m, ids, y)[1] > 0.9


def test_training_is_bitwise_deterministic(rng):
    ids, y = random_batch((6, 4, 5), 200, rng)
    cfg = ModelConfig(hidden_layers=[8], max_epochs=5, seed=4)
    losses = []
    for _ in range(2):
        m = init_model(cfg, [6, 4, 5])
        losses.append(train(m, ids, y, cfg).final_loss)
    assert losses[0] == losses[1]


def test_training_reduces_loss():
    ids, y = separable_set()
    cfg = ModelConfig(hidden_layers=[16], batch_size=16, max_epochs=30, patience=30, holdout_fraction=0)
    m = init_model(cfg, [11, 11])
    report = train(m, ids, y, cfg)
    hist = np.convolve(report.loss_history, np.ones(3) / 3, mode="valid")
    assert hist[-1] < hist[0]
