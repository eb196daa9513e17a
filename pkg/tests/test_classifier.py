import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sgxleak.classifier import (LSTMParams, SequenceSample, TrainConfig, dump_params, forward,
                                init_params, load_params, loss_and_grad, max_relative_error,
                                numerical_grad, predict_proba, train, training_set, zero_params)


def tiny_batch(seed, T=4):
    rng = np.random.default_rng(seed)
    return [SequenceSample(tuple(int(x) for x in rng.integers(0, T, size=rng.integers(1, 6))),
                           int(rng.integers(0, 2))) for _ in range(6)]


def test_zero_params_give_one_half():
    p = zero_params(5)
    assert forward(p, [0, 1, 2]) == 0.5
    assert forward(p, SequenceSample((4,), 1)) == 0.5


def test_sample_contract():
    with pytest.raises(ValueError):
        SequenceSample((), 1)
    with pytest.raises(ValueError):
        SequenceSample((1,), 2)
    with pytest.raises(ValueError):
        forward(init_params(3), [3])


def test_state_evolves_with_length():
    p = init_params(6, seed=2)
    assert forward(p, [1]) != forward(p, [1, 1])


@pytest.mark.parametrize("seed", range(12))
def test_gradient_matches_finite_differences(seed):
    p = init_params(4, 3, 5, seed=seed, scale=0.5)
    batch = tiny_batch(seed)
    _, g = loss_and_grad(p, batch)
    assert max_relative_error(g, numerical_grad(p, batch, step=1e-5)) <= 1e-4


def test_unused_token_embedding_gets_zero_gradient():
    p = init_params(5, 3, 4, seed=1)
    batch = [SequenceSample((0, 1, 2), 1), SequenceSample((2, 1), 0)]
    _, g = loss_and_grad(p, batch)
    assert np.all(g.embed[3:] == 0.0)
    assert np.any(g.embed[:3] != 0.0)


def test_loss_near_zero_for_confident_correct_predictions():
    p = zero_params(3, 2, 2)
    p.b_out[0] = 40.0
    loss, _ = loss_and_grad(p, [SequenceSample((0, 1), 1)])
    assert loss < 1e-15


def reference_prob(p, tokens):
    """Unbatched, unvectorized LSTM written out gate by gate."""
    h_dim = p.h
    h = np.zeros(h_dim)
    c = np.zeros(h_dim)
    sig = lambda x: 1.0 / (1.0 + np.exp(-x))
    for tok in tokens:
        z = np.concatenate([p.embed[tok], h])
        i = sig(p.W[:h_dim] @ z + p.b[:h_dim])
        f = sig(p.W[h_dim:2 * h_dim] @ z + p.b[h_dim:2 * h_dim])
        o = sig(p.W[2 * h_dim:3 * h_dim] @ z + p.b[2 * h_dim:3 * h_dim])
        g = np.tanh(p.W[3 * h_dim:] @ z + p.b[3 * h_dim:])
        c = f * c + i * g
        h = o * np.tanh(c)
    return sig(h @ p.w_out + p.b_out[0])


def test_forward_and_loss_match_reference_implementation():
    p = init_params(4, 3, 5, seed=0)
    batch = tiny_batch(0)
    probs = [reference_prob(p, s.tokens) for s in batch]
    assert predict_proba(p, [s.tokens for s in batch]) == pytest.approx(probs, rel=1e-12)
    ref = np.mean([-np.log(q) if s.label else -np.log(1 - q) for q, s in zip(probs, batch)])
    loss, _ = loss_and_grad(p, batch)
    assert loss == pytest.approx(ref, rel=1e-12)
    assert loss == pytest.approx(0.6924360270127504, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.lists(st.integers(0, 5), min_size=1, max_size=12))
def test_probability_strictly_inside_unit_interval(seed, tokens):
    p = init_params(6, seed=seed, scale=2.0)
    y = forward(p, tokens)
    assert 0.0 < y < 1.0


def _exemplars(seed, T=10, k=20):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(k):
        base = list(range(T))
        for _ in range(2):
            i = int(rng.integers(0, T - 1))
            base[i], base[i + 1] = base[i + 1], base[i]
        out.append(tuple(base))
    return out


def test_training_fits_exemplars_and_is_deterministic():
    ex = _exemplars(0)
    a = train((10, ex), TrainConfig(seed=3))
    b = train((10, ex), TrainConfig(seed=3))
    assert a.params == b.params
    assert a.converged and a.train_accuracy >= 0.95
    assert np.all(predict_proba(a.params, ex) >= 0.5)


def test_reversed_exemplar_rejected_in_most_seeded_runs():
    rejected = 0
    for seed in range(10):
        ex = _exemplars(seed)
        res = train((10, ex), TrainConfig(seed=seed))
        rejected += forward(res.params, ex[0][::-1]) < 0.5
    assert rejected >= 9


def test_negative_sampling_excludes_positives_and_respects_ratios():
    ex = _exemplars(1)
    other = [tuple(range(12))[::-1], (11, 3, 7)]
    cfg = TrainConfig(seed=0, shuffle_ratio=1.0, crosspage_ratio=1.0)
    s = training_set(ex, 10, cfg, other)
    pos = [x for x in s if x.label == 1]
    neg = [x for x in s if x.label == 0]
    assert len(pos) == 20
    assert not {x.tokens for x in neg} & set(ex)
    assert all(sorted(x.tokens) == list(range(10)) for x in neg)
    assert 30 <= len(neg) <= 40
    none = training_set(ex, 10, TrainConfig(shuffle_ratio=0.0, crosspage_ratio=0.0), other)
    assert all(x.label == 1 for x in none)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(shuffle_ratio=-1)


def test_nonconvergence_is_flagged_not_raised():
    ex = _exemplars(2)
    res = train((10, ex), TrainConfig(seed=0, epochs=1))
    assert isinstance(res.params, LSTMParams)
    assert res.epochs_run == 1


def test_params_text_roundtrip():
    p = init_params(7, 3, 4, seed=5)
    text = dump_params(p)
    assert text.startswith("ISCNET 1\nembed 7 3\n")
    assert load_params(text) == p
    with pytest.raises(ValueError):
        load_params("ISCNET 2\n")
