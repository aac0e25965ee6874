import numpy as np
import pytest
from hypothesis import given, strategies as st

from fedaudit.model import (
    HyperParams, ModelError, ModelWeights, add_dp_noise, f1_eval, f1_from_counts, f1_micro,
    gradient, laplace_scale, objective, predict, train_logistic,
)
from fedaudit.dataset import Dataset


def toy():
    x = np.r_[np.zeros(50), np.ones(50)][:, None]
    return Dataset(x, np.r_[np.zeros(50), np.ones(50)].astype(int))


def test_epochs_zero_returns_init(synth):
    init = ModelWeights(np.full(synth.n_features, 0.1), -0.2)
    assert train_logistic(synth, init, HyperParams(epochs=0)) == init


def test_separable_toy_reaches_full_accuracy():
    ds = toy()
    m = train_logistic(ds, ModelWeights.zeros(1), HyperParams(alpha=0.01, eta=0.5, epochs=500))
    assert np.mean(predict(m, ds.features) == ds.labels) == 1.0


def test_objective_decreases_with_small_step(synth):
    hp = HyperParams(eta=0.01, epochs=1)
    m = ModelWeights.zeros(synth.n_features)
    x, y = synth.features, synth.labels.astype(float)
    prev = objective(m.vector(), x, y, hp.alpha)
    for _ in range(20):
        m = train_logistic(synth, m, hp)
        cur = objective(m.vector(), x, y, hp.alpha)
        assert cur <= prev
        prev = cur


def central_difference(f, theta, h=1e-6):
    g = np.empty_like(theta)
    for i in range(len(theta)):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def test_gradient_matches_finite_differences(rng):
    for _ in range(20):
        x = rng.random((40, 5))
        y = (rng.random(40) < 0.5).astype(float)
        theta = rng.normal(0, 1, 6)
        num = central_difference(lambda t: objective(t, x, y, 0.7), theta)
        ana = gradient(theta, x, y, 0.7)
        assert np.linalg.norm(ana - num) <= 1e-5 * max(1.0, np.linalg.norm(num))


def test_predict_ties_go_positive():
    x = np.random.default_rng(0).random((5, 3))
    assert predict(ModelWeights.zeros(3), x).tolist() == [1] * 5
    assert predict(ModelWeights(np.zeros(3), 10.0), x).tolist() == [1] * 5
    assert predict(ModelWeights(np.zeros(3), -10.0), x).tolist() == [0] * 5


def test_laplace_scale():
    assert laplace_scale(1000, 1.0, 0.01) == pytest.approx(0.2)
    with pytest.raises(ModelError):
        laplace_scale(0, 1.0, 0.1)


def test_noise_variance():
    # d=1000, alpha=1, eps=0.01 -> lambda=0.2, variance 2*lambda^2 = 0.08
    m = ModelWeights.zeros(999_999)
    noisy = add_dp_noise(m, 1000, 1.0, 0.01, seed=4).vector()
    assert abs(noisy.var() - 0.08) <= 0.05 * 0.08


def test_huge_epsilon_is_nearly_identity():
    m = ModelWeights(np.array([0.3, -0.2]), 0.1)
    out = add_dp_noise(m, 100, 1.0, 1e9, seed=0)
    assert np.allclose(out.vector(), m.vector(), atol=1e-6, rtol=0)


def test_noise_touches_bias():
    out = add_dp_noise(ModelWeights.zeros(2), 10, 1.0, 0.1, seed=0)
    assert out.bias != 0.0


@pytest.mark.parametrize("counts, expected", [((1, 1, 1), 0.5), ((5, 0, 0), 1.0), ((0, 3, 3), 0.0),
                                              ((0, 0, 0), 1.0)])
def test_f1_from_counts(counts, expected):
    assert f1_from_counts(*counts) == expected


def test_f1_perfect_and_wrong():
    ds = toy()
    good = ModelWeights(np.array([10.0]), -5.0)
    bad = ModelWeights(np.array([-10.0]), 5.0)
    assert f1_eval(good, ds) == 1.0 and f1_eval(bad, ds) == 0.0
    assert f1_micro(good, ds) == 1_000_000 and f1_micro(bad, ds) == 0


def test_f1_micro_matches_float(synth, rng):
    for _ in range(20):
        m = ModelWeights(rng.normal(0, 1, synth.n_features), rng.normal())
        assert abs(f1_micro(m, synth) - f1_eval(m, synth) * 1e6) <= 0.5 + 1e-6


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=20),
       st.floats(-1e6, 1e6, allow_nan=False))
def test_model_bytes_round_trip(w, b):
    m = ModelWeights(np.array(w), b)
    blob = m.to_bytes()
    assert len(blob) == 8 + 8 * (len(w) + 1)
    assert ModelWeights.from_bytes(blob) == m
    assert blob[-8:] == np.float64(b).tobytes()


def test_model_bytes_bad_length():
    blob = ModelWeights.zeros(3).to_bytes()
    with pytest.raises(ModelError):
        ModelWeights.from_bytes(blob[:-1])
    with pytest.raises(ModelError):
        ModelWeights.from_bytes(b"")


def test_non_finite_weights_rejected():
    with pytest.raises(ModelError):
        ModelWeights(np.array([np.nan]), 0.0)
