import numpy as np
import pytest

from burstwall.autoencoder import (AutoencoderModel, Ensemble, calibrate_threshold, default_arch,
                                   ensemble_label, init_autoencoder, train_autoencoder, train_ensemble,
                                   vote_label)


def numeric_grad_check(model, Z, eps=1e-6):
    """Largest relative error between analytic and central-difference gradients."""
    _, gW, gb = model.loss_and_grads(Z)
    worst = 0.0
    for params, grads in ((model.weights, gW), (model.biases, gb)):
        for P, G in zip(params, grads):
            for idx in np.ndindex(P.shape):
                old = P[idx]
                P[idx] = old + eps
                up = model.loss_and_grads(Z)[0]
                P[idx] = old - eps
                down = model.loss_and_grads(Z)[0]
                P[idx] = old
                num = (up - down) / (2 * eps)
                denom = max(abs(num), abs(G[idx]), 1e-8)
                worst = max(worst, abs(num - G[idx]) / denom)
    return worst


def test_default_architecture():
    assert default_arch(8) == [8, 4, 2, 4, 8]
    assert default_arch(3) == [3, 2, 1, 2, 3]


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    X = rng.uniform(size=(20, 5))
    model = init_autoencoder(X, seed=1)
    assert numeric_grad_check(model, model.normalize(X)) < 1e-4


def test_normalisation_is_clamped():
    X = np.array([[0.0, 10.0], [10.0, 20.0]])
    model = init_autoencoder(X)
    Z = model.normalize([[-5.0, 30.0]])
    assert Z.tolist() == [[0.0, 1.0]]


def test_training_reduces_loss():
    rng = np.random.default_rng(1)
    z = rng.uniform(size=(500, 1))
    X = np.hstack([z, 2 * z, 1 - z])
    model = init_autoencoder(X, seed=0)
    before = model.loss_and_grads(model.normalize(X))[0]
    trained = train_autoencoder(X, epochs=40, seed=0)
    assert trained.loss_and_grads(trained.normalize(X))[0] < 0.2 * before


def test_threshold_is_empirical_quantile():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(300, 4))
    model = train_autoencoder(X, epochs=5)
    V = rng.normal(size=(1000, 4))
    T = calibrate_threshold(model, V, 0.05)
    assert np.mean(model.reconstruction_error(V) > T) <= 0.05
    assert np.mean(model.reconstruction_error(V) >= T) >= 0.05


def test_vote_label_needs_strict_majority():
    w = np.array([0.5, 0.5])
    assert vote_label([[1, 0], [1, 1], [0, 0]], w).tolist() == [0, 1, 0]


def test_ensemble_weights_are_validated():
    X = np.random.default_rng(3).normal(size=(50, 3))
    m = train_autoencoder(X, epochs=1)
    m.threshold = 1.0
    with pytest.raises(ValueError):
        Ensemble([m, m], np.array([0.7, 0.7]))
    with pytest.raises(ValueError):
        Ensemble([])


def test_ensemble_round_trip():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(200, 4))
    ens = train_ensemble(X, X, r=3, epochs=3)
    back = Ensemble.from_json(ens.to_json())
    assert np.allclose(back.errors(X), ens.errors(X))
    assert np.array_equal(ensemble_label(back, X)[0], ensemble_label(ens, X)[0])
    assert AutoencoderModel.from_json(ens.members[0].to_json()).threshold == ens.members[0].threshold
