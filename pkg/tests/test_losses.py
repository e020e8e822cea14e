import math

import numpy as np
import pytest

from rotadapt.exceptions import InvalidArgumentError
from rotadapt.losses import (
    LossWeights,
    classification_loss,
    cross_entropy_rows,
    margin_separation_loss,
    negative_pair_loss,
    orientation_consistency_loss,
    positive_pair_loss,
    tempered_softmax,
    total_loss,
)

EPS = 1e-6
TAU_PRIME = 0.07
GRADIENT_CASES = 50


def _numeric_grad(function, values: np.ndarray) -> np.ndarray:
    grad = np.zeros_like(values)
    for index in np.ndindex(values.shape):
        plus = values.copy()
        minus = values.copy()
        plus[index] += EPS
        minus[index] -= EPS
        grad[index] = (function(plus) - function(minus)) / (2 * EPS)
    return grad


def test_tempered_softmax() -> None:
    probs = tempered_softmax(np.array([[1.0, 2.0, 3.0], [1000.0, 0.0, -1000.0]]), 0.5)
    assert np.allclose(probs.sum(axis=1), 1.0)
    assert probs[1, 0] == pytest.approx(1.0)
    with pytest.raises(InvalidArgumentError):
        tempered_softmax(np.zeros((1, 2)), 0.0)
    with pytest.raises(InvalidArgumentError):
        tempered_softmax(np.array([[math.nan, 0.0]]))


def test_uniform_logits_give_log_k() -> None:
    loss = classification_loss(np.zeros((3, 4)), np.array([0, 1, 3]))
    assert loss.value == pytest.approx(math.log(4))


def test_cross_entropy_shared_label() -> None:
    losses, grad = cross_entropy_rows(np.array([[0.0, 0.0], [5.0, 0.0]]), 1)
    assert losses[0] == pytest.approx(math.log(2))
    assert np.allclose(grad.sum(axis=1), 0.0)
    with pytest.raises(InvalidArgumentError):
        cross_entropy_rows(np.zeros((2, 2)), np.array([0, 2]))


def _assert_gradient(analytic: np.ndarray, numeric: np.ndarray) -> None:
    assert np.linalg.norm(analytic - numeric) <= 1e-6 * np.linalg.norm(numeric) + 1e-8


@pytest.mark.parametrize("seed", range(GRADIENT_CASES))
def test_classification_gradient(seed) -> None:
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(4, 3))
    labels = rng.integers(0, 3, size=4)
    loss = classification_loss(logits, labels)
    _assert_gradient(loss.grad, _numeric_grad(lambda values: classification_loss(values, labels).value, logits))


@pytest.mark.parametrize("seed", range(GRADIENT_CASES))
def test_consistency_gradient(seed) -> None:
    rng = np.random.default_rng(seed)
    student = rng.normal(size=(3, 4))
    teacher = rng.normal(size=(3, 4))
    loss = orientation_consistency_loss(student, teacher, 0.5, 0.3)
    numeric = _numeric_grad(lambda values: orientation_consistency_loss(values, teacher, 0.5, 0.3).value, student)
    _assert_gradient(loss.grad, numeric)


@pytest.mark.parametrize("seed", range(GRADIENT_CASES))
def test_positive_pair_gradient(seed) -> None:
    features = np.random.default_rng(seed).normal(size=(5, 2, 6))
    labels = np.array([0, 0, 1, 1, 1])
    loss = positive_pair_loss(features, labels, TAU_PRIME)
    numeric = _numeric_grad(lambda values: positive_pair_loss(values, labels, TAU_PRIME).value, features)
    _assert_gradient(loss.grad, numeric)


@pytest.mark.parametrize("seed", range(GRADIENT_CASES))
def test_negative_pair_gradient(seed) -> None:
    features = np.random.default_rng(seed).normal(size=(5, 6))
    labels = np.array([0, 1, 2, 0, 1])
    loss = negative_pair_loss(features, labels, TAU_PRIME)
    numeric = _numeric_grad(lambda values: negative_pair_loss(values, labels, TAU_PRIME).value, features)
    _assert_gradient(loss.grad, numeric)


def test_consistency_is_stationary_at_teacher() -> None:
    logits = np.random.default_rng(2).normal(size=(5, 3))
    loss = orientation_consistency_loss(logits, logits, 0.5, 0.5)
    assert np.allclose(loss.grad, 0.0)
    target = tempered_softmax(logits, 0.5)
    assert loss.value == pytest.approx(-np.sum(target * np.log(target)) / 5)


def test_consistency_is_smallest_when_distributions_match() -> None:
    rng = np.random.default_rng(7)
    teacher = rng.normal(size=(4, 3))
    # σ(p/τ_s) equals σ(p̂/τ_t) when p = p̂·τ_s/τ_t
    matched = orientation_consistency_loss(teacher * 0.5 / 0.3, teacher, 0.5, 0.3)
    assert np.allclose(matched.grad, 0.0, atol=1e-12)
    for _ in range(50):
        other = orientation_consistency_loss(rng.normal(scale=3.0, size=(4, 3)), teacher, 0.5, 0.3)
        assert other.value >= matched.value - 1e-12


def test_consistency_shape_mismatch() -> None:
    with pytest.raises(InvalidArgumentError):
        orientation_consistency_loss(np.zeros((2, 3)), np.zeros((3, 3)))


def test_positive_pair_identical_features() -> None:
    features = np.ones((2, 1, 4))
    loss = positive_pair_loss(features, np.array([0, 0]), TAU_PRIME)
    assert loss.value == pytest.approx(-0.5 / TAU_PRIME)
    assert loss.value == pytest.approx(-7.142857142857142)
    assert np.allclose(loss.grad, 0.0)


def test_positive_pair_without_partners() -> None:
    loss = positive_pair_loss(np.ones((2, 3, 4)), np.array([0, 1]), TAU_PRIME)
    assert loss.value == 0.0
    assert not np.any(loss.grad)


@pytest.mark.parametrize(
    ("features", "expected"),
    [
        (np.array([[1.0, 0.0], [0.0, 1.0]]), 0.0),
        (np.array([[1.0, 0.0], [-2.0, 0.0]]), -1.0 / TAU_PRIME),
        (np.array([[1.0, 1.0], [3.0, 3.0]]), 1.0 / TAU_PRIME),
    ],
)
def test_negative_pair_two_classes(features, expected) -> None:
    assert negative_pair_loss(features, np.array([0, 1]), TAU_PRIME).value == pytest.approx(expected)


def test_negative_pair_single_class() -> None:
    loss = negative_pair_loss(np.ones((3, 4)), np.array([1, 1, 1]), TAU_PRIME)
    assert loss.value == 0.0


@pytest.mark.parametrize("seed", range(GRADIENT_CASES))
def test_margin_separation_gradient(seed) -> None:
    features = np.random.default_rng(seed).normal(size=(5, 2, 6))
    labels = np.array([0, 0, 1, 1, 1])
    loss = margin_separation_loss(features, labels, TAU_PRIME)
    assert loss.value == pytest.approx(loss.positive + loss.negative)
    numeric = _numeric_grad(lambda values: margin_separation_loss(values, labels, TAU_PRIME).value, features)
    _assert_gradient(loss.grad, numeric)


def test_zero_feature_rejected() -> None:
    with pytest.raises(InvalidArgumentError):
        negative_pair_loss(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([0, 1]))


def test_total_loss() -> None:
    weights = LossWeights(lambda_oc=0.01, lambda_ms=0.01)
    assert total_loss(1.0, 2.0, 3.0, weights) == pytest.approx(1.05)


@pytest.mark.parametrize(
    "changes",
    [
        {"tau_s": 0.0},
        {"tau_t": -1.0},
        {"tau_prime": 0.0},
        {"lambda_oc": -0.1},
    ],
)
def test_loss_weights_rejects(changes) -> None:
    with pytest.raises(InvalidArgumentError):
        LossWeights(**changes)


def test_softmax_shift_invariance() -> None:
    logits = np.random.default_rng(4).normal(size=(3, 5))
    assert np.allclose(tempered_softmax(logits, 0.5), tempered_softmax(logits + 12.5, 0.5), rtol=0.0, atol=1e-12)


def test_pair_losses_ignore_feature_scale() -> None:
    rng = np.random.default_rng(5)
    features = rng.normal(size=(4, 2, 6))
    labels = np.array([0, 0, 1, 1])
    scaled = features.copy()
    scaled[2, 1] *= 7.3
    assert positive_pair_loss(scaled, labels).value == pytest.approx(positive_pair_loss(features, labels).value, abs=1e-9)
    scaled[1, 0] *= 7.3
    assert negative_pair_loss(scaled[:, 0], labels).value == pytest.approx(
        negative_pair_loss(features[:, 0], labels).value, abs=1e-9
    )
