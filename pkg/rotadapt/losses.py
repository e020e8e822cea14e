"""
Training objectives with exact gradients.

Every loss returns its value together with the gradient with respect to its
differentiable input, so callers can push it straight into `network.backward`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .const import (
    DEFAULT_LAMBDA_MS,
    DEFAULT_LAMBDA_OC,
    DEFAULT_TAU_PRIME,
    DEFAULT_TAU_S,
    DEFAULT_TAU_T,
)
from .exceptions import InvalidArgumentError


@dataclass(frozen=True)
class LossWeights:
    """Loss weights and temperatures of the final objective."""

    lambda_oc: float = DEFAULT_LAMBDA_OC
    lambda_ms: float = DEFAULT_LAMBDA_MS
    tau_s: float = DEFAULT_TAU_S
    tau_t: float = DEFAULT_TAU_T
    tau_prime: float = DEFAULT_TAU_PRIME

    def __post_init__(self) -> None:  # noqa: D105
        for name in ("tau_s", "tau_t", "tau_prime"):
            if not getattr(self, name) > 0:
                msg = f"{name} must be > 0, got {getattr(self, name)}"
                raise InvalidArgumentError(msg)
        for name in ("lambda_oc", "lambda_ms"):
            if not getattr(self, name) >= 0:
                msg = f"{name} must be >= 0, got {getattr(self, name)}"
                raise InvalidArgumentError(msg)


@dataclass(frozen=True)
class LossAndGrad:
    """A scalar loss and its gradient."""

    value: float
    grad: np.ndarray


@dataclass(frozen=True)
class MarginSeparation:
    """L_ms = L_pos + L_neg with the gradient w.r.t. the N×V×F variant features."""

    value: float
    positive: float
    negative: float
    grad: np.ndarray


def _check_tau(tau: float) -> None:
    if not tau > 0:
        msg = f"Temperature must be > 0, got {tau}"
        raise InvalidArgumentError(msg)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def tempered_softmax(logits: np.ndarray, tau: float = 1.0) -> np.ndarray:
    """σ(p/τ) along the last axis, max-shift stabilized."""
    _check_tau(tau)
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        msg = "Logits must be finite"
        raise InvalidArgumentError(msg)
    return np.exp(_log_softmax(logits / tau))


def _check_labels(labels: np.ndarray, rows: int, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != rows:
        msg = f"Got {labels.shape[0]} labels for {rows} rows"
        raise InvalidArgumentError(msg)
    if np.any(labels < 0) or np.any(labels >= num_classes):
        msg = f"Labels must lie in [0, {num_classes})"
        raise InvalidArgumentError(msg)
    return labels


def cross_entropy_rows(logits: np.ndarray, labels: np.ndarray | int) -> tuple[np.ndarray, np.ndarray]:
    """
    Per-row cross-entropy and its per-row logit gradient (not averaged).

    Args:
        logits (np.ndarray): R×K logits.
        labels: R labels, or one label shared by every row.

    Returns:
        tuple: (R losses, R×K gradient softmax − onehot).

    """
    logits = np.asarray(logits, dtype=np.float64)
    rows, num_classes = logits.shape
    if np.isscalar(labels):
        labels = np.full(rows, int(labels))
    labels = _check_labels(np.asarray(labels), rows, num_classes)
    log_probs = _log_softmax(logits)
    losses = -log_probs[np.arange(rows), labels]
    grad = np.exp(log_probs)
    grad[np.arange(rows), labels] -= 1.0
    return losses, grad


def classification_loss(logits: np.ndarray, labels: np.ndarray) -> LossAndGrad:
    """Mean cross-entropy with a plain (τ = 1) softmax."""
    losses, grad = cross_entropy_rows(logits, labels)
    rows = losses.shape[0]
    return LossAndGrad(value=float(np.mean(losses)), grad=grad / rows)


def orientation_consistency_loss(
    student_logits: np.ndarray,
    teacher_logits: np.ndarray,
    tau_s: float = DEFAULT_TAU_S,
    tau_t: float = DEFAULT_TAU_T,
) -> LossAndGrad:
    """
    L_oc = −(1/N) Σ_m σ(p̂_m/τ_t) · log σ(p_m/τ_s).

    The teacher side is a constant; the gradient is w.r.t. the student logits.
    """
    _check_tau(tau_s)
    _check_tau(tau_t)
    student_logits = np.asarray(student_logits, dtype=np.float64)
    teacher_logits = np.asarray(teacher_logits, dtype=np.float64)
    if student_logits.shape != teacher_logits.shape or student_logits.ndim != 2:  # noqa: PLR2004
        msg = f"Shape mismatch: student {student_logits.shape}, teacher {teacher_logits.shape}"
        raise InvalidArgumentError(msg)
    rows = student_logits.shape[0]
    target = tempered_softmax(teacher_logits, tau_t)
    log_student = _log_softmax(student_logits / tau_s)
    value = -float(np.sum(target * log_student)) / rows
    grad = (np.exp(log_student) - target) / (tau_s * rows)
    return LossAndGrad(value=value, grad=grad)


def _unit(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(features, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        msg = "Zero-norm feature vector, cosine similarity undefined"
        raise InvalidArgumentError(msg)
    return features / norms, norms


def _unit_backward(dunit: np.ndarray, unit: np.ndarray, norms: np.ndarray) -> np.ndarray:
    # d(z/|z|) = (I − u uᵀ)/|z|
    return (dunit - np.sum(dunit * unit, axis=-1, keepdims=True) * unit) / norms


def positive_pair_loss(features: np.ndarray, labels: np.ndarray, tau_prime: float = DEFAULT_TAU_PRIME) -> LossAndGrad:
    """
    Pull same-class intricate variants together.

    L_pos = −(1/K') Σ_k 1/(V·(N_p^k)²) Σ_{i≠j} Σ_v cos(z_{i,v}, z_{j,1})/τ',
    where K' counts classes with at least two members in the batch. The 1/n²
    weight counts self-pairs that the i ≠ j sum skips, so two identical vectors
    of one class give −1/(2τ').

    Args:
        features (np.ndarray): N×V×F embeddings of the V intricate variants per sample.
        labels (np.ndarray): N labels.
        tau_prime (float): Similarity temperature.

    Returns:
        LossAndGrad: value and N×V×F gradient.

    """
    _check_tau(tau_prime)
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 3:  # noqa: PLR2004
        msg = f"Expected N×V×F features, got shape {features.shape}"
        raise InvalidArgumentError(msg)
    rows, variants, _ = features.shape
    labels = _check_labels(labels, rows, int(np.max(labels)) + 1 if rows else 1)
    unit, norms = _unit(features)
    dunit = np.zeros_like(unit)

    groups = [np.flatnonzero(labels == k) for k in np.unique(labels)]
    groups = [members for members in groups if members.size >= 2]  # noqa: PLR2004
    if not groups:
        return LossAndGrad(value=0.0, grad=np.zeros_like(features))

    total = 0.0
    for members in groups:
        count = members.size
        weight = -1.0 / (len(groups) * variants * count**2 * tau_prime)
        anchors = unit[members]  # n×V×F
        partners = unit[members, 0]  # n×F
        similarity = np.einsum("ivf,jf->ivj", anchors, partners)
        mask = np.broadcast_to(~np.eye(count, dtype=bool)[:, None, :], similarity.shape)
        coefficients = np.where(mask, weight, 0.0)
        total += float(np.sum(coefficients * similarity))
        dunit[members] += np.einsum("ivj,jf->ivf", coefficients, partners)
        dunit[members, 0] += np.einsum("ivj,ivf->jf", coefficients, anchors)
    return LossAndGrad(value=total, grad=_unit_backward(dunit, unit, norms))


def negative_pair_loss(features: np.ndarray, labels: np.ndarray, tau_prime: float = DEFAULT_TAU_PRIME) -> LossAndGrad:
    """
    Push different classes apart.

    L_neg = (1/K) Σ_k 1/(N_p^k · N_n^k) Σ_{i∈k} Σ_{j∉k} cos(z_i, z_j)/τ', with K the
    classes present in the batch. A single-class batch yields 0.

    Args:
        features (np.ndarray): N×F embeddings.
        labels (np.ndarray): N labels.
        tau_prime (float): Similarity temperature.

    Returns:
        LossAndGrad: value and N×F gradient.

    """
    _check_tau(tau_prime)
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:  # noqa: PLR2004
        msg = f"Expected N×F features, got shape {features.shape}"
        raise InvalidArgumentError(msg)
    rows = features.shape[0]
    labels = _check_labels(labels, rows, int(np.max(labels)) + 1 if rows else 1)
    unit, norms = _unit(features)
    present, counts = np.unique(labels, return_counts=True)
    if present.size < 2:  # noqa: PLR2004
        return LossAndGrad(value=0.0, grad=np.zeros_like(features))

    size_of = dict(zip(present.tolist(), counts.tolist(), strict=True))
    own = np.array([size_of[int(label)] for label in labels], dtype=np.float64)
    cross = labels[:, None] != labels[None, :]
    weights = np.where(cross, 1.0 / (present.size * tau_prime * own[:, None] * (rows - own[:, None])), 0.0)
    similarity = unit @ unit.T
    value = float(np.sum(weights * similarity))
    dunit = (weights + weights.T) @ unit
    return LossAndGrad(value=value, grad=_unit_backward(dunit, unit, norms))


def margin_separation_loss(
    features: np.ndarray,
    labels: np.ndarray,
    tau_prime: float = DEFAULT_TAU_PRIME,
) -> MarginSeparation:
    """
    L_ms = L_pos + L_neg over the N×V×F intricate variant features.

    L_neg uses the first variant of every sample.
    """
    features = np.asarray(features, dtype=np.float64)
    positive = positive_pair_loss(features, labels, tau_prime)
    negative = negative_pair_loss(features[:, 0, :], labels, tau_prime)
    grad = positive.grad.copy()
    grad[:, 0, :] += negative.grad
    return MarginSeparation(
        value=positive.value + negative.value,
        positive=positive.value,
        negative=negative.value,
        grad=grad,
    )


def total_loss(l_cls: float, l_oc: float, l_ms: float, weights: LossWeights) -> float:
    """L_final = L_cls + λ_oc·L_oc + λ_ms·L_ms."""
    return l_cls + weights.lambda_oc * l_oc + weights.lambda_ms * l_ms
