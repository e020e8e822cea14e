"""
Shared-MLP / max-pool point cloud classifier with an explicit reverse pass.

Per-point MLP 3→64→64→128 (ReLU), max pool over points, head 128→64→K.
Features are the pooled 128-vectors, logits are the head outputs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .const import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPS,
    DEFAULT_LR0,
    DEFAULT_LR_BETA,
    DEFAULT_LR_GAMMA,
    DEFAULT_WEIGHT_DECAY,
    FEATURE_DIM,
    HEAD_HIDDEN,
    PARAM_NAMES,
    POINT_MLP_WIDTHS,
)
from .data import PointCloud
from .exceptions import InvalidArgumentError, InvalidStateError

if TYPE_CHECKING:
    from collections.abc import Callable, Iterator, Sequence

_LOGGER = logging.getLogger(__name__)


def layer_shapes(num_classes: int) -> dict[str, tuple[int, ...]]:
    """Shapes of every named parameter for a K-class model."""
    d_in, h1, h2, feat = POINT_MLP_WIDTHS
    return {
        "w1": (d_in, h1),
        "b1": (h1,),
        "w2": (h1, h2),
        "b2": (h2,),
        "w3": (h2, feat),
        "b3": (feat,),
        "w4": (feat, HEAD_HIDDEN),
        "b4": (HEAD_HIDDEN,),
        "w5": (HEAD_HIDDEN, num_classes),
        "b5": (num_classes,),
    }


class ModelParams:
    """
    Named parameter arrays of the encoder E and classifier C.

    Instances are treated as immutable: arrays are read-only and every update
    returns a new instance. Only names starting with ``w`` are weights; the rest
    are biases.
    """

    def __init__(self, arrays: dict[str, np.ndarray]) -> None:  # noqa: D107
        frozen: dict[str, np.ndarray] = {}
        for name, value in arrays.items():
            array = np.array(value, dtype=np.float64)
            array.flags.writeable = False
            frozen[name] = array
        self._arrays = frozen

    def __getitem__(self, name: str) -> np.ndarray:  # noqa: D105
        return self._arrays[name]

    def __iter__(self) -> Iterator[str]:  # noqa: D105
        return iter(self._arrays)

    def __len__(self) -> int:  # noqa: D105
        return len(self._arrays)

    def __repr__(self) -> str:  # noqa: D105
        shapes = ", ".join(f"{name}={array.shape}" for name, array in self._arrays.items())
        return f"ModelParams({shapes})"

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        """Iterate (name, array) pairs in insertion order."""
        return iter(self._arrays.items())

    @property
    def num_classes(self) -> int:
        """Head output dimension K."""
        return int(self._arrays["b5"].shape[0])

    def map(self, function: Callable[[str, np.ndarray], np.ndarray]) -> ModelParams:
        """Apply a function to every array, returning a new instance."""
        return ModelParams({name: function(name, array) for name, array in self._arrays.items()})

    def zeros_like(self) -> ModelParams:
        """Same shapes, all zeros."""
        return self.map(lambda _name, array: np.zeros_like(array))

    def copy(self) -> ModelParams:
        """Independent copy."""
        return self.map(lambda _name, array: array.copy())

    def is_finite(self) -> bool:
        """True when every entry is finite."""
        return all(bool(np.all(np.isfinite(array))) for array in self._arrays.values())

    def validate(self) -> None:
        """Check layer names and shapes against the configured K."""
        expected = layer_shapes(self.num_classes)
        if tuple(self._arrays) != PARAM_NAMES:
            msg = f"Parameter names {tuple(self._arrays)} do not match {PARAM_NAMES}"
            raise InvalidArgumentError(msg)
        for name, shape in expected.items():
            if self._arrays[name].shape != shape:
                msg = f"Parameter {name} has shape {self._arrays[name].shape}, expected {shape}"
                raise InvalidArgumentError(msg)
        if not self.is_finite():
            msg = "Parameters contain non-finite entries"
            raise InvalidArgumentError(msg)

    def allclose(self, other: ModelParams, atol: float = 0.0) -> bool:
        """Element-wise comparison of two parameter sets."""
        if tuple(self) != tuple(other):
            return False
        return all(np.allclose(self[name], other[name], rtol=0.0, atol=atol) for name in self)


def init_params(seed: int, num_classes: int) -> ModelParams:
    """
    Initialize a K-class model deterministically from a seed.

    Weights are drawn from U(−1/√fan_in, 1/√fan_in), biases are zero.
    """
    if num_classes < 2:  # noqa: PLR2004
        msg = f"Need at least 2 classes, got {num_classes}"
        raise InvalidArgumentError(msg)
    rng = np.random.default_rng(seed)
    arrays: dict[str, np.ndarray] = {}
    for name, shape in layer_shapes(num_classes).items():
        if name.startswith("w"):
            bound = 1.0 / math.sqrt(shape[0])
            arrays[name] = rng.uniform(-bound, bound, size=shape)
        else:
            arrays[name] = np.zeros(shape)
    return ModelParams(arrays)


@dataclass(frozen=True)
class ForwardCache:
    """Intermediate values of one batched forward pass."""

    params: ModelParams
    inputs: np.ndarray
    point_counts: tuple[int, ...]
    pre1: np.ndarray
    act1: np.ndarray
    pre2: np.ndarray
    act2: np.ndarray
    pre3: np.ndarray
    act3: np.ndarray
    argmax: np.ndarray
    features: np.ndarray
    pre4: np.ndarray
    act4: np.ndarray

    @property
    def batch_size(self) -> int:
        """Number of clouds in the batch."""
        return len(self.point_counts)


@dataclass(frozen=True)
class ForwardResult:
    """Outputs of `forward`."""

    features: np.ndarray
    logits: np.ndarray
    cache: ForwardCache


def _stack(clouds: Sequence[PointCloud | np.ndarray]) -> tuple[np.ndarray, tuple[int, ...]]:
    """
    Stack clouds into a B×N×3 array.

    Shorter clouds are padded with copies of their first point. Max-pool ties go
    to the lowest index, so padding never wins the pool and gets zero gradient.
    """
    if len(clouds) == 0:
        msg = "Empty batch"
        raise InvalidArgumentError(msg)
    arrays = [cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64) for cloud in clouds]
    counts = tuple(int(array.shape[0]) for array in arrays)
    if min(counts) < 1:
        msg = "Every cloud needs at least one point"
        raise InvalidArgumentError(msg)
    width = max(counts)
    if min(counts) == width:
        return np.stack(arrays), counts
    batch = np.empty((len(arrays), width, 3))
    for row, array in enumerate(arrays):
        batch[row, : array.shape[0]] = array
        batch[row, array.shape[0] :] = array[0]
    return batch, counts


def _relu(values: np.ndarray) -> np.ndarray:
    return np.maximum(values, 0.0)


def forward(params: ModelParams, clouds: Sequence[PointCloud | np.ndarray]) -> ForwardResult:
    """
    Run the classifier on a batch of clouds.

    Args:
        params (ModelParams): Model weights.
        clouds: Point clouds (or raw N×3 arrays); sizes may differ.

    Returns:
        ForwardResult: B×128 features, B×K logits and the cache for `backward`.

    """
    inputs, counts = _stack(clouds)
    pre1 = inputs @ params["w1"] + params["b1"]
    act1 = _relu(pre1)
    pre2 = act1 @ params["w2"] + params["b2"]
    act2 = _relu(pre2)
    pre3 = act2 @ params["w3"] + params["b3"]
    act3 = _relu(pre3)
    argmax = np.argmax(act3, axis=1)
    features = np.take_along_axis(act3, argmax[:, None, :], axis=1)[:, 0, :]
    pre4 = features @ params["w4"] + params["b4"]
    act4 = _relu(pre4)
    logits = act4 @ params["w5"] + params["b5"]
    cache = ForwardCache(
        params=params,
        inputs=inputs,
        point_counts=counts,
        pre1=pre1,
        act1=act1,
        pre2=pre2,
        act2=act2,
        pre3=pre3,
        act3=act3,
        argmax=argmax,
        features=features,
        pre4=pre4,
        act4=act4,
    )
    return ForwardResult(features=features, logits=logits, cache=cache)


@dataclass(frozen=True)
class BackwardResult:
    """Outputs of `backward`."""

    dparams: ModelParams
    dpoints: list[np.ndarray]


def backward(cache: ForwardCache, dlogits: np.ndarray | None, dfeatures: np.ndarray | None = None) -> BackwardResult:
    """
    Reverse pass for the scalar dlogits·logits + dfeatures·features.

    The max pool routes gradient only to the winning point of each channel.

    Args:
        cache (ForwardCache): Cache from the matching `forward` call.
        dlogits: B×K upstream gradient (None for zeros).
        dfeatures: B×128 upstream gradient (None for zeros).

    Returns:
        BackwardResult: parameter gradients and one N×3 input gradient per cloud.

    """
    params = cache.params
    batch = cache.batch_size
    num_classes = params.num_classes
    dlogits = np.zeros((batch, num_classes)) if dlogits is None else np.asarray(dlogits, dtype=np.float64)
    dfeatures = np.zeros((batch, FEATURE_DIM)) if dfeatures is None else np.asarray(dfeatures, dtype=np.float64)
    if dlogits.shape != (batch, num_classes) or dfeatures.shape != (batch, FEATURE_DIM):
        msg = (
            f"Upstream gradients {dlogits.shape}/{dfeatures.shape} do not match the cached batch "
            f"({batch}, {num_classes})/({batch}, {FEATURE_DIM})"
        )
        raise InvalidStateError(msg)
    if cache.act3.shape[0] != batch or cache.features.shape != (batch, FEATURE_DIM):
        msg = "Forward cache is inconsistent with its own batch"
        raise InvalidStateError(msg)

    width = cache.inputs.shape[1]
    grads: dict[str, np.ndarray] = {}

    grads["w5"] = cache.act4.T @ dlogits
    grads["b5"] = dlogits.sum(axis=0)
    dpre4 = (dlogits @ params["w5"].T) * (cache.pre4 > 0)
    grads["w4"] = cache.features.T @ dpre4
    grads["b4"] = dpre4.sum(axis=0)
    dpooled = dpre4 @ params["w4"].T + dfeatures

    dact3 = np.zeros_like(cache.act3)
    np.put_along_axis(dact3, cache.argmax[:, None, :], dpooled[:, None, :], axis=1)
    dpre3 = dact3 * (cache.pre3 > 0)
    grads["w3"] = cache.act2.reshape(-1, cache.act2.shape[-1]).T @ dpre3.reshape(-1, dpre3.shape[-1])
    grads["b3"] = dpre3.sum(axis=(0, 1))
    dpre2 = (dpre3 @ params["w3"].T) * (cache.pre2 > 0)
    grads["w2"] = cache.act1.reshape(-1, cache.act1.shape[-1]).T @ dpre2.reshape(-1, dpre2.shape[-1])
    grads["b2"] = dpre2.sum(axis=(0, 1))
    dpre1 = (dpre2 @ params["w2"].T) * (cache.pre1 > 0)
    grads["w1"] = cache.inputs.reshape(-1, 3).T @ dpre1.reshape(-1, dpre1.shape[-1])
    grads["b1"] = dpre1.sum(axis=(0, 1))
    dinputs = dpre1 @ params["w1"].T

    dpoints = [dinputs[row, :count].copy() for row, count in enumerate(cache.point_counts)]
    if any(count != width for count in cache.point_counts):
        _LOGGER.debug("Backward over ragged batch, padded to %d points", width)
    return BackwardResult(dparams=ModelParams({name: grads[name] for name in PARAM_NAMES}), dpoints=dpoints)


def add_params(first: ModelParams, second: ModelParams) -> ModelParams:
    """Element-wise sum of two gradient sets."""
    return first.map(lambda name, array: array + second[name])


@dataclass(frozen=True)
class AdamState:
    """First/second moment accumulators and the step counter."""

    first_moment: ModelParams
    second_moment: ModelParams
    step: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> AdamState:
        """Fresh state for the given parameter shapes."""
        return cls(first_moment=params.zeros_like(), second_moment=params.zeros_like(), step=0)


def adam_update(
    params: ModelParams,
    grads: ModelParams,
    state: AdamState,
    lr: float,
    weight_decay: float = DEFAULT_WEIGHT_DECAY,
) -> tuple[ModelParams, AdamState]:
    """
    One Adam step with bias correction and decoupled weight decay.

    Weight decay multiplies weights (not biases) by (1 − lr·wd) and never
    touches the moments.
    """
    if tuple(params) != tuple(grads):
        msg = "Gradient names do not match parameter names"
        raise InvalidArgumentError(msg)
    for name in params:
        if grads[name].shape != params[name].shape:
            msg = f"Gradient {name} has shape {grads[name].shape}, expected {params[name].shape}"
            raise InvalidArgumentError(msg)
    if not grads.is_finite():
        msg = "Non-finite gradient"
        raise InvalidArgumentError(msg)

    step = state.step + 1
    first = state.first_moment.map(lambda name, m: ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * grads[name])
    second = state.second_moment.map(lambda name, v: ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * grads[name] ** 2)
    correction1 = 1.0 - ADAM_BETA1**step
    correction2 = 1.0 - ADAM_BETA2**step

    def _update(name: str, value: np.ndarray) -> np.ndarray:
        if name.startswith("w") and weight_decay:
            value = value * (1.0 - lr * weight_decay)
        m_hat = first[name] / correction1
        v_hat = second[name] / correction2
        return value - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)

    return params.map(_update), AdamState(first_moment=first, second_moment=second, step=step)


def lr_schedule(
    epoch: int,
    epoch_max: int,
    lr0: float = DEFAULT_LR0,
    gamma: float = DEFAULT_LR_GAMMA,
    beta: float = DEFAULT_LR_BETA,
) -> float:
    """Degradation schedule lr0 · (1 + γ·ep/ep_max)^(−β)."""
    if epoch_max <= 0:
        msg = f"epoch_max must be positive, got {epoch_max}"
        raise InvalidArgumentError(msg)
    if not 0 <= epoch <= epoch_max:
        msg = f"epoch {epoch} outside [0, {epoch_max}]"
        raise InvalidArgumentError(msg)
    return lr0 * (1.0 + gamma * epoch / epoch_max) ** (-beta)


def ema_update(teacher: ModelParams, student: ModelParams, momentum: float) -> ModelParams:
    """Teacher ← m·teacher + (1 − m)·student, element-wise."""
    if not 0.0 <= momentum <= 1.0:
        msg = f"EMA momentum must lie in [0, 1], got {momentum}"
        raise InvalidArgumentError(msg)
    return teacher.map(lambda name, value: momentum * value + (1.0 - momentum) * student[name])
