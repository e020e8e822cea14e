"""
Orientation-aware evaluation.

Every test cloud is rotated by each of the 64 Euler triples built from four
equidistant angles per axis; accuracy, macro precision and prediction
consistency are reported over that series.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from pydantic import BaseModel
from scipy.spatial.distance import cdist
from sklearn.svm import SVC

from .checkpoint import format_float
from .const import EVAL_BATCH, METRICS_FILE, SERIES_ANGLES, SERIES_FILE
from .coordinator import WorkCoordinator
from .exceptions import InvalidArgumentError
from .losses import tempered_softmax
from .mining import MiningConfig, build_intricate_set
from .network import forward
from .so3 import EulerAngles, compose_euler, rotate_points, uniform_angles

if TYPE_CHECKING:
    from collections.abc import Iterator, Sequence
    from pathlib import Path

    from .data import Dataset, PointCloud
    from .network import ModelParams

_LOGGER = logging.getLogger(__name__)

PROBABILITY_TOLERANCE = 1e-6


@dataclass(frozen=True)
class RotationSeries:
    """Ordered Euler triples of the rotation test protocol."""

    angles: tuple[EulerAngles, ...]
    raw: tuple[tuple[float, float, float], ...]

    def __len__(self) -> int:  # noqa: D105
        return len(self.angles)

    def __iter__(self) -> Iterator[EulerAngles]:  # noqa: D105
        return iter(self.angles)

    def matrices(self) -> list[np.ndarray]:
        """Composed rotation matrix of every entry."""
        return [compose_euler(angles) for angles in self.angles]

    @property
    def identity_index(self) -> int:
        """Position of the full-turn (2π, 2π, 2π) entry."""
        return self.raw.index((SERIES_ANGLES[-1],) * 3)


def test_rotation_series() -> RotationSeries:
    """
    The 64-entry rotation series, x varying slowest.

    Angles are {π/2, π, 3π/2, 2π} per axis, wrapped into [−π, π).
    """
    raw = tuple(itertools.product(SERIES_ANGLES, repeat=3))
    return RotationSeries(angles=tuple(EulerAngles.wrapped(*triple) for triple in raw), raw=raw)


test_rotation_series.__test__ = False  # type: ignore[attr-defined]


def confusion_matrix(labels: np.ndarray, predictions: np.ndarray, num_classes: int) -> np.ndarray:
    """K×K counts, rows are true classes, columns predicted classes."""
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if labels.shape != predictions.shape or labels.size == 0:
        msg = f"Need matching non-empty label/prediction vectors, got {labels.shape} and {predictions.shape}"
        raise InvalidArgumentError(msg)
    matrix = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(matrix, (labels, predictions), 1)
    return matrix


def accuracy(labels: np.ndarray, predictions: np.ndarray) -> float:
    """Micro accuracy (Acc.)."""
    labels = np.asarray(labels)
    predictions = np.asarray(predictions)
    if labels.shape != predictions.shape or labels.size == 0:
        msg = "Need matching non-empty label/prediction vectors"
        raise InvalidArgumentError(msg)
    return float(np.mean(labels == predictions))


def macro_precision(labels: np.ndarray, predictions: np.ndarray, num_classes: int) -> float:
    """
    Macro-average precision (Avg.).

    Mean over all K classes of TP/(TP+FP); a class that is never predicted
    contributes precision 0.
    """
    matrix = confusion_matrix(labels, predictions, num_classes)
    predicted = matrix.sum(axis=0)
    true_positive = np.diag(matrix)
    precision = np.divide(true_positive, predicted, out=np.zeros(num_classes), where=predicted > 0)
    return float(np.mean(precision))


def _check_probabilities(prob_vectors: np.ndarray) -> np.ndarray:
    prob_vectors = np.asarray(prob_vectors, dtype=np.float64)
    if prob_vectors.size == 0 or not np.all(np.isfinite(prob_vectors)):
        msg = "Probability vectors must be non-empty and finite"
        raise InvalidArgumentError(msg)
    if np.any(prob_vectors < 0) or np.any(np.abs(prob_vectors.sum(axis=-1) - 1.0) > PROBABILITY_TOLERANCE):
        msg = "Every row must be a probability vector (non-negative, summing to 1)"
        raise InvalidArgumentError(msg)
    return prob_vectors


def _xlogy(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    # 0·log 0 := 0
    return np.where(p > 0, p * np.log(np.where(p > 0, q, 1.0)), 0.0)


def consistency_metric(prob_vectors: np.ndarray) -> float:
    """
    Cst.: mean KL divergence of each series prediction from the sample's mean prediction.

    Args:
        prob_vectors (np.ndarray): A×K rows of one sample, or S×A×K for a dataset.

    Returns:
        float: Cst._i for one sample, or its mean over the S samples.

    """
    prob_vectors = _check_probabilities(prob_vectors)
    if prob_vectors.ndim == 2:  # noqa: PLR2004
        prob_vectors = prob_vectors[None]
    if prob_vectors.ndim != 3:  # noqa: PLR2004
        msg = f"Expected A×K or S×A×K probabilities, got shape {prob_vectors.shape}"
        raise InvalidArgumentError(msg)
    mean = prob_vectors.mean(axis=1, keepdims=True)
    kl = np.sum(_xlogy(prob_vectors, prob_vectors) - _xlogy(prob_vectors, np.broadcast_to(mean, prob_vectors.shape)), axis=-1)
    return float(np.mean(np.maximum(kl, 0.0).mean(axis=1)))


def entropy_map(prob_vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Per-class mean probability P_m and entropy contribution Ent_m over the series.

    Ent_m is the per-class mean of p·log p, so its entries are non-positive.
    """
    prob_vectors = _check_probabilities(prob_vectors)
    if prob_vectors.ndim != 2:  # noqa: PLR2004
        msg = f"Expected A×K probabilities, got shape {prob_vectors.shape}"
        raise InvalidArgumentError(msg)
    return prob_vectors.mean(axis=0), _xlogy(prob_vectors, prob_vectors).mean(axis=0)


def median_bandwidth(features: np.ndarray) -> float:
    """Median pairwise distance, 1.0 when every point coincides."""
    distances = cdist(features, features)
    upper = distances[np.triu_indices(features.shape[0], k=1)]
    median = float(np.median(upper)) if upper.size else 0.0
    return median if median > 0 else 1.0


def mmd2(features_a: np.ndarray, features_b: np.ndarray, bandwidth: float | None = None) -> float:
    """
    Unbiased squared maximum mean discrepancy with a Gaussian RBF kernel.

    Args:
        features_a (np.ndarray): m×F samples, m ≥ 2.
        features_b (np.ndarray): n×F samples, n ≥ 2.
        bandwidth (float | None): Kernel width; the median heuristic over the pooled set when None.

    Returns:
        float: The U-statistic, which may be slightly negative.

    """
    features_a = np.asarray(features_a, dtype=np.float64)
    features_b = np.asarray(features_b, dtype=np.float64)
    m, n = features_a.shape[0], features_b.shape[0]
    if m < 2 or n < 2:  # noqa: PLR2004
        msg = f"mmd2 needs at least 2 samples per set, got {m} and {n}"
        raise InvalidArgumentError(msg)
    if bandwidth is None:
        bandwidth = median_bandwidth(np.vstack([features_a, features_b]))
    elif not bandwidth > 0:
        msg = f"bandwidth must be > 0, got {bandwidth}"
        raise InvalidArgumentError(msg)

    def kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.exp(-0.5 * cdist(x, y, "sqeuclidean") / bandwidth**2)

    k_aa = kernel(features_a, features_a)
    k_bb = kernel(features_b, features_b)
    k_ab = kernel(features_a, features_b)
    within_a = (k_aa.sum() - np.trace(k_aa)) / (m * (m - 1))
    within_b = (k_bb.sum() - np.trace(k_bb)) / (n * (n - 1))
    return float(within_a + within_b - 2.0 * k_ab.mean())


def per_class_mmd(
    features_a: np.ndarray,
    labels_a: np.ndarray,
    features_b: np.ndarray,
    labels_b: np.ndarray,
    bandwidth: float | None = None,
) -> dict[int, float]:
    """mmd2 per class present with at least two members on both sides."""
    labels_a = np.asarray(labels_a)
    labels_b = np.asarray(labels_b)
    result: dict[int, float] = {}
    for label in np.intersect1d(labels_a, labels_b):
        in_a = features_a[labels_a == label]
        in_b = features_b[labels_b == label]
        if in_a.shape[0] < 2 or in_b.shape[0] < 2:  # noqa: PLR2004
            continue
        result[int(label)] = mmd2(in_a, in_b, bandwidth)
    return result


def _rotated(clouds: Sequence[PointCloud], rotation: np.ndarray | None) -> list[np.ndarray]:
    if rotation is None:
        return [cloud.points for cloud in clouds]
    return [rotate_points(rotation, cloud.points) for cloud in clouds]


def _batched_forward(model: ModelParams, arrays: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    features: list[np.ndarray] = []
    logits: list[np.ndarray] = []
    for start in range(0, len(arrays), EVAL_BATCH):
        result = forward(model, arrays[start : start + EVAL_BATCH])
        features.append(result.features)
        logits.append(result.logits)
    return np.concatenate(features), np.concatenate(logits)


def predict_probabilities(model: ModelParams, clouds: Sequence[PointCloud], rotation: np.ndarray | None = None) -> np.ndarray:
    """N×K class probabilities, optionally after rotating every cloud."""
    _, logits = _batched_forward(model, _rotated(clouds, rotation))
    return tempered_softmax(logits, 1.0)


def extract_features(
    model: ModelParams,
    dataset: Dataset,
    angles: EulerAngles | Sequence[EulerAngles] | None = None,
) -> np.ndarray:
    """
    B×128 encoder features of a dataset.

    Args:
        model (ModelParams): Model parameters.
        dataset (Dataset): Clouds to embed.
        angles: One rotation for every cloud, or one rotation per cloud.

    Returns:
        np.ndarray: Pooled features in dataset order.

    """
    if angles is None:
        arrays = [cloud.points for cloud in dataset]
    elif isinstance(angles, EulerAngles):
        arrays = _rotated(dataset.clouds, compose_euler(angles))
    else:
        if len(angles) != len(dataset):
            msg = f"Got {len(angles)} rotations for {len(dataset)} clouds"
            raise InvalidArgumentError(msg)
        arrays = [rotate_points(compose_euler(triple), cloud.points) for triple, cloud in zip(angles, dataset, strict=True)]
    features, _ = _batched_forward(model, arrays)
    return features


class EvalReport(BaseModel):
    """Metrics over the rotation test series."""

    num_samples: int
    num_classes: int
    series: list[tuple[float, float, float]]
    acc: list[float]
    avg: list[float]
    acc_mean: float
    acc_std: float
    avg_mean: float
    avg_std: float
    cst: float
    confusion_matrix: list[list[int]]
    sample_ids: list[str] | None = None
    mean_probabilities: list[list[float]] | None = None
    entropy_maps: list[list[float]] | None = None


def _assemble(
    dataset: Dataset,
    series: RotationSeries,
    probabilities: list[np.ndarray],
    *,
    with_probabilities: bool,
) -> EvalReport:
    labels = dataset.labels
    num_classes = dataset.num_classes
    predictions = [np.argmax(probs, axis=1) for probs in probabilities]
    acc = [accuracy(labels, predicted) for predicted in predictions]
    avg = [macro_precision(labels, predicted, num_classes) for predicted in predictions]
    per_sample = np.stack(probabilities, axis=1)  # S×A×K
    report = EvalReport(
        num_samples=len(dataset),
        num_classes=num_classes,
        series=[(t.theta_x, t.theta_y, t.theta_z) for t in series],
        acc=acc,
        avg=avg,
        acc_mean=float(np.mean(acc)),
        acc_std=float(np.std(acc)),
        avg_mean=float(np.mean(avg)),
        avg_std=float(np.std(avg)),
        cst=consistency_metric(per_sample),
        confusion_matrix=confusion_matrix(labels, predictions[series.identity_index], num_classes).tolist(),
    )
    if with_probabilities:
        maps = [entropy_map(rows) for rows in per_sample]
        report.sample_ids = [cloud.id for cloud in dataset]
        report.mean_probabilities = [mean.tolist() for mean, _ in maps]
        report.entropy_maps = [ent.tolist() for _, ent in maps]
    _LOGGER.info(
        "Evaluated %d clouds over %d rotations: Acc. %.4f ± %.4f, Avg. %.4f ± %.4f, Cst. %.4f",
        report.num_samples,
        len(series),
        report.acc_mean,
        report.acc_std,
        report.avg_mean,
        report.avg_std,
        report.cst,
    )
    return report


def _series_jobs(model: ModelParams, dataset: Dataset, series: RotationSeries) -> list:
    if len(dataset) == 0:
        msg = "Cannot evaluate an empty dataset"
        raise InvalidArgumentError(msg)
    return [lambda rotation=rotation: predict_probabilities(model, dataset.clouds, rotation) for rotation in series.matrices()]


async def async_evaluate(
    model: ModelParams,
    dataset: Dataset,
    series: RotationSeries | None = None,
    workers: int | None = None,
    *,
    with_probabilities: bool = False,
) -> EvalReport:
    """Evaluate with the series fanned out to concurrent workers."""
    series = series or test_rotation_series()
    jobs = _series_jobs(model, dataset, series)
    probabilities = await WorkCoordinator(workers, name="evaluation").async_run(jobs)
    return _assemble(dataset, series, probabilities, with_probabilities=with_probabilities)


def evaluate(
    model: ModelParams,
    dataset: Dataset,
    series: RotationSeries | None = None,
    workers: int | None = None,
    *,
    with_probabilities: bool = False,
) -> EvalReport:
    """
    Evaluate a model over the rotation test series.

    Args:
        model (ModelParams): Model parameters.
        dataset (Dataset): Labeled test clouds.
        series (RotationSeries | None): Defaults to the 64-entry protocol series.
        workers (int | None): Concurrency bound, defaults to the available parallelism.
        with_probabilities (bool): Also report per-sample P_m and Ent_m.

    Returns:
        EvalReport: Per-series and aggregate metrics.

    """
    series = series or test_rotation_series()
    jobs = _series_jobs(model, dataset, series)
    probabilities = WorkCoordinator(workers, name="evaluation").run(jobs)
    return _assemble(dataset, series, probabilities, with_probabilities=with_probabilities)


def write_report(report: EvalReport, directory: Path) -> tuple[Path, Path]:
    """Write `metrics.json` and `series.csv`."""
    directory.mkdir(parents=True, exist_ok=True)
    metrics = directory / METRICS_FILE
    metrics.write_text(report.model_dump_json(indent=2), encoding="utf-8")
    series = directory / SERIES_FILE
    with series.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(("theta_x", "theta_y", "theta_z", "acc", "avg"))
        for angles, acc, avg in zip(report.series, report.acc, report.avg, strict=True):
            writer.writerow([*(format_float(value) for value in angles), format_float(acc), format_float(avg)])
    _LOGGER.info("Wrote %s and %s", metrics, series)
    return metrics, series


class ProbeReport(BaseModel):
    """Linear-probe discriminability and consistency on the target domain."""

    acc_mean: float
    acc_std: float
    cst: float


def shift_probe(model: ModelParams, source: Dataset, target: Dataset, seed: int = 0) -> ProbeReport:
    """
    Fit a linear SVM on features of randomly rotated source clouds and probe the target.

    Discriminability is the SVM accuracy over the rotation series of the target
    clouds; consistency is Cst. of the SVM's class probabilities over the series.
    """
    rng = np.random.default_rng(seed)
    train_features = extract_features(model, source, [uniform_angles(rng) for _ in range(len(source))])
    probe = SVC(kernel="linear", probability=True, random_state=seed)
    probe.fit(train_features, source.labels)

    series = test_rotation_series()
    labels = target.labels
    acc: list[float] = []
    probabilities: list[np.ndarray] = []
    for angles in series:
        features = extract_features(model, target, angles)
        acc.append(accuracy(labels, probe.predict(features)))
        full = np.zeros((len(target), target.num_classes))
        full[:, probe.classes_] = probe.predict_proba(features)
        probabilities.append(full)
    return ProbeReport(
        acc_mean=float(np.mean(acc)),
        acc_std=float(np.std(acc)),
        cst=consistency_metric(np.stack(probabilities, axis=1)),
    )


class ShiftAnalysis(BaseModel):
    """Per-class MMD² between augmented source features and target features."""

    strategy: str
    per_class: dict[int, float]
    mean: float


class AnalysisReport(BaseModel):
    """Shift under both augmentation strategies plus the linear probe."""

    analyses: list[ShiftAnalysis]
    probe: ProbeReport


def analyze_orientational_shift(
    model: ModelParams,
    source: Dataset,
    target: Dataset,
    strategy: str = "random",
    seed: int = 0,
    mining: MiningConfig | None = None,
    workers: int | None = None,
) -> ShiftAnalysis:
    """
    Measure how far augmented source features sit from arbitrarily rotated target features.

    Args:
        model (ModelParams): Model parameters.
        source (Dataset): Source training clouds.
        target (Dataset): Target test clouds, rotated uniformly at random.
        strategy (str): `random` rotates the source uniformly; `intricate` uses
            the first mined orientation of every source cloud.
        seed (int): Seed of every random draw.
        mining (MiningConfig | None): Mining settings for `intricate`.
        workers (int | None): Concurrency bound for mining.

    Returns:
        ShiftAnalysis: Per-class and mean MMD².

    """
    rng = np.random.default_rng(seed)
    if strategy == "random":
        source_angles = [uniform_angles(rng) for _ in range(len(source))]
    elif strategy == "intricate":
        cfg = mining or MiningConfig()
        intricate = build_intricate_set(model, source, cfg, seed, workers=workers)
        source_angles = [intricate.angles(cloud.id)[0] for cloud in source]
    else:
        msg = f"Unknown augmentation strategy {strategy!r}, expected 'random' or 'intricate'"
        raise InvalidArgumentError(msg)

    source_features = extract_features(model, source, source_angles)
    target_features = extract_features(model, target, [uniform_angles(rng) for _ in range(len(target))])
    per_class = per_class_mmd(source_features, source.labels, target_features, target.labels)
    mean = float(np.mean(list(per_class.values()))) if per_class else math.nan
    _LOGGER.info("Orientational shift (%s): mean per-class MMD² %.5f", strategy, mean)
    return ShiftAnalysis(strategy=strategy, per_class=per_class, mean=mean)
