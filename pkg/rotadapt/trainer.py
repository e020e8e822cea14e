"""
Alternating intricate-orientation mining and orientation-aware contrastive training.

Every T epochs the intricate set is rebuilt with the frozen student. Each batch
then pairs the original clouds with intricate variants, the student takes one
Adam step on L_cls + λ_oc·L_oc + λ_ms·L_ms and the EMA teacher follows.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, NamedTuple

import numpy as np
from pydantic import BaseModel

from .checkpoint import format_float, save_checkpoint
from .const import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_EMA_MOMENTUM,
    DEFAULT_EPOCHS,
    DEFAULT_LR0,
    DEFAULT_LR_BETA,
    DEFAULT_LR_GAMMA,
    DEFAULT_NUM_CLASSES,
    DEFAULT_SEED,
    DEFAULT_VARIANTS,
    DEFAULT_WEIGHT_DECAY,
    FINAL_DIR,
    INTRICATE_SET_FILE,
    TRAIN_LOG_FILE,
    AblationVariant,
    OcTarget,
)
from .evaluation import evaluate
from .exceptions import DivergenceError, InvalidArgumentError
from .losses import (
    LossWeights,
    classification_loss,
    margin_separation_loss,
    orientation_consistency_loss,
    total_loss,
)
from .mining import MiningConfig, build_intricate_set, sample_intricate, save_intricate_set
from .network import AdamState, adam_update, add_params, backward, ema_update, forward, init_params, lr_schedule
from .so3 import compose_euler, rotate_points
from .synthetic import augment_points

if TYPE_CHECKING:
    from collections.abc import Sequence
    from pathlib import Path

    from .data import Dataset
    from .mining import IntricateSet
    from .network import ModelParams

_LOGGER = logging.getLogger(__name__)

TRAIN_LOG_COLUMNS = ("epoch", "l_cls", "l_oc", "l_ms", "l_final", "lr", "refreshed", "l_pos", "l_neg", "steps")

# Stream tags keeping shuffling and batch sampling independent of each other
_SHUFFLE_STREAM = 1
_BATCH_STREAM = 2


@dataclass(frozen=True)
class TrainConfig:
    """Training loop settings."""

    epochs: int = DEFAULT_EPOCHS
    batch_size: int = DEFAULT_BATCH_SIZE
    num_classes: int = DEFAULT_NUM_CLASSES
    seed: int = DEFAULT_SEED
    lr0: float = DEFAULT_LR0
    gamma: float = DEFAULT_LR_GAMMA
    beta: float = DEFAULT_LR_BETA
    ema_momentum: float = DEFAULT_EMA_MOMENTUM
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    mining: MiningConfig = field(default_factory=MiningConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    variants: int = DEFAULT_VARIANTS
    oc_target: OcTarget = OcTarget.TEACHER_ON_INTRICATE
    checkpoint_every: int = 0
    point_augment: bool = False
    workers: int | None = None

    def __post_init__(self) -> None:  # noqa: D105
        if self.epochs < 1:
            msg = f"epochs must be >= 1, got {self.epochs}"
            raise InvalidArgumentError(msg)
        if self.batch_size < 2:  # noqa: PLR2004
            msg = f"batch_size must be >= 2, got {self.batch_size}"
            raise InvalidArgumentError(msg)
        if self.num_classes < 2:  # noqa: PLR2004
            msg = f"num_classes must be >= 2, got {self.num_classes}"
            raise InvalidArgumentError(msg)
        if not 1 <= self.variants <= self.mining.repetitions:
            msg = f"V must be in [1, AT={self.mining.repetitions}], got {self.variants}"
            raise InvalidArgumentError(msg)
        if not 0.0 <= self.ema_momentum <= 1.0:
            msg = f"ema_momentum must lie in [0, 1], got {self.ema_momentum}"
            raise InvalidArgumentError(msg)
        if not self.lr0 > 0 or self.gamma < 0 or self.beta < 0 or self.weight_decay < 0:
            msg = "Need lr0 > 0 and non-negative gamma, beta, weight_decay"
            raise InvalidArgumentError(msg)
        if self.checkpoint_every < 0:
            msg = f"checkpoint_every must be >= 0, got {self.checkpoint_every}"
            raise InvalidArgumentError(msg)

    def replace(self, **changes: object) -> TrainConfig:
        """Copy with some fields changed."""
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class EpochRecord:
    """Epoch means of every loss term."""

    epoch: int
    l_cls: float
    l_oc: float
    l_ms: float
    l_final: float
    lr: float
    refreshed: bool
    l_pos: float = 0.0
    l_neg: float = 0.0
    steps: int = 0


@dataclass
class TrainLog:
    """One record per epoch."""

    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:  # noqa: D105
        return len(self.records)

    def refresh_epochs(self) -> list[int]:
        """Epochs at which the intricate set was rebuilt."""
        return [record.epoch for record in self.records if record.refreshed]


class TrainResult(NamedTuple):
    """Final student, EMA teacher and the training log."""

    student: ModelParams
    teacher: ModelParams
    log: TrainLog


def save_train_log(log: TrainLog, path: Path) -> Path:
    """Write the log as CSV with 17-digit floats."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(TRAIN_LOG_COLUMNS)
        for record in log.records:
            writer.writerow(
                [
                    record.epoch,
                    format_float(record.l_cls),
                    format_float(record.l_oc),
                    format_float(record.l_ms),
                    format_float(record.l_final),
                    format_float(record.lr),
                    int(record.refreshed),
                    format_float(record.l_pos),
                    format_float(record.l_neg),
                    record.steps,
                ]
            )
    return path


def _check_dataset(cfg: TrainConfig, dataset: Dataset) -> None:
    if len(dataset) < cfg.batch_size:
        msg = f"Need at least batch_size={cfg.batch_size} samples, got {len(dataset)}"
        raise InvalidArgumentError(msg)
    labels = dataset.labels
    if labels.max() >= cfg.num_classes:
        msg = f"Label {labels.max()} outside [0, {cfg.num_classes})"
        raise InvalidArgumentError(msg)
    counts = np.bincount(labels, minlength=cfg.num_classes)
    if np.count_nonzero(counts) < 2:  # noqa: PLR2004
        msg = "Training needs at least 2 classes"
        raise InvalidArgumentError(msg)
    for class_id in np.flatnonzero(counts == 0):
        _LOGGER.warning("Class %d has no training samples", class_id)


@dataclass(frozen=True)
class _BatchStats:
    l_cls: float
    l_oc: float
    l_ms: float
    l_pos: float
    l_neg: float
    l_final: float


def _check_finite(epoch: int, batch: int, *arrays: np.ndarray) -> None:
    for array in arrays:
        bad = array[~np.isfinite(array)]
        if bad.size:
            raise DivergenceError(epoch, batch, float(bad[0]))


def _train_step(
    cfg: TrainConfig,
    student: ModelParams,
    teacher: ModelParams,
    originals: list[np.ndarray],
    pairs: list[np.ndarray],
    variants: list[np.ndarray],
    labels: np.ndarray,
    position: tuple[int, int] = (0, 0),
) -> tuple[_BatchStats, ModelParams]:
    """
    Losses of one batch and the accumulated student gradient.

    Raises DivergenceError naming `position` (epoch, batch) as soon as a
    forward pass or a loss turns non-finite.
    """
    try:
        return _batch_losses(cfg, student, teacher, originals, pairs, variants, labels, position)
    except InvalidArgumentError as exception:
        raise DivergenceError(*position, math.nan) from exception


def _batch_losses(  # noqa: PLR0913
    cfg: TrainConfig,
    student: ModelParams,
    teacher: ModelParams,
    originals: list[np.ndarray],
    pairs: list[np.ndarray],
    variants: list[np.ndarray],
    labels: np.ndarray,
    position: tuple[int, int],
) -> tuple[_BatchStats, ModelParams]:
    weights = cfg.weights
    batch = labels.shape[0]
    count = cfg.variants

    pair_pass = forward(student, pairs)
    variant_pass = forward(student, variants)
    _check_finite(*position, pair_pass.logits, variant_pass.logits, variant_pass.features)
    variant_labels = np.repeat(labels, count)

    cls = classification_loss(
        np.concatenate([pair_pass.logits, variant_pass.logits]),
        np.concatenate([labels, variant_labels]),
    )
    dpair = cls.grad[:batch].copy()
    dvariant = cls.grad[batch:].copy()

    # the teacher sees one view, the student the other
    if cfg.oc_target is OcTarget.TEACHER_ON_INTRICATE:
        original_pass = forward(student, originals)
        student_logits, teacher_logits = original_pass.logits, forward(teacher, pairs).logits
    else:
        original_pass = None
        student_logits, teacher_logits = pair_pass.logits, forward(teacher, originals).logits
    _check_finite(*position, student_logits, teacher_logits)
    oc = orientation_consistency_loss(student_logits, teacher_logits, weights.tau_s, weights.tau_t)
    if original_pass is None:
        dpair += weights.lambda_oc * oc.grad

    # logged for every variant; only a positive weight feeds the gradient
    dfeatures = None
    if weights.lambda_ms > 0:
        ms = margin_separation_loss(variant_pass.features.reshape(batch, count, -1), labels, weights.tau_prime)
        l_ms, l_pos, l_neg = ms.value, ms.positive, ms.negative
        dfeatures = weights.lambda_ms * ms.grad.reshape(batch * count, -1)
    else:
        l_ms, l_pos, l_neg = _margin_for_log(variant_pass.features.reshape(batch, count, -1), labels, weights.tau_prime)

    grads = add_params(
        backward(pair_pass.cache, dpair).dparams,
        backward(variant_pass.cache, dvariant, dfeatures).dparams,
    )
    if original_pass is not None and weights.lambda_oc > 0:
        grads = add_params(grads, backward(original_pass.cache, weights.lambda_oc * oc.grad).dparams)

    stats = _BatchStats(
        l_cls=cls.value,
        l_oc=oc.value,
        l_ms=l_ms,
        l_pos=l_pos,
        l_neg=l_neg,
        l_final=total_loss(cls.value, oc.value, l_ms if weights.lambda_ms > 0 else 0.0, weights),
    )
    return stats, grads


def _margin_for_log(features: np.ndarray, labels: np.ndarray, tau_prime: float) -> tuple[float, float, float]:
    try:
        ms = margin_separation_loss(features, labels, tau_prime)
    except InvalidArgumentError as exception:
        _LOGGER.debug("Margin separation not logged: %s", exception)
        return math.nan, math.nan, math.nan
    return ms.value, ms.positive, ms.negative


def _assemble_batch(
    cfg: TrainConfig,
    dataset: Dataset,
    members: np.ndarray,
    intricate: IntricateSet,
    rng: np.random.Generator,
) -> tuple[list[np.ndarray], list[np.ndarray], list[np.ndarray]]:
    originals: list[np.ndarray] = []
    pairs: list[np.ndarray] = []
    variants: list[np.ndarray] = []
    for position in members:
        cloud = dataset.clouds[int(position)]
        points = augment_points(cloud.points, rng, rotate=False).points if cfg.point_augment else cloud.points
        originals.append(points)
        pair = sample_intricate(intricate, cloud.id, 1, rng)[0]
        pairs.append(rotate_points(compose_euler(pair), points))
        variants.extend(
            rotate_points(compose_euler(angles), points) for angles in sample_intricate(intricate, cloud.id, cfg.variants, rng)
        )
    return originals, pairs, variants


def train(cfg: TrainConfig, dataset: Dataset, out_dir: Path | None = None) -> TrainResult:
    """
    Train a student/teacher pair on a labeled source dataset.

    Args:
        cfg (TrainConfig): Loop, mining and loss settings.
        dataset (Dataset): Aligned, labeled source clouds.
        out_dir (Path | None): Receives `train_log.csv`, interval checkpoints,
            `final/` and the last intricate set.

    Returns:
        TrainResult: (student, teacher, log).

    """
    _check_dataset(cfg, dataset)
    student = init_params(cfg.seed, cfg.num_classes)
    teacher = student.copy()
    adam = AdamState.zeros_like(student)
    log = TrainLog()
    intricate: IntricateSet | None = None
    batches_per_epoch = len(dataset) // cfg.batch_size

    for epoch in range(cfg.epochs):
        refreshed = epoch % cfg.mining.refresh_period == 0
        if refreshed:
            intricate = build_intricate_set(student, dataset, cfg.mining, cfg.seed, epoch, cfg.workers)
        lr = lr_schedule(epoch, cfg.epochs, cfg.lr0, cfg.gamma, cfg.beta)
        order = np.random.default_rng(np.random.SeedSequence([cfg.seed, _SHUFFLE_STREAM, epoch])).permutation(len(dataset))

        totals = np.zeros(6)
        for batch_index in range(batches_per_epoch):
            members = order[batch_index * cfg.batch_size : (batch_index + 1) * cfg.batch_size]
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _BATCH_STREAM, epoch, batch_index]))
            originals, pairs, variants = _assemble_batch(cfg, dataset, members, intricate, rng)
            stats, grads = _train_step(
                cfg, student, teacher, originals, pairs, variants, dataset.labels[members], (epoch, batch_index)
            )

            if not math.isfinite(stats.l_final):
                raise DivergenceError(epoch, batch_index, stats.l_final)
            try:
                student, adam = adam_update(student, grads, adam, lr, cfg.weight_decay)
            except InvalidArgumentError as exception:
                raise DivergenceError(epoch, batch_index, math.nan) from exception
            teacher = ema_update(teacher, student, cfg.ema_momentum)
            totals += (stats.l_cls, stats.l_oc, stats.l_ms, stats.l_final, stats.l_pos, stats.l_neg)
            _LOGGER.debug("Epoch %d batch %d: L_final %.6f", epoch, batch_index, stats.l_final)

        means = totals / batches_per_epoch
        record = EpochRecord(
            epoch=epoch,
            l_cls=float(means[0]),
            l_oc=float(means[1]),
            l_ms=float(means[2]),
            l_final=float(means[3]),
            lr=lr,
            refreshed=refreshed,
            l_pos=float(means[4]),
            l_neg=float(means[5]),
            steps=adam.step,
        )
        log.records.append(record)
        _LOGGER.info(
            "Epoch %d/%d: L_cls %.4f, L_oc %.4f, L_ms %.4f, L_final %.4f, lr %.3g%s",
            epoch + 1,
            cfg.epochs,
            record.l_cls,
            record.l_oc,
            record.l_ms,
            record.l_final,
            lr,
            " (intricate set refreshed)" if refreshed else "",
        )
        if out_dir is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(out_dir / f"epoch_{epoch + 1:04d}", student, teacher, epoch + 1)

    if out_dir is not None:
        save_checkpoint(out_dir / FINAL_DIR, student, teacher, cfg.epochs)
        save_train_log(log, out_dir / TRAIN_LOG_FILE)
        if intricate is not None:
            save_intricate_set(intricate, out_dir / INTRICATE_SET_FILE)
    return TrainResult(student=student, teacher=teacher, log=log)


def variant_config(cfg: TrainConfig, variant: AblationVariant) -> TrainConfig:
    """
    Map an ablation variant onto loss weights and the mining toggle.

    baseline: random rotations, no L_oc/L_ms. V1: mining only. V2: mining + L_oc.
    V3: mining + L_ms. V4: random rotations + L_oc + L_ms. full: everything.
    """
    random_rotation = dataclasses.replace(cfg.mining, steps=0)
    weights = cfg.weights
    table = {
        AblationVariant.BASELINE: (random_rotation, 0.0, 0.0),
        AblationVariant.IOM: (cfg.mining, 0.0, 0.0),
        AblationVariant.IOM_OC: (cfg.mining, weights.lambda_oc, 0.0),
        AblationVariant.IOM_MS: (cfg.mining, 0.0, weights.lambda_ms),
        AblationVariant.RANDOM_OC_MS: (random_rotation, weights.lambda_oc, weights.lambda_ms),
        AblationVariant.FULL: (cfg.mining, weights.lambda_oc, weights.lambda_ms),
    }
    mining, lambda_oc, lambda_ms = table[variant]
    return cfg.replace(
        mining=mining,
        weights=dataclasses.replace(weights, lambda_oc=lambda_oc, lambda_ms=lambda_ms),
    )


class AblationRow(BaseModel):
    """Target-domain metrics of one ablation variant and seed."""

    seed: int
    variant: str
    acc_mean: float
    acc_std: float
    avg_mean: float
    avg_std: float
    cst: float


def run_ablation_matrix(
    cfg: TrainConfig,
    dataset: Dataset,
    target: Dataset,
    seeds: Sequence[int] | None = None,
) -> list[AblationRow]:
    """Train and evaluate all six variants for every seed, with shared seeds across variants."""
    rows: list[AblationRow] = []
    for seed in seeds or (cfg.seed,):
        for variant in AblationVariant:
            _LOGGER.info("Ablation: variant %s, seed %d", variant.value, seed)
            result = train(variant_config(cfg.replace(seed=seed), variant), dataset)
            report = evaluate(result.student, target, workers=cfg.workers)
            rows.append(
                AblationRow(
                    seed=seed,
                    variant=variant.value,
                    acc_mean=report.acc_mean,
                    acc_std=report.acc_std,
                    avg_mean=report.avg_mean,
                    avg_std=report.avg_std,
                    cst=report.cst,
                )
            )
    return rows


class SweepRow(BaseModel):
    """Target-domain metrics for one value of a swept loss weight."""

    which: str
    value: float
    acc_mean: float
    avg_mean: float
    cst: float


def run_sensitivity_sweep(
    cfg: TrainConfig,
    dataset: Dataset,
    target: Dataset,
    values: Sequence[float],
    which: str = "lambda_oc",
    fixed: float = 0.1,
) -> list[SweepRow]:
    """Vary λ_oc or λ_ms over `values` with the other weight held at `fixed`."""
    if which not in ("lambda_oc", "lambda_ms"):
        msg = f"Can only sweep lambda_oc or lambda_ms, got {which!r}"
        raise InvalidArgumentError(msg)
    other = "lambda_ms" if which == "lambda_oc" else "lambda_oc"
    rows: list[SweepRow] = []
    for value in values:
        weights = dataclasses.replace(cfg.weights, **{which: float(value), other: fixed})
        result = train(cfg.replace(weights=weights), dataset)
        report = evaluate(result.student, target, workers=cfg.workers)
        rows.append(SweepRow(which=which, value=float(value), acc_mean=report.acc_mean, avg_mean=report.avg_mean, cst=report.cst))
        _LOGGER.info("Sweep %s=%g: Acc. %.4f, Cst. %.4f", which, value, report.acc_mean, report.cst)
    return rows


def save_rows(rows: Sequence[BaseModel], path: Path) -> Path:
    """Write table rows as CSV, floats with 17 significant digits."""
    if not rows:
        msg = "Nothing to write"
        raise InvalidArgumentError(msg)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(type(rows[0]).model_fields)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            values = row.model_dump()
            writer.writerow([format_float(values[c]) if isinstance(values[c], float) else values[c] for c in columns])
    _LOGGER.info("Wrote %d rows to %s", len(rows), path)
    return path
