"""
Intricate orientation mining.

For each training cloud, gradient ascent over Euler angles finds rotations that
maximize the current model's cross-entropy. The per-sample results form the
intricate set, refreshed by the trainer every T epochs.
"""

from __future__ import annotations

import asyncio
import csv
import logging
import math
import zlib
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .checkpoint import format_float
from .const import (
    DEFAULT_MINING_STEPS,
    DEFAULT_REFRESH_PERIOD,
    DEFAULT_REPETITIONS,
    DEFAULT_STEP_SIZE,
)
from .coordinator import WorkCoordinator
from .exceptions import DatasetFormatError, InvalidArgumentError, NotFoundError, RotadaptError
from .losses import cross_entropy_rows
from .network import backward, forward
from .so3 import EulerAngles, compose_euler, grad_euler, rotate_points, uniform_angles, wrap_angle

if TYPE_CHECKING:
    from pathlib import Path

    from .data import Dataset, PointCloud
    from .network import ModelParams

_LOGGER = logging.getLogger(__name__)

INTRICATE_COLUMNS = ("id", "rep", "theta_x", "theta_y", "theta_z")


@dataclass(frozen=True)
class MiningConfig:
    """
    Intricate orientation mining settings.

    `steps` = 0 keeps the random initializations, i.e. plain random rotation
    augmentation.
    """

    repetitions: int = DEFAULT_REPETITIONS
    steps: int = DEFAULT_MINING_STEPS
    step_size: float = DEFAULT_STEP_SIZE
    refresh_period: int = DEFAULT_REFRESH_PERIOD

    def __post_init__(self) -> None:  # noqa: D105
        if self.repetitions < 1:
            msg = f"repetitions (AT) must be >= 1, got {self.repetitions}"
            raise InvalidArgumentError(msg)
        if self.steps < 0:
            msg = f"steps must be >= 0, got {self.steps}"
            raise InvalidArgumentError(msg)
        if not self.step_size > 0:
            msg = f"step_size must be > 0, got {self.step_size}"
            raise InvalidArgumentError(msg)
        if self.refresh_period < 1:
            msg = f"refresh_period (T) must be >= 1, got {self.refresh_period}"
            raise InvalidArgumentError(msg)


@dataclass(frozen=True)
class MiningResult:
    """Best iterate of one ascent chain."""

    angles: EulerAngles
    loss: float
    initial_loss: float


@dataclass
class IntricateSet:
    """Per-sample mined orientations, stamped with the epoch of the refresh."""

    entries: dict[str, list[EulerAngles]] = field(default_factory=dict)
    epoch: int = 0

    def __len__(self) -> int:  # noqa: D105
        return len(self.entries)

    def __contains__(self, sample_id: object) -> bool:  # noqa: D105
        return sample_id in self.entries

    def total(self) -> int:
        """Number of stored angle triples over all samples."""
        return sum(len(angles) for angles in self.entries.values())

    def angles(self, sample_id: str) -> list[EulerAngles]:
        """Stored triples of one sample."""
        try:
            return self.entries[sample_id]
        except KeyError as exception:
            msg = f"Sample {sample_id!r} has no intricate orientations"
            raise NotFoundError(msg) from exception


def sample_stream(seed: int, epoch: int, sample_id: str, repetition: int) -> np.random.Generator:
    """Deterministic random stream keyed by (seed, epoch, sample id, repetition)."""
    key = zlib.crc32(sample_id.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, key, repetition]))


def mine_orientations(
    model: ModelParams,
    cloud: PointCloud,
    label: int,
    inits: list[EulerAngles],
    cfg: MiningConfig,
) -> list[MiningResult]:
    """
    Run independent ascent chains from several initializations at once.

    Every step moves Θ along the loss gradient normalized to unit ∞-norm,
    scaled by `step_size`, then wraps each angle into [−π, π). Each chain keeps
    the iterate with the highest finite loss seen; a chain stops early on a
    zero gradient or a non-finite loss.
    """
    points = cloud.points
    thetas = np.array([init.as_array() for init in inits])
    best = thetas.copy()
    best_loss = np.full(len(inits), -np.inf)
    initial_loss = np.full(len(inits), np.nan)
    active = np.ones(len(inits), dtype=bool)

    for step in range(cfg.steps + 1):
        chains = np.flatnonzero(active)
        if chains.size == 0:
            break
        rotated = [rotate_points(compose_euler(thetas[chain]), points) for chain in chains]
        result = forward(model, rotated)
        losses, dlogits = cross_entropy_rows(result.logits, label)
        if step == 0:
            initial_loss[chains] = losses

        for row, chain in enumerate(chains):
            if not math.isfinite(losses[row]):
                _LOGGER.warning("Non-finite loss mining %s (chain %d, step %d)", cloud.id, chain, step)
                active[chain] = False
                dlogits[row] = 0.0
            elif losses[row] > best_loss[chain]:
                best_loss[chain] = losses[row]
                best[chain] = thetas[chain]
        if step == cfg.steps:
            break

        dpoints = backward(result.cache, dlogits).dpoints
        for row, chain in enumerate(chains):
            if not active[chain]:
                continue
            if not np.all(np.isfinite(dpoints[row])):
                active[chain] = False
                continue
            gradient = grad_euler(thetas[chain], points, dpoints[row])
            scale = float(np.max(np.abs(gradient)))
            if scale == 0.0 or not math.isfinite(scale):
                active[chain] = False
                continue
            moved = thetas[chain] + cfg.step_size * gradient / scale
            thetas[chain] = [wrap_angle(value) for value in moved]

    return [
        MiningResult(
            angles=EulerAngles(*(float(value) for value in best[chain])),
            loss=float(best_loss[chain]) if math.isfinite(best_loss[chain]) else float("nan"),
            initial_loss=float(initial_loss[chain]),
        )
        for chain in range(len(inits))
    ]


def mine_orientation(
    model: ModelParams,
    cloud: PointCloud,
    label: int,
    init: EulerAngles | None,
    cfg: MiningConfig,
    rng: np.random.Generator | None = None,
) -> EulerAngles:
    """
    Find Θ̂ maximizing the model's cross-entropy on the rotated cloud.

    Args:
        model (ModelParams): Frozen model parameters.
        cloud (PointCloud): The originally aligned cloud.
        label (int): Its class.
        init (EulerAngles | None): Starting point; drawn uniformly from `rng` when None.
        cfg (MiningConfig): Step count and step size.
        rng (np.random.Generator | None): Only used to draw a missing init.

    Returns:
        EulerAngles: The best iterate (never worse than `init`).

    """
    if init is None:
        if rng is None:
            msg = "Either init or rng is required"
            raise InvalidArgumentError(msg)
        init = uniform_angles(rng)
    return mine_orientations(model, cloud, label, [init], cfg)[0].angles


def _mine_sample(model: ModelParams, cloud: PointCloud, cfg: MiningConfig, seed: int, epoch: int) -> list[EulerAngles]:
    inits = [uniform_angles(sample_stream(seed, epoch, cloud.id, rep)) for rep in range(cfg.repetitions)]
    if cfg.steps == 0:
        return inits
    try:
        results = mine_orientations(model, cloud, cloud.label, inits, cfg)
    except (RotadaptError, FloatingPointError) as exception:
        _LOGGER.warning("Mining failed for %s, keeping random inits: %s", cloud.id, exception)
        return inits
    return [result.angles for result in results]


async def async_build_intricate_set(
    model: ModelParams,
    dataset: Dataset,
    cfg: MiningConfig,
    seed: int,
    epoch: int = 0,
    workers: int | None = None,
) -> IntricateSet:
    """Mine AT orientations for every sample, fanning samples out to workers."""
    if len(dataset) == 0:
        msg = "Cannot mine orientations for an empty dataset"
        raise InvalidArgumentError(msg)
    coordinator = WorkCoordinator(workers, name="mining")
    jobs = [lambda cloud=cloud: _mine_sample(model, cloud, cfg, seed, epoch) for cloud in dataset]
    mined = await coordinator.async_run(jobs, labels=[cloud.id for cloud in dataset])
    intricate = IntricateSet(entries={cloud.id: angles for cloud, angles in zip(dataset, mined, strict=True)}, epoch=epoch)
    _LOGGER.info("Built intricate set at epoch %d: %d samples x %d", epoch, len(intricate), cfg.repetitions)
    return intricate


def build_intricate_set(
    model: ModelParams,
    dataset: Dataset,
    cfg: MiningConfig,
    seed: int,
    epoch: int = 0,
    workers: int | None = None,
) -> IntricateSet:
    """
    Build the intricate set I for a dataset.

    Each sample gets exactly AT triples mined from independent uniform inits.
    Random streams are keyed by (seed, epoch, sample id, repetition), so the
    result does not depend on the worker count.
    """
    if workers == 1:
        if len(dataset) == 0:
            msg = "Cannot mine orientations for an empty dataset"
            raise InvalidArgumentError(msg)
        entries = {cloud.id: _mine_sample(model, cloud, cfg, seed, epoch) for cloud in dataset}
        _LOGGER.info("Built intricate set at epoch %d: %d samples x %d", epoch, len(entries), cfg.repetitions)
        return IntricateSet(entries=entries, epoch=epoch)
    return asyncio.run(async_build_intricate_set(model, dataset, cfg, seed, epoch, workers))


def sample_intricate(intricate: IntricateSet, sample_id: str, count: int, rng: np.random.Generator) -> list[EulerAngles]:
    """Draw `count` distinct stored triples of one sample, without replacement."""
    stored = intricate.angles(sample_id)
    if not 1 <= count <= len(stored):
        msg = f"Cannot draw {count} of {len(stored)} intricate orientations"
        raise InvalidArgumentError(msg)
    picks = rng.choice(len(stored), size=count, replace=False)
    return [stored[int(pick)] for pick in picks]


@dataclass(frozen=True)
class MiningEfficacy:
    """Mean cross-entropy at mined versus uniformly random orientations."""

    mined_loss: float
    random_loss: float


def compare_to_random(model: ModelParams, dataset: Dataset, cfg: MiningConfig, seed: int) -> MiningEfficacy:
    """Mine one orientation per sample from a uniform init and compare losses at both."""
    mined: list[float] = []
    random: list[float] = []
    for cloud in dataset:
        init = uniform_angles(sample_stream(seed, 0, cloud.id, 0))
        result = mine_orientations(model, cloud, cloud.label, [init], cfg)[0]
        if math.isfinite(result.loss) and math.isfinite(result.initial_loss):
            mined.append(result.loss)
            random.append(result.initial_loss)
    return MiningEfficacy(mined_loss=float(np.mean(mined)), random_loss=float(np.mean(random)))


def save_intricate_set(intricate: IntricateSet, path: Path) -> Path:
    """Write the set as CSV: id, rep, theta_x, theta_y, theta_z."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(INTRICATE_COLUMNS)
        for sample_id, angles in intricate.entries.items():
            for rep, triple in enumerate(angles):
                writer.writerow(
                    [sample_id, rep, format_float(triple.theta_x), format_float(triple.theta_y), format_float(triple.theta_z)]
                )
    _LOGGER.info("Wrote intricate set (%d triples) to %s", intricate.total(), path)
    return path


def load_intricate_set(path: Path, epoch: int = 0) -> IntricateSet:
    """Read a set written by `save_intricate_set`."""
    if not path.is_file():
        msg = f"Intricate set not found: {path}"
        raise NotFoundError(msg)
    entries: dict[str, list[EulerAngles]] = {}
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or tuple(header) != INTRICATE_COLUMNS:
            msg = f"{path}: expected header {','.join(INTRICATE_COLUMNS)}"
            raise DatasetFormatError(msg)
        for line_number, row in enumerate(reader, start=2):
            try:
                sample_id, _rep, theta_x, theta_y, theta_z = row
                triple = EulerAngles(float(theta_x), float(theta_y), float(theta_z))
            except (ValueError, InvalidArgumentError) as exception:
                msg = f"{path}:{line_number}: malformed row {row!r}"
                raise DatasetFormatError(msg) from exception
            entries.setdefault(sample_id, []).append(triple)
    return IntricateSet(entries=entries, epoch=epoch)
