"""
Synthetic multi-domain point cloud benchmark.

Four parametric primitives are sampled area-uniformly and restyled per domain
(anisotropic scale, density skew, half-space occlusion, jitter) to stand in for
a real cross-domain shape benchmark.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .checkpoint import format_float
from .const import (
    BASELINE_JITTER_CLIP,
    BASELINE_JITTER_SIGMA,
    BASELINE_KEEP_RANGE,
    DEFAULT_NUM_CLASSES,
    DEFAULT_PER_CLASS,
    DEFAULT_POINTS,
    DEFAULT_SEED,
    MANIFEST_FILE,
    MIN_PER_CLASS,
    MIN_POINTS,
    TRAIN_FRACTION,
    ShapeClass,
    Split,
)
from .data import Dataset, PointCloud, normalize_points
from .exceptions import DatasetFormatError, EmptyDatasetError, InvalidArgumentError, NotFoundError
from .so3 import compose_euler, rotate_points

if TYPE_CHECKING:
    from collections.abc import Sequence

_LOGGER = logging.getLogger(__name__)

MANIFEST_COLUMNS = ("id", "domain", "split", "class", "path")


@dataclass(frozen=True)
class DomainProfile:
    """Acquisition style of one domain."""

    name: str
    jitter_sigma: float = 0.0
    density_bias: float = 0.0
    occlusion_fraction: float = 0.0
    scale_min: float = 1.0
    scale_max: float = 1.0

    def __post_init__(self) -> None:  # noqa: D105
        if self.jitter_sigma < 0:
            msg = f"jitter_sigma must be >= 0, got {self.jitter_sigma}"
            raise InvalidArgumentError(msg)
        if not 0.0 <= self.occlusion_fraction <= 0.5:  # noqa: PLR2004
            msg = f"occlusion_fraction must lie in [0, 0.5], got {self.occlusion_fraction}"
            raise InvalidArgumentError(msg)
        if not 0 < self.scale_min <= self.scale_max:
            msg = f"Need 0 < scale_min <= scale_max, got {self.scale_min}, {self.scale_max}"
            raise InvalidArgumentError(msg)


SOURCE_PROFILE = DomainProfile(name="source", scale_min=0.9, scale_max=1.1)
TARGET_PROFILE = DomainProfile(
    name="target",
    jitter_sigma=0.02,
    density_bias=1.5,
    occlusion_fraction=0.25,
    scale_min=0.7,
    scale_max=1.3,
)


def class_names(num_classes: int) -> list[str]:
    """Class-name table of the primitive classes."""
    return [ShapeClass(k).name.lower() if k in ShapeClass._value2member_map_ else str(k) for k in range(num_classes)]


def _disk(radius: float, count: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    rho = radius * np.sqrt(rng.uniform(0.0, 1.0, count))
    phi = rng.uniform(0.0, 2.0 * math.pi, count)
    return rho * np.cos(phi), rho * np.sin(phi)


def _cuboid(n_points: int, rng: np.random.Generator) -> np.ndarray:
    half = rng.uniform(0.4, 1.2, size=3) / 2.0
    areas = np.array([half[1] * half[2], half[0] * half[2], half[0] * half[1]])
    face_probs = np.repeat(areas, 2) / np.sum(np.repeat(areas, 2))
    faces = rng.choice(6, size=n_points, p=face_probs)
    points = rng.uniform(-1.0, 1.0, size=(n_points, 3)) * half
    axis = faces // 2
    sign = np.where(faces % 2 == 0, 1.0, -1.0)
    points[np.arange(n_points), axis] = sign * half[axis]
    return points


def _cylinder(n_points: int, rng: np.random.Generator) -> np.ndarray:
    radius = rng.uniform(0.3, 0.7)
    height = rng.uniform(0.6, 1.6)
    side, cap = 2.0 * math.pi * radius * height, math.pi * radius**2
    part = rng.choice(3, size=n_points, p=np.array([side, cap, cap]) / (side + 2.0 * cap))
    points = np.empty((n_points, 3))
    on_side = part == 0
    phi = rng.uniform(0.0, 2.0 * math.pi, int(on_side.sum()))
    points[on_side] = np.column_stack(
        [radius * np.cos(phi), radius * np.sin(phi), rng.uniform(-height / 2, height / 2, phi.size)]
    )
    for value, z in ((1, height / 2), (2, -height / 2)):
        mask = part == value
        x, y = _disk(radius, int(mask.sum()), rng)
        points[mask] = np.column_stack([x, y, np.full(x.size, z)])
    return points


def _cone(n_points: int, rng: np.random.Generator) -> np.ndarray:
    radius = rng.uniform(0.3, 0.7)
    height = rng.uniform(0.6, 1.4)
    side, base = math.pi * radius * math.hypot(radius, height), math.pi * radius**2
    on_side = rng.uniform(0.0, 1.0, n_points) < side / (side + base)
    points = np.empty((n_points, 3))
    count = int(on_side.sum())
    # lateral area grows linearly with distance from the apex
    t = np.sqrt(rng.uniform(0.0, 1.0, count))
    phi = rng.uniform(0.0, 2.0 * math.pi, count)
    points[on_side] = np.column_stack([t * radius * np.cos(phi), t * radius * np.sin(phi), height / 2 - t * height])
    x, y = _disk(radius, n_points - count, rng)
    points[~on_side] = np.column_stack([x, y, np.full(x.size, -height / 2)])
    return points


def _torus(n_points: int, rng: np.random.Generator) -> np.ndarray:
    major = rng.uniform(0.5, 0.8)
    minor = rng.uniform(0.15, 0.3)
    accepted: list[np.ndarray] = []
    total = 0
    while total < n_points:
        theta = rng.uniform(0.0, 2.0 * math.pi, 2 * n_points)
        phi = rng.uniform(0.0, 2.0 * math.pi, 2 * n_points)
        # area element is proportional to (R + r cos φ)
        keep = rng.uniform(0.0, 1.0, 2 * n_points) < (major + minor * np.cos(phi)) / (major + minor)
        ring = major + minor * np.cos(phi[keep])
        batch = np.column_stack([ring * np.cos(theta[keep]), ring * np.sin(theta[keep]), minor * np.sin(phi[keep])])
        accepted.append(batch)
        total += batch.shape[0]
    return np.concatenate(accepted)[:n_points]


_SAMPLERS = {
    ShapeClass.CUBOID: _cuboid,
    ShapeClass.CYLINDER: _cylinder,
    ShapeClass.CONE: _cone,
    ShapeClass.TORUS: _torus,
}


def sample_surface(class_id: int, n_points: int, rng: np.random.Generator) -> np.ndarray:
    """Un-normalized area-uniform surface samples of one primitive."""
    try:
        shape = ShapeClass(class_id)
    except ValueError as exception:
        msg = f"Unknown class id {class_id}"
        raise InvalidArgumentError(msg) from exception
    if n_points < MIN_POINTS:
        msg = f"n_points must be >= {MIN_POINTS}, got {n_points}"
        raise InvalidArgumentError(msg)
    return _SAMPLERS[shape](n_points, rng)


def generate_shape(
    class_id: int,
    n_points: int,
    rng: np.random.Generator,
    sample_id: str = "",
    domain: str = "",
) -> PointCloud:
    """Sample one normalized primitive with randomized aspect parameters."""
    points = sample_surface(class_id, n_points, rng)
    return PointCloud(id=sample_id, points=normalize_points(points), label=int(class_id), domain=domain)


def _random_direction(rng: np.random.Generator) -> np.ndarray:
    direction = rng.normal(size=3)
    return direction / np.linalg.norm(direction)


def apply_domain_style(cloud: PointCloud, profile: DomainProfile, rng: np.random.Generator) -> PointCloud:
    """
    Restyle a cloud for a domain and renormalize.

    Order: anisotropic scale, density-biased resampling, half-space occlusion
    (survivors resampled back to N points), coordinate jitter.
    """
    points = cloud.points * rng.uniform(profile.scale_min, profile.scale_max, size=3)
    count = points.shape[0]

    if profile.density_bias:
        logits = profile.density_bias * (points @ _random_direction(rng))
        weights = np.exp(logits - logits.max())
        points = points[rng.choice(count, size=count, p=weights / weights.sum())]

    if profile.occlusion_fraction:
        projection = points @ _random_direction(rng)
        keep = max(1, count - round(profile.occlusion_fraction * count))
        survivors = np.argsort(projection, kind="stable")[:keep]
        refill = rng.choice(survivors, size=count - keep, replace=True)
        points = points[np.concatenate([survivors, refill])]

    if profile.jitter_sigma:
        points = points + rng.normal(0.0, profile.jitter_sigma, size=points.shape)

    return cloud.with_points(normalize_points(points))


@dataclass(frozen=True)
class Augmented:
    """Baseline augmentation output with provenance of every point."""

    points: np.ndarray
    source_index: np.ndarray
    rotation: np.ndarray


def augment_points(
    points: np.ndarray,
    rng: np.random.Generator,
    *,
    rotate: bool = True,
    keep_range: tuple[float, float] = BASELINE_KEEP_RANGE,
    jitter_sigma: float = BASELINE_JITTER_SIGMA,
    jitter_clip: float = BASELINE_JITTER_CLIP,
) -> Augmented:
    """Down-sample then re-pad by duplication, rotate by uniform Euler angles, jitter with clipping."""
    count = points.shape[0]
    keep = min(count, max(1, round(rng.uniform(*keep_range) * count)))
    kept = np.sort(rng.permutation(count)[:keep])
    refill = kept[rng.choice(keep, size=count - keep, replace=True)] if keep < count else np.empty(0, dtype=np.int64)
    source_index = np.concatenate([kept, refill]).astype(np.int64)
    rotation = compose_euler(rng.uniform(-math.pi, math.pi, size=3)) if rotate else np.eye(3)
    moved = rotate_points(rotation, points[source_index])
    noise = np.clip(rng.normal(0.0, 1.0, size=moved.shape) * jitter_sigma, -jitter_clip, jitter_clip)
    return Augmented(points=moved + noise, source_index=source_index, rotation=rotation)


def augment_baseline(cloud: PointCloud, rng: np.random.Generator, *, rotate: bool = True) -> PointCloud:
    """Random point down-sampling, random rotation and point jittering."""
    return cloud.with_points(augment_points(cloud.points, rng, rotate=rotate).points)


@dataclass(frozen=True)
class BenchmarkSpec:
    """Size and domain styles of the synthetic benchmark."""

    num_classes: int = DEFAULT_NUM_CLASSES
    per_class: int = DEFAULT_PER_CLASS
    n_points: int = DEFAULT_POINTS
    source: DomainProfile = SOURCE_PROFILE
    target: DomainProfile = TARGET_PROFILE
    seed: int = DEFAULT_SEED

    def __post_init__(self) -> None:  # noqa: D105
        if not 2 <= self.num_classes <= len(ShapeClass):  # noqa: PLR2004
            msg = f"num_classes must lie in [2, {len(ShapeClass)}], got {self.num_classes}"
            raise InvalidArgumentError(msg)
        if self.per_class < MIN_PER_CLASS:
            msg = f"per_class must be >= {MIN_PER_CLASS}, got {self.per_class}"
            raise InvalidArgumentError(msg)
        if self.n_points < MIN_POINTS:
            msg = f"n_points must be >= {MIN_POINTS}, got {self.n_points}"
            raise InvalidArgumentError(msg)


@dataclass
class DomainData:
    """Train and test split of one domain."""

    train: Dataset
    test: Dataset


@dataclass
class Benchmark:
    """Source and target domains."""

    source: DomainData
    target: DomainData
    datasets: list[Dataset] = field(default_factory=list)


def _build_domain(spec: BenchmarkSpec, profile: DomainProfile, domain_index: int, seed: int) -> DomainData:
    names = class_names(spec.num_classes)
    train: list[PointCloud] = []
    test: list[PointCloud] = []
    cut = round(TRAIN_FRACTION * spec.per_class)
    for class_id in range(spec.num_classes):
        for index in range(spec.per_class):
            rng = np.random.default_rng(np.random.SeedSequence([seed, domain_index, class_id, index]))
            sample_id = f"{profile.name}-{class_id:02d}-{index:04d}"
            shape = generate_shape(class_id, spec.n_points, rng, sample_id=sample_id, domain=profile.name)
            styled = apply_domain_style(shape, profile, rng)
            (train if index < cut else test).append(styled)
    return DomainData(
        train=Dataset(clouds=train, class_names=names, split=Split.TRAIN, domain=profile.name),
        test=Dataset(clouds=test, class_names=names, split=Split.TEST, domain=profile.name),
    )


def build_benchmark(spec: BenchmarkSpec, seed: int | None = None, out_dir: Path | None = None) -> Benchmark:
    """
    Generate source and target domains with an 80/20 split inside each.

    Args:
        spec (BenchmarkSpec): Sizes and domain profiles.
        seed (int | None): Overrides `spec.seed`.
        out_dir (Path | None): When given, the benchmark is written there.

    Returns:
        Benchmark: The four datasets.

    """
    seed = spec.seed if seed is None else seed
    source = _build_domain(spec, spec.source, 0, seed)
    target = _build_domain(spec, spec.target, 1, seed)
    benchmark = Benchmark(source=source, target=target, datasets=[source.train, source.test, target.train, target.test])
    _LOGGER.info(
        "Generated benchmark: %d classes x %d per domain, %d points, seed %d",
        spec.num_classes,
        spec.per_class,
        spec.n_points,
        seed,
    )
    if out_dir is not None:
        save_dataset(benchmark.datasets, out_dir)
    return benchmark


def _write_xyz(points: np.ndarray, path: Path) -> None:
    lines = [" ".join(format_float(value) for value in row) for row in points]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_dataset(datasets: Dataset | Sequence[Dataset], directory: Path) -> Path:
    """Write one `.xyz` file per cloud and a single `manifest.csv` covering all datasets."""
    if isinstance(datasets, Dataset):
        datasets = [datasets]
    try:
        directory.mkdir(parents=True, exist_ok=True)
        with (directory / MANIFEST_FILE).open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(MANIFEST_COLUMNS)
            for dataset in datasets:
                folder = Path(dataset.domain or "default") / dataset.split.value
                (directory / folder).mkdir(parents=True, exist_ok=True)
                for cloud in dataset:
                    relative = folder / f"{cloud.id}.xyz"
                    _write_xyz(cloud.points, directory / relative)
                    writer.writerow([cloud.id, dataset.domain, dataset.split.value, cloud.label, relative.as_posix()])
    except OSError as exception:
        msg = f"Failed to write dataset to {directory}: {exception}"
        raise DatasetFormatError(msg) from exception
    _LOGGER.info("Wrote %d clouds to %s", sum(len(d) for d in datasets), directory)
    return directory


def _read_xyz(path: Path) -> np.ndarray:
    if not path.is_file():
        msg = f"Point file not found: {path}"
        raise NotFoundError(msg)
    try:
        return np.loadtxt(path, dtype=np.float64, ndmin=2)
    except ValueError as exception:
        msg = f"Malformed point file {path}: {exception}"
        raise DatasetFormatError(msg) from exception


def load_dataset(directory: Path, domain: str | None = None, split: Split | str | None = None) -> Dataset:
    """
    Load clouds listed in `manifest.csv`, optionally filtered by domain and split.

    The class table covers every class mentioned anywhere in the manifest.
    """
    manifest = directory / MANIFEST_FILE
    if not manifest.is_file():
        msg = f"No {MANIFEST_FILE} in {directory}: empty dataset"
        raise EmptyDatasetError(msg)
    split = Split(split) if split is not None else None

    rows: list[tuple[str, str, Split, int, str]] = []
    with manifest.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or tuple(header) != MANIFEST_COLUMNS:
            msg = f"{manifest}:1: expected header {','.join(MANIFEST_COLUMNS)}"
            raise DatasetFormatError(msg)
        for line_number, row in enumerate(reader, start=2):
            try:
                sample_id, row_domain, row_split, label, relative = row
                rows.append((sample_id, row_domain, Split(row_split), int(label), relative))
            except ValueError as exception:
                msg = f"{manifest}:{line_number}: malformed manifest row {row!r}"
                raise DatasetFormatError(msg) from exception
            if rows[-1][3] < 0:
                msg = f"{manifest}:{line_number}: negative class label {label}"
                raise DatasetFormatError(msg)

    if not rows:
        msg = f"{manifest} lists no clouds: empty dataset"
        raise EmptyDatasetError(msg)
    num_classes = max(2, max(row[3] for row in rows) + 1)
    selected = [row for row in rows if (domain is None or row[1] == domain) and (split is None or row[2] is split)]
    if not selected:
        msg = f"{manifest} has no clouds for domain={domain!r}, split={split}"
        raise EmptyDatasetError(msg)

    clouds = [
        PointCloud(id=sample_id, points=_read_xyz(directory / relative), label=label, domain=row_domain)
        for sample_id, row_domain, _row_split, label, relative in selected
    ]
    _LOGGER.debug("Loaded %d clouds from %s", len(clouds), directory)
    return Dataset(
        clouds=clouds,
        class_names=class_names(num_classes),
        split=split or selected[0][2],
        domain=domain or selected[0][1],
    )
