"""Custom types for rotadapt."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .const import Split
from .exceptions import InvalidArgumentError, NotFoundError

if TYPE_CHECKING:
    from collections.abc import Iterator


def _frozen(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


def normalize_points(points: np.ndarray) -> np.ndarray:
    """
    Center a point set on its centroid and scale it into the unit ball.

    Args:
        points (np.ndarray): N×3 coordinates.

    Returns:
        np.ndarray: A new array with centroid 0 and maximum point norm 1.

    """
    centered = points - points.mean(axis=0)
    radius = float(np.max(np.linalg.norm(centered, axis=1)))
    if radius == 0.0:
        return centered
    return centered / radius


@dataclass(frozen=True)
class PointCloud:
    """
    A labeled point set, the unit of all processing.

    Points are stored one row per point; the array is read-only.
    """

    id: str
    points: np.ndarray
    label: int
    domain: str = ""

    def __post_init__(self) -> None:  # noqa: D105
        points = np.array(self.points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3:  # noqa: PLR2004
            msg = f"Point cloud {self.id!r} must be N×3, got shape {points.shape}"
            raise InvalidArgumentError(msg)
        if points.shape[0] < 1:
            msg = f"Point cloud {self.id!r} is empty"
            raise InvalidArgumentError(msg)
        if not np.all(np.isfinite(points)):
            msg = f"Point cloud {self.id!r} has non-finite coordinates"
            raise InvalidArgumentError(msg)
        object.__setattr__(self, "points", _frozen(points))

    @property
    def num_points(self) -> int:
        """Number of points."""
        return int(self.points.shape[0])

    def with_points(self, points: np.ndarray) -> PointCloud:
        """Return a copy carrying new coordinates, same id, label and domain."""
        return PointCloud(id=self.id, points=points, label=self.label, domain=self.domain)

    def normalized(self) -> PointCloud:
        """Return the normalized copy (centroid 0, max norm 1)."""
        return self.with_points(normalize_points(self.points))


@dataclass
class Dataset:
    """A list of point clouds from one domain and split."""

    clouds: list[PointCloud]
    class_names: list[str]
    split: Split = Split.TRAIN
    domain: str = ""
    _index: dict[str, int] = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self) -> None:  # noqa: D105
        for position, cloud in enumerate(self.clouds):
            if not 0 <= cloud.label < len(self.class_names):
                msg = f"Label {cloud.label} of {cloud.id!r} outside [0, {len(self.class_names)})"
                raise InvalidArgumentError(msg)
            self._index[cloud.id] = position

    def __len__(self) -> int:  # noqa: D105
        return len(self.clouds)

    def __iter__(self) -> Iterator[PointCloud]:  # noqa: D105
        return iter(self.clouds)

    @property
    def num_classes(self) -> int:
        """Size of the class-name table."""
        return len(self.class_names)

    @property
    def labels(self) -> np.ndarray:
        """Labels as an integer array in cloud order."""
        return np.array([cloud.label for cloud in self.clouds], dtype=np.int64)

    def get(self, sample_id: str) -> PointCloud:
        """Look up a cloud by id."""
        try:
            return self.clouds[self._index[sample_id]]
        except KeyError as exception:
            msg = f"Unknown sample id {sample_id!r}"
            raise NotFoundError(msg) from exception

    def class_counts(self) -> np.ndarray:
        """Per-class member counts."""
        return np.bincount(self.labels, minlength=self.num_classes)
