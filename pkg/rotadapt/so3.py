"""
Euler-angle rotations and their analytic gradients.

Rotations are parameterized by Θ = (θx, θy, θz) and composed as
M = R_x(θx) · R_y(θy) · R_z(θz). Points are column vectors, so a cloud
stored one row per point is rotated by right-multiplying with Mᵀ.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .const import TWO_PI, Axis
from .data import PointCloud
from .exceptions import InvalidArgumentError

if TYPE_CHECKING:
    from collections.abc import Sequence


def _check_finite(theta: float) -> float:
    theta = float(theta)
    if not math.isfinite(theta):
        msg = f"Angle must be finite, got {theta!r}"
        raise InvalidArgumentError(msg)
    return theta


def wrap_angle(theta: float) -> float:
    """
    Wrap an angle into [−π, π).

    π itself maps to −π.

    Args:
        theta (float): Angle in radians.

    Returns:
        float: The congruent angle (mod 2π) in [−π, π).

    """
    theta = _check_finite(theta)
    wrapped = (theta + math.pi) % TWO_PI - math.pi
    if wrapped >= math.pi:
        wrapped -= TWO_PI
    return wrapped


@dataclass(frozen=True)
class EulerAngles:
    """Rotation parameters Θ = (θx, θy, θz), each in [−π, π)."""

    theta_x: float
    theta_y: float
    theta_z: float

    def __post_init__(self) -> None:  # noqa: D105
        for name in ("theta_x", "theta_y", "theta_z"):
            value = _check_finite(getattr(self, name))
            if not -math.pi <= value < math.pi:
                msg = f"{name}={value!r} outside [-pi, pi); use EulerAngles.wrapped"
                raise InvalidArgumentError(msg)
            object.__setattr__(self, name, value)

    @classmethod
    def wrapped(cls, theta_x: float, theta_y: float, theta_z: float) -> EulerAngles:
        """Build from arbitrary finite angles, wrapping each into [−π, π)."""
        return cls(wrap_angle(theta_x), wrap_angle(theta_y), wrap_angle(theta_z))

    @classmethod
    def from_array(cls, values: Sequence[float] | np.ndarray) -> EulerAngles:
        """Build from a 3-vector, wrapping each component."""
        theta_x, theta_y, theta_z = (float(v) for v in values)
        return cls.wrapped(theta_x, theta_y, theta_z)

    @classmethod
    def identity(cls) -> EulerAngles:
        """The zero rotation."""
        return cls(0.0, 0.0, 0.0)

    def as_array(self) -> np.ndarray:
        """Return (θx, θy, θz) as a float64 vector."""
        return np.array([self.theta_x, self.theta_y, self.theta_z], dtype=np.float64)


def _axis(axis: Axis | str) -> Axis:
    try:
        return Axis(axis)
    except ValueError as exception:
        msg = f"Unknown axis {axis!r}"
        raise InvalidArgumentError(msg) from exception


def axis_rotation(axis: Axis | str, theta: float) -> np.ndarray:
    """Right-handed rotation matrix about a coordinate axis."""
    axis = _axis(axis)
    theta = _check_finite(theta)
    c, s = math.cos(theta), math.sin(theta)
    if axis is Axis.X:
        rows = [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
    elif axis is Axis.Y:
        rows = [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
    else:
        rows = [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
    return np.array(rows, dtype=np.float64)


def axis_rotation_derivative(axis: Axis | str, theta: float) -> np.ndarray:
    """Element-wise derivative dR/dθ of `axis_rotation`."""
    axis = _axis(axis)
    theta = _check_finite(theta)
    c, s = math.cos(theta), math.sin(theta)
    if axis is Axis.X:
        rows = [[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]]
    elif axis is Axis.Y:
        rows = [[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]]
    else:
        rows = [[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]]
    return np.array(rows, dtype=np.float64)


def _components(angles: EulerAngles | Sequence[float] | np.ndarray) -> tuple[float, float, float]:
    if isinstance(angles, EulerAngles):
        return angles.theta_x, angles.theta_y, angles.theta_z
    values = np.asarray(angles, dtype=np.float64).reshape(-1)
    if values.shape != (3,):
        msg = f"Expected three angles, got shape {values.shape}"
        raise InvalidArgumentError(msg)
    return float(values[0]), float(values[1]), float(values[2])


def compose_euler(angles: EulerAngles | Sequence[float] | np.ndarray) -> np.ndarray:
    """
    Compose M = R_x(θx) · R_y(θy) · R_z(θz).

    Raw 3-vectors are accepted unwrapped; the result is 2π-periodic in each angle.
    """
    theta_x, theta_y, theta_z = _components(angles)
    return axis_rotation(Axis.X, theta_x) @ axis_rotation(Axis.Y, theta_y) @ axis_rotation(Axis.Z, theta_z)


def rotate_points(rotation: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Apply a rotation to row-stored points (each row p becomes M·p)."""
    return points @ rotation.T


def apply_rotation(rotation: np.ndarray, cloud: PointCloud) -> PointCloud:
    """Rotate every point of a cloud; id and label are preserved."""
    return cloud.with_points(rotate_points(rotation, cloud.points))


def rotate_cloud(angles: EulerAngles, cloud: PointCloud) -> PointCloud:
    """Shorthand for apply_rotation(compose_euler(angles), cloud)."""
    return apply_rotation(compose_euler(angles), cloud)


def grad_euler(
    angles: EulerAngles | Sequence[float] | np.ndarray,
    cloud: PointCloud | np.ndarray,
    dl_dphat: np.ndarray,
) -> np.ndarray:
    """
    Chain rule from the rotated cloud back to the Euler angles.

    With P̂ = M(Θ)·P, dL/dθx contracts dL/dP̂ with (∂R_x/∂θx)·R_y·R_z·P,
    and likewise for θy and θz.

    Args:
        angles: The rotation parameters the cloud was rotated with.
        cloud: The un-rotated cloud (or its N×3 points).
        dl_dphat (np.ndarray): N×3 gradient of the loss at the rotated points.

    Returns:
        np.ndarray: (dL/dθx, dL/dθy, dL/dθz).

    """
    points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    upstream = np.asarray(dl_dphat, dtype=np.float64)
    if upstream.shape != points.shape:
        msg = f"Upstream gradient shape {upstream.shape} does not match points {points.shape}"
        raise InvalidArgumentError(msg)
    if not np.all(np.isfinite(upstream)):
        msg = "Upstream gradient has non-finite entries"
        raise InvalidArgumentError(msg)

    theta_x, theta_y, theta_z = _components(angles)
    r_x, r_y, r_z = axis_rotation(Axis.X, theta_x), axis_rotation(Axis.Y, theta_y), axis_rotation(Axis.Z, theta_z)
    d_m = (
        axis_rotation_derivative(Axis.X, theta_x) @ r_y @ r_z,
        r_x @ axis_rotation_derivative(Axis.Y, theta_y) @ r_z,
        r_x @ r_y @ axis_rotation_derivative(Axis.Z, theta_z),
    )
    # sum_n g_n · (dM p_n) == sum_ij dM_ij (Gᵀ P)_ij
    outer = upstream.T @ points
    return np.array([float(np.sum(outer * derivative)) for derivative in d_m])


def uniform_angles(rng: np.random.Generator) -> EulerAngles:
    """Draw Θ uniformly from [−π, π)³ (uniform Euler sampling, not Haar)."""
    return EulerAngles.from_array(rng.uniform(-math.pi, math.pi, size=3))
