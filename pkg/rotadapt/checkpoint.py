"""Checkpoint documents for rotadapt model parameters."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
from pydantic_xml import BaseXmlModel, attr, element

from .const import CHECKPOINT_FORMAT_VERSION, FLOAT_FORMAT, STUDENT_FILE, TEACHER_FILE
from .exceptions import DatasetFormatError, InvalidArgumentError, NotFoundError
from .network import ModelParams

_LOGGER = logging.getLogger(__name__)


def format_float(value: float) -> str:
    """Decimal text with 17 significant digits (round-trips float64 exactly)."""
    return format(float(value), FLOAT_FORMAT)


class Layer(BaseXmlModel, tag="layer"):
    """
    Represents the xml element `<layer ...>` of the layer-shape manifest.

    E.g. `<layer name="w1" shape="3,64"/>`.
    """

    name: str = attr(name="name")
    shape: str = attr(name="shape")

    @property
    def dims(self) -> tuple[int, ...]:
        """Shape as a tuple of ints."""
        return tuple(int(part) for part in self.shape.split(",") if part)


class Manifest(BaseXmlModel, tag="manifest"):
    """
    Represents the xml element `<manifest ...>`.

    E.g. `<manifest num_classes="4"><layer .../>...</manifest>`.
    """

    num_classes: int = attr(name="num_classes")
    layers: list[Layer] = element(tag="layer", default=[])


class NamedArray(BaseXmlModel, tag="array"):
    """
    Represents the xml element `<array ...>` holding one flattened parameter.

    E.g. `<array name="b5">0 0 0 0</array>`.
    """

    name: str = attr(name="name")
    values: str

    def to_numpy(self, shape: tuple[int, ...]) -> np.ndarray:
        """Parse the decimal text back into an array of the given shape."""
        flat = np.array([float(token) for token in self.values.split()], dtype=np.float64)
        expected = int(np.prod(shape)) if shape else 1
        if flat.size != expected:
            msg = f"Array {self.name} holds {flat.size} values, manifest expects {expected}"
            raise DatasetFormatError(msg)
        return flat.reshape(shape)


class Checkpoint(BaseXmlModel, tag="checkpoint"):
    """
    Represents the root element `<checkpoint ...>` of a checkpoint file.

    E.g. `<checkpoint format_version="1" role="student" epoch="200">`.
    """

    format_version: int = attr(name="format_version")
    role: str = attr(name="role", default="student")
    epoch: int = attr(name="epoch", default=0)
    manifest: Manifest = element(tag="manifest")
    arrays: list[NamedArray] = element(tag="array", default=[])

    @classmethod
    def from_params(cls, params: ModelParams, role: str = "student", epoch: int = 0) -> Checkpoint:
        """Build the document for a parameter set."""
        return cls(
            format_version=CHECKPOINT_FORMAT_VERSION,
            role=role,
            epoch=epoch,
            manifest=Manifest(
                num_classes=params.num_classes,
                layers=[Layer(name=name, shape=",".join(str(d) for d in array.shape)) for name, array in params.items()],
            ),
            arrays=[
                NamedArray(name=name, values=" ".join(format_float(v) for v in array.reshape(-1)))
                for name, array in params.items()
            ],
        )

    def to_params(self) -> ModelParams:
        """Rebuild the parameter set, checking it against the manifest."""
        if self.format_version != CHECKPOINT_FORMAT_VERSION:
            msg = f"Unsupported checkpoint format version {self.format_version}"
            raise DatasetFormatError(msg)
        shapes = {layer.name: layer.dims for layer in self.manifest.layers}
        arrays: dict[str, np.ndarray] = {}
        for named in self.arrays:
            if named.name not in shapes:
                msg = f"Array {named.name} missing from the layer manifest"
                raise DatasetFormatError(msg)
            arrays[named.name] = named.to_numpy(shapes[named.name])
        params = ModelParams({name: arrays[name] for name in shapes if name in arrays})
        try:
            params.validate()
        except InvalidArgumentError as exception:
            msg = f"Checkpoint does not describe a valid model: {exception}"
            raise DatasetFormatError(msg) from exception
        if params.num_classes != self.manifest.num_classes:
            msg = f"Manifest declares {self.manifest.num_classes} classes, head has {params.num_classes}"
            raise DatasetFormatError(msg)
        return params


def save_params(params: ModelParams, path: Path, role: str = "student", epoch: int = 0) -> Path:
    """Write one parameter set as a checkpoint document."""
    path.parent.mkdir(parents=True, exist_ok=True)
    document = Checkpoint.from_params(params, role=role, epoch=epoch)
    path.write_bytes(document.to_xml(pretty_print=True, xml_declaration=True, encoding="UTF-8"))
    _LOGGER.debug("Wrote %s checkpoint to %s", role, path)
    return path


def load_params(path: Path) -> ModelParams:
    """
    Load a parameter set.

    Args:
        path (Path): A checkpoint file, or a checkpoint directory (its student is loaded).

    Returns:
        ModelParams: The stored parameters, bit-identical to what was saved.

    """
    if path.is_dir():
        path = path / STUDENT_FILE
    if not path.is_file():
        msg = f"Checkpoint not found: {path}"
        raise NotFoundError(msg)
    try:
        document = Checkpoint.from_xml(path.read_bytes())
    except Exception as exception:  # pylint: disable=broad-except
        msg = f"Malformed checkpoint {path}: {exception}"
        raise DatasetFormatError(msg) from exception
    return document.to_params()


def save_checkpoint(directory: Path, student: ModelParams, teacher: ModelParams, epoch: int = 0) -> Path:
    """Write student and teacher into a checkpoint directory."""
    save_params(student, directory / STUDENT_FILE, role="student", epoch=epoch)
    save_params(teacher, directory / TEACHER_FILE, role="teacher", epoch=epoch)
    _LOGGER.info("Saved checkpoint for epoch %d to %s", epoch, directory)
    return directory


def load_checkpoint(directory: Path) -> tuple[ModelParams, ModelParams]:
    """Load (student, teacher) from a checkpoint directory."""
    return load_params(directory / STUDENT_FILE), load_params(directory / TEACHER_FILE)
