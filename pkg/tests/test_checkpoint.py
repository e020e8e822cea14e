import numpy as np
import pytest

from rotadapt.checkpoint import (
    Checkpoint,
    format_float,
    load_checkpoint,
    load_params,
    save_checkpoint,
    save_params,
)
from rotadapt.const import STUDENT_FILE, TEACHER_FILE
from rotadapt.exceptions import DatasetFormatError, NotFoundError
from rotadapt.network import init_params


@pytest.mark.parametrize(
    ("value", "expected"),
    [
        (0.1, "0.10000000000000001"),
        (1.0, "1"),
        (-0.5, "-0.5"),
        (123.0, "123"),
    ],
)
def test_format_float(value, expected) -> None:
    assert format_float(value) == expected
    assert float(format_float(value)) == value


def test_round_trip_is_bit_exact(tmp_path) -> None:
    params = init_params(7, 3)
    path = save_params(params, tmp_path / "model.xml")
    loaded = load_params(path)
    assert tuple(loaded) == tuple(params)
    for name in params:
        assert np.array_equal(loaded[name], params[name])


def test_manifest_lists_layer_shapes() -> None:
    document = Checkpoint.from_params(init_params(0, 4), role="teacher", epoch=12)
    assert document.role == "teacher"
    assert document.epoch == 12
    assert document.manifest.num_classes == 4
    assert [(layer.name, layer.dims) for layer in document.manifest.layers][:2] == [("w1", (3, 64)), ("b1", (64,))]


def test_checkpoint_directory(tmp_path) -> None:
    student = init_params(0, 2)
    teacher = init_params(1, 2)
    directory = save_checkpoint(tmp_path / "final", student, teacher, epoch=3)
    assert (directory / STUDENT_FILE).is_file()
    assert (directory / TEACHER_FILE).is_file()
    loaded_student, loaded_teacher = load_checkpoint(directory)
    assert loaded_student.allclose(student)
    assert loaded_teacher.allclose(teacher)
    assert load_params(directory).allclose(student)


def test_missing_checkpoint(tmp_path) -> None:
    with pytest.raises(NotFoundError):
        load_params(tmp_path / "absent.xml")


def test_malformed_checkpoint(tmp_path) -> None:
    path = tmp_path / "broken.xml"
    path.write_text("this is not xml", encoding="utf-8")
    with pytest.raises(DatasetFormatError):
        load_params(path)


def test_manifest_mismatch(tmp_path) -> None:
    path = save_params(init_params(0, 3), tmp_path / "model.xml")
    text = path.read_text(encoding="utf-8")
    path.write_text(text.replace('num_classes="3"', 'num_classes="4"'), encoding="utf-8")
    with pytest.raises(DatasetFormatError):
        load_params(path)


def test_truncated_array(tmp_path) -> None:
    path = save_params(init_params(0, 2), tmp_path / "model.xml")
    text = path.read_text(encoding="utf-8")
    path.write_text(text.replace('shape="2"', 'shape="3"'), encoding="utf-8")
    with pytest.raises(DatasetFormatError):
        load_params(path)
