import json
import math

import numpy as np
import pytest

from rotadapt import evaluation
from rotadapt.const import METRICS_FILE, SERIES_FILE
from rotadapt.exceptions import InvalidArgumentError
from rotadapt.mining import MiningConfig
from rotadapt.network import init_params
from rotadapt.so3 import EulerAngles

LN2 = math.log(2)


def _constant_model(favored: int = 0):
    def _silence(name: str, array: np.ndarray) -> np.ndarray:
        if name == "w5":
            return np.zeros_like(array)
        if name == "b5":
            bias = np.zeros_like(array)
            bias[favored] = 1.0
            return bias
        return array

    return init_params(0, 2).map(_silence)


def test_rotation_series() -> None:
    series = evaluation.test_rotation_series()
    assert len(series) == 64
    assert series.raw[0] == (math.pi / 2, math.pi / 2, math.pi / 2)
    assert series.raw[1] == (math.pi / 2, math.pi / 2, math.pi)
    assert series.identity_index == 63
    assert np.allclose(series.matrices()[series.identity_index], np.eye(3))
    for angles in series:
        assert -math.pi <= min(angles.as_array())
        assert max(angles.as_array()) < math.pi
    assert len({tuple(np.round(m, 9).ravel()) for m in series.matrices()}) < 64


@pytest.mark.parametrize(
    ("labels", "predictions", "num_classes", "acc", "avg"),
    [
        ([0, 1, 2, 3], [0, 0, 0, 0], 4, 0.25, 0.0625),
        ([0, 0, 1, 1], [0, 0, 0, 1], 2, 0.75, (2 / 3 + 1) / 2),
        ([0, 1, 1, 0], [0, 1, 1, 0], 3, 1.0, 2 / 3),
    ],
)
def test_accuracy_and_precision(labels, predictions, num_classes, acc, avg) -> None:
    assert evaluation.accuracy(np.array(labels), np.array(predictions)) == pytest.approx(acc)
    assert evaluation.macro_precision(np.array(labels), np.array(predictions), num_classes) == pytest.approx(avg)


def test_confusion_matrix() -> None:
    matrix = evaluation.confusion_matrix(np.array([0, 0, 1, 2]), np.array([0, 1, 1, 1]), 3)
    assert matrix.tolist() == [[1, 1, 0], [0, 1, 0], [0, 1, 0]]
    with pytest.raises(InvalidArgumentError):
        evaluation.confusion_matrix(np.array([]), np.array([]), 3)


@pytest.mark.parametrize(
    ("probabilities", "expected"),
    [
        ([[0.2, 0.8], [0.2, 0.8], [0.2, 0.8]], 0.0),
        ([[1.0, 0.0], [0.0, 1.0]], LN2),
        ([[[1.0, 0.0], [0.0, 1.0]], [[0.5, 0.5], [0.5, 0.5]]], LN2 / 2),
    ],
)
def test_consistency_metric(probabilities, expected) -> None:
    assert evaluation.consistency_metric(np.array(probabilities)) == pytest.approx(expected)


@pytest.mark.parametrize(
    "probabilities",
    [
        [[0.5, 0.4]],
        [[1.2, -0.2]],
        [[math.nan, 1.0]],
        [],
    ],
)
def test_consistency_rejects(probabilities) -> None:
    with pytest.raises(InvalidArgumentError):
        evaluation.consistency_metric(np.array(probabilities))


def test_entropy_map() -> None:
    mean, ent = evaluation.entropy_map(np.array([[1.0, 0.0], [0.5, 0.5]]))
    assert np.allclose(mean, [0.75, 0.25])
    assert np.allclose(ent, [-LN2 / 4, -LN2 / 4])


def test_mmd() -> None:
    rng = np.random.default_rng(0)
    first = rng.normal(size=(60, 4))
    second = rng.normal(size=(60, 4))
    shifted = rng.normal(size=(60, 4)) + 3.0
    assert abs(evaluation.mmd2(first, second)) < 0.05
    assert evaluation.mmd2(first, shifted) > 0.5
    assert evaluation.mmd2(first, shifted, bandwidth=1.0) > evaluation.mmd2(first, second, bandwidth=1.0)
    with pytest.raises(InvalidArgumentError):
        evaluation.mmd2(first[:1], second)
    with pytest.raises(InvalidArgumentError):
        evaluation.mmd2(first, second, bandwidth=0.0)


def test_median_bandwidth() -> None:
    assert evaluation.median_bandwidth(np.zeros((4, 3))) == 1.0
    assert evaluation.median_bandwidth(np.array([[0.0], [1.0], [3.0]])) == pytest.approx(2.0)


def test_per_class_mmd() -> None:
    rng = np.random.default_rng(1)
    features = rng.normal(size=(9, 2))
    labels = np.array([0, 0, 0, 1, 1, 1, 2, 2, 2])
    result = evaluation.per_class_mmd(features, labels, features[:7], labels[:7])
    assert sorted(result) == [0, 1]


def test_evaluate_constant_model(source_train) -> None:
    report = evaluation.evaluate(_constant_model(0), source_train, workers=1)
    share = float(np.mean(source_train.labels == 0))
    assert report.num_samples == len(source_train)
    assert len(report.acc) == 64
    assert report.acc_mean == pytest.approx(share)
    assert report.acc_std == pytest.approx(0.0)
    assert report.avg_mean == pytest.approx(share / 2)
    assert report.cst == pytest.approx(0.0, abs=1e-12)
    assert report.confusion_matrix == [[8, 0], [8, 0]]
    assert report.sample_ids is None


def test_evaluate_report(target_test) -> None:
    report = evaluation.evaluate(init_params(3, 2), target_test, workers=2, with_probabilities=True)
    assert all(0.0 <= value <= 1.0 for value in report.acc)
    assert report.cst >= 0.0
    assert sum(map(sum, report.confusion_matrix)) == len(target_test)
    assert report.sample_ids == [cloud.id for cloud in target_test]
    assert len(report.entropy_maps) == len(target_test)
    assert all(value <= 0.0 for row in report.entropy_maps for value in row)


@pytest.mark.asyncio
async def test_async_evaluate_matches(target_test) -> None:
    model = init_params(4, 2)
    expected = evaluation.evaluate(model, target_test, workers=1)
    report = await evaluation.async_evaluate(model, target_test, workers=3)
    assert report.acc == expected.acc
    assert report.cst == pytest.approx(expected.cst)


def test_write_report(tmp_path, target_test) -> None:
    report = evaluation.evaluate(init_params(0, 2), target_test, workers=1)
    metrics, series = evaluation.write_report(report, tmp_path / "eval")
    assert metrics.name == METRICS_FILE
    assert series.name == SERIES_FILE
    assert json.loads(metrics.read_text(encoding="utf-8"))["acc_mean"] == pytest.approx(report.acc_mean)
    lines = series.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "theta_x,theta_y,theta_z,acc,avg"
    assert len(lines) == 65


def test_extract_features(model, source_train) -> None:
    plain = evaluation.extract_features(model, source_train)
    assert plain.shape == (len(source_train), 128)
    turned = evaluation.extract_features(model, source_train, EulerAngles(0.0, 0.0, 0.0))
    assert np.allclose(plain, turned)
    with pytest.raises(InvalidArgumentError):
        evaluation.extract_features(model, source_train, [EulerAngles.identity()])


def test_shift_analysis(model, source_train, target_test) -> None:
    analysis = evaluation.analyze_orientational_shift(model, source_train, target_test, "random", seed=0)
    assert analysis.strategy == "random"
    assert sorted(analysis.per_class) == [0, 1]
    assert analysis.mean == pytest.approx(np.mean(list(analysis.per_class.values())))

    mining = MiningConfig(repetitions=1, steps=2)
    intricate = evaluation.analyze_orientational_shift(
        model, source_train, target_test, "intricate", seed=0, mining=mining, workers=1
    )
    assert intricate.strategy == "intricate"
    with pytest.raises(InvalidArgumentError):
        evaluation.analyze_orientational_shift(model, source_train, target_test, "mixup")


def test_shift_probe(model, source_train, target_test) -> None:
    probe = evaluation.shift_probe(model, source_train, target_test, seed=0)
    assert 0.0 <= probe.acc_mean <= 1.0
    assert probe.cst >= 0.0


def test_identity_entry_matches_unrotated(target_test) -> None:
    model = init_params(5, 2)
    report = evaluation.evaluate(model, target_test, workers=1)
    series = evaluation.test_rotation_series()
    predictions = np.argmax(evaluation.predict_probabilities(model, target_test.clouds, np.eye(3)), axis=1)
    assert report.acc[series.identity_index] == evaluation.accuracy(target_test.labels, predictions)


def test_mmd_is_symmetric() -> None:
    rng = np.random.default_rng(2)
    first = rng.normal(size=(20, 3))
    second = rng.normal(size=(30, 3)) + 1.0
    assert evaluation.mmd2(first, second) == pytest.approx(evaluation.mmd2(second, first), abs=1e-12)
