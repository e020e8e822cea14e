import math

import numpy as np
import pytest

from rotadapt.const import MANIFEST_FILE, ShapeClass, Split
from rotadapt.exceptions import DatasetFormatError, EmptyDatasetError, InvalidArgumentError, NotFoundError
from rotadapt.synthetic import (
    BenchmarkSpec,
    DomainProfile,
    apply_domain_style,
    augment_baseline,
    augment_points,
    build_benchmark,
    class_names,
    generate_shape,
    load_dataset,
    sample_surface,
    save_dataset,
)


def test_class_names() -> None:
    assert class_names(4) == ["cuboid", "cylinder", "cone", "torus"]
    assert class_names(2) == ["cuboid", "cylinder"]


def test_split_sizes() -> None:
    benchmark = build_benchmark(BenchmarkSpec(num_classes=4, per_class=200, n_points=32))
    assert (len(benchmark.source.train), len(benchmark.source.test)) == (640, 160)
    assert (len(benchmark.target.train), len(benchmark.target.test)) == (640, 160)
    assert benchmark.source.train.class_counts().tolist() == [160, 160, 160, 160]
    assert benchmark.target.test.domain == "target"
    assert benchmark.target.test.split is Split.TEST


def test_clouds_are_normalized(benchmark) -> None:
    for dataset in benchmark.datasets:
        for cloud in dataset:
            assert cloud.num_points == 32
            assert np.allclose(cloud.points.mean(axis=0), 0.0, atol=1e-12)
            assert np.max(np.linalg.norm(cloud.points, axis=1)) == pytest.approx(1.0)


def test_benchmark_is_deterministic() -> None:
    spec = BenchmarkSpec(num_classes=2, per_class=10, n_points=32)
    first = build_benchmark(spec, seed=5)
    again = build_benchmark(spec, seed=5)
    other = build_benchmark(spec, seed=6)
    assert np.array_equal(first.target.train.clouds[3].points, again.target.train.clouds[3].points)
    assert not np.array_equal(first.target.train.clouds[3].points, other.target.train.clouds[3].points)


def test_cuboid_points_lie_on_faces() -> None:
    points = np.abs(sample_surface(ShapeClass.CUBOID, 500, np.random.default_rng(0)))
    on_face = np.isclose(points, points.max(axis=0))
    assert np.all(on_face.any(axis=1))


def test_cylinder_side_radius() -> None:
    points = sample_surface(ShapeClass.CYLINDER, 500, np.random.default_rng(1))
    radius = np.hypot(points[:, 0], points[:, 1])
    on_side = np.isclose(radius, radius.max())
    assert on_side.mean() > 0.3
    assert np.all(np.isclose(np.abs(points[~on_side, 2]), np.abs(points[:, 2]).max()))


@pytest.mark.parametrize(("class_id", "n_points"), [(7, 64), (0, 31)])
def test_sample_surface_rejects(class_id, n_points) -> None:
    with pytest.raises(InvalidArgumentError):
        sample_surface(class_id, n_points, np.random.default_rng(0))


def test_neutral_profile_only_normalizes() -> None:
    cloud = generate_shape(ShapeClass.CONE, 64, np.random.default_rng(2), sample_id="c")
    styled = apply_domain_style(cloud, DomainProfile(name="neutral"), np.random.default_rng(3))
    assert np.allclose(styled.points, cloud.points)
    assert styled.id == "c"


def test_target_profile_changes_points() -> None:
    cloud = generate_shape(ShapeClass.TORUS, 64, np.random.default_rng(2))
    profile = DomainProfile(name="t", jitter_sigma=0.02, density_bias=1.5, occlusion_fraction=0.25, scale_min=0.7, scale_max=1.3)
    styled = apply_domain_style(cloud, profile, np.random.default_rng(3))
    assert styled.num_points == 64
    assert not np.allclose(styled.points, cloud.points)


@pytest.mark.parametrize(
    "changes",
    [
        {"occlusion_fraction": 0.6},
        {"jitter_sigma": -0.1},
        {"scale_min": 1.2, "scale_max": 1.0},
        {"scale_min": 0.0},
    ],
)
def test_profile_rejects(changes) -> None:
    with pytest.raises(InvalidArgumentError):
        DomainProfile(name="bad", **changes)


@pytest.mark.parametrize("changes", [{"num_classes": 5}, {"num_classes": 1}, {"per_class": 9}, {"n_points": 16}])
def test_spec_rejects(changes) -> None:
    with pytest.raises(InvalidArgumentError):
        BenchmarkSpec(**changes)


def test_augment_points_provenance() -> None:
    points = np.random.default_rng(0).normal(size=(50, 3))
    augmented = augment_points(points, np.random.default_rng(1), rotate=False, jitter_sigma=0.0)
    assert augmented.points.shape == (50, 3)
    assert np.array_equal(augmented.points, points[augmented.source_index])
    assert np.array_equal(augmented.rotation, np.eye(3))
    assert 40 <= len(np.unique(augmented.source_index)) <= 50


def test_augment_points_rotates_and_clips() -> None:
    points = np.random.default_rng(0).normal(size=(50, 3))
    augmented = augment_points(points, np.random.default_rng(1), jitter_sigma=1.0, jitter_clip=0.05)
    clean = points[augmented.source_index] @ augmented.rotation.T
    assert np.max(np.abs(augmented.points - clean)) <= 0.05 + 1e-12
    assert np.allclose(augmented.rotation.T @ augmented.rotation, np.eye(3))


def test_augment_baseline_keeps_identity(source_train) -> None:
    cloud = source_train.clouds[0]
    augmented = augment_baseline(cloud, np.random.default_rng(0))
    assert (augmented.id, augmented.label) == (cloud.id, cloud.label)
    assert augmented.num_points == cloud.num_points


def test_save_and_load_dataset(tmp_path, benchmark) -> None:
    save_dataset(benchmark.datasets, tmp_path)
    assert (tmp_path / MANIFEST_FILE).is_file()
    loaded = load_dataset(tmp_path, domain="source", split="train")
    original = benchmark.source.train
    assert len(loaded) == len(original)
    assert loaded.class_names == original.class_names
    assert loaded.split is Split.TRAIN
    for mine, theirs in zip(loaded, original, strict=True):
        assert mine.id == theirs.id
        assert mine.label == theirs.label
        assert np.array_equal(mine.points, theirs.points)
    assert len(load_dataset(tmp_path, domain="target")) == 20
    assert len(load_dataset(tmp_path)) == 40


def test_load_missing_manifest(tmp_path) -> None:
    with pytest.raises(EmptyDatasetError):
        load_dataset(tmp_path)


def test_load_bad_manifest(tmp_path) -> None:
    (tmp_path / MANIFEST_FILE).write_text("name,label\n", encoding="utf-8")
    with pytest.raises(DatasetFormatError, match=":1:"):
        load_dataset(tmp_path)
    (tmp_path / MANIFEST_FILE).write_text("id,domain,split,class,path\na,source,valid,0,a.xyz\n", encoding="utf-8")
    with pytest.raises(DatasetFormatError, match=":2:"):
        load_dataset(tmp_path)


def test_load_rejects_negative_label(tmp_path) -> None:
    (tmp_path / MANIFEST_FILE).write_text(
        "id,domain,split,class,path\na,source,train,0,a.xyz\nb,source,train,-1,b.xyz\n", encoding="utf-8"
    )
    with pytest.raises(DatasetFormatError, match=":3: negative class label -1"):
        load_dataset(tmp_path)


def test_load_missing_point_file(tmp_path) -> None:
    (tmp_path / MANIFEST_FILE).write_text("id,domain,split,class,path\na,source,train,1,a.xyz\n", encoding="utf-8")
    with pytest.raises(NotFoundError):
        load_dataset(tmp_path)


def test_load_unknown_selection(tmp_path, benchmark) -> None:
    save_dataset(benchmark.source.train, tmp_path)
    with pytest.raises(EmptyDatasetError):
        load_dataset(tmp_path, domain="target")


@pytest.mark.parametrize("seed", range(100))
def test_jitter_displacement(seed) -> None:
    sigma = 0.02
    cloud = generate_shape(ShapeClass.CUBOID, 256, np.random.default_rng(seed))
    styled = apply_domain_style(cloud, DomainProfile(name="jitter", jitter_sigma=sigma), np.random.default_rng(seed + 1000))
    # undo the renormalization scale before measuring
    scale = np.sum(styled.points * cloud.points) / np.sum(styled.points**2)
    displacement = np.linalg.norm(scale * styled.points - cloud.points, axis=1).mean()
    assert 0.5 * sigma <= displacement <= 2.5 * sigma


@pytest.mark.parametrize("seed", range(20))
def test_augmentation_bounds_distance_distortion(seed) -> None:
    rng = np.random.default_rng(seed)
    points = rng.normal(size=(40, 3))
    clip = 0.05
    augmented = augment_points(points, rng, jitter_sigma=1.0, jitter_clip=clip)
    clean = points[augmented.source_index]
    before = np.linalg.norm(clean[:, None] - clean[None], axis=-1)
    after = np.linalg.norm(augmented.points[:, None] - augmented.points[None], axis=-1)
    # per-coordinate clipping bounds each displacement by clip·√3
    assert np.max(np.abs(after - before)) <= 2 * math.sqrt(3) * clip + 1e-12


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_domain_shift_is_measurable(seed) -> None:
    from rotadapt.evaluation import extract_features, mmd2
    from rotadapt.losses import LossWeights
    from rotadapt.mining import MiningConfig
    from rotadapt.trainer import TrainConfig, train

    benchmark = build_benchmark(BenchmarkSpec(num_classes=4, per_class=40, n_points=64), seed=seed)
    aligned = TrainConfig(
        epochs=5,
        batch_size=8,
        num_classes=4,
        seed=seed,
        mining=MiningConfig(repetitions=1, steps=0),
        weights=LossWeights(lambda_oc=0.0, lambda_ms=0.0),
        variants=1,
        workers=1,
    )
    model = train(aligned, benchmark.source.train).student
    source = extract_features(model, benchmark.source.test)
    target = extract_features(model, benchmark.target.test)
    halves = np.random.default_rng(seed).permutation(len(source))
    first, second = np.array_split(halves, 2)
    assert mmd2(source, target) > mmd2(source[first], source[second])
