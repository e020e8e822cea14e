import pytest

from rotadapt.network import init_params
from rotadapt.synthetic import Benchmark, BenchmarkSpec, build_benchmark

TINY_SPEC = BenchmarkSpec(num_classes=2, per_class=10, n_points=32, seed=0)


def pytest_configure(config) -> None:
    config.addinivalue_line("markers", "slow: trains several models end to end")


@pytest.fixture(scope="session")
def benchmark() -> Benchmark:
    return build_benchmark(TINY_SPEC)


@pytest.fixture(scope="session")
def source_train(benchmark):
    return benchmark.source.train


@pytest.fixture(scope="session")
def target_test(benchmark):
    return benchmark.target.test


@pytest.fixture
def model():
    return init_params(0, 2)


@pytest.fixture(scope="session")
def desk_benchmark() -> Benchmark:
    return build_benchmark(BenchmarkSpec(num_classes=4, per_class=200, n_points=256, seed=0))
