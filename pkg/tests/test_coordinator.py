import pytest

from rotadapt.coordinator import WorkCoordinator, available_workers
from rotadapt.exceptions import InvalidArgumentError


def _square(value: int):
    return lambda: value * value


def _fail():
    msg = "job failed"
    raise RuntimeError(msg)


def test_available_workers() -> None:
    assert available_workers() >= 1
    assert WorkCoordinator().workers == available_workers()


@pytest.mark.parametrize("workers", [1, 2, 8])
def test_run_keeps_submission_order(workers) -> None:
    results = WorkCoordinator(workers).run([_square(value) for value in range(10)])
    assert results == [value * value for value in range(10)]


@pytest.mark.asyncio
async def test_async_run() -> None:
    results = await WorkCoordinator(3, name="test").async_run([_square(value) for value in range(5)])
    assert results == [0, 1, 4, 9, 16]


@pytest.mark.parametrize("workers", [1, 3])
def test_failure_propagates(workers) -> None:
    with pytest.raises(RuntimeError, match="job failed"):
        WorkCoordinator(workers).run([_square(1), _fail, _square(2)], labels=["a", "b", "c"])


def test_rejects_zero_workers() -> None:
    with pytest.raises(InvalidArgumentError):
        WorkCoordinator(0)
