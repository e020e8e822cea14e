"""Exceptions for rotadapt."""

from __future__ import annotations

from dataclasses import dataclass


class RotadaptError(Exception):
    """Exception to indicate a general rotadapt error."""


class InvalidArgumentError(
    RotadaptError,
    ValueError,
):
    """Exception to indicate an argument outside an operation's domain."""


class InvalidStateError(
    RotadaptError,
):
    """Exception to indicate a stale or mismatched intermediate state."""


class NotFoundError(
    RotadaptError,
    KeyError,
):
    """Exception to indicate a missing sample, file or checkpoint."""

    def __str__(self) -> str:  # noqa: D105
        # KeyError quotes its argument; keep the plain message.
        return str(self.args[0]) if self.args else ""


class DivergenceError(
    RotadaptError,
):
    """Exception to indicate a non-finite training loss."""

    def __init__(self, epoch: int, batch: int, value: float) -> None:  # noqa: D107
        self.epoch = epoch
        self.batch = batch
        self.value = value
        super().__init__(f"Non-finite loss {value!r} at epoch {epoch}, batch {batch}")


class DatasetFormatError(
    RotadaptError,
):
    """Exception to indicate a malformed dataset directory."""


class EmptyDatasetError(
    DatasetFormatError,
):
    """Exception to indicate a dataset directory without any clouds."""


@dataclass(frozen=True)
class ConfigIssue:
    """A single violated configuration constraint."""

    key: str
    value: str
    constraint: str

    def __str__(self) -> str:  # noqa: D105
        return f"{self.key} = {self.value!r}: {self.constraint}"


class ConfigValidationError(
    RotadaptError,
):
    """Exception to indicate one or more invalid configuration values."""

    def __init__(self, issues: list[ConfigIssue]) -> None:  # noqa: D107
        self.issues = issues
        super().__init__("; ".join(str(issue) for issue in issues))
