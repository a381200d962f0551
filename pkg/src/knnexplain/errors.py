"""Exception types raised across the package."""

from __future__ import annotations


class KnnExplainError(Exception):
    """Base class for all errors raised by knnexplain."""


class ArchError(KnnExplainError, ValueError):
    pass


class ShapeError(KnnExplainError, ValueError):
    pass


class LabelError(KnnExplainError, ValueError):
    pass


class DataError(KnnExplainError, ValueError):
    pass


class TapError(KnnExplainError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class ArgError(KnnExplainError, ValueError):
    pass


class IdError(KnnExplainError, ValueError):
    pass


class ModelError(KnnExplainError, ValueError):
    pass


class MissingArtifactError(ModelError):
    pass


class SampleError(KnnExplainError, ValueError):
    pass


class SingularHessianError(KnnExplainError, ArithmeticError):
    pass


class DegenerateVectorError(KnnExplainError, ValueError):
    """A vector with (near) zero norm was given to the cosine metric.

    ``sample_id`` is the offending row id, or None for a bare vector / query.
    """

    def __init__(self, message: str, sample_id: int | None = None):
        super().__init__(message)
        self.sample_id = sample_id


class ParseError(KnnExplainError, ValueError):
    """Malformed input file. Carries a byte offset (binary) or 1-based row (text)."""

    def __init__(self, message: str, *, offset: int | None = None, row: int | None = None):
        where = []
        if offset is not None:
            where.append(f"byte offset {offset}")
        if row is not None:
            where.append(f"row {row}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.offset = offset
        self.row = row


class ConfigError(KnnExplainError, ValueError):
    """Invalid experiment config; ``problems`` lists every violated field."""

    def __init__(self, problems: list[str]):
        super().__init__("invalid config:\n  " + "\n  ".join(problems))
        self.problems = list(problems)


class TrialError(KnnExplainError, RuntimeError):
    """A counterfactual trial failed; ``key`` is (test_id, k, method)."""

    def __init__(self, key: tuple, cause: BaseException):
        super().__init__(f"trial {key} failed: {type(cause).__name__}: {cause}")
        self.key = key
        self.cause = cause
