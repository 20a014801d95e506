"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures onto the
documented process exit statuses without a lookup table.
"""

from __future__ import annotations


class SalbciError(Exception):
    exit_code = 1


class ConfigError(SalbciError):
    exit_code = 2


class DataError(SalbciError):
    exit_code = 3


class BackendError(SalbciError):
    exit_code = 4


# emotion-core
class LengthMismatch(DataError, ValueError):
    pass


class NegativeWeight(DataError, ValueError):
    pass


class ZeroMass(DataError, ValueError):
    pass


class EmptyRatings(DataError, ValueError):
    pass


class OutOfScale(DataError, ValueError):
    pass


class WrongSpace(DataError, ValueError):
    pass


class NormalizationError(DataError, ValueError):
    pass


# ingest
class SchemaViolation(DataError):
    def __init__(self, message: str, file: str | None = None, where: str | None = None):
        self.file = file
        self.where = where
        parts = [p for p in (file, where) if p]
        prefix = ":".join(parts)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class MissingFile(DataError, FileNotFoundError):
    pass


class DuplicateVideoId(DataError):
    pass


class KTooLarge(DataError, ValueError):
    pass


# expressivity
class TooFewFrames(DataError, ValueError):
    pass


class TooFewVideos(DataError, ValueError):
    pass


class ZeroVariance(DataError, ValueError):
    pass


# fusion
class SpaceMismatch(DataError, ValueError):
    pass


class AllZeroProduct(DataError, ValueError):
    pass


class WeightOutOfRange(DataError, ValueError):
    pass


class NoAnnotations(DataError, ValueError):
    pass


# metrics
class Empty(DataError, ValueError):
    pass


class KeyMismatch(DataError, ValueError):
    pass


class MissingCondition(DataError, ValueError):
    pass


# context-llm
class BackendUnavailable(BackendError):
    pass


class AuthMissing(BackendError):
    pass


class UnparseableAfterRetries(BackendError):
    def __init__(self, message: str, raw_responses: list[str]):
        super().__init__(message)
        self.raw_responses = raw_responses


# synth
class InvalidConfig(ConfigError, ValueError):
    pass
