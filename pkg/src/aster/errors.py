"""Exception hierarchy. Each class carries a diagnostic category and CLI exit code."""

from __future__ import annotations


class AsterError(Exception):
    category = "error"
    exit_code = 1


class DataError(AsterError, ValueError):
    category = "invalid data"
    exit_code = 3


class ConfigError(AsterError, ValueError):
    category = "invalid config"
    exit_code = 2


class MissingCheckpointError(AsterError, FileNotFoundError):
    category = "missing checkpoint"
    exit_code = 4


class IncompatibleCheckpointError(AsterError, ValueError):
    category = "incompatible checkpoint"
    exit_code = 5


class NonFiniteError(AsterError, FloatingPointError):
    category = "non-finite values"
    exit_code = 6


class RunDirectoryError(AsterError, FileExistsError):
    category = "run directory"
    exit_code = 7


class MetricError(AsterError, ValueError):
    category = "undefined metric"
    exit_code = 8
