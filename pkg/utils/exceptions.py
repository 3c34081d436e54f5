"""Исключения пайплайна и их коды выхода"""

from typing import Optional


class PipelineError(Exception):
    """Base error of the pipeline; carries the process exit code"""

    exit_code = 4

    def __init__(self, message: str, exit_code: Optional[int] = None):
        super().__init__(message)
        if exit_code is not None:
            self.exit_code = exit_code


class ConfigError(PipelineError):
    """Invalid or incomplete configuration"""

    exit_code = 2


class DataError(PipelineError):
    """Input data cannot be processed"""

    exit_code = 3


class ClusteringError(DataError):
    """K-means / silhouette cannot be computed on the given features"""


class InsufficientDataError(DataError):
    """Too few observations for a statistic"""


class StageError(PipelineError):
    """Failure of a named pipeline stage"""

    def __init__(self, stage: str, cause: BaseException):
        exit_code = getattr(cause, "exit_code", PipelineError.exit_code)
        super().__init__(f"stage '{stage}' failed: {cause}", exit_code)
        self.stage = stage
        self.cause = cause


class AmbiguityError(DataError):
    """More than one candidate hub where exactly one is required"""
