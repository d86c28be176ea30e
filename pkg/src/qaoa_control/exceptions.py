"""
Exception hierarchy for qaoa-control
"""

from typing import Optional


class QAOAControlError(Exception):
    """Base class for every error raised by the package."""


class DimensionError(QAOAControlError):
    """Hilbert-space dimensions disagree or exceed the configured maximum."""


class DomainError(QAOAControlError):
    """An argument lies outside the domain of a function or distribution."""


class ProtocolError(QAOAControlError):
    """A protocol or trajectory violates the action constraints."""


class OptimizationBudgetError(QAOAControlError):
    """A brute-force search would exceed its evaluation budget."""


class VerificationError(QAOAControlError):
    """One or more property checks failed."""


class ConfigError(QAOAControlError):
    """Invalid experiment configuration.

    Args:
        message: Human readable description
        key: Dotted path of the offending key, if known
        line: 1-based line in the configuration file, if known
    """

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key = key
        self.line = line
        location = f"line {line}: " if line is not None else ""
        super().__init__(f"{location}{message}")


class TrainingDivergedError(QAOAControlError):
    """Non-finite parameters or losses were detected during training."""

    def __init__(self, message: str, dump_path: Optional[str] = None):
        self.dump_path = dump_path
        suffix = f" (state dumped to {dump_path})" if dump_path else ""
        super().__init__(f"{message}{suffix}")
