"""Exceptions raised by the experience app."""


class ExperienceLabError(Exception):
    """base error"""


class DomainError(ExperienceLabError, ValueError):
    """numeric input outside the function's domain"""


class EnvironmentUsageError(ExperienceLabError):
    """environment driven outside its episode protocol"""


class EmptyBufferError(ExperienceLabError):
    """sampling from an empty buffer or a zero-total sum tree"""


class ConfigError(ExperienceLabError):
    """experiment config failed validation"""


class DivergenceError(ExperienceLabError):
    """non-finite parameters or gradients during training"""


class TraceFormatError(ExperienceLabError):
    """trace file does not follow the trace schema"""
