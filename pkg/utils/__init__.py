"""Utilities package for rwre-lab."""

from .errors import (
    ConfigError,
    InsufficientDataError,
    InvalidPathError,
    NonLipschitzFunctionalError,
    OutputError,
    RwreError,
    SamplingError,
)
from .logger import get_logger, get_run_tracker, setup_logging

__all__ = [
    'get_logger',
    'get_run_tracker',
    'setup_logging',
    'RwreError',
    'SamplingError',
    'InvalidPathError',
    'InsufficientDataError',
    'NonLipschitzFunctionalError',
    'ConfigError',
    'OutputError',
]
