"""Exception hierarchy for rwre-lab."""


class RwreError(Exception):
    """Base class for all rwre-lab errors."""


class SamplingError(RwreError):
    """A sampler could not produce a valid draw."""


class InvalidPathError(RwreError):
    """A trajectory does not satisfy the preconditions of an operation."""


class InsufficientDataError(RwreError):
    """Too few blocks or samples for an estimator."""


class NonLipschitzFunctionalError(RwreError):
    """A test functional failed the random-perturbation Lipschitz audit."""


class ConfigError(RwreError):
    """An experiment configuration is invalid or cannot be satisfied."""


class OutputError(RwreError):
    """The output directory cannot be written."""
