"""Exception hierarchy shared across the package.

Each class maps to one CLI exit code (see cli.EXIT_CODES): configuration
problems, pipeline staging problems, and runtime failures are kept distinct
so scripts can tell them apart.
"""


class CtxpressError(Exception):
    """Base class for all package errors."""


class ConfigurationError(CtxpressError):
    """Invalid configuration value, unknown key, or inconsistent settings."""


class StagingError(CtxpressError):
    """A pipeline stage was invoked without its prerequisites."""


class GenerationError(CtxpressError):
    """The synthetic data generator cannot satisfy the requested shape."""


class CapacityError(CtxpressError):
    """A sequence does not fit the model's position budget."""


class DecodingError(CtxpressError):
    """Token ids outside the vocabulary were passed to the decoder."""


class CheckpointError(CtxpressError):
    """A checkpoint is missing, truncated, or has an incompatible format."""


class ContractError(CtxpressError):
    """A caller violated an operation precondition."""
