"""Exception types raised across the package."""


class CrossViewError(Exception):
    """Base class for all package errors."""


class ParameterError(CrossViewError, ValueError):
    pass


class KindError(CrossViewError, TypeError):
    """An image of the wrong kind (panorama vs satellite) was passed."""


class GeometryError(CrossViewError, ValueError):
    pass


class ContractError(CrossViewError, ValueError):
    """Inputs violate a documented precondition, e.g. unnormalized embeddings."""


class DegenerateBatchError(ContractError):
    pass


class ConfigError(CrossViewError, ValueError):
    pass


class CapabilityError(CrossViewError, TypeError):
    pass


class AlignmentError(CrossViewError, ValueError):
    pass


class GenerationError(CrossViewError, RuntimeError):
    pass


class ParseError(CrossViewError, ValueError):
    pass


class NumericError(CrossViewError, ArithmeticError):
    pass


class CheckpointError(CrossViewError, OSError):
    """A checkpoint file is unreadable or was not written by this package."""
