"""Exception hierarchy shared across the library."""


class GapbalError(Exception):
    """Base class for all library errors."""


class ShapeError(GapbalError):
    """Tensor shapes are incompatible for the requested operation."""


class DomainError(GapbalError):
    """A value is outside the mathematical domain of an operation."""


class ContractError(GapbalError):
    """An API was called in a way that violates its contract."""


class StateError(GapbalError):
    """An object was used in a state that does not permit the operation."""


class ConfigError(GapbalError):
    """An experiment or suite configuration is invalid."""
