"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes or lengths are incompatible with the operation."""


class ConfigError(ValueError):
    """A configuration value is invalid (even kernel, bad group count, ...)."""


class ContractError(ValueError):
    """An API precondition was violated by the caller."""


class StateError(RuntimeError):
    """An object is in the wrong state for the requested action."""


class IntegrityError(RuntimeError):
    """A cross-check between measured and expected values failed."""
