"""Exception types raised by the simulator."""


class InvalidParameterError(ValueError):
    """An argument is outside its allowed domain."""


class InvalidSpecError(InvalidParameterError):
    """A noise specification violates its invariants."""


class NonPhysicalConfigurationError(ValueError):
    """The VMG equations give a non-positive squared amplitude."""


class PairingExhaustedError(RuntimeError):
    """No slope-matched start pair was found within the attempt budget."""
