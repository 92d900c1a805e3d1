"""Exception hierarchy.

Every error derives from ``ConvRotError`` and from the closest builtin, so
callers can catch either. The CLI maps ``CapacityError`` to exit code 3 and
every other ``ConvRotError`` to exit code 2.
"""


class ConvRotError(Exception):
    pass


class InvalidOrderError(ConvRotError, ValueError):
    """Matrix order or group size not allowed for the requested construction."""


class InvalidValueError(ConvRotError, ValueError):
    """NaN or infinite input."""


class InvalidInputError(ConvRotError, ValueError):
    """Empty or malformed array input."""


class InvalidScaleError(ConvRotError, ValueError):
    pass


class RangeError(ConvRotError, ValueError):
    """A value falls outside its representable or permitted range."""


class BlockMismatchError(ConvRotError, ValueError):
    """Feature dimension not divisible by the rotation group size."""


class CapacityError(ConvRotError, OverflowError):
    """Integer accumulation could overflow 32 bits."""


class FormatError(ConvRotError, ValueError):
    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class PolicyError(ConvRotError, ValueError):
    def __init__(self, message: str, rule_index: int | None = None):
        if rule_index is not None:
            message = f"rule {rule_index}: {message}"
        super().__init__(message)
        self.rule_index = rule_index
