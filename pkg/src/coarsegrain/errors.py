"""Exception hierarchy.

Each family maps onto one CLI exit code (see ``coarsegrain.cli``).
"""


class CoarsegrainError(Exception):
    exit_code = 1


class ConfigError(CoarsegrainError, ValueError):
    exit_code = 2


class NumericalError(CoarsegrainError, ArithmeticError):
    exit_code = 3


class DivergenceError(NumericalError):
    """A simulated or trained quantity became non-finite."""

    def __init__(self, message, step=None, layer=None):
        super().__init__(message)
        self.step = step
        self.layer = layer


class CollapsedContextError(NumericalError):
    def __init__(self, message="collapsed context", step=None):
        super().__init__(message)
        self.step = step


class CollapsedLatentError(NumericalError):
    pass


class FormatError(CoarsegrainError):
    exit_code = 4


class HeaderError(FormatError):
    pass


class DimensionMismatchError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


class ConfigHashMismatchError(FormatError):
    pass


class ProtocolError(CoarsegrainError):
    exit_code = 5


class TransportError(ProtocolError):
    pass


class MalformedResponseError(ProtocolError):
    pass


class RemoteDimensionMismatchError(ProtocolError):
    pass
