"""Exception hierarchy shared by all modules."""


class PorodiffError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(PorodiffError, ValueError):
    """A configuration value violates its documented invariant."""


class FormatError(PorodiffError):
    """A file does not follow its container format."""


class BadMagic(FormatError):
    pass


class UnsupportedVersion(FormatError):
    pass


class DimMismatch(FormatError, ValueError):
    pass


class IoFailure(PorodiffError, OSError):
    pass


class TargetUnreachable(PorodiffError):
    pass


class InsufficientVolume(PorodiffError, ValueError):
    pass


class EmptyInput(PorodiffError, ValueError):
    pass


class Overflow(PorodiffError, ValueError):
    pass


class InvalidDistribution(PorodiffError, ValueError):
    pass


class DegenerateRow(PorodiffError, ArithmeticError):
    pass


class ShapeMismatch(PorodiffError, ValueError):
    pass


class NonScalarOutput(PorodiffError, ValueError):
    pass


class NonFiniteLoss(PorodiffError, FloatingPointError):
    """Training produced a non-finite loss; ``state`` holds the dump."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class LagOutOfRange(PorodiffError, ValueError):
    pass


class TooFewSamples(PorodiffError, ValueError):
    pass


class Disconnected(PorodiffError):
    pass


class NoConvergence(PorodiffError):
    pass
