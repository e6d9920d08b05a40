"""Exception types raised across the package."""


class SgcdeError(Exception):
    """Base class for all package errors."""


class NonSkewInput(SgcdeError, ValueError):
    pass


class NearPiSingularity(SgcdeError, ValueError):
    """Rotation angle too close to pi for a unique logarithm."""


class DegenerateColumns(SgcdeError, ValueError):
    """6D input whose two columns are zero or (nearly) parallel."""


class StepSizeUnderflow(SgcdeError, RuntimeError):
    pass


class UnresolvedScenario(SgcdeError, ValueError):
    pass


class SingularNormalEquations(SgcdeError, ValueError):
    pass


class PolynomialOutOfInjectiveRange(SgcdeError, ValueError):
    """Lie-algebra polynomial norm reached pi, where Exp stops being injective."""


class WindowTooLarge(SgcdeError, ValueError):
    pass


class NonFiniteState(SgcdeError, FloatingPointError):
    pass


class NonFiniteGradient(SgcdeError, FloatingPointError):
    pass


class ConfigError(SgcdeError, ValueError):
    pass


class IoError(SgcdeError, OSError):
    """Missing or unreadable input, or an unwritable output location."""


class CheckpointError(SgcdeError, ValueError):
    """Malformed checkpoint or one containing non-finite parameters."""
