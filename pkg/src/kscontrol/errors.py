"""Exception types shared across the package."""


class KSControlError(Exception):
    """Base class for package errors."""


class NonFinite(KSControlError):
    """A numerical quantity became NaN or Inf (solver blow-up)."""


class NoConvergence(KSControlError):
    """An iterative solver failed to converge."""


class ShapeMismatch(KSControlError):
    """Array shapes are inconsistent with the declared layer specs."""


class IncompatibleShapes(KSControlError):
    """Checkpoint surgery attempted between incompatible architectures."""


class UnknownStrategy(KSControlError):
    """Transfer strategy name not recognized."""


class DegenerateBaseline(KSControlError):
    """A normalizing baseline quantity is zero or negative."""


class NoCrossing(KSControlError):
    """Noise-sensitivity bisection never reached the target performance drop."""


class NoSuchAdapter(KSControlError):
    """Requested lateral adapter does not exist at the given (layer, column)."""


class ActionOutOfRange(KSControlError):
    """Action component outside actuator amplitude bounds (strict mode)."""


class MissingCheckpoint(KSControlError):
    """Referenced source checkpoint does not exist."""


class ConfigError(KSControlError):
    """Experiment configuration failed validation."""
