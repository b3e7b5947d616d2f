"""Exception hierarchy shared by all modules."""


class CoagError(Exception):
    """Base class for library errors."""


class KernelDomainError(CoagError, ValueError):
    """Kernel parameters outside the admissible family."""


class DivergentTailError(CoagError):
    """Weight grows at least as fast as the profile tail decays."""


class DivergenceError(CoagError):
    """An integral with a singular weight does not converge near zero."""


class ZeroProfileError(CoagError):
    """Operation needs a profile with positive mass."""


class NonPositiveValuesError(CoagError, ValueError):
    """Log-fit attempted on nonpositive values."""


class IntegrabilityError(CoagError):
    """Transform evaluated at q <= -tail_rate."""


class InsufficientGridError(CoagError):
    """A q-grid does not reach close enough to -1 for nested quadrature."""


class ZeroDistanceError(CoagError):
    """Contraction ratio requested for two profiles at zero distance."""
