"""Exception types raised across the package."""


class EntMongeError(Exception):
    """Base class for all package errors."""


class InvalidDimension(EntMongeError, ValueError):
    pass


class OverlappingSupports(EntMongeError, ValueError):
    pass


class InvalidInstance(EntMongeError, ValueError):
    pass


class InvalidDensity(EntMongeError, ValueError):
    pass


class EmptyDensity(EntMongeError, ValueError):
    pass


class BudgetExceeded(EntMongeError, RuntimeError):
    pass


class DimensionMismatch(EntMongeError, ValueError):
    pass


class InfeasibleSupport(EntMongeError, ValueError):
    pass


class MonotoneInfeasible(EntMongeError, ValueError):
    pass


class CoincidentAtoms(EntMongeError, ValueError):
    pass


class NonConvergedInput(EntMongeError, ValueError):
    pass


class MarginalMismatch(EntMongeError, ValueError):
    pass


class SingularFit(EntMongeError, ValueError):
    pass


class UnbalancedMasses(EntMongeError, ValueError):
    pass


class InfiniteCostUnsupported(EntMongeError, ValueError):
    pass


class ConfigError(EntMongeError, ValueError):
    pass


class NonConvergence(UserWarning):
    """Emitted when Sinkhorn stops at ``max_iter`` short of its tolerance."""
