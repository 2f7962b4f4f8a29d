"""Exception hierarchy shared by all fkprop modules."""


class FkpropError(Exception):
    """Base class for every error raised by fkprop."""


class DomainError(FkpropError, ValueError):
    """Argument outside the domain of an operation (bad time, exponent, shape)."""


class InvalidScheduleError(FkpropError, ValueError):
    """A Hamiltonian or speed schedule produced a non-finite or illegal value."""


class PreconditionError(FkpropError, ValueError):
    """A mathematical precondition (e.g. detailed balance) does not hold."""


class DetailedBalanceError(PreconditionError):
    pass


class InfiniteConstantError(FkpropError, ArithmeticError):
    """A functional-inequality constant is infinite (reducible chain)."""


class ConfigError(FkpropError, ValueError):
    """Invalid solver or scenario configuration."""


class SolverAccuracyError(FkpropError, ArithmeticError):
    """The ODE solver produced entries that violate positivity beyond noise."""


class NotInvariantError(PreconditionError):
    """A subset is not invariant under the generator."""


class NotPlannableError(FkpropError, ValueError):
    """A speed schedule cannot be planned from the given constants."""


class DominatingRateError(FkpropError, RuntimeError):
    """The uniformization rate was exceeded by an actual jump rate."""


class InfeasibleDriftError(FkpropError, ValueError):
    """A drift construction would require negative jump rates."""
