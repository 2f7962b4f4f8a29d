"""Feynman-Kac propagators with time-dependent reference measures on finite state spaces."""

__version__ = "0.1.0"

from .errors import (ConfigError, DetailedBalanceError, DomainError, DominatingRateError,
                     FkpropError, InfeasibleDriftError, InfiniteConstantError,
                     InvalidScheduleError, NotInvariantError, NotPlannableError,
                     PreconditionError, SolverAccuracyError)
from .model import MeasureFamily, StateSpace, TimeGrid, h_rate_at, measure_at
from .generators import EdgeSet, SpeedSchedule, dirichlet_form, metropolis_generator
from .propagator import (PropagatorMatrix, SolverConfig, markov_propagator, solve_backward,
                         solve_forward)
from .inequalities import (compute_constants, log_sobolev_constant, spectral_gap_constant,
                           weighted_poincare_A, weighted_poincare_B)
from .norms import lp_operator_norm, operator_norm_2, operator_norm_pq
from .scenarios import (Scenario, endpoint_transfer_scenario, load_scenario,
                        two_state_scenario)

__all__ = [name for name in dir() if not name.startswith("_")]
