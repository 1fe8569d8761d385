"""Equilibrium strategies for time-inconsistent mean-variance control
under jump diffusions: closed forms, backward ODE system, a coupled
integro-PDE solver with policy iteration, Monte Carlo verification, and
an adjoint-process bridge, behind a small CLI.
"""

from .closed_form import (ClosedFormSolution, equilibrium_coefficient,
                          equilibrium_objective, equilibrium_wealth_mean,
                          h_gap_prediction, h_value_ansatz, no_jump_reduction,
                          solve_closed_form)
from .coefficients import CoefficientFn
from .config import RunConfig, load_config
from .errors import (ConfigError, ConvexityError, DomainError, EqpideError,
                     InstabilityError, NonConvergenceError, SimulationError,
                     SingularityError, SolverError, ValidationError)
from .market import (ConstantControl, LevyAtom, LevyAtomMeasure,
                     LinearStrategy, MarketParams, excess_return, kappa,
                     sigma_tot_sq, validate)
from .montecarlo import (McEstimate, PathBundle, SimConfig, SpikePerturbation,
                         estimate_g, estimate_theta, evaluate_cost, simulate,
                         spike_variation_test)
from .ode_system import (OdeSolution, check_identities, integrate_backward,
                         integrate_forward, strategy_coefficient)
from .pide import (PideSolution, StateGrid2D, ansatz_residual, h_function,
                   policy_evaluation, policy_improvement, policy_iteration,
                   read_field_bin, write_field_bin)
from .adjoint import (AdjointProcesses, bsde_pathwise_rms, bsde_residual,
                      build_adjoints, hbar_min_check)

__version__ = "0.1.0"

__all__ = [
    "AdjointProcesses", "ClosedFormSolution", "CoefficientFn", "ConfigError",
    "ConstantControl", "ConvexityError", "DomainError", "EqpideError",
    "InstabilityError", "LevyAtom", "LevyAtomMeasure", "LinearStrategy",
    "MarketParams", "McEstimate", "NonConvergenceError", "OdeSolution",
    "PathBundle", "PideSolution", "RunConfig", "SimConfig", "SimulationError",
    "SingularityError", "SolverError", "SpikePerturbation", "StateGrid2D",
    "ValidationError", "ansatz_residual", "bsde_pathwise_rms",
    "bsde_residual", "build_adjoints", "check_identities",
    "equilibrium_coefficient", "equilibrium_objective",
    "equilibrium_wealth_mean", "estimate_g", "estimate_theta",
    "evaluate_cost", "excess_return", "h_function", "h_gap_prediction",
    "h_value_ansatz", "hbar_min_check", "integrate_backward",
    "integrate_forward", "kappa", "load_config", "no_jump_reduction",
    "policy_evaluation", "policy_improvement", "policy_iteration",
    "read_field_bin", "sigma_tot_sq", "simulate", "solve_closed_form",
    "spike_variation_test", "strategy_coefficient", "validate",
    "write_field_bin",
]
