"""Behavioral SIR epidemic control: equilibrium, planner and static-efficient allocations."""

from .model import (
    DomainError,
    FOCError,
    ModelParams,
    ParameterError,
    belief_mu,
    cost_post_vaccine,
    curvature_bounds,
    effective_R,
    foc_activity,
    full_activity_threshold,
    inverse_utility,
    utility,
    value_known_infected,
)
from .grids import Field, GridSpec, StateGrid, exponential_grid, uniform_grid
from .solvers import (
    AllocationResult,
    evaluate_policy_with_reversion,
    solve_myopic,
    solve_pbe,
    solve_prme,
    solve_spp,
    static_efficient_lockdown,
    static_efficient_quarantine,
)
from .pathsim import expected_deaths, herd_immunity_day, simulate_path, welfare_cost

__version__ = "0.1.0"
