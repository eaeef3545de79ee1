"""Top-k arm identification for exponential-family bandits.

Library layout:

* :mod:`pure_explore.families` - reward models and conjugate posteriors
* :mod:`pure_explore.instance` - problem instances and validation helpers
* :mod:`pure_explore.costs` - pairwise discrimination rates
* :mod:`pure_explore.solvers` - optimal-allocation solvers (estimator API)
* :mod:`pure_explore.optimality` - optimality certificates and gap measures
* :mod:`pure_explore.policies` - sequential sampling policies
* :mod:`pure_explore.stopping` - likelihood-ratio stopping
* :mod:`pure_explore.experiments` - replication harness
* :mod:`pure_explore.cli` - command-line front end
"""

from .costs import (
    budget_rate,
    sampling_fraction,
    tilted_mean,
    transport_cost,
    transport_cost_grad,
    worst_pair_rate,
)
from .families import FamilyKind, PosteriorState, RewardFamily
from .instance import InstanceSpec, check_allocation, check_pair_weights
from .optimality import (
    OptimalityReport,
    check_kkt,
    check_structure,
    estimate_pair_weights,
    optimality_gap,
    reference_solution,
)
from .policies import POLICY_KINDS, make_policy
from .posterior_prob import posterior_prob_correct, posterior_prob_incorrect
from .simplex import project_simplex, project_simplex_floor
from .solvers import (
    FrankWolfeGradientAscent,
    GridOracle,
    KktTracking,
    make_solver,
    solve_allocation,
)
from .state import BanditState, top_k_arms
from .stopping import StoppingConfig, gaps_and_complexity, glr_statistic, should_stop, threshold

__version__ = "0.1.0"

__all__ = [
    "BanditState",
    "FamilyKind",
    "FrankWolfeGradientAscent",
    "GridOracle",
    "InstanceSpec",
    "KktTracking",
    "OptimalityReport",
    "POLICY_KINDS",
    "PosteriorState",
    "RewardFamily",
    "StoppingConfig",
    "budget_rate",
    "check_allocation",
    "check_kkt",
    "check_pair_weights",
    "check_structure",
    "estimate_pair_weights",
    "gaps_and_complexity",
    "glr_statistic",
    "make_policy",
    "make_solver",
    "optimality_gap",
    "posterior_prob_correct",
    "posterior_prob_incorrect",
    "project_simplex",
    "project_simplex_floor",
    "reference_solution",
    "sampling_fraction",
    "should_stop",
    "solve_allocation",
    "threshold",
    "tilted_mean",
    "top_k_arms",
    "transport_cost",
    "transport_cost_grad",
    "worst_pair_rate",
]
