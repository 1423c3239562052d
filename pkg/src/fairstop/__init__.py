"""Fair stopping rules for the hiring problem.

Candidates with independent discrete values arrive one by one and at most one
is hired.  The package solves the LPs whose optima are the best identity- or
time-independent fair rules, runs and audits those rules alongside threshold,
dynamic-programming and sample-based rules, and measures competitive ratios.
"""

__version__ = "0.1.0"

from fairstop.core import (
    ArrivalOrder,
    DiscreteDistribution,
    Instance,
    all_orders,
    expected_max,
    load_instance,
    sum_of_means,
)
from fairstop.lp import (
    FairPolicy,
    LinearProgram,
    LpSolution,
    LpStatus,
    PolicyKind,
    add_must_hire_constraint,
    build_offline_relaxation,
    build_online_iif_lp,
    build_online_tif_lp,
    halve_policy,
    halved_offline_policy,
    solve_lp,
    solve_policy,
    symmetrize_offline_solution,
)
from fairstop.rules import RuleSpec, backward_induction_optimal

__all__ = [
    "ArrivalOrder",
    "DiscreteDistribution",
    "FairPolicy",
    "Instance",
    "LinearProgram",
    "LpSolution",
    "LpStatus",
    "PolicyKind",
    "RuleSpec",
    "add_must_hire_constraint",
    "all_orders",
    "backward_induction_optimal",
    "build_offline_relaxation",
    "build_online_iif_lp",
    "build_online_tif_lp",
    "expected_max",
    "halve_policy",
    "halved_offline_policy",
    "load_instance",
    "solve_lp",
    "solve_policy",
    "sum_of_means",
    "symmetrize_offline_solution",
]
