import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from fairstop.core import ArrivalOrder, DiscreteDistribution, Instance, all_orders, expected_max, sum_of_means
from fairstop.gen import classic_tight, must_hire_instance, perturbed_tight, random_instance, right_arc_instance
from fairstop.lp import (
    FairPolicy,
    InfeasibleProgram,
    LinearProgram,
    LpStatus,
    PolicyKind,
    add_must_hire_constraint,
    build_offline_relaxation,
    build_online_iif_lp,
    build_online_tif_lp,
    check_tif_perm,
    feasible_for_all_orders,
    halve_policy,
    halved_offline_policy,
    policy_expected_value,
    policy_from_solution,
    satisfies_iif,
    satisfies_tif,
    solve_lp,
    solve_policy,
    symmetrize_offline_solution,
)

FORWARD = ArrivalOrder((0, 1))
HALF = DiscreteDistribution((0.0, 1.0), (0.5, 0.5))


def point(v):
    return Instance((DiscreteDistribution.point_mass(v),))


def highs(lp):
    res = linprog(-lp.objective, A_ub=lp.A, b_ub=lp.b, bounds=[(0, 1)] * lp.var_count, method="highs")
    return res


# simplex --------------------------------------------------------------------


def test_single_variable():
    sol = solve_lp(LinearProgram([1.0], [[2.0]], [1.0]))
    assert sol.status is LpStatus.OPTIMAL
    assert sol.values[0] == pytest.approx(0.5)


def test_zero_objective():
    sol = solve_lp(LinearProgram([0.0, 0.0], [[1.0, 1.0]], [1.0]))
    assert sol.optimal
    assert sol.objective_value == 0.0


def test_infeasible_reported():
    sol = solve_lp(LinearProgram([1.0], [[1.0], [-1.0]], [0.2, -0.5]))
    assert sol.status is LpStatus.INFEASIBLE
    with pytest.raises(InfeasibleProgram):
        solve_policy(LinearProgram([1.0], [[1.0], [-1.0]], [0.2, -0.5]))


def test_negative_rhs_feasible():
    # p1 + p2 >= 1.5, maximize -p1: p2 = 1, p1 = 0.5
    sol = solve_lp(LinearProgram([-1.0, 0.0], [[-1.0, -1.0]], [-1.5]))
    assert sol.optimal
    assert sol.values == pytest.approx([0.5, 1.0])


def test_degenerate_program_terminates():
    # many redundant rows through the same vertex
    A = np.array([[1, 1], [1, 1], [2, 2], [1, 0], [0, 1], [1, 2]], dtype=float)
    b = np.array([1, 1, 2, 1, 1, 1.5])
    sol = solve_lp(LinearProgram([1.0, 1.0], A, b))
    assert sol.optimal
    assert sol.objective_value == pytest.approx(1.0)


def test_bad_shapes_rejected():
    with pytest.raises(ValueError):
        LinearProgram([1.0, 2.0], [[1.0, 1.0]], [1.0, 2.0])
    with pytest.raises(ValueError):
        LinearProgram([np.nan], [[1.0]], [1.0])


@settings(max_examples=150, deadline=None)
@given(
    st.integers(1, 5),
    st.integers(0, 6),
    st.integers(0, 2**31 - 1),
)
def test_simplex_matches_highs(nv, m, seed):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=nv)
    A = rng.normal(size=(m, nv))
    b = rng.normal(size=m) + 0.5
    lp = LinearProgram(c, A, b)
    ours = solve_lp(lp)
    ref = highs(lp)
    if ref.status == 2:
        assert ours.status is LpStatus.INFEASIBLE
        return
    assert ref.status == 0
    assert ours.optimal
    assert ours.objective_value == pytest.approx(-ref.fun, abs=1e-7)
    assert lp.is_feasible(ours.values, 1e-8)
    # strong duality through the returned multipliers
    assert ours.dual_bound == pytest.approx(ours.objective_value, abs=1e-7)
    assert np.all(ours.duals >= -1e-9)


# builders -------------------------------------------------------------------


def test_right_arc_program():
    eps = 0.2
    lp = build_online_iif_lp(right_arc_instance(eps), FORWARD)
    assert lp.A.tolist() == [[1.0, 1.0], [0.0, 2.0]]
    assert lp.b.tolist() == [1.0, 1.0]
    assert lp.objective == pytest.approx([0.0, 1 + eps])
    assert solve_lp(lp).objective_value == pytest.approx(0.6, abs=1e-12)
    assert lp.dump() == "# vars: p(0) p(1)\nmax 0 1.2\n1 1 <= 1\n0 2 <= 1\n"


def test_single_candidate_programs():
    inst = point(3.0)
    iif = build_online_iif_lp(inst, ArrivalOrder.identity(1))
    assert iif.A.tolist() == [[1.0]] and iif.objective.tolist() == [3.0]
    assert solve_lp(iif).objective_value == pytest.approx(3.0)
    tif = build_online_tif_lp(Instance((HALF,)))
    assert tif.A.tolist() == [[1.0, 0.0], [0.0, 1.0]]
    off = solve_policy(build_offline_relaxation(inst))
    assert off.objective_value == pytest.approx(3.0) and off.table[0, 0] == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(5))
def test_builder_shapes(seed):
    inst = random_instance(3, 3, seed)
    s = len(inst.support)
    assert build_online_iif_lp(inst, ArrivalOrder.identity(3)).A.shape == (s, s)
    assert build_online_tif_lp(inst).A.shape == (3 * s, 3 * s)
    assert build_offline_relaxation(inst).A.shape == (1, 3 * s)


def test_tif_program_on_tight_instance():
    inst = perturbed_tight(0.1, 0.001)
    lp = build_online_tif_lp(inst)
    value = solve_lp(lp).objective_value
    assert 0.8 <= value <= 1.2
    ref = highs(lp)
    assert value == pytest.approx(-ref.fun, abs=1e-9)


def test_offline_relaxation_examples():
    assert solve_lp(build_offline_relaxation(classic_tight(0.1))).objective_value >= 1.9 - 1e-9
    # two fair coins: the relaxation can spend its unit budget on value 1 alone
    value = solve_lp(build_offline_relaxation(Instance((HALF, HALF)))).objective_value
    assert value == pytest.approx(1.0)
    assert value >= expected_max(Instance((HALF, HALF)))


@pytest.mark.parametrize("seed", range(30))
def test_offline_relaxation_bounds_prophet(seed):
    inst = random_instance(2 + seed % 3, 2 + seed % 4, seed, common_support=seed % 2 == 0)
    assert solve_lp(build_offline_relaxation(inst)).objective_value >= expected_max(inst) - 1e-8


# must-hire ------------------------------------------------------------------


def test_must_hire_examples():
    inst = must_hire_instance(0.5)
    lp = add_must_hire_constraint(build_online_iif_lp(inst, ArrivalOrder.identity(inst.n)), inst)
    assert lp.A.shape[0] == len(inst.support) + 2
    assert solve_lp(lp).objective_value == pytest.approx(1.0, abs=1e-9)
    one = point(4.0)
    lp = add_must_hire_constraint(build_online_iif_lp(one, ArrivalOrder.identity(1)), one)
    sol = solve_lp(lp)
    assert sol.objective_value == pytest.approx(4.0) and sol.values[0] == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(10))
def test_must_hire_collapses_to_average(seed):
    inst = random_instance(2 + seed % 3, 3, seed)
    for lp in (build_online_iif_lp(inst, ArrivalOrder.identity(inst.n)),):
        value = solve_lp(add_must_hire_constraint(lp, inst)).objective_value
        assert value == pytest.approx(sum_of_means(inst) / inst.n, abs=1e-8)


def test_must_hire_rejects_wrong_layout():
    inst = random_instance(2, 2, 0)
    with pytest.raises(ValueError):
        add_must_hire_constraint(build_offline_relaxation(inst), inst)
    with pytest.raises(ValueError):
        add_must_hire_constraint(build_online_iif_lp(inst, FORWARD), random_instance(3, 2, 0))


def test_must_hire_tif_program():
    # two sure candidates: all hiring mass goes to the better one
    inst = Instance((DiscreteDistribution.point_mass(1.0), DiscreteDistribution.point_mass(2.0)))
    sol = solve_lp(add_must_hire_constraint(build_online_tif_lp(inst), inst))
    assert sol.optimal
    assert sol.objective_value == pytest.approx(2.0)


# policies -------------------------------------------------------------------


def test_symmetrize_example():
    f = DiscreteDistribution((0.0, 1.0), (0.75, 0.25))
    inst = Instance((f, f))
    raw = FairPolicy(PolicyKind.OFFLINE, inst.support, 2, [[0.0, 1.0], [0.0, 0.0]], 0.25)
    sym = symmetrize_offline_solution(inst, raw)
    assert sym.table.tolist() == [[0.0, 0.5], [0.0, 0.5]]
    assert sym.objective_value == pytest.approx(0.25)
    again = symmetrize_offline_solution(inst, sym)
    assert np.array_equal(again.table, sym.table)


@pytest.mark.parametrize("seed", range(100))
def test_symmetrize_preserves_value_and_capacity(seed):
    inst = random_instance(2 + seed % 3, 2 + seed % 3, seed, common_support=seed % 4 != 3)
    lp = build_offline_relaxation(inst)
    sol = solve_lp(lp)
    sym = symmetrize_offline_solution(inst, sol)
    assert sym.identity_independent
    assert sym.objective_value == pytest.approx(sol.objective_value, abs=1e-12)
    assert float(np.sum(inst.mass_table * sym.table)) == pytest.approx(float(lp.A[0] @ sol.values), abs=1e-12)
    halved = halve_policy(sym)
    assert halved.objective_value == sym.objective_value / 2
    assert feasible_for_all_orders(inst, halved)
    assert satisfies_tif(inst, halved) and check_tif_perm(inst, halved)


def test_halved_tight_instance_feasible_both_orders():
    inst = perturbed_tight(0.1, 0.001)
    policy = halved_offline_policy(inst)
    for order in all_orders(2):
        assert satisfies_iif(inst, policy, order)


def test_policy_expected_value_examples():
    inst = right_arc_instance(0.2)
    zero = FairPolicy(PolicyKind.IIF, inst.support, 2, [0.0, 0.0], 0.0)
    assert policy_expected_value(inst, zero) == 0.0
    lp = build_online_iif_lp(inst, FORWARD)
    policy = policy_from_solution(lp, solve_lp(lp))
    assert policy_expected_value(inst, policy) == pytest.approx(0.6)
    iid = Instance((DiscreteDistribution((1.0, 3.0), (0.5, 0.5)),) * 3)
    flat = FairPolicy(PolicyKind.IIF, iid.support, 3, [1 / 3, 1 / 3], 0.0)
    assert policy_expected_value(iid, flat) == pytest.approx(sum_of_means(iid) / 3)


def test_policy_round_trip_and_validation():
    policy = FairPolicy(PolicyKind.TIF, (0.0, 1.0), 2, [[0.1, 0.2], [0.3, 0.4]], 0.7)
    back = FairPolicy.from_dict(policy.to_dict())
    assert back.kind is PolicyKind.TIF and np.array_equal(back.probs, policy.probs)
    assert policy.p(1, 1.0) == 0.4
    with pytest.raises(ValueError):
        FairPolicy(PolicyKind.IIF, (0.0, 1.0), 2, [[0.1, 0.2], [0.3, 0.4]], 0.0)
    with pytest.raises(ValueError):
        FairPolicy(PolicyKind.IIF, (0.0, 1.0), 2, [0.1, 1.5], 0.0)
    with pytest.raises(ValueError):
        policy.as_iif()


def test_tif_optimum_is_order_free():
    for seed in range(8):
        inst = random_instance(3, 2, seed)
        policy = solve_policy(build_online_tif_lp(inst))
        assert check_tif_perm(inst, policy)


@pytest.mark.parametrize("seed", range(20))
def test_iif_optimum_at_least_half_prophet(seed):
    inst = random_instance(2 + seed % 3, 2 + seed % 2, seed)
    for order in all_orders(inst.n):
        value = solve_lp(build_online_iif_lp(inst, order)).objective_value
        assert value >= 0.5 * expected_max(inst) - 1e-9
