"""Acceptance criteria, one marked group per criterion.

The terminal summary (see conftest) prints one PASS/FAIL line per criterion;
each test also prints the numbers it checked.
"""

import math

import numpy as np
import pytest

from fairstop.audit import audit_fairness, measure_ratio, simulate
from fairstop.core import ArrivalOrder, all_orders, expected_max, sum_of_means
from fairstop.gen import classic_tight, must_hire_instance, perturbed_tight, right_arc_instance, zero_one_instance
from fairstop.lp import (
    FairPolicy,
    PolicyKind,
    add_must_hire_constraint,
    build_online_iif_lp,
    build_online_tif_lp,
    feasible_for_all_orders,
    halved_offline_policy,
    policy_expected_value,
    satisfies_tif,
    solve_lp,
    solve_policy,
)
from fairstop.oracle import BudgetExceeded, enumerate_rule, enumerate_sample_rule, grid_policy_search
from fairstop.rules import RuleSpec, backward_induction_optimal

FORWARD = ArrivalOrder((0, 1))
BACKWARD = ArrivalOrder((1, 0))


def _lp_value(lp) -> float:
    solution = solve_lp(lp)
    assert solution.optimal
    return solution.objective_value


# 1 -------------------------------------------------------------------------


@pytest.mark.criterion(1, "classic gap: E[max] = 1.99, online optimum = 1")
def test_classic_gap():
    inst = classic_tight(0.01)
    prophet = expected_max(inst)
    _, online = backward_induction_optimal(inst, FORWARD)
    report = measure_ratio(inst, RuleSpec("dp"), "prophet", order=FORWARD)
    print(f"[c1] E[max]={prophet:.12g} V1={online:.12g} ratio={report.ratio:.6f}")
    assert prophet == pytest.approx(1.99, abs=1e-9)
    assert online == pytest.approx(1.0, abs=1e-9)
    assert report.exact
    assert report.ratio == pytest.approx(1 / 1.99, abs=1e-9)


# 2 -------------------------------------------------------------------------


@pytest.mark.criterion(2, "IIF diagonal: online-IIF / prophet in [0.5, 0.56]")
@pytest.mark.parametrize("eps", [0.2, 0.1, 0.05])
def test_iif_diagonal(eps):
    inst = perturbed_tight(eps, eps**2 / 10)
    ratio = _lp_value(build_online_iif_lp(inst, FORWARD)) / expected_max(inst)
    print(f"[c2] eps={eps} ratio={ratio:.6f}")
    assert ratio >= 0.5 - 1e-9
    if eps == 0.05:
        assert ratio <= 0.56


# 3 -------------------------------------------------------------------------


@pytest.mark.criterion(3, "halved offline optimum: feasible, >= E[max]/2, fair under audits")
def test_halved_policy_on_corpus(corpus):
    worst = math.inf
    for inst in corpus:
        policy = halved_offline_policy(inst)
        assert feasible_for_all_orders(inst, policy, tol=1e-9), inst.name
        assert build_online_tif_lp(inst).is_feasible(policy.table.reshape(-1), 1e-9), inst.name
        assert satisfies_tif(inst, policy, tol=1e-9)
        value = policy_expected_value(inst, policy)
        assert value >= 0.5 * expected_max(inst) - 1e-9, inst.name
        worst = min(worst, value / expected_max(inst))
        for rule in (RuleSpec("iif", policy=policy.as_iif()), RuleSpec("tif", policy=policy.as_tif())):
            report = audit_fairness(inst, rule, orders="all", mode="exact", tolerance=1e-9)
            assert report.verdicts == {"iif": True, "tif": True}, (inst.name, rule.name)
            assert report.iif_max_dev <= 1e-9 and report.tif_max_dev <= 1e-9
    print(f"[c3] {len(corpus)} instances, worst value/E[max]={worst:.6f}")


# 4 -------------------------------------------------------------------------


@pytest.mark.criterion(4, "right arc: online-IIF optimum = (1+eps)/2")
@pytest.mark.parametrize("eps", [0.5, 0.2, 0.05])
def test_right_arc(eps):
    value = _lp_value(build_online_iif_lp(right_arc_instance(eps), FORWARD))
    print(f"[c4] eps={eps} value={value:.12g}")
    assert value == pytest.approx((1 + eps) / 2, abs=1e-8)


# 5 -------------------------------------------------------------------------


def _must_hire(inst) -> float:
    lp = add_must_hire_constraint(build_online_iif_lp(inst, ArrivalOrder.identity(inst.n)), inst)
    return _lp_value(lp)


@pytest.mark.criterion(5, "must-hire collapse: optimum 1 on the eps family, mean/n on the corpus")
@pytest.mark.parametrize("eps", [0.5, 0.1, 0.02])
def test_must_hire_family(eps):
    inst = must_hire_instance(eps)
    value = _must_hire(inst)
    prophet = expected_max(inst)
    print(f"[c5] eps={eps} n={inst.n} optimum={value:.12g} E[max]={prophet:.6f}")
    assert value == pytest.approx(1.0, abs=1e-8)
    assert prophet > 1 / eps


@pytest.mark.criterion(5, "must-hire collapse: optimum 1 on the eps family, mean/n on the corpus")
def test_must_hire_corpus(corpus):
    checked = 0
    for inst in corpus:
        if not inst.has_common_support:
            continue
        assert _must_hire(inst) == pytest.approx(sum_of_means(inst) / inst.n, abs=1e-8), inst.name
        checked += 1
    print(f"[c5] {checked} common-support corpus instances")
    assert checked >= 50


# 6 -------------------------------------------------------------------------


def _random_feasible_iif(inst, order, rng) -> FairPolicy:
    p = rng.random(len(inst.support))
    lhs = p + inst.mass_table[list(order.perm[:-1])].sum(axis=0) @ p
    return FairPolicy(PolicyKind.IIF, inst.support, inst.n, p / max(1.0, lhs.max()), 0.0, order)


def _random_feasible_tif(inst, rng) -> FairPolicy:
    p = rng.random((inst.n, len(inst.support)))
    mass = (inst.mass_table * p).sum(axis=1)
    lhs = p + (mass.sum() - mass)[:, None]
    return FairPolicy(PolicyKind.TIF, inst.support, inst.n, p / max(1.0, lhs.max()), 0.0)


@pytest.mark.criterion(6, "coin rules under enumeration reproduce the policy and its value")
def test_coin_rules_reproduce_policy(corpus):
    rng = np.random.default_rng(6)
    worst = 0.0
    runs = 0
    for inst in corpus:
        tif_policies = [solve_policy(build_online_tif_lp(inst)), _random_feasible_tif(inst, rng)]
        for order in all_orders(inst.n):
            iif_policies = [
                solve_policy(build_online_iif_lp(inst, order)),
                _random_feasible_iif(inst, order, rng),
                halved_offline_policy(inst).as_iif(order),
            ]
            cases = [(RuleSpec("iif", policy=p), p) for p in iif_policies]
            cases += [(RuleSpec("tif", policy=p), p) for p in tif_policies]
            for rule, policy in cases:
                report = enumerate_rule(inst, order, rule)
                dev = float(np.max(np.abs(report.hire_prob - policy.table)))
                gap = abs(report.expected_value - policy_expected_value(inst, policy))
                worst = max(worst, dev, gap)
                runs += 1
                assert dev <= 1e-12, (inst.name, str(order), rule.name)
                assert gap <= 1e-12, (inst.name, str(order), rule.name)
    print(f"[c6] {runs} enumerations, worst deviation {worst:.3g}")


# 7 -------------------------------------------------------------------------


@pytest.mark.criterion(7, "sample rules: 1/2 and 1/9 competitive, fair under exact audits")
def test_sample_rules_exact(corpus):
    worst3 = worst4 = math.inf
    for inst in corpus:
        prophet = expected_max(inst)
        try:
            single = enumerate_sample_rule(inst, ArrivalOrder.identity(inst.n), "single")
        except BudgetExceeded:
            continue
        assert single.expected_value >= 0.5 * prophet - 1e-9, inst.name
        audit3 = audit_fairness(inst, RuleSpec("single_sample"), orders="all", mode="exact")
        assert audit3.verdicts["iif"], inst.name
        audit4 = audit_fairness(inst, RuleSpec("double_sample"), orders="all", mode="exact")
        assert audit4.verdicts == {"iif": True, "tif": True}, inst.name
        for order in all_orders(inst.n):
            double = enumerate_sample_rule(inst, order, "double")
            assert double.expected_value >= prophet / 9 - 1e-9, (inst.name, str(order))
            if prophet > 0:
                worst4 = min(worst4, double.expected_value / prophet)
        if prophet > 0:
            worst3 = min(worst3, single.expected_value / prophet)
    print(f"[c7] worst ratios: single={worst3:.6f} double={worst4:.6f}")


@pytest.mark.criterion(7, "sample rules: 1/2 and 1/9 competitive, fair under exact audits")
@pytest.mark.parametrize("index", [0, 1, 5])
@pytest.mark.parametrize("which", ["single_sample", "double_sample"])
def test_sample_rules_monte_carlo(corpus, index, which):
    inst = corpus[index]
    order = ArrivalOrder.identity(inst.n)
    exact = enumerate_sample_rule(inst, order, which).expected_value
    summary = simulate(inst, RuleSpec(which), order, trials=10**5, seed=7 + index)
    z = abs(summary.mean - exact) / summary.se
    print(f"[c7] {inst.name} {which}: exact={exact:.6f} mc={summary.mean:.6f} z={z:.2f}")
    assert z <= 4


# 8 -------------------------------------------------------------------------


@pytest.mark.criterion(8, "single threshold on the 0-1 instance is neither IIF nor TIF")
def test_unfairness_witness():
    inst = zero_one_instance()
    rule = RuleSpec("threshold", threshold=1.0)
    both = audit_fairness(inst, rule, orders=[FORWARD, BACKWARD], mode="exact")
    cells = [
        both.cell(FORWARD, 0, 1.0).prob,
        both.cell(FORWARD, 1, 1.0).prob,
        both.cell(BACKWARD, 0, 1.0).prob,
        both.cell(BACKWARD, 1, 1.0).prob,
    ]
    print(f"[c8] cells {cells}")
    assert cells == pytest.approx([1.0, 0.5, 1 / 3, 1.0], abs=1e-12)
    assert both.verdicts["tif"] is False
    for order in (FORWARD, BACKWARD):
        single = audit_fairness(inst, rule, orders=[order], mode="exact")
        assert single.verdicts["iif"] is False
        assert single.verdicts["tif"] is None


# 9 -------------------------------------------------------------------------


@pytest.mark.criterion(9, "grid search agrees with the simplex within grid slack")
def test_grid_matches_lp_named():
    cases = [
        (right_arc_instance(0.2), "iif", 1e-3, FORWARD),
        (classic_tight(0.1), "iif", 1e-2, FORWARD),
        (classic_tight(0.1), "iif", 1e-2, BACKWARD),
        (perturbed_tight(0.1, 0.001), "iif", 1e-2, FORWARD),
        (zero_one_instance(), "tif", 2e-2, None),
        (right_arc_instance(0.2, 0.1), "tif", 2e-2, None),
    ]
    for inst, kind, step, order in cases:
        lp = build_online_iif_lp(inst, order) if kind == "iif" else build_online_tif_lp(inst)
        value = _lp_value(lp)
        grid = grid_policy_search(inst, kind, step, order)
        print(f"[c9] {inst.name} {kind}: lp={value:.6f} grid={grid.value:.6f} slack={grid.slack:.4f}")
        assert grid.value <= value + 1e-9
        assert grid.value >= value - grid.slack - 1e-9


@pytest.mark.criterion(9, "grid search agrees with the simplex within grid slack")
def test_grid_matches_lp_corpus(corpus):
    checked = 0
    for inst in corpus:
        for order in all_orders(inst.n):
            value = _lp_value(build_online_iif_lp(inst, order))
            grid = grid_policy_search(inst, "iif", 0.02, order)
            assert value - grid.slack - 1e-9 <= grid.value <= value + 1e-9, (inst.name, str(order))
            checked += 1
        if inst.n * len(inst.support) <= 4:
            value = _lp_value(build_online_tif_lp(inst))
            grid = grid_policy_search(inst, "tif", 0.02)
            assert value - grid.slack - 1e-9 <= grid.value <= value + 1e-9, inst.name
            checked += 1
    print(f"[c9] {checked} corpus programs checked")
