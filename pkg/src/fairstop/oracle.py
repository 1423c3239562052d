"""Exact reference computations for small instances.

These routines re-derive rule behaviour from the rule definitions by full
enumeration of value profiles; they share no traversal code with
:mod:`fairstop.rules`, so agreement between the two is a real check.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from fairstop.core import ArrivalOrder, Instance
from fairstop.rules import ResolvedRule, RuleSpec

ENUM_BUDGET = 10**6
GRID_BUDGET = 5 * 10**7


class BudgetExceeded(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EnumerationReport:
    """Exact ``Pr[hire i | X_i = x]`` for every candidate and support point.

    Cells where candidate ``i`` has no mass at ``x`` are still defined: they
    are the hire probability with ``X_i`` pinned to ``x``.
    """

    support: tuple[float, ...]
    hire_prob: np.ndarray  # (n, |S|)
    expected_value: float
    hire_mass: float

    def cell(self, i: int, x: float) -> float:
        return float(self.hire_prob[i, self.support.index(float(x))])


def _profiles(sizes: list[int]) -> np.ndarray:
    """Row per joint index profile over the given per-coordinate sizes."""
    total = math.prod(sizes)
    if total == 0:
        return np.zeros((0, len(sizes)), dtype=np.int64)
    grids = np.indices(sizes).reshape(len(sizes), -1).T
    return grids.astype(np.int64)


def _leave_one_out(F: np.ndarray) -> np.ndarray:
    """``out[:, i] = prod_{j != i} F[:, j]`` without dividing by zero."""
    n = F.shape[1]
    out = np.empty_like(F)
    for i in range(n):
        out[:, i] = np.prod(np.delete(F, i, axis=1), axis=1)
    return out


def _check_budget(rows: int, budget: int, what: str) -> None:
    if rows > budget:
        raise BudgetExceeded(f"{what} needs {rows} profiles, budget is {budget}")


def enumerate_rule(
    instance: Instance,
    order: ArrivalOrder,
    rule: RuleSpec | ResolvedRule,
    budget: int = ENUM_BUDGET,
) -> EnumerationReport:
    """Exact report for coin rules (policy tables) and cutoff rules."""
    resolved = rule if isinstance(rule, ResolvedRule) else rule.resolve(instance, order)
    if resolved.spec.is_sample_rule:
        return enumerate_sample_rule(instance, order, resolved.spec.name, budget)
    n, s = instance.n, len(instance.support)
    _check_budget(s**n, budget, "rule enumeration")
    support = np.asarray(instance.support)
    f = instance.mass_table
    perm = list(order.perm)

    # acceptance probability at step t as a function of the arriving value
    step_coin = np.zeros((n, s))
    if resolved.table is not None:
        table = resolved.table
        reach = 1.0
        for t, i in enumerate(perm):
            p = table[i]
            with np.errstate(divide="ignore", invalid="ignore"):
                step_coin[t] = np.where(p > 0, np.minimum(1.0, p / reach), 0.0)
            reach = 1.0 - sum(float(f[k] @ table[k]) for k in perm[: t + 1])
    else:
        for t in range(n):
            step_coin[t] = (support >= resolved.cutoffs[t]).astype(float)

    idx = _profiles([s] * n)
    arrive = idx[:, perm]  # value index of the candidate arriving at step t
    coins = step_coin[np.arange(n)[None, :], arrive]
    survive = np.cumprod(1.0 - coins, axis=1)
    reach_t = np.hstack([np.ones((idx.shape[0], 1)), survive[:, :-1]])
    hire_step = reach_t * coins  # (R, n) by step
    hire_cand = np.empty_like(hire_step)
    hire_cand[:, perm] = hire_step

    F = f[np.arange(n)[None, :], idx]
    w_others = _leave_one_out(F)
    weight = np.prod(F, axis=1)
    hire_prob = np.zeros((n, s))
    for i in range(n):
        hire_prob[i] = np.bincount(idx[:, i], weights=w_others[:, i] * hire_cand[:, i], minlength=s)
    values = support[idx]
    expected = float(np.sum(weight * np.sum(hire_cand * values, axis=1)))
    mass = float(np.sum(weight * np.sum(hire_cand, axis=1)))
    return EnumerationReport(instance.support, hire_prob, expected, mass)


def _support_index_lists(instance: Instance) -> list[np.ndarray]:
    pos = {x: k for k, x in enumerate(instance.support)}
    return [np.array([pos[x] for x in d.points]) for d in instance.dists]


def _sample_profiles(instance: Instance) -> tuple[np.ndarray, np.ndarray]:
    """Index profiles over each candidate's own support and their weights."""
    own = _support_index_lists(instance)
    local = _profiles([len(o) for o in own])
    idx = np.stack([own[j][local[:, j]] for j in range(instance.n)], axis=1)
    f = instance.mass_table
    weight = np.prod(f[np.arange(instance.n)[None, :], idx], axis=1)
    return idx, weight


def enumerate_sample_rule(
    instance: Instance,
    order: ArrivalOrder,
    which: str,
    budget: int = ENUM_BUDGET,
) -> EnumerationReport:
    """Exact report for the single-sample or double-sample rule.

    Ties are integrated out rather than sampled: the priorities make every
    strict order of equal-valued samples equally likely, so a statement such
    as "this sample beats those ``d`` tied samples" has probability given by
    counting exchangeable positions.
    """
    instance.check_order(order)
    which = {"single": "single_sample", "double": "double_sample"}.get(which, which)
    if which == "single_sample":
        return _enumerate_single(instance, budget)
    if which == "double_sample":
        return _enumerate_double(instance, order, budget)
    raise ValueError(f"unknown sample rule {which!r}")


def _finish(
    instance: Instance,
    Xi: np.ndarray,
    w_others: np.ndarray,
    w_full: np.ndarray,
    hire: np.ndarray,
) -> EnumerationReport:
    n, s = instance.n, len(instance.support)
    support = np.asarray(instance.support)
    hire_prob = np.zeros((n, s))
    for i in range(n):
        hire_prob[i] = np.bincount(Xi[:, i], weights=w_others[:, i] * hire[:, i], minlength=s)
    expected = float(np.sum(w_full * np.sum(hire * support[Xi], axis=1)))
    mass = float(np.sum(w_full * np.sum(hire, axis=1)))
    return EnumerationReport(instance.support, hire_prob, expected, mass)


def _enumerate_single(instance: Instance, budget: int) -> EnumerationReport:
    n, s = instance.n, len(instance.support)
    f = instance.mass_table
    y_idx, y_w = _sample_profiles(instance)
    _check_budget(s**n * y_idx.shape[0], budget, "single-sample enumeration")
    x_idx = _profiles([s] * n)
    Xi = np.repeat(x_idx, y_idx.shape[0], axis=0)
    Yi = np.tile(y_idx, (x_idx.shape[0], 1))
    Yw = np.tile(y_w, x_idx.shape[0])
    FX = f[np.arange(n)[None, :], Xi]
    w_others = _leave_one_out(FX) * Yw[:, None]
    w_full = np.prod(FX, axis=1) * Yw

    hire = np.zeros(Xi.shape)
    for i in range(n):
        xi = Xi[:, i][:, None]
        others = np.delete(Xi, i, axis=1)
        ok = np.all(others <= xi, axis=1) & (Yi[:, i] <= Xi[:, i])
        ties = np.sum(others == xi, axis=1) + (Yi[:, i] == Xi[:, i])
        hire[:, i] = ok / (1.0 + ties)
    return _finish(instance, Xi, w_others, w_full, hire)


def _top_sample_law(instance: Instance) -> list[tuple[int, int, float]]:
    """Distribution of (index of max Y, number of Y's at that value)."""
    y_idx, y_w = _sample_profiles(instance)
    top = y_idx.max(axis=1)
    count = np.sum(y_idx == top[:, None], axis=1)
    law: dict[tuple[int, int], float] = {}
    for key, w in zip(zip(top.tolist(), count.tolist()), y_w.tolist()):
        law[key] = law.get(key, 0.0) + w
    return [(y, a, w) for (y, a), w in sorted(law.items())]


def _enumerate_double(instance: Instance, order: ArrivalOrder, budget: int) -> EnumerationReport:
    n, s = instance.n, len(instance.support)
    f = instance.mass_table
    law = _top_sample_law(instance)
    z_idx, z_w = _sample_profiles(instance)
    x_idx = _profiles([s] * n)
    rows = x_idx.shape[0] * z_idx.shape[0] * len(law)
    _check_budget(rows, budget, "double-sample enumeration")

    nx, nz, nl = x_idx.shape[0], z_idx.shape[0], len(law)
    Xi = np.repeat(x_idx, nz * nl, axis=0)
    Zi = np.tile(np.repeat(z_idx, nl, axis=0), (nx, 1))
    Zw = np.tile(np.repeat(z_w, nl), nx)
    ystar = np.tile(np.array([y for y, _, _ in law]), nx * nz)
    a = np.tile(np.array([c for _, c, _ in law], dtype=float), nx * nz)
    Lw = np.tile(np.array([w for _, _, w in law]), nx * nz)

    FX = f[np.arange(n)[None, :], Xi]
    w_others = _leave_one_out(FX) * (Zw * Lw)[:, None]
    w_full = np.prod(FX, axis=1) * Zw * Lw

    y = ystar[:, None]
    perm = list(order.perm)
    hire = np.zeros(Xi.shape)
    for t, i in enumerate(perm):
        before, after = perm[:t], perm[t:]
        xi = Xi[:, i]
        ok = (xi >= ystar) & np.all(Xi[:, before] <= y, axis=1) & np.all(Zi[:, after] <= y, axis=1)
        d = np.sum(Xi[:, before] == y, axis=1) + np.sum(Zi[:, after] == y, axis=1)
        # the top Y must beat the d tied samples; a tied X_i must in turn beat it
        prob = a / (a + d)
        prob = np.where(xi == ystar, prob / (a + d + 1.0), prob)
        hire[:, i] = np.where(ok, prob, 0.0)
    return _finish(instance, Xi, w_others, w_full, hire)


# --------------------------------------------------------------------------
# Brute-force optima
# --------------------------------------------------------------------------


def optimal_online_bruteforce(instance: Instance, order: ArrivalOrder, max_bits: int = 16) -> float:
    """Best expected value over every deterministic accept/reject table.

    Values are independent, so a table indexed by (step, arriving value)
    covers the optimal rule.
    """
    instance.check_order(order)
    dists = [instance.dists[i] for i in order]
    bits = sum(len(d.points) for d in dists)
    if bits > max_bits:
        raise BudgetExceeded(f"{2**bits} decision tables exceed the limit")
    best = 0.0
    for choice in itertools.product((False, True), repeat=bits):
        value, reach, pos = 0.0, 1.0, 0
        for d in dists:
            accept = choice[pos : pos + len(d.points)]
            pos += len(d.points)
            gain = sum(x * m for x, m, a in zip(d.points, d.masses, accept) if a)
            stop = sum(m for m, a in zip(d.masses, accept) if a)
            value += reach * gain
            reach *= 1.0 - stop
        best = max(best, value)
    return best


def lattice(step: float) -> np.ndarray:
    count = int(round(1.0 / step))
    if count < 1 or not math.isclose(count * step, 1.0, rel_tol=0, abs_tol=1e-9):
        raise ValueError(f"grid step {step} must divide 1")
    return np.linspace(0.0, 1.0, count + 1)


@dataclass(frozen=True, eq=False)
class GridResult:
    value: float
    probs: np.ndarray
    slack: float  # the LP optimum lies within [value, value + slack]
    points: int


def grid_policy_search(
    instance: Instance,
    kind: str,
    step: float,
    order: ArrivalOrder | None = None,
    budget: int = GRID_BUDGET,
) -> GridResult:
    """Exhaustive search of the probability lattice for the best fair policy.

    Feasibility and value are evaluated straight from the fairness
    inequalities, independently of the LP builders.  Rounding an optimal
    policy down to the lattice keeps it feasible (all coefficients are
    non-negative), so the optimum is at most ``step * sum(coefficients)``
    above the best lattice point.
    """
    kind = kind.lower()
    f = instance.mass_table
    n, s = f.shape
    support = np.asarray(instance.support)
    if kind == "iif":
        if order is None:
            raise ValueError("IIF search needs an arrival order")
        instance.check_order(order)
        if s > 3:
            raise BudgetExceeded("IIF grid search supports at most 3 support points")
        dim = s
        prefix = f[list(order.perm[:-1])].sum(axis=0)
        gain = (f * support[None, :]).sum(axis=0)

        def evaluate(P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
            feasible = P.max(axis=1) + P @ prefix <= 1.0 + 1e-12
            return feasible, P @ gain

    elif kind == "tif":
        if n * s > 4:
            raise BudgetExceeded("TIF grid search supports at most 4 variables")
        dim = n * s
        gain = (f * support[None, :]).reshape(-1)

        def evaluate(P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
            Q = P.reshape(-1, n, s)
            used = np.einsum("bis,is->bi", Q, f)
            others = used.sum(axis=1, keepdims=True) - used
            feasible = np.all(Q.max(axis=2) + others <= 1.0 + 1e-12, axis=1)
            return feasible, P @ gain

    else:
        raise ValueError(f"unknown policy kind {kind!r}")

    g = lattice(step)
    points = g.size**dim
    if points > budget:
        raise BudgetExceeded(f"{points} lattice points exceed the budget {budget}")
    tail = min(dim, 2)
    mesh = np.stack(np.meshgrid(*([g] * tail), indexing="ij"), axis=-1).reshape(-1, tail)
    best_value, best_p = -math.inf, None
    for head in itertools.product(g, repeat=dim - tail):
        P = np.hstack([np.tile(np.asarray(head), (mesh.shape[0], 1)), mesh])
        feasible, value = evaluate(P)
        value = np.where(feasible, value, -math.inf)
        k = int(np.argmax(value))
        if value[k] > best_value:
            best_value, best_p = float(value[k]), P[k].copy()
    return GridResult(best_value, best_p, float(step * gain.sum()), points)
