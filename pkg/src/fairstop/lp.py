"""Fair-stopping linear programs and a dense tableau simplex to solve them.

Every program here has the shape ``max c.p  s.t.  A p <= b,  0 <= p <= 1``.
IIF programs carry one variable per support point, TIF and offline-relaxation
programs one variable per (candidate, support point) pair, laid out row-major.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from fairstop.core import ArrivalOrder, Instance, all_orders

PIVOT_TOL = 1e-10
FEAS_TOL = 1e-8
MAX_PIVOTS = 100_000


class LpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class PolicyKind(str, enum.Enum):
    IIF = "iif"
    TIF = "tif"
    OFFLINE = "offline"


@dataclass(frozen=True)
class Layout:
    """What the variables of a program mean."""

    kind: str  # "iif", "tif", "offline" or "generic"
    support: tuple[float, ...] = ()
    n: int = 0
    order: ArrivalOrder | None = None
    must_hire: bool = False

    @property
    def var_count(self) -> int:
        if self.kind == "iif":
            return len(self.support)
        if self.kind in ("tif", "offline"):
            return self.n * len(self.support)
        raise ValueError("generic layout has no implied size")

    def var_names(self, count: int) -> list[str]:
        if self.kind == "iif":
            return [f"p({x:g})" for x in self.support]
        if self.kind in ("tif", "offline"):
            return [f"p({i + 1},{x:g})" for i in range(self.n) for x in self.support]
        return [f"p{j}" for j in range(count)]


@dataclass(frozen=True, eq=False)
class LinearProgram:
    objective: np.ndarray
    A: np.ndarray
    b: np.ndarray
    layout: Layout = field(default_factory=lambda: Layout("generic"))

    def __post_init__(self) -> None:
        c = np.asarray(self.objective, dtype=float).reshape(-1)
        A = np.asarray(self.A, dtype=float).reshape(-1, c.size)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if A.shape[0] != b.size:
            raise ValueError(f"{A.shape[0]} constraint rows but {b.size} right-hand sides")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("linear program has non-finite coefficients")
        for arr in (c, A, b):
            arr.setflags(write=False)
        object.__setattr__(self, "objective", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def var_count(self) -> int:
        return self.objective.size

    @property
    def constraints(self) -> Iterator[tuple[np.ndarray, float]]:
        for row, rhs in zip(self.A, self.b):
            yield row, float(rhs)

    def is_feasible(self, p: np.ndarray, tol: float = FEAS_TOL) -> bool:
        p = np.asarray(p, dtype=float)
        if np.any(p < -tol) or np.any(p > 1 + tol):
            return False
        return bool(np.all(self.A @ p <= self.b + tol))

    def dump(self) -> str:
        """Plain-text form for fixture diffing, 12 significant digits."""
        names = self.layout.var_names(self.var_count)
        lines = ["# vars: " + " ".join(names)]
        lines.append("max " + " ".join(f"{c:.12g}" for c in self.objective))
        for row, rhs in self.constraints:
            lines.append(" ".join(f"{a:.12g}" for a in row) + f" <= {rhs:.12g}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True, eq=False)
class LpSolution:
    values: np.ndarray
    objective_value: float
    status: LpStatus
    duals: np.ndarray | None = None  # one per row of [A; I], bound rows last
    dual_bound: float = math.nan
    pivots: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


# --------------------------------------------------------------------------
# Simplex
# --------------------------------------------------------------------------


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    factors = T[:, col].copy()
    factors[row] = 0.0
    T -= np.outer(factors, T[row])
    T[:, col] = 0.0
    T[row, col] = 1.0


def _bland_loop(T: np.ndarray, basis: list[int], ncols: int) -> tuple[bool, int]:
    """Run Bland-rule pivots on columns ``< ncols``; returns (bounded, pivots)."""
    m = len(basis)
    pivots = 0
    while True:
        reduced = T[m, :ncols]
        entering = np.flatnonzero(reduced > PIVOT_TOL)
        if entering.size == 0:
            return True, pivots
        col = int(entering[0])
        column = T[:m, col]
        rows = np.flatnonzero(column > PIVOT_TOL)
        if rows.size == 0:
            return False, pivots
        ratios = T[rows, -1] / column[rows]
        best = ratios.min()
        tied = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
        row = int(min(tied, key=lambda r: basis[r]))
        _pivot(T, row, col)
        basis[row] = col
        pivots += 1
        if pivots > MAX_PIVOTS:
            raise RuntimeError("simplex exceeded pivot limit")


def solve_lp(lp: LinearProgram) -> LpSolution:
    """Two-phase dense primal simplex with Bland's anti-cycling rule.

    Box bounds are appended as explicit rows ``p_j <= 1``.  Rows with a
    negative right-hand side are negated and seeded with an artificial
    variable for phase one.
    """
    nv = lp.var_count
    A = np.vstack([lp.A, np.eye(nv)])
    b = np.concatenate([lp.b, np.ones(nv)])
    m = A.shape[0]

    flip = b < 0
    sign = np.where(flip, -1.0, 1.0)
    art_rows = np.flatnonzero(flip)
    k = art_rows.size
    ncols = nv + m + k
    T = np.zeros((m + 1, ncols + 1))
    T[:m, :nv] = A * sign[:, None]
    T[:m, nv : nv + m] = np.diag(sign)
    T[:m, -1] = b * sign
    basis = [nv + r for r in range(m)]
    for j, r in enumerate(art_rows):
        T[r, nv + m + j] = 1.0
        basis[r] = nv + m + j

    pivots = 0
    if k:
        # phase one: maximize minus the sum of artificials
        T[m, :] = T[art_rows].sum(axis=0)
        T[m, nv + m :ncols] = 0.0
        _, pivots = _bland_loop(T, basis, ncols)
        # T[m, -1] holds the remaining sum of artificials
        if T[m, -1] > FEAS_TOL:
            return LpSolution(np.zeros(nv), math.nan, LpStatus.INFEASIBLE, pivots=pivots)
        for r in range(m):
            if basis[r] >= nv + m:
                candidates = np.flatnonzero(np.abs(T[r, : nv + m]) > PIVOT_TOL)
                # [A | I] has full row rank, so a replacement column always exists
                col = int(candidates[0])
                _pivot(T, r, col)
                basis[r] = col
        T = np.delete(T, np.s_[nv + m : ncols], axis=1)
        ncols = nv + m

    cost = np.zeros(ncols)
    cost[:nv] = lp.objective
    cb = cost[basis]
    T[m, :ncols] = cost - cb @ T[:m, :ncols]
    T[m, -1] = -(cb @ T[:m, -1])
    bounded, more = _bland_loop(T, basis, ncols)
    pivots += more
    if not bounded:
        return LpSolution(np.zeros(nv), math.inf, LpStatus.UNBOUNDED, pivots=pivots)

    x = np.zeros(ncols)
    x[basis] = T[:m, -1]
    values = np.clip(x[:nv], 0.0, 1.0)
    duals = -T[m, nv : nv + m]
    return LpSolution(
        values=values,
        objective_value=float(lp.objective @ values),
        status=LpStatus.OPTIMAL,
        duals=duals,
        dual_bound=float(b @ duals),
        pivots=pivots,
    )


# --------------------------------------------------------------------------
# Program builders
# --------------------------------------------------------------------------


def _value_weights(instance: Instance) -> np.ndarray:
    """``x * f_i(x)`` as an (n, |S|) table."""
    return instance.mass_table * np.asarray(instance.support)[None, :]


def build_online_iif_lp(instance: Instance, order: ArrivalOrder) -> LinearProgram:
    """One variable per support point; one fairness row per support point.

    Row for ``x``: ``p(x) + sum_{k<n} sum_y f_{order[k]}(y) p(y) <= 1``.
    """
    instance.check_order(order)
    f = instance.mass_table
    s = len(instance.support)
    prefix = f[list(order.perm[:-1])].sum(axis=0) if instance.n > 1 else np.zeros(s)
    A = np.eye(s) + prefix[None, :]
    c = _value_weights(instance).sum(axis=0)
    return LinearProgram(c, A, np.ones(s), Layout("iif", instance.support, instance.n, order))


def build_online_tif_lp(instance: Instance) -> LinearProgram:
    """One variable per (i, x); row (i, x): ``p(i,x) + sum_{k!=i} sum_y f_k(y) p(k,y) <= 1``."""
    f = instance.mass_table
    n, s = f.shape
    A = np.zeros((n * s, n * s))
    for i in range(n):
        others = f.copy()
        others[i] = 0.0
        A[i * s : (i + 1) * s, :] = others.reshape(-1)[None, :]
        A[i * s : (i + 1) * s, i * s : (i + 1) * s] += np.eye(s)
    c = _value_weights(instance).reshape(-1)
    return LinearProgram(c, A, np.ones(n * s), Layout("tif", instance.support, n))


def build_offline_relaxation(instance: Instance) -> LinearProgram:
    """Single capacity row ``sum_i sum_x p_ix f_i(x) <= 1``."""
    f = instance.mass_table
    c = _value_weights(instance).reshape(-1)
    return LinearProgram(
        c, f.reshape(1, -1), np.ones(1), Layout("offline", instance.support, instance.n)
    )


def add_must_hire_constraint(lp: LinearProgram, instance: Instance) -> LinearProgram:
    """Append ``E[#hired] = 1`` as a pair of opposite inequalities."""
    layout = lp.layout
    if layout.kind not in ("iif", "tif"):
        raise ValueError(f"must-hire needs an online IIF/TIF program, got {layout.kind!r}")
    if layout.support != instance.support or layout.n != instance.n:
        raise ValueError("program layout does not match the instance")
    f = instance.mass_table
    row = f.sum(axis=0) if layout.kind == "iif" else f.reshape(-1)
    if row.size != lp.var_count:
        raise ValueError("program variable count does not match the instance")
    A = np.vstack([lp.A, row, -row])
    b = np.concatenate([lp.b, [1.0, -1.0]])
    return LinearProgram(lp.objective, A, b, replace(layout, must_hire=True))


# --------------------------------------------------------------------------
# Policies
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FairPolicy:
    """Conditional hiring probabilities of a fair rule.

    ``probs`` has shape ``(|S|,)`` for IIF policies and ``(n, |S|)`` otherwise.
    """

    kind: PolicyKind
    support: tuple[float, ...]
    n: int
    probs: np.ndarray
    objective_value: float
    order: ArrivalOrder | None = None

    def __post_init__(self) -> None:
        probs = np.array(self.probs, dtype=float)
        expected = (len(self.support),) if self.kind is PolicyKind.IIF else (self.n, len(self.support))
        if probs.shape != expected:
            raise ValueError(f"{self.kind.value} policy needs shape {expected}, got {probs.shape}")
        if np.any(probs < -FEAS_TOL) or np.any(probs > 1 + FEAS_TOL):
            raise ValueError("policy probabilities must lie in [0, 1]")
        probs = np.clip(probs, 0.0, 1.0)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "kind", PolicyKind(self.kind))

    @property
    def table(self) -> np.ndarray:
        """Probabilities as an (n, |S|) table regardless of kind."""
        if self.kind is PolicyKind.IIF:
            return np.broadcast_to(self.probs, (self.n, len(self.support)))
        return self.probs

    def p(self, *args: float) -> float:
        """``p(x)`` for IIF policies, ``p(i, x)`` (0-based ``i``) for the rest."""
        if self.kind is PolicyKind.IIF and len(args) == 1:
            i, x = 0, args[0]
        else:
            i, x = args
        try:
            k = self.support.index(float(x))
        except ValueError:
            raise KeyError(f"{x!r} is not in the policy support") from None
        return float(self.table[int(i), k])

    @property
    def identity_independent(self) -> bool:
        t = self.table
        return bool(np.all(np.abs(t - t[0]) <= FEAS_TOL))

    def as_iif(self, order: ArrivalOrder | None = None) -> FairPolicy:
        if not self.identity_independent:
            raise ValueError("policy depends on candidate identity")
        return FairPolicy(
            PolicyKind.IIF, self.support, self.n, self.table[0], self.objective_value, order
        )

    def as_tif(self) -> FairPolicy:
        return FairPolicy(PolicyKind.TIF, self.support, self.n, self.table, self.objective_value)

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind.value,
            "support": list(self.support),
            "n": self.n,
            "probs": self.probs.tolist(),
            "objective_value": self.objective_value,
        }
        if self.order is not None:
            out["order"] = list(self.order.one_based())
        return out

    @classmethod
    def from_dict(cls, data: dict) -> FairPolicy:
        order = data.get("order")
        return cls(
            PolicyKind(data["kind"]),
            tuple(float(x) for x in data["support"]),
            int(data["n"]),
            np.asarray(data["probs"], dtype=float),
            float(data["objective_value"]),
            ArrivalOrder.from_one_based(order) if order is not None else None,
        )


def policy_expected_value(instance: Instance, policy: FairPolicy) -> float:
    """``sum_i sum_x x f_i(x) p(i, x)``; no arrival order enters."""
    if policy.support != instance.support or policy.n != instance.n:
        raise ValueError("policy layout does not match the instance")
    return float(np.sum(_value_weights(instance) * policy.table))


def policy_from_solution(lp: LinearProgram, solution: LpSolution) -> FairPolicy:
    if not solution.optimal:
        raise ValueError(f"cannot build a policy from a {solution.status.value} solution")
    layout = lp.layout
    kinds = {"iif": PolicyKind.IIF, "tif": PolicyKind.TIF, "offline": PolicyKind.OFFLINE}
    if layout.kind not in kinds:
        raise ValueError("program has no policy layout")
    probs = solution.values
    if layout.kind != "iif":
        probs = probs.reshape(layout.n, len(layout.support))
    return FairPolicy(
        kinds[layout.kind], layout.support, layout.n, probs, solution.objective_value, layout.order
    )


def solve_policy(lp: LinearProgram) -> FairPolicy:
    solution = solve_lp(lp)
    if not solution.optimal:
        raise InfeasibleProgram(f"program is {solution.status.value}")
    return policy_from_solution(lp, solution)


class InfeasibleProgram(RuntimeError):
    pass


def symmetrize_offline_solution(
    instance: Instance, solution: LpSolution | FairPolicy
) -> FairPolicy:
    """Replace ``p_ix`` by the mass-weighted average ``w_x / z_x`` at every x."""
    f = instance.mass_table
    n, s = f.shape
    if isinstance(solution, FairPolicy):
        p = np.asarray(solution.table, dtype=float)
    else:
        p = np.asarray(solution.values, dtype=float).reshape(n, s)
    w = (p * f).sum(axis=0)
    z = f.sum(axis=0)
    common = np.where(w > 0, w / z, 0.0)
    table = np.tile(common, (n, 1))
    value = float(np.sum(_value_weights(instance) * table))
    return FairPolicy(PolicyKind.OFFLINE, instance.support, n, table, value)


def halve_policy(policy: FairPolicy) -> FairPolicy:
    return replace(policy, probs=policy.probs / 2.0, objective_value=policy.objective_value / 2.0)


def halved_offline_policy(instance: Instance) -> FairPolicy:
    """Offline-relaxation optimum, symmetrized and halved."""
    lp = build_offline_relaxation(instance)
    solution = solve_lp(lp)
    if not solution.optimal:
        raise InfeasibleProgram("offline relaxation is not solvable")
    return halve_policy(symmetrize_offline_solution(instance, solution))


# --------------------------------------------------------------------------
# Feasibility checks
# --------------------------------------------------------------------------


def iif_slack(instance: Instance, policy: FairPolicy, order: ArrivalOrder) -> np.ndarray:
    """``1 - lhs`` of every IIF row; negative entries are violations."""
    instance.check_order(order)
    if not policy.identity_independent:
        raise ValueError("IIF check needs an identity-independent policy")
    p = policy.table[0]
    prefix = float(np.sum(instance.mass_table[list(order.perm[:-1])] * p[None, :]))
    return 1.0 - (p + prefix)


def satisfies_iif(
    instance: Instance, policy: FairPolicy, order: ArrivalOrder, tol: float = FEAS_TOL
) -> bool:
    return bool(np.all(iif_slack(instance, policy, order) >= -tol))


def satisfies_tif(instance: Instance, policy: FairPolicy, tol: float = FEAS_TOL) -> bool:
    f = instance.mass_table
    p = policy.table
    mass = (f * p).sum(axis=1)
    total = mass.sum()
    lhs = p + (total - mass)[:, None]
    return bool(np.all(lhs <= 1 + tol))


def check_tif_perm(
    instance: Instance, policy: FairPolicy, tol: float = FEAS_TOL, max_n: int = 5
) -> bool:
    """Debug check of ``p(order[t], x) <= Q_t`` for every order and step."""
    if instance.n > max_n:
        raise ValueError(f"refusing {math.factorial(instance.n)} orders (n > {max_n})")
    f = instance.mass_table
    p = policy.table
    mass = (f * p).sum(axis=1)
    for order in all_orders(instance.n):
        reach = 1.0
        for i in order:
            if np.any(p[i] > reach + tol):
                return False
            reach -= mass[i]
    return True


def feasible_for_all_orders(
    instance: Instance, policy: FairPolicy, tol: float = FEAS_TOL
) -> bool:
    return all(
        build_online_iif_lp(instance, order).is_feasible(policy.table[0], tol)
        for order in all_orders(instance.n)
    )
