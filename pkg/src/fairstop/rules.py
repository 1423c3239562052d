"""Executable stopping rules.

Online rules pull the arriving values one at a time from an iterable (the
"stream"), so the same code serves sampled runs and fixed value profiles.
Candidate indices and steps are 0-based throughout the API.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Mapping, NamedTuple

import numpy as np

from fairstop.core import ArrivalOrder, Instance, expected_max
from fairstop.lp import (
    FEAS_TOL,
    FairPolicy,
    PolicyKind,
    build_online_iif_lp,
    build_online_tif_lp,
    halved_offline_policy,
    solve_policy,
)


class PolicyInfeasibleError(RuntimeError):
    """A coin probability p/Q exceeded 1 beyond tolerance at run time."""


@dataclass(frozen=True)
class HireOutcome:
    hired: int | None = None
    value: float = 0.0
    step: int | None = None

    def __post_init__(self) -> None:
        if (self.hired is None) != (self.step is None):
            raise ValueError("hired and step must be set together")
        if self.hired is None and self.value != 0.0:
            raise ValueError("no hire means value 0")


class TraceRow(NamedTuple):
    t: int
    candidate: int
    x: float
    Q: float
    q: float
    decision: str


def write_trace(rows: Iterable[TraceRow], fh: IO[str]) -> None:
    """CSV with 1-based step and candidate numbers."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["t", "candidate", "x", "Q_t", "q_t", "decision"])
    for r in rows:
        writer.writerow([r.t + 1, r.candidate + 1, f"{r.x:.12g}", f"{r.Q:.12g}", f"{r.q:.12g}", r.decision])


def sampled_stream(
    instance: Instance,
    order: ArrivalOrder,
    rng: np.random.Generator,
    fixed: Mapping[int, float] | None = None,
) -> Iterator[float]:
    """Lazily draw each arriving value; ``fixed`` pins chosen candidates."""
    for i in order:
        if fixed and i in fixed:
            yield fixed[i]
        else:
            yield instance.dists[i].sample(rng)


def profile_stream(values: Iterable[float], order: ArrivalOrder) -> Iterator[float]:
    """Stream a value profile indexed by candidate in arrival order."""
    values = tuple(values)
    return (values[i] for i in order)


def _coin(p: float, reach: float) -> float:
    if p <= 0.0:
        return 0.0
    if p > reach + FEAS_TOL:
        raise PolicyInfeasibleError(
            f"hire probability {p:.12g} exceeds survival mass {reach:.12g}"
        )
    return 1.0 if p >= reach else p / reach


def _run_coin_rule(
    instance: Instance,
    order: ArrivalOrder,
    table: np.ndarray,
    xs: Iterable[float],
    rng: np.random.Generator,
    trace: list[TraceRow] | None,
) -> HireOutcome:
    instance.check_order(order)
    index = {x: k for k, x in enumerate(instance.support)}
    spent = (instance.mass_table * table).sum(axis=1)
    reach = 1.0
    stream = iter(xs)
    for t, i in enumerate(order):
        x = next(stream)
        try:
            p = float(table[i, index[x]])
        except KeyError:
            raise ValueError(f"value {x!r} is outside the instance support") from None
        q = _coin(p, reach)
        heads = q > 0.0 and rng.random() < q
        if trace is not None:
            trace.append(TraceRow(t, i, x, reach, q, "hire" if heads else "reject"))
        if heads:
            return HireOutcome(i, x, t)
        reach -= spent[i]
    return HireOutcome()


def run_iif_rule(
    instance: Instance,
    order: ArrivalOrder,
    policy: FairPolicy,
    xs: Iterable[float],
    rng: np.random.Generator,
    trace: list[TraceRow] | None = None,
) -> HireOutcome:
    """Coin-flipping rule with heads probability ``p(x) / Q_t``."""
    if policy.kind is not PolicyKind.IIF:
        policy = policy.as_iif()
    return _run_coin_rule(instance, order, np.asarray(policy.table), xs, rng, trace)


def run_tif_rule(
    instance: Instance,
    order: ArrivalOrder,
    policy: FairPolicy,
    xs: Iterable[float],
    rng: np.random.Generator,
    trace: list[TraceRow] | None = None,
) -> HireOutcome:
    """Coin-flipping rule with heads probability ``p(i, x) / Q_t``."""
    return _run_coin_rule(instance, order, np.asarray(policy.table), xs, rng, trace)


def run_threshold_rule(
    instance: Instance,
    order: ArrivalOrder,
    threshold: float,
    xs: Iterable[float],
    trace: list[TraceRow] | None = None,
) -> HireOutcome:
    return _run_cutoffs(instance, order, (threshold,) * instance.n, xs, trace)


def _run_cutoffs(
    instance: Instance,
    order: ArrivalOrder,
    cutoffs: tuple[float, ...],
    xs: Iterable[float],
    trace: list[TraceRow] | None = None,
) -> HireOutcome:
    instance.check_order(order)
    stream = iter(xs)
    for t, i in enumerate(order):
        x = next(stream)
        take = x >= cutoffs[t]
        if trace is not None:
            trace.append(TraceRow(t, i, x, math.nan, float(take), "hire" if take else "reject"))
        if take:
            return HireOutcome(i, x, t)
    return HireOutcome()


def samuel_cahn_threshold(instance: Instance) -> float:
    """Discrete median of the maximum.

    The largest support point ``T`` with ``Pr[max >= T] >= 1/2``, i.e. the
    highest threshold that still hires with probability at least one half.
    """
    best = instance.support[0]
    for x in instance.support:
        at_least = 1.0 - math.prod(d.cdf_below(x) for d in instance.dists)
        if at_least >= 0.5 - 1e-12:
            best = x
    return best


def kw_threshold(instance: Instance) -> float:
    return expected_max(instance) / 2.0


@dataclass(frozen=True)
class DynamicRule:
    """Optimal unconstrained rule: accept at step t iff ``x >= cutoffs[t]``."""

    order: ArrivalOrder
    cutoffs: tuple[float, ...]
    value: float

    def run(
        self, instance: Instance, xs: Iterable[float], trace: list[TraceRow] | None = None
    ) -> HireOutcome:
        return _run_cutoffs(instance, self.order, self.cutoffs, xs, trace)


def backward_induction_optimal(
    instance: Instance, order: ArrivalOrder
) -> tuple[DynamicRule, float]:
    instance.check_order(order)
    continuation = 0.0
    cutoffs = []
    for i in reversed(order.perm):
        cutoffs.append(continuation)
        d = instance.dists[i]
        continuation = math.fsum(max(x, continuation) * m for x, m in zip(d.points, d.masses))
    rule = DynamicRule(order, tuple(reversed(cutoffs)), continuation)
    return rule, continuation


# --------------------------------------------------------------------------
# Sample-based rules
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SampleWorld:
    """Realized values X plus samples Y, Z, each with a tie-breaking priority.

    ``psi[0]``, ``psi[1]``, ``psi[2]`` hold the priorities of X, Y, Z.
    """

    X: tuple[float, ...]
    Y: tuple[float, ...]
    Z: tuple[float, ...]
    psi: tuple[tuple[float, ...], tuple[float, ...], tuple[float, ...]]

    def x(self, i: int) -> tuple[float, float]:
        return (self.X[i], self.psi[0][i])

    def y(self, i: int) -> tuple[float, float]:
        return (self.Y[i], self.psi[1][i])

    def z(self, i: int) -> tuple[float, float]:
        return (self.Z[i], self.psi[2][i])


def draw_world(
    instance: Instance, rng: np.random.Generator, fixed: Mapping[int, float] | None = None
) -> SampleWorld:
    n = instance.n
    draws = [[d.sample(rng) for d in instance.dists] for _ in range(3)]
    if fixed:
        for i, x in fixed.items():
            draws[0][i] = x
    psi = rng.random((3, n))
    return SampleWorld(
        tuple(draws[0]), tuple(draws[1]), tuple(draws[2]), tuple(tuple(row) for row in psi.tolist())
    )


def draw_worlds(instance: Instance, rng: np.random.Generator, count: int) -> Iterator[SampleWorld]:
    """Vectorized batch of independent worlds."""
    cols = [
        np.stack([d.sample_many(rng, count) for d in instance.dists], axis=1) for _ in range(3)
    ]
    psi = rng.random((count, 3, instance.n))
    X, Y, Z = (c.tolist() for c in cols)
    P = psi.tolist()
    for k in range(count):
        yield SampleWorld(tuple(X[k]), tuple(Y[k]), tuple(Z[k]), tuple(tuple(r) for r in P[k]))


def run_single_sample_offline(instance: Instance, world: SampleWorld) -> HireOutcome:
    """Hire the top realized value iff it beats its own candidate's sample."""
    n = instance.n
    top = max(range(n), key=world.x)
    if world.x(top) > world.y(top):
        return HireOutcome(top, world.X[top], n - 1)
    return HireOutcome()


def run_double_sample_online(
    instance: Instance,
    order: ArrivalOrder,
    world: SampleWorld,
    trace: list[TraceRow] | None = None,
) -> HireOutcome:
    """Hire X at step t iff it beats the best Y, every earlier X fell below
    that Y, and every Z from step t onward falls below it too."""
    instance.check_order(order)
    n = instance.n
    y_star = max(world.y(j) for j in range(n))
    # z_clear[t]: Z of every candidate arriving at step >= t is below y_star
    z_clear = [True] * (n + 1)
    for t in range(n - 1, -1, -1):
        z_clear[t] = z_clear[t + 1] and world.z(order[t]) < y_star
    earlier_below = True
    for t, i in enumerate(order):
        x = world.x(i)
        take = x > y_star and earlier_below and z_clear[t]
        if trace is not None:
            trace.append(TraceRow(t, i, x[0], math.nan, float(take), "hire" if take else "reject"))
        if take:
            return HireOutcome(i, world.X[i], t)
        earlier_below = earlier_below and x < y_star
    return HireOutcome()


# --------------------------------------------------------------------------
# Rule specifications
# --------------------------------------------------------------------------

RULE_NAMES = (
    "iif",
    "tif",
    "halved",
    "threshold",
    "samuel_cahn",
    "kw",
    "dp",
    "never",
    "single_sample",
    "double_sample",
)
SAMPLE_RULES = ("single_sample", "double_sample")


@dataclass(frozen=True, eq=False)
class RuleSpec:
    """Names a rule family; ``resolve`` fixes it for one arrival order.

    ``iif`` and ``tif`` without a policy mean the LP-optimal fair rule for
    each order; ``halved`` is the symmetrized, halved offline-relaxation
    optimum run as an IIF coin rule.
    """

    name: str
    policy: FairPolicy | None = None
    threshold: float | None = None

    def __post_init__(self) -> None:
        if self.name not in RULE_NAMES:
            raise ValueError(f"unknown rule {self.name!r}; choose from {', '.join(RULE_NAMES)}")
        if self.name == "threshold" and self.threshold is None:
            raise ValueError("threshold rule needs a threshold")

    @property
    def is_sample_rule(self) -> bool:
        return self.name in SAMPLE_RULES

    def label(self) -> str:
        if self.name == "threshold":
            return f"threshold({self.threshold:g})"
        return self.name

    def resolve(self, instance: Instance, order: ArrivalOrder) -> ResolvedRule:
        instance.check_order(order)
        n = instance.n
        name = self.name
        if name in ("iif", "tif", "halved"):
            if self.policy is not None:
                policy = self.policy
            elif name == "iif":
                policy = solve_policy(build_online_iif_lp(instance, order))
            elif name == "tif":
                policy = solve_policy(build_online_tif_lp(instance))
            else:
                policy = halved_offline_policy(instance)
            if name != "tif" and policy.kind is not PolicyKind.IIF:
                policy = policy.as_iif(order)
            return ResolvedRule(self, order, table=np.array(policy.table), policy=policy)
        if name == "threshold":
            return ResolvedRule(self, order, cutoffs=(float(self.threshold),) * n)
        if name == "samuel_cahn":
            return ResolvedRule(self, order, cutoffs=(samuel_cahn_threshold(instance),) * n)
        if name == "kw":
            return ResolvedRule(self, order, cutoffs=(kw_threshold(instance),) * n)
        if name == "dp":
            rule, _ = backward_induction_optimal(instance, order)
            return ResolvedRule(self, order, cutoffs=rule.cutoffs)
        if name == "never":
            return ResolvedRule(self, order, cutoffs=(math.inf,) * n)
        return ResolvedRule(self, order)


@dataclass(frozen=True, eq=False)
class ResolvedRule:
    """A rule fixed to one order: coin table, per-step cutoffs, or sample rule."""

    spec: RuleSpec
    order: ArrivalOrder
    table: np.ndarray | None = None
    cutoffs: tuple[float, ...] | None = None
    policy: FairPolicy | None = field(default=None, repr=False)

    def run_once(
        self,
        instance: Instance,
        rng: np.random.Generator,
        fixed: Mapping[int, float] | None = None,
        trace: list[TraceRow] | None = None,
    ) -> HireOutcome:
        """Draw fresh randomness (values, samples, coins) and run the rule once."""
        name = self.spec.name
        if name == "single_sample":
            return run_single_sample_offline(instance, draw_world(instance, rng, fixed))
        if name == "double_sample":
            return run_double_sample_online(
                instance, self.order, draw_world(instance, rng, fixed), trace
            )
        xs = sampled_stream(instance, self.order, rng, fixed)
        if self.table is not None:
            return _run_coin_rule(instance, self.order, self.table, xs, rng, trace)
        return _run_cutoffs(instance, self.order, self.cutoffs, xs, trace)
