"""Fairness audits and competitive-ratio measurements."""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from fairstop.core import ArrivalOrder, Instance, all_orders, expected_max
from fairstop.lp import (
    FairPolicy,
    PolicyKind,
    build_offline_relaxation,
    build_online_iif_lp,
    build_online_tif_lp,
    solve_lp,
)
from fairstop.oracle import enumerate_rule
from fairstop.rules import RuleSpec, backward_induction_optimal

EXACT_TOL = 1e-9
MC_SE_MULTIPLIER = 4.0
MIN_MC_TRIALS = 10**4
MAX_ALL_ORDERS_N = 6
CHUNK = 4096

BASELINES = (
    "prophet",
    "opt_online",
    "opt_offline_iif",
    "opt_online_iif",
    "opt_online_tif",
    "offline_relaxation",
)


# --------------------------------------------------------------------------
# Monte Carlo harness
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SimulationSummary:
    trials: int
    mean: float
    se: float
    ci95: tuple[float, float]
    hire_rate: float
    hire_se: float


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("FAIRSTOP_THREADS", "1")))
    except ValueError:
        return 1


def _run_chunk(args: tuple) -> tuple[np.ndarray, np.ndarray]:
    instance, rule, order, seed, chunk, size = args
    rng = np.random.default_rng(np.random.SeedSequence([seed, chunk]))
    resolved = rule.resolve(instance, order)
    values = np.empty(size)
    hired = np.empty(size, dtype=bool)
    for k in range(size):
        out = resolved.run_once(instance, rng)
        values[k] = out.value
        hired[k] = out.hired is not None
    return values, hired


def run_trials(
    instance: Instance,
    rule: RuleSpec,
    order: ArrivalOrder,
    trials: int,
    seed: int,
    workers: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-trial hired values and hire flags.

    Trials are cut into fixed chunks, each seeded from ``(seed, chunk index)``,
    so the output does not depend on how many workers run them.
    """
    workers = worker_count() if workers is None else workers
    jobs = [
        (instance, rule, order, seed, c, min(CHUNK, trials - c * CHUNK))
        for c in range(math.ceil(trials / CHUNK))
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, jobs))
    else:
        parts = [_run_chunk(job) for job in jobs]
    if not parts:
        return np.empty(0), np.empty(0, dtype=bool)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def simulate(
    instance: Instance,
    rule: RuleSpec,
    order: ArrivalOrder,
    trials: int,
    seed: int,
    workers: int | None = None,
) -> SimulationSummary:
    values, hired = run_trials(instance, rule, order, trials, seed, workers)
    mean = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(trials)) if trials > 1 else math.inf
    rate = float(hired.mean())
    rate_se = math.sqrt(rate * (1 - rate) / trials)
    return SimulationSummary(trials, mean, se, (mean - 1.96 * se, mean + 1.96 * se), rate, rate_se)


# --------------------------------------------------------------------------
# Fairness audit
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Cell:
    order: tuple[int, ...]  # 1-based
    candidate: int  # 1-based
    x: float
    prob: float
    se: float
    trials: int  # 0 for exact cells


@dataclass
class AuditReport:
    rule: str
    mode: str
    support: tuple[float, ...]
    orders: list[tuple[int, ...]]
    per_cell: list[Cell]
    iif_max_dev: float
    tif_max_dev: float | None
    iif_tolerance: float
    tif_tolerance: float | None
    verdicts: dict[str, bool | None] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v is not False for v in self.verdicts.values())

    def cell(self, order: ArrivalOrder | Sequence[int], candidate: int, x: float) -> Cell:
        """Look up a cell by (0-based order, 0-based candidate, value)."""
        key = order.one_based() if isinstance(order, ArrivalOrder) else tuple(i + 1 for i in order)
        for c in self.per_cell:
            if c.order == key and c.candidate == candidate + 1 and c.x == float(x):
                return c
        raise KeyError((key, candidate, x))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["support"] = list(self.support)
        out["orders"] = [list(o) for o in self.orders]
        out["per_cell"] = [dict(asdict(c), order=list(c.order)) for c in self.per_cell]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> AuditReport:
        cells = [Cell(**dict(c, order=tuple(c["order"]))) for c in data["per_cell"]]
        return cls(
            rule=data["rule"],
            mode=data["mode"],
            support=tuple(data["support"]),
            orders=[tuple(o) for o in data["orders"]],
            per_cell=cells,
            iif_max_dev=data["iif_max_dev"],
            tif_max_dev=data["tif_max_dev"],
            iif_tolerance=data["iif_tolerance"],
            tif_tolerance=data["tif_tolerance"],
            verdicts=dict(data["verdicts"]),
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["order", "candidate", "x", "prob", "se", "trials"])
        for c in self.per_cell:
            order = " ".join(str(i) for i in c.order)
            writer.writerow([order, c.candidate, f"{c.x:.12g}", f"{c.prob:.12g}", f"{c.se:.6g}", c.trials])
        return buf.getvalue()


def _resolve_orders(
    instance: Instance, orders: str | Sequence[ArrivalOrder], allow_large: bool
) -> list[ArrivalOrder]:
    if isinstance(orders, str):
        if orders != "all":
            raise ValueError(f"orders must be 'all' or a list, got {orders!r}")
        if instance.n > MAX_ALL_ORDERS_N and not allow_large:
            raise ValueError(
                f"{math.factorial(instance.n)} orders for n={instance.n}; pass allow_large=True"
            )
        return all_orders(instance.n)
    result = list(orders)
    for o in result:
        instance.check_order(o)
    if not result:
        raise ValueError("no arrival orders to audit")
    return result


def _mc_cells(
    instance: Instance,
    rule: RuleSpec,
    order: ArrivalOrder,
    order_index: int,
    trials: int,
    seed: int,
) -> np.ndarray:
    """(n, |S|, 2) array of estimate and standard error, fixing X_i = x per cell."""
    resolved = rule.resolve(instance, order)
    out = np.zeros((instance.n, len(instance.support), 2))
    for i in range(instance.n):
        for k, x in enumerate(instance.support):
            rng = np.random.default_rng(np.random.SeedSequence([seed, order_index, i, k]))
            hits = sum(
                resolved.run_once(instance, rng, fixed={i: x}).hired == i for _ in range(trials)
            )
            p = hits / trials
            out[i, k] = (p, math.sqrt(p * (1 - p) / trials))
    return out


def _spread(est: np.ndarray, se: np.ndarray, axis: int, k: float | None) -> tuple[float, float, bool]:
    """Largest max-min gap along ``axis`` plus the tolerance it is judged against."""
    hi_idx = np.argmax(est, axis=axis)
    lo_idx = np.argmin(est, axis=axis)
    gap = np.max(est, axis=axis) - np.min(est, axis=axis)
    if k is None:
        return float(gap.max()), math.nan, True
    se_hi = np.take_along_axis(se, np.expand_dims(hi_idx, axis), axis).squeeze(axis)
    se_lo = np.take_along_axis(se, np.expand_dims(lo_idx, axis), axis).squeeze(axis)
    limit = k * np.sqrt(se_hi**2 + se_lo**2)
    return float(gap.max()), float(limit.max()), bool(np.all(gap <= limit))


def audit_fairness(
    instance: Instance,
    rule: RuleSpec,
    orders: str | Sequence[ArrivalOrder] = "all",
    mode: str = "exact",
    trials: int = MIN_MC_TRIALS,
    tolerance: float | None = None,
    seed: int = 0,
    allow_large: bool = False,
) -> AuditReport:
    """Tabulate ``Pr[hire i | X_i = x]`` per order and judge IIF and TIF.

    Exact mode uses the enumeration oracle and an absolute tolerance
    (default 1e-9).  Monte Carlo mode pins ``X_i = x`` and samples the rest;
    ``tolerance`` is then a multiple of the combined standard error
    (default 4).
    """
    order_list = _resolve_orders(instance, orders, allow_large)
    n, s = instance.n, len(instance.support)
    est = np.zeros((len(order_list), n, s))
    se = np.zeros_like(est)
    if mode == "exact":
        for o, order in enumerate(order_list):
            est[o] = enumerate_rule(instance, order, rule).hire_prob
        tol = EXACT_TOL if tolerance is None else tolerance
    elif mode == "mc":
        if trials < MIN_MC_TRIALS:
            raise ValueError(f"Monte Carlo audits need at least {MIN_MC_TRIALS} trials per cell")
        for o, order in enumerate(order_list):
            cells = _mc_cells(instance, rule, order, o, trials, seed)
            est[o], se[o] = cells[..., 0], cells[..., 1]
        tol = MC_SE_MULTIPLIER if tolerance is None else tolerance
    else:
        raise ValueError(f"mode must be 'exact' or 'mc', got {mode!r}")

    if mode == "exact":
        iif_dev = float(np.max(np.ptp(est, axis=1)))
        iif_ok, iif_tol = iif_dev <= tol, tol
    else:
        iif_dev, iif_tol, iif_ok = _spread(est, se, axis=1, k=tol)
    tif_dev = tif_tol = tif_ok = None
    if len(order_list) > 1:
        if mode == "exact":
            tif_dev = float(np.max(np.ptp(est, axis=0)))
            tif_ok, tif_tol = tif_dev <= tol, tol
        else:
            tif_dev, tif_tol, tif_ok = _spread(est, se, axis=0, k=tol)

    cells = [
        Cell(order.one_based(), i + 1, x, float(est[o, i, k]), float(se[o, i, k]),
             trials if mode == "mc" else 0)
        for o, order in enumerate(order_list)
        for i in range(n)
        for k, x in enumerate(instance.support)
    ]
    return AuditReport(
        rule=rule.label(),
        mode=mode,
        support=instance.support,
        orders=[o.one_based() for o in order_list],
        per_cell=cells,
        iif_max_dev=iif_dev,
        tif_max_dev=tif_dev,
        iif_tolerance=iif_tol,
        tif_tolerance=tif_tol,
        verdicts={"iif": bool(iif_ok), "tif": None if tif_ok is None else bool(tif_ok)},
    )


# --------------------------------------------------------------------------
# Competitive ratios
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RatioReport:
    numerator_rule: str
    denominator_baseline: str
    ratio: float
    ci95: tuple[float, float]
    exact: bool
    numerator_value: float
    denominator_value: float
    note: str = ""

    def to_dict(self) -> dict:
        out = asdict(self)
        out["ci95"] = list(self.ci95)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> RatioReport:
        return cls(**dict(data, ci95=tuple(data["ci95"])))


def _lp_value(lp) -> float:
    solution = solve_lp(lp)
    if not solution.optimal:
        raise RuntimeError(f"baseline program is {solution.status.value}")
    return solution.objective_value


def baseline_value(instance: Instance, baseline: str, order: ArrivalOrder | None = None) -> float:
    """Expected value of a reference setting.

    ``opt_offline_iif`` has no exact solver; it reports the best online IIF
    optimum over all arrival orders, which any offline IIF rule can imitate,
    so it is a lower bound on the offline IIF optimum.
    """
    order = ArrivalOrder.identity(instance.n) if order is None else order
    if baseline == "prophet":
        return expected_max(instance)
    if baseline == "opt_online":
        return backward_induction_optimal(instance, order)[1]
    if baseline == "opt_online_iif":
        return _lp_value(build_online_iif_lp(instance, order))
    if baseline == "opt_online_tif":
        return _lp_value(build_online_tif_lp(instance))
    if baseline == "offline_relaxation":
        return _lp_value(build_offline_relaxation(instance))
    if baseline == "opt_offline_iif":
        if instance.n > MAX_ALL_ORDERS_N:
            raise ValueError("offline IIF proxy enumerates all orders; n too large")
        return max(_lp_value(build_online_iif_lp(instance, o)) for o in all_orders(instance.n))
    raise ValueError(f"unknown baseline {baseline!r}; choose from {', '.join(BASELINES)}")


def measure_ratio(
    instance: Instance,
    rule: RuleSpec | str,
    baseline: str,
    order: ArrivalOrder | None = None,
    mode: str = "exact",
    trials: int = 10**5,
    seed: int = 0,
) -> RatioReport:
    """E[rule] / E[baseline]; ``rule`` may itself be a baseline name."""
    order = ArrivalOrder.identity(instance.n) if order is None else order
    denominator = baseline_value(instance, baseline, order)
    note = "offline IIF value is a lower bound" if "opt_offline_iif" in (baseline, rule) else ""
    if isinstance(rule, str):
        value = baseline_value(instance, rule, order)
        ratio = value / denominator
        return RatioReport(rule, baseline, ratio, (ratio, ratio), True, value, denominator, note)
    if mode == "exact":
        value = enumerate_rule(instance, order, rule).expected_value
        ratio = value / denominator
        return RatioReport(rule.label(), baseline, ratio, (ratio, ratio), True, value, denominator, note)
    if mode != "mc":
        raise ValueError(f"mode must be 'exact' or 'mc', got {mode!r}")
    summary = simulate(instance, rule, order, trials, seed)
    lo, hi = summary.ci95
    return RatioReport(
        rule.label(), baseline, summary.mean / denominator,
        (lo / denominator, hi / denominator), False, summary.mean, denominator, note,
    )


def offline_iif_witness(eps: float, delta: float) -> tuple[FairPolicy, float]:
    """IIF rule for the perturbed tight instance that inspects candidate 2 first.

    Every positive value is hired with probability ``1 - eps``; because some
    online order achieves it, so does an offline IIF algorithm.
    """
    from fairstop.gen import perturbed_tight
    from fairstop.lp import policy_expected_value

    instance = perturbed_tight(eps, delta)
    probs = np.array([0.0 if x == 0 else 1.0 - eps for x in instance.support])
    policy = FairPolicy(PolicyKind.IIF, instance.support, 2, probs, 0.0, ArrivalOrder((1, 0)))
    value = policy_expected_value(instance, policy)
    return FairPolicy(PolicyKind.IIF, instance.support, 2, probs, value, policy.order), value
