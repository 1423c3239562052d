"""Competitive-ratio and impossibility tables behind ``fairstop reproduce``.

Each row compares the optimum of setting A with that of setting B on one
instance, and ``ratio`` is value B / value A.  Tight arcs pass when the
ratio lands in ``[bound, bound + 2*eps]``.  Lower-bound arcs only need
``ratio >= bound``, and the impossibility rows need ``ratio <= bound``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import astuple, dataclass
from typing import Callable

import numpy as np

from fairstop.audit import baseline_value
from fairstop.core import ArrivalOrder, expected_max
from fairstop.gen import classic_tight, must_hire_instance, perturbed_tight, random_corpus, right_arc_instance
from fairstop.lp import InfeasibleProgram, add_must_hire_constraint, build_online_iif_lp, solve_lp
from fairstop.oracle import enumerate_sample_rule

SLACK = 1e-9
TARGETS = ("fig1-iif", "fig1-tif", "impossibility", "samples")
IMPOSSIBILITY_EPS = (0.5, 0.1, 0.02)
HEADER = ("instance", "setting_a", "setting_b", "value_a", "value_b", "ratio", "bound", "pass")

FORWARD = ArrivalOrder((0, 1))
BACKWARD = ArrivalOrder((1, 0))


@dataclass(frozen=True)
class Row:
    instance: str
    setting_a: str
    setting_b: str
    value_a: float
    value_b: float
    ratio: float
    bound: float
    passed: bool


def _row(
    instance: str, a: str, b: str, va: float, vb: float, bound: float, check: Callable[[float], bool]
) -> Row:
    ratio = vb / va
    return Row(instance, a, b, float(va), float(vb), float(ratio), float(bound), bool(check(ratio)))


def _tight(eps: float) -> Callable[[float], bool]:
    return lambda r: 0.5 - SLACK <= r <= 0.5 + 2 * eps


def _at_least(bound: float) -> Callable[[float], bool]:
    return lambda r: r >= bound - SLACK


def _top_arc(eps: float) -> Row:
    classic = classic_tight(eps)
    return _row(
        classic.name + " order=(1,2)", "Off", "On",
        expected_max(classic), baseline_value(classic, "opt_online", FORWARD), 0.5, _tight(eps),
    )


def fig1_iif(eps: float = 0.05) -> list[Row]:
    """Top, diagonal, bottom, right and left arcs of the IIF square.

    The offline IIF optimum is replaced by the best online IIF optimum over
    all orders.  That is a lower bound, so the bottom-arc ratio is an upper
    bound on the true one and the left-arc ratio a lower bound.
    """
    tight = perturbed_tight(eps, eps**2 / 10)
    arc = right_arc_instance(eps)
    prophet = expected_max(tight)
    on_iif = baseline_value(tight, "opt_online_iif", FORWARD)
    off_iif = baseline_value(tight, "opt_offline_iif")
    return [
        _top_arc(eps),
        _row(tight.name + " order=(1,2)", "Off", "On,IIF", prophet, on_iif, 0.5, _tight(eps)),
        _row(tight.name + " order=(1,2)", "Off,IIF", "On,IIF", off_iif, on_iif, 0.5, _tight(eps)),
        _row(
            arc.name + " order=(1,2)", "On", "On,IIF",
            baseline_value(arc, "opt_online", FORWARD), baseline_value(arc, "opt_online_iif", FORWARD),
            0.5, _tight(eps),
        ),
        _row(tight.name, "Off", "Off,IIF", prophet, off_iif, 0.5, _at_least(0.5)),
    ]


def fig1_tif(eps: float = 0.05) -> list[Row]:
    """Top, diagonal and right arcs of the TIF triangle."""
    tight = perturbed_tight(eps, eps**2 / 10)
    on_tif = baseline_value(tight, "opt_online_tif")
    return [
        _top_arc(eps),
        _row(tight.name, "Off", "On,TIF", expected_max(tight), on_tif, 0.5, _tight(eps)),
        _row(
            tight.name + " order=(2,1)", "On", "On,TIF",
            baseline_value(tight, "opt_online", BACKWARD), on_tif, 0.5, _tight(eps),
        ),
    ]


def must_hire_optimum(instance, order: ArrivalOrder | None = None) -> float:
    order = ArrivalOrder.identity(instance.n) if order is None else order
    lp = add_must_hire_constraint(build_online_iif_lp(instance, order), instance)
    solution = solve_lp(lp)
    if not solution.optimal:
        raise InfeasibleProgram(f"must-hire program is {solution.status.value}")
    return solution.objective_value


def impossibility(eps_values: tuple[float, ...] = IMPOSSIBILITY_EPS) -> list[Row]:
    """Must-hire IIF against the prophet: the ratio falls below eps."""
    rows = []
    for eps in eps_values:
        inst = must_hire_instance(eps)
        rows.append(_row(
            f"{inst.name} n={inst.n}", "Off", "On,IIF,must-hire",
            expected_max(inst), must_hire_optimum(inst), eps, lambda r, e=eps: r <= e,
        ))
    return rows


def samples(count: int = 100, seed: int = 0) -> list[Row]:
    """Worst corpus ratio of the single- and double-sample rules to the prophet."""
    rows = []
    for which, bound, setting in (("single", 0.5, "Off,IIF,1-sample"), ("double", 1 / 9, "On,IIF+TIF,2-sample")):
        worst = None
        for inst in random_corpus(count, seed):
            prophet = expected_max(inst)
            if prophet <= 0:
                continue
            value = enumerate_sample_rule(inst, ArrivalOrder.identity(inst.n), which).expected_value
            if worst is None or value / prophet < worst[2] / worst[1]:
                worst = (inst.name, prophet, value)
        name, prophet, value = worst
        rows.append(_row(f"worst of corpus({count}): {name}", "Off", setting, prophet, value, bound, _at_least(bound)))
    return rows


def run_target(target: str, eps: float = 0.05) -> list[Row]:
    if target == "fig1-iif":
        return fig1_iif(eps)
    if target == "fig1-tif":
        return fig1_tif(eps)
    if target == "impossibility":
        return impossibility()
    if target == "samples":
        return samples()
    raise ValueError(f"unknown target {target!r}; choose from {', '.join(TARGETS)} or all")


def rows_to_csv(rows: list[Row]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HEADER)
    for row in rows:
        values = astuple(row)
        writer.writerow(
            list(values[:3]) + [f"{v:.12g}" for v in values[3:7]] + [str(row.passed).lower()]
        )
    return buf.getvalue()


def all_passed(rows: list[Row]) -> bool:
    return bool(np.all([r.passed for r in rows]))
