"""``fairstop`` command line: solve, simulate, audit, reproduce, gen.

Exit codes: 0 ok, 1 usage or I/O error (including infeasible programs),
2 a fairness audit or reproduction check failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import platform
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from fairstop import __version__
from fairstop.audit import audit_fairness, simulate
from fairstop.core import ArrivalOrder, Instance, load_instance
from fairstop.gen import GENERATORS, generate, random_instance
from fairstop.lp import (
    FairPolicy,
    InfeasibleProgram,
    add_must_hire_constraint,
    build_offline_relaxation,
    build_online_iif_lp,
    build_online_tif_lp,
    policy_from_solution,
    solve_lp,
    symmetrize_offline_solution,
)
from fairstop.oracle import BudgetExceeded, enumerate_rule, enumerate_sample_rule
from fairstop.reproduce import TARGETS, all_passed, rows_to_csv, run_target
from fairstop.rules import RULE_NAMES, RuleSpec, write_trace

DEFAULT_SEED = 20240531
EXIT_OK, EXIT_USAGE, EXIT_UNFAIR = 0, 1, 2
SETTINGS = ("online-iif", "online-tif", "offline-relaxation", "must-hire-iif", "must-hire-tif")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits 2 by default; 2 is reserved
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# shared helpers
# --------------------------------------------------------------------------


def _load(args: argparse.Namespace) -> tuple[Instance, ArrivalOrder]:
    if (args.instance is None) == (args.gen is None):
        raise UsageError("give exactly one of --instance FILE or --gen NAME")
    stored = None
    if args.instance is not None:
        try:
            instance, stored = load_instance(args.instance)
        except OSError as exc:
            raise UsageError(f"cannot read {args.instance}: {exc}") from exc
        except (ValueError, KeyError, TypeError) as exc:
            raise UsageError(f"bad instance file {args.instance}: {exc}") from exc
    else:
        instance = generate(args.gen, args.eps, args.delta)
    order = _order(args, instance) or stored or ArrivalOrder.identity(instance.n)
    return instance, order


def _order(args: argparse.Namespace, instance: Instance) -> ArrivalOrder | None:
    raw = getattr(args, "order", None)
    if not raw:
        return None
    if isinstance(raw, list):
        raw = raw[0]
    order = ArrivalOrder.parse(raw)
    instance.check_order(order)
    return order


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text)
    except OSError as exc:
        raise UsageError(f"cannot write {out}: {exc}") from exc


def _dumps(data: object) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def _seed(args: argparse.Namespace) -> int:
    print(f"seed: {args.seed}", file=sys.stderr)
    return args.seed


def _rule(args: argparse.Namespace) -> RuleSpec:
    policy = None
    if getattr(args, "policy", None):
        try:
            policy = FairPolicy.from_dict(json.loads(Path(args.policy).read_text()))
        except (OSError, ValueError, KeyError) as exc:
            raise UsageError(f"cannot load policy {args.policy}: {exc}") from exc
    return RuleSpec(args.rule, policy=policy, threshold=args.threshold)


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=10,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def build_program(instance: Instance, setting: str, order: ArrivalOrder):
    if setting == "online-iif":
        return build_online_iif_lp(instance, order)
    if setting == "online-tif":
        return build_online_tif_lp(instance)
    if setting == "offline-relaxation":
        return build_offline_relaxation(instance)
    if setting == "must-hire-iif":
        return add_must_hire_constraint(build_online_iif_lp(instance, order), instance)
    if setting == "must-hire-tif":
        return add_must_hire_constraint(build_online_tif_lp(instance), instance)
    raise UsageError(f"unknown setting {setting!r}")


def cmd_solve(args: argparse.Namespace) -> int:
    instance, order = _load(args)
    lp = build_program(instance, args.setting, order)
    if args.dump_lp:
        _emit(lp.dump(), args.dump_lp)
    solution = solve_lp(lp)
    if not solution.optimal:
        print(f"error: {args.setting} program is {solution.status.value}", file=sys.stderr)
        return EXIT_USAGE
    policy = policy_from_solution(lp, solution)
    if args.setting == "offline-relaxation" and args.symmetrize:
        policy = symmetrize_offline_solution(instance, solution)
    if args.format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["candidate", "x", "p"])
        table = policy.table
        for i in range(table.shape[0]):
            for k, x in enumerate(policy.support):
                writer.writerow(["*" if policy.kind.value == "iif" else i + 1, f"{x:.12g}", f"{table[i, k]:.12g}"])
        _emit(buf.getvalue(), args.out)
    else:
        _emit(_dumps(policy.to_dict()), args.out)
    print(f"objective: {policy.objective_value:.12g}", file=sys.stderr)
    return EXIT_OK


def _exact_value(instance: Instance, rule: RuleSpec, order: ArrivalOrder) -> float | None:
    try:
        if rule.is_sample_rule:
            return enumerate_sample_rule(instance, order, rule.name).expected_value
        return enumerate_rule(instance, order, rule).expected_value
    except BudgetExceeded:
        return None


def cmd_simulate(args: argparse.Namespace) -> int:
    instance, order = _load(args)
    seed = _seed(args)
    rule = _rule(args)
    if args.trials < 1:
        raise UsageError("--trials must be positive")
    summary = simulate(instance, rule, order, args.trials, seed)
    exact = _exact_value(instance, rule, order)
    if args.trace:
        # the first chunk's generator, so the trace replays trial 0
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
        rows: list = []
        rule.resolve(instance, order).run_once(instance, rng, trace=rows)
        try:
            with open(args.trace, "w", newline="") as fh:
                write_trace(rows, fh)
        except OSError as exc:
            raise UsageError(f"cannot write {args.trace}: {exc}") from exc
    record = {
        "instance": instance.name,
        "rule": rule.label(),
        "order": str(order),
        "trials": summary.trials,
        "seed": seed,
        "mean": summary.mean,
        "se": summary.se,
        "ci_low": summary.ci95[0],
        "ci_high": summary.ci95[1],
        "hire_rate": summary.hire_rate,
        "hire_se": summary.hire_se,
        "exact_value": exact,
    }
    if args.format == "json":
        _emit(_dumps(record), args.out)
    else:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(record.keys())
        writer.writerow(
            "" if v is None else f"{v:.12g}" if isinstance(v, float) else v for v in record.values()
        )
        _emit(buf.getvalue(), args.out)
    return EXIT_OK


def cmd_audit(args: argparse.Namespace) -> int:
    instance, _ = _load(args)
    seed = _seed(args)
    rule = _rule(args)
    orders = [ArrivalOrder.parse(o) for o in args.order] if args.order else "all"
    report = audit_fairness(
        instance, rule, orders=orders, mode=args.mode, trials=args.trials,
        tolerance=args.tolerance, seed=seed, allow_large=args.allow_large,
    )
    _emit(report.to_csv() if args.format == "csv" else _dumps(report.to_dict()), args.out)
    checks = [c.strip() for c in args.check.split(",") if c.strip()]
    failed = [c for c in checks if report.verdicts.get(c) is False]
    for name, verdict in report.verdicts.items():
        label = "n/a" if verdict is None else "pass" if verdict else "FAIL"
        print(f"{name}: {label}", file=sys.stderr)
    return EXIT_UNFAIR if failed else EXIT_OK


def cmd_reproduce(args: argparse.Namespace) -> int:
    targets = TARGETS if args.target == "all" else (args.target,)
    out = Path(args.out or "reports")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create {out}: {exc}") from exc
    ok = True
    files = {}
    start = time.perf_counter()
    for target in targets:
        rows = run_target(target, args.eps)
        path = out / f"{target}.csv"
        path.write_text(rows_to_csv(rows))
        files[target] = path.name
        passed = all_passed(rows)
        ok &= passed
        print(f"{target}: {len(rows)} rows, {'pass' if passed else 'FAIL'} -> {path}", file=sys.stderr)
    manifest = {
        "tool": "fairstop",
        "version": __version__,
        "git_describe": _git_describe(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "targets": list(targets),
        "parameters": {"eps": args.eps, "seed": args.seed},
        "files": files,
        "all_pass": ok,
    }
    (out / "manifest.json").write_text(_dumps(manifest))
    print(f"done in {time.perf_counter() - start:.2f}s", file=sys.stderr)
    return EXIT_OK if ok else EXIT_UNFAIR


def cmd_gen(args: argparse.Namespace) -> int:
    name = args.name or args.gen
    if name is None:
        raise UsageError("gen needs --name")
    if name == "random":
        instance = random_instance(args.n, args.support_size, args.seed)
    else:
        instance = generate(name, args.eps, args.delta)
    order = _order(args, instance)
    _emit(_dumps(instance.to_dict(order)), args.out)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def _instance_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--instance", metavar="FILE", help="instance JSON")
    p.add_argument("--gen", metavar="NAME", choices=sorted(GENERATORS), help="named generator")
    p.add_argument("--eps", type=float, help="generator epsilon")
    p.add_argument("--delta", type=float, help="generator perturbation")


def _rule_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rule", choices=RULE_NAMES, default="iif")
    p.add_argument("--threshold", type=float, help="cutoff for --rule threshold")
    p.add_argument("--policy", metavar="FILE", help="policy JSON from `solve` for iif/tif/halved")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fairstop", description="Fair stopping rules for the hiring problem.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="solve a fairness LP and print the policy")
    _instance_flags(p)
    p.add_argument("--setting", choices=SETTINGS, default="online-iif")
    p.add_argument("--order", help='arrival order, 1-based, e.g. "2,1"')
    p.add_argument("--symmetrize", action="store_true", help="symmetrize an offline-relaxation optimum")
    p.add_argument("--dump-lp", metavar="FILE", help="write the program in text form")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out", metavar="FILE")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="Monte Carlo run of a rule")
    _instance_flags(p)
    _rule_flags(p)
    p.add_argument("--order")
    p.add_argument("--trials", type=int, default=10**5)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--trace", metavar="FILE", help="CSV trace of the first trial")
    p.add_argument("--format", choices=("json", "csv"), default="csv")
    p.add_argument("--out", metavar="FILE")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("audit", help="check IIF and TIF for a rule")
    _instance_flags(p)
    _rule_flags(p)
    p.add_argument("--order", action="append", help="order to audit; repeat for several (default: all)")
    p.add_argument("--mode", choices=("exact", "mc"), default="exact")
    p.add_argument("--trials", type=int, default=10**4, help="trials per cell in mc mode")
    p.add_argument("--tolerance", type=float, help="absolute (exact) or standard errors (mc)")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--check", default="iif,tif", help="verdicts that decide the exit code")
    p.add_argument("--allow-large", action="store_true", help="permit all orders when n > 6")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out", metavar="FILE")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("reproduce", help="regenerate the competitive-ratio reports")
    p.add_argument("target", choices=TARGETS + ("all",))
    p.add_argument("--eps", type=float, default=0.05, help="epsilon for the tight instances")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", metavar="DIR", default="reports")
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("gen", help="write a named instance as JSON")
    p.add_argument("--name", choices=sorted(GENERATORS) + ["random"])
    p.add_argument("--gen", choices=sorted(GENERATORS) + ["random"], help=argparse.SUPPRESS)
    p.add_argument("--eps", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--n", type=int, default=3, help="candidates for --name random")
    p.add_argument("--support-size", type=int, default=3, help="support size for --name random")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--order")
    p.add_argument("--out", metavar="FILE")
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, --version and usage errors
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
    except InfeasibleProgram as exc:
        print(f"error: infeasible: {exc}", file=sys.stderr)
    except BudgetExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
