"""Command line entry point: ``ccmanip run | compare | export | check | list``."""

from __future__ import annotations

import argparse
import json
import logging
import operator
import sys
from pathlib import Path

from .report import compare, export, format_comparison, load_reports, metric_value
from .runner import run_scenario
from .scenario import bundled_scenarios, load_scenario

_OPS = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge, "==": operator.eq}


def _overrides(args) -> dict:
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        over["trials"] = args.trials
    if getattr(args, "controller", None):
        over["controller"] = args.controller
    if getattr(args, "model_policy", None):
        over["model_policy"] = args.model_policy
    return over


def _run(args) -> int:
    sc = load_scenario(args.scenario, _overrides(args))
    out = Path(args.out or f"runs/{sc.name}")
    reports = run_scenario(sc, out, on_trial=lambda k, r: print(
        f"trial {k}: rms={r.report.rms_tracking_error:.4g} m, max|a|={r.report.max_acceleration:.4g} m/s^2, "
        f"transition={r.report.time_in_transition:.3g} s" + (f"  FAILED {r.report.failed}" if r.report.failed else "")))
    print(f"wrote {len(reports)} trial(s) to {out}")
    return 1 if any(r.failed for r in reports) else 0


def _compare(args) -> int:
    table = compare(load_reports(args.a), load_reports(args.b), args.metric)
    print(json.dumps(table, indent=1) if args.json else format_comparison(table))
    return 0


def _export(args) -> int:
    for p in export(args.run_dir, args.format, args.out, args.dt):
        print(p)
    return 0


def _check(args) -> int:
    sc = load_scenario(args.scenario, _overrides(args))
    reports = run_scenario(sc, args.out)
    failed = 0
    for c in sc.checks:
        trial = c.get("trial", -1)
        value = metric_value(reports[trial], c["metric"])
        ok = _OPS[c["op"]](value, c["value"])
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'}  trial {trial} {c['metric']} = {value:.6g} {c['op']} {c['value']}")
    failed += sum(1 for r in reports if r.failed)
    return 1 if failed else 0


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="ccmanip", description="changing-contact manipulation benchmarks")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    def scenario_args(sp):
        sp.add_argument("scenario", help="scenario file or bundled scenario name")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--trials", type=int)
        sp.add_argument("--controller", choices=["avic", "fixed_gain", "avic_no_anticipation"])
        sp.add_argument("--model-policy", choices=["incremental", "frozen_pretrained"])
        sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("run", help="run a scenario and write logs and reports")
    scenario_args(sp)
    sp.set_defaults(func=_run)

    sp = sub.add_parser("check", help="run a scenario and evaluate its checks (non-zero exit on failure)")
    scenario_args(sp)
    sp.set_defaults(func=_check)

    sp = sub.add_parser("compare", help="paired comparison of two report files")
    sp.add_argument("a")
    sp.add_argument("b")
    sp.add_argument("--metric", default="rms_tracking_error")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=_compare)

    sp = sub.add_parser("export", help="export a run directory")
    sp.add_argument("run_dir")
    sp.add_argument("--format", choices=["csv", "json", "series"], default="json")
    sp.add_argument("--out")
    sp.add_argument("--dt", type=float, default=0.002)
    sp.set_defaults(func=_export)

    sp = sub.add_parser("list", help="list bundled scenarios")
    sp.set_defaults(func=lambda a: print("\n".join(bundled_scenarios())) or 0)

    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
