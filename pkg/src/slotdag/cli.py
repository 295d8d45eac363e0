"""Command line entry point.

  slotdag run <scenario.json|bundled-name> [--seed S] [--trace out.jsonl]
  slotdag check <trace.jsonl> [--properties p1,p2] [--report out.json]
  slotdag sweep <scenario.json|bundled-name> --seeds A..B [--report out.json]
  slotdag demo

Exit status 0 only if every requested check passes.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from multiprocessing import Pool

from .checks import run_checks, s_same_of, TraceView
from .scenarios import BUNDLED, bundled
from .simnet import Engine, Scenario
from .trace import Trace


def _load_scenario(ref: str, seed=None, fast=False) -> Scenario:
    if os.path.exists(ref):
        sc = Scenario.load(ref)
        if seed is not None:
            sc.seed = seed
        if fast:
            sc.validate_every_round = False
        return sc
    return bundled(ref, seed=seed or 0, fast=fast)


def _print_reports(reports) -> bool:
    ok = True
    for rep in reports:
        status = "PASS" if rep.passed else "FAIL"
        print(f"[{status}] {rep.name}: {rep.detail}")
        if not rep.passed and rep.first_violation:
            print(f"       reproducer: {json.dumps(rep.first_violation)}")
        ok = ok and rep.passed
    return ok


def cmd_run(args) -> int:
    sc = _load_scenario(args.scenario, args.seed)
    trace = Engine(sc).run()
    if args.trace:
        trace.write(args.trace)
        print(f"trace written to {args.trace} ({len(trace.events)} events, "
              f"hash {trace.digest()[:16]})")
    else:
        print(f"run complete: {len(trace.events)} events, hash {trace.digest()[:16]}")
    if args.check:
        return 0 if _print_reports(run_checks(trace)) else 1
    return 0


def cmd_check(args) -> int:
    trace = Trace.read(args.trace)
    names = args.properties.split(",") if args.properties else None
    reports = run_checks(trace, names)
    ok = _print_reports(reports)
    if args.report:
        with open(args.report, "w") as fh:
            json.dump([r.to_dict() for r in reports], fh, indent=2)
    return 0 if ok else 1


def _sweep_one(payload):
    ref, seed = payload
    sc = _load_scenario(ref, seed=seed, fast=True)
    trace = Engine(sc).run()
    reports = run_checks(trace)
    view = TraceView(trace)
    return {
        "seed": seed,
        "passed": all(r.passed for r in reports),
        "failures": [r.to_dict() for r in reports if not r.passed],
        "s_same": s_same_of(view),
        "gst_slot": view.gst_slot,
        "n": view.n,
    }


def cmd_sweep(args) -> int:
    lo, hi = (int(x) for x in args.seeds.split(".."))
    seeds = list(range(lo, hi + 1))
    payloads = [(args.scenario, s) for s in seeds]
    if args.jobs > 1:
        with Pool(args.jobs) as pool:
            rows = pool.map(_sweep_one, payloads)
    else:
        rows = [_sweep_one(p) for p in payloads]
    lags = [r["s_same"] - r["gst_slot"] for r in rows if r["s_same"] is not None]
    n = rows[0]["n"]
    summary = {
        "scenario": args.scenario,
        "seeds": len(rows),
        "all_passed": all(r["passed"] for r in rows),
        "synced_runs": len(lags),
    }
    if lags:
        mean = sum(lags) / len(lags)
        var = sum((x - mean) ** 2 for x in lags) / max(len(lags) - 1, 1)
        stderr = math.sqrt(var / len(lags))
        summary.update({
            "sync_lag_mean": mean,
            "sync_lag_stderr": stderr,
            "sync_lag_bound": 2 * n,
            "sync_lag_within_bound": mean <= 2 * n + 3 * stderr,
        })
    print(json.dumps(summary, indent=2))
    if args.report:
        with open(args.report, "w") as fh:
            json.dump({"summary": summary, "runs": rows}, fh, indent=2)
    ok = summary["all_passed"] and summary.get("sync_lag_within_bound", True)
    return 0 if ok else 1


def cmd_demo(args) -> int:
    ok = True
    for name in BUNDLED:
        print(f"== {name}")
        sc = bundled(name, seed=args.seed)
        trace = Engine(sc).run()
        ok = _print_reports(run_checks(trace)) and ok
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="slotdag")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("run", help="run one scenario")
    p.add_argument("scenario", help="scenario JSON path or bundled name")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--trace", help="write the trace JSONL here")
    p.add_argument("--check", action="store_true", help="run checkers afterwards")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("check", help="check a recorded trace")
    p.add_argument("trace")
    p.add_argument("--properties", help="comma-separated checker names")
    p.add_argument("--report", help="write a JSON report here")
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("sweep", help="run many seeds and aggregate")
    p.add_argument("scenario")
    p.add_argument("--seeds", required=True, help="range, e.g. 0..199")
    p.add_argument("--report")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("demo", help="run every bundled scenario with checks")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_demo)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
