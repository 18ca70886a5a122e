"""Command line: run scenarios, re-check traces, generate genesis files."""

from __future__ import annotations

import argparse
import json
import random
import sys
from typing import List, Optional

from .chain import AGGREGATE_KEY, BlockChallenge, Genesis
from .checks import CHECKS, evaluate, run_check
from .frost import dkg_run
from .group import CIPHERSUITES, get_ciphersuite
from .scenario import bundled_scenarios, load_scenario, simulate
from .simnet import read_trace, trace_hash, write_trace


def _print_report(report) -> None:
    print(f"scenario {report.scenario} (seed {report.seed}, mode {report.mode})")
    print(f"  blocks committed: {report.blocks_committed}/{report.rounds}  growth ratio {report.growth_ratio}")
    print(f"  view changes: {report.view_changes}  trace events: {report.events}")
    if report.sessions_per_block:
        print(f"  max signing sessions per block: {max(report.sessions_per_block.values())}")
    if report.share_counts:
        print(f"  shares per commit: {report.share_counts}")
    for name, check in report.checks.items():
        state = "PASS" if check.passed else "FAIL"
        flag = "" if check.enabled else " (not enabled)"
        print(f"  {name:9s} {state}{flag}  {check.detail}")
    print(f"  trace hash {report.trace_hash}")


def cmd_run(args) -> int:
    config = load_scenario(args.scenario)
    simulation = simulate(config, args.seed)
    trace = simulation.trace
    report = evaluate(trace, trace_hash(trace))
    if args.trace_out:
        write_trace(trace, args.trace_out)
    if args.report_out:
        with open(args.report_out, "w") as fh:
            json.dump(report.to_json(), fh, indent=2)
    _print_report(report)
    return 0 if report.passed else 1


def cmd_check(args) -> int:
    trace = read_trace(args.trace)
    result = run_check(trace, args.requirement)
    state = "PASS" if result.passed else "FAIL"
    print(f"{result.name} {state} {result.detail}")
    if result.violations:
        print(f"  violating trace offsets: {result.violations}")
    return 0 if result.passed else 1


def cmd_keygen(args) -> int:
    suite = get_ciphersuite(args.ciphersuite)
    if not 1 <= args.k <= args.n:
        raise SystemExit("keygen: need 1 <= k <= n")
    keys = dkg_run(args.n, args.k, suite, random.Random(args.seed), context=b"keygen")
    challenge = BlockChallenge(AGGREGATE_KEY, suite, aggregate_key=keys[1].group_public_key)
    genesis = Genesis(challenge, t0=args.t0, tau=args.tau)
    data = genesis.to_json()
    data["threshold"] = args.k
    data["verification_shares"] = {str(i): suite.encode(km.verification_shares[i]).hex() for i, km in sorted(keys.items())}
    text = json.dumps(data, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="frostbft", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario file (or bundled scenario name)")
    run.add_argument("scenario", help=f"path or one of: {', '.join(bundled_scenarios())}")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--trace-out")
    run.add_argument("--report-out")
    run.set_defaults(func=cmd_run)

    check = sub.add_parser("check", help="evaluate one requirement on a saved trace")
    check.add_argument("trace")
    check.add_argument("--requirement", required=True, choices=sorted(CHECKS))
    check.set_defaults(func=cmd_check)

    keygen = sub.add_parser("keygen", help="run the DKG and emit a genesis file")
    keygen.add_argument("--n", type=int, required=True)
    keygen.add_argument("--k", type=int, required=True)
    keygen.add_argument("--ciphersuite", choices=sorted(CIPHERSUITES), default="tiny")
    keygen.add_argument("--seed", type=int, default=0)
    keygen.add_argument("--t0", type=int, default=0)
    keygen.add_argument("--tau", type=int, default=60)
    keygen.add_argument("--out")
    keygen.set_defaults(func=cmd_keygen)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
