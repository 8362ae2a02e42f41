"""Command-line entry point: ``lsilab run | study | constants``."""

from __future__ import annotations

import argparse
import json
import sys

from .errors import LsiLabError
from .inequality import log_sobolev_constant
from .pipeline import emit, refinement_study, run_scenario
from .scenario import load_scenario


def _levels(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"levels must be comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lsilab", description="Log-Sobolev verification lab")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario")
    run.add_argument("config")
    run.add_argument("--out", default=None, help="directory for report.json, CSVs and plot.gp")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--refine", type=int, default=None)

    st = sub.add_parser("study", help="refinement study over several levels")
    st.add_argument("config")
    st.add_argument("--levels", type=_levels, required=True)
    st.add_argument("--out", default=None)

    c = sub.add_parser("constants", help="print the sharp constants as JSON")
    c.add_argument("--n", type=int, required=True)
    c.add_argument("--m", type=int, required=True)
    c.add_argument("--theta", type=float, default=1.0)
    return ap


def _summary(report: dict) -> str:
    lines = [f"scenario {report['scenario']}: deficit {report['deficit']:.6e} (eps_h {report['eps_h']:.2e})"]
    for name, v in sorted(report["verdicts"].items()):
        lines.append(f"  {'PASS' if v['passed'] else 'FAIL'} {name}: {v['value']}")
    for name, why in sorted(report["skipped"].items()):
        lines.append(f"  SKIP {name}: {why}")
    return "\n".join(lines)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "constants":
            consts = log_sobolev_constant(args.n, args.m, args.theta)
            print(json.dumps(consts.to_dict(), indent=2))
            return 0
        scn = load_scenario(args.config)
        if args.command == "run":
            report = run_scenario(scn, seed=args.seed, refine=args.refine)
            if args.out:
                emit(report, args.out)
            print(_summary(report))
            return 0 if report["all_passed"] else 1
        study = refinement_study(scn, args.levels)
        for row in study["rows"]:
            print(json.dumps(row, sort_keys=True))
        if args.out:
            last = run_scenario(scn, refine=args.levels[-1])
            emit(last, args.out, study=study)
        return 0 if all(r["all_passed"] for r in study["rows"]) else 1
    except (LsiLabError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
