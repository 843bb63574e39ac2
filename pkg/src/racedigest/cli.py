"""Command-line interface.

Subcommands:
  analyze  -- run the digest-driven detector on one program
  oracle   -- bounded ground-truth enumeration and race search
  ablate   -- flag counts per predicate subset with all digests active
  conform  -- run the corpus suites (soundness, laws, equivalence, mutants)

Exit codes: 0 no races / suites pass, 1 races flagged / suite failures,
2 usage or input errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .detector import BESPOKE, GENERIC, ablate, detect
from .digest import ConfigError, ProductDigest
from .digests import CANONICAL_ORDER, DEFAULT_TID_CAP, build_digests
from .dsl import DslSyntaxError, parse_program
from .model import ValidationError, instrument_atomicity
from .oracle import enumerate_traces, find_racy_pairs
from .solver import build_system, solve


def _load(path: str):
    text = Path(path).read_text(encoding="utf-8")
    return instrument_atomicity(parse_program(text))


def _digest_list(arg: str) -> list[str]:
    return [name.strip() for name in arg.split(",") if name.strip()]


def cmd_analyze(args) -> int:
    program = _load(args.file)
    digests = build_digests(_digest_list(args.digests), tid_cap=args.tid_cap)
    product = ProductDigest(digests)
    sol = solve(build_system(program, product))
    mode = GENERIC if args.predicate == "generic" else BESPOKE
    modes = {d.name: mode for d in digests}
    report = detect(sol, product, modes)
    if args.format == "json":
        sys.stdout.write(report.to_json_text())
    else:
        sys.stdout.write(report.to_text(program))
    return 1 if report.flagged else 0


def cmd_oracle(args) -> int:
    program = _load(args.file)
    ts = enumerate_traces(program, depth=args.depth, width=args.width)
    racy = sorted(
        (r.glob, r.site_a, r.site_b) for r in find_racy_pairs(ts)
    )
    payload = {
        "version": 1,
        "bounds": {"depth": args.depth, "width": args.width},
        "exhaustive": not ts.truncated,
        "racy": [
            {"global": g, "a": {"site": a[0], "type": a[1]}, "b": {"site": b[0], "type": b[1]}}
            for g, a, b in racy
        ],
    }
    if args.format == "json":
        sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    else:
        if ts.truncated:
            sys.stdout.write("warning: enumeration truncated by bounds\n")
        if not racy:
            sys.stdout.write("no races within bounds\n")
        for g, a, b in racy:
            sys.stdout.write(f"race on {g}: {a[1]}@{a[0]} with {b[1]}@{b[0]}\n")
    return 1 if racy else 0


def cmd_ablate(args) -> int:
    program = _load(args.file)
    digests = build_digests(_digest_list(args.digests), tid_cap=args.tid_cap)
    product = ProductDigest(digests)
    sol = solve(build_system(program, product))
    rows = ablate(sol, product)
    if args.format == "json":
        sys.stdout.write(json.dumps({"version": 1, "rows": rows}, indent=2, sort_keys=True) + "\n")
    else:
        width = max(len("+".join(r["predicates"]) or "(none)") for r in rows)
        for r in rows:
            label = "+".join(r["predicates"]) or "(none)"
            sys.stdout.write(f"{label.ljust(width)}  flagged={r['flagged']}\n")
    return 0


def cmd_conform(args) -> int:
    from .conformance import load_corpus, run_all_suites

    cases = load_corpus(Path(args.dir))
    result = run_all_suites(cases, tid_cap=args.tid_cap)
    sys.stdout.write(result.to_text())
    return 0 if result.passed else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="racedigest",
        description="digest-driven static data race detection with a bounded oracle",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("analyze", help="analyze one .rlp program")
    pa.add_argument("file")
    pa.add_argument("--digests", default=",".join(CANONICAL_ORDER))
    pa.add_argument("--predicate", choices=["bespoke", "generic"], default="bespoke")
    pa.add_argument("--format", choices=["text", "json"], default="text")
    pa.add_argument("--tid-cap", type=int, default=DEFAULT_TID_CAP)
    pa.set_defaults(func=cmd_analyze)

    po = sub.add_parser("oracle", help="bounded ground-truth race search")
    po.add_argument("file")
    po.add_argument("--depth", type=int, default=40)
    po.add_argument("--width", type=int, default=4)
    po.add_argument("--format", choices=["text", "json"], default="text")
    po.set_defaults(func=cmd_oracle)

    pb = sub.add_parser("ablate", help="flag counts per predicate subset")
    pb.add_argument("file")
    pb.add_argument("--digests", default=",".join(CANONICAL_ORDER))
    pb.add_argument("--format", choices=["text", "json"], default="text")
    pb.add_argument("--tid-cap", type=int, default=DEFAULT_TID_CAP)
    pb.set_defaults(func=cmd_ablate)

    pc = sub.add_parser("conform", help="run the corpus suites")
    pc.add_argument("dir")
    pc.add_argument("--tid-cap", type=int, default=DEFAULT_TID_CAP)
    pc.set_defaults(func=cmd_conform)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DslSyntaxError, ValidationError, ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
