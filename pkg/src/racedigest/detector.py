"""Post-processing race check and report construction.

Every ordered pair of recorded accesses to a global (identical records
included, since equal digests can still belong to different concrete
threads) is flagged when at least one side writes and the active predicate
meet answers top.  Each product component runs in one of three modes:

* ``bespoke``  -- the digest's own predicate,
* ``generic``  -- the predicate derived from the atomicity-lock step,
* ``disabled`` -- always top (the ablation mechanism: the digest still
  refines reachability, only its exclusion power is switched off).
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

from .digest import MhpVerdict, ProductDigest, generic_mhp
from .model import WRITE
from .solver import Solution

BESPOKE = "bespoke"
GENERIC = "generic"
DISABLED = "disabled"


@dataclass(frozen=True)
class FlaggedPair:
    glob: str
    site_a: tuple[str, str]  # (node, W/R); site_a <= site_b
    site_b: tuple[str, str]
    witness_digests: tuple[str, str] = field(compare=False)
    component_verdicts: tuple = field(compare=False)

    def sort_key(self) -> tuple:
        return (self.glob, self.site_a, self.site_b)


@dataclass
class RaceReport:
    digests: tuple[str, ...]
    modes: dict
    flagged: list[FlaggedPair]
    record_counts: dict

    @property
    def pair_count(self) -> int:
        return len(self.flagged)

    def distinct_site_pairs(self) -> set:
        return {
            (f.glob, f.site_a, f.site_b)
            for f in self.flagged
            if f.site_a != f.site_b
        }

    def site_pairs(self) -> set:
        return {(f.glob, f.site_a, f.site_b) for f in self.flagged}

    def to_json(self) -> dict:
        return {
            "version": 1,
            "digests": list(self.digests),
            "modes": {k: self.modes[k] for k in sorted(self.modes)},
            "accesses": {g: self.record_counts[g] for g in sorted(self.record_counts)},
            "flagged": [
                {
                    "global": f.glob,
                    "a": {"site": f.site_a[0], "type": f.site_a[1]},
                    "b": {"site": f.site_b[0], "type": f.site_b[1]},
                    "witness_digests": list(f.witness_digests),
                    "verdicts": [
                        {"digest": name, "verdict": v} for name, v in f.component_verdicts
                    ],
                }
                for f in sorted(self.flagged, key=FlaggedPair.sort_key)
            ],
            "race_free": not self.flagged,
        }

    def to_json_text(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    def to_text(self, program=None) -> str:
        lines = [
            f"digests: {', '.join(self.digests)}",
            "modes: " + ", ".join(f"{k}={self.modes[k]}" for k in sorted(self.modes)),
        ]
        if not self.flagged:
            lines.append("no potential races found")
        for f in sorted(self.flagged, key=FlaggedPair.sort_key):
            loc_a = _site_text(f.site_a, program)
            loc_b = _site_text(f.site_b, program)
            lines.append(f"race on {f.glob}: {loc_a} with {loc_b}")
        return "\n".join(lines) + "\n"


def _site_text(site: tuple[str, str], program) -> str:
    node, typ = site
    suffix = ""
    if program is not None:
        for e in program.edges_from(node):
            if e.line is not None:
                suffix = f" (line {e.line})"
                break
    return f"{typ}@{node}{suffix}"


def detect(sol: Solution, product: ProductDigest, modes: dict | None = None) -> RaceReport:
    """Pairwise race check over the solution's access accumulators."""
    names = [c.name for c in product.components]
    modes = dict(modes or {})
    for name in names:
        modes.setdefault(name, BESPOKE)
    unknown = set(modes) - set(names)
    if unknown:
        raise ValueError(f"modes for inactive digests: {sorted(unknown)}")

    def verdicts(glob, d0, d1):
        out = []
        for comp, a, b in zip(product.components, d0, d1):
            mode = modes[comp.name]
            if mode == DISABLED:
                v = MhpVerdict.TOP
            elif mode == GENERIC:
                v = generic_mhp(comp, glob, a, b)
            elif mode == BESPOKE:
                v = comp.mhp(glob, a, b)
            else:
                raise ValueError(f"unknown mode {mode!r}")
            out.append((comp.name, v))
        return out

    flagged: dict[tuple, FlaggedPair] = {}
    record_counts = {}
    for glob in sorted(sol.races):
        records = sorted(
            sol.records(glob),
            key=lambda r: (r.site, r.type, product.format_elem(r.digest)),
        )
        record_counts[glob] = len(records)
        for i, r0 in enumerate(records):
            for r1 in records[i:]:  # includes the identical-record pair
                if WRITE not in (r0.type, r1.type):
                    continue
                vs = verdicts(glob, r0.digest, r1.digest)
                meet = MhpVerdict.TOP
                for _, v in vs:
                    meet = meet.meet(v)
                if meet is not MhpVerdict.TOP:
                    continue
                site_a, site_b = sorted(((r0.site, r0.type), (r1.site, r1.type)))
                key = (glob, site_a, site_b)
                if key not in flagged:
                    flagged[key] = FlaggedPair(
                        glob,
                        site_a,
                        site_b,
                        witness_digests=(
                            product.format_elem(r0.digest),
                            product.format_elem(r1.digest),
                        ),
                        component_verdicts=tuple((n, v.value) for n, v in vs),
                    )
    return RaceReport(
        digests=tuple(names),
        modes=modes,
        flagged=sorted(flagged.values(), key=FlaggedPair.sort_key),
        record_counts=record_counts,
    )


def ablate(sol: Solution, product: ProductDigest) -> list[dict]:
    """Flag counts for every subset of predicates, the digests themselves
    staying active (only their exclusion power is varied)."""
    names = [c.name for c in product.components]
    rows = []
    for k in range(len(names) + 1):
        for subset in itertools.combinations(names, k):
            modes = {n: (BESPOKE if n in subset else DISABLED) for n in names}
            report = detect(sol, product, modes)
            rows.append(
                {
                    "predicates": list(subset),
                    "flagged": report.pair_count,
                    "race_free": report.pair_count == 0,
                }
            )
    return rows
