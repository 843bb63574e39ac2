"""Corpus definition and the suites tying analyzer, digests, and oracle together.

A corpus case is a directory with ``program.rlp`` and ``expected.json``
(frozen oracle ground truth plus provenance and the predicate subsets
expected to prove race freedom).  The suites:

* expectations -- oracle results match the frozen truth, enumeration is
  exhaustive, and the promised race-free subsets hold;
* soundness    -- for every predicate subset, flagged pairs cover the
  oracle's racy pairs, and flag counts shrink monotonically with subsets;
* laws         -- every shipped digest and their product pass admissibility
  and access stability on every case;
* equivalence  -- racy pairs coincide with bidirectionally compatible
  write pairs;
* subsumption  -- everything the thread flag excludes, thread ids exclude;
* mutants      -- every registered broken digest is caught by the law or
  the soundness suite.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

from .detector import BESPOKE, DISABLED, detect
from .digest import (
    Digest,
    MhpVerdict,
    ProductDigest,
    check_access_stability,
    check_admissibility,
    check_mhp_commutativity,
)
from .digests import CANONICAL_ORDER, MUTANTS, build_digests
from .dsl import parse_program
from .model import WRITE, access_sites, instrument_atomicity
from .oracle import TraceSet, bidirectionally_compatible, enumerate_traces, find_racy_pairs
from .solver import Solution, build_system, solve


class InconclusiveBounds(Exception):
    """A corpus case did not enumerate exhaustively within its bounds."""


@dataclass
class CorpusCase:
    name: str
    path: Path
    expected: dict
    _program: object = None
    _traces: TraceSet | None = None
    _solutions: dict = field(default_factory=dict)

    @property
    def program(self):
        if self._program is None:
            text = (self.path / "program.rlp").read_text(encoding="utf-8")
            self._program = instrument_atomicity(parse_program(text))
        return self._program

    @property
    def depth(self) -> int:
        return self.expected["bounds"]["depth"]

    @property
    def width(self) -> int:
        return self.expected["bounds"]["width"]

    def traces(self) -> TraceSet:
        if self._traces is None:
            self._traces = enumerate_traces(self.program, depth=self.depth, width=self.width)
        return self._traces

    def require_exhaustive(self) -> TraceSet:
        ts = self.traces()
        if ts.truncated:
            raise InconclusiveBounds(self.name)
        return ts

    def solution(self, names: tuple[str, ...], tid_cap: int) -> tuple[ProductDigest, Solution]:
        key = (names, tid_cap)
        if key not in self._solutions:
            product = ProductDigest(build_digests(names, tid_cap=tid_cap))
            self._solutions[key] = (product, solve(build_system(self.program, product)))
        return self._solutions[key]

    def oracle_site_pairs(self) -> set:
        return {
            (r.glob, r.site_a, r.site_b) for r in find_racy_pairs(self.traces())
        }

    def expected_site_pairs(self) -> set:
        return {
            (e["global"], (e["a"]["site"], e["a"]["type"]), (e["b"]["site"], e["b"]["type"]))
            for e in self.expected["racy"]
        }


def load_corpus(directory: Path) -> list[CorpusCase]:
    cases = []
    for sub in sorted(Path(directory).iterdir()):
        if not (sub / "program.rlp").exists():
            continue
        expected = json.loads((sub / "expected.json").read_text(encoding="utf-8"))
        cases.append(CorpusCase(sub.name, sub, expected))
    if not cases:
        raise FileNotFoundError(f"no corpus cases under {directory}")
    return cases


def default_corpus_dir() -> Path:
    return Path(__file__).resolve().parents[2] / "corpus"


@dataclass
class SuiteSection:
    name: str
    checks: int = 0
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def fail(self, message: str) -> None:
        self.failures.append(message)

    def to_text(self) -> str:
        status = "pass" if self.passed else "FAIL"
        lines = [f"[{status}] {self.name}: {self.checks} checks"]
        lines.extend(f"    {m}" for m in self.failures)
        return "\n".join(lines)


@dataclass
class SuiteResult:
    sections: list[SuiteSection]

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.sections)

    def to_text(self) -> str:
        body = "\n".join(s.to_text() for s in self.sections)
        verdict = "all suites pass" if self.passed else "SUITE FAILURES"
        return f"{body}\n{verdict}\n"


def _all_predicate_subsets() -> list[tuple[str, ...]]:
    out = []
    for k in range(len(CANONICAL_ORDER) + 1):
        out.extend(itertools.combinations(CANONICAL_ORDER, k))
    return out


def _subset_flags(case: CorpusCase, tid_cap: int) -> dict[tuple[str, ...], set]:
    product, sol = case.solution(tuple(CANONICAL_ORDER), tid_cap)
    flags = {}
    for subset in _all_predicate_subsets():
        modes = {n: (BESPOKE if n in subset else DISABLED) for n in CANONICAL_ORDER}
        flags[subset] = detect(sol, product, modes).site_pairs()
    return flags


def run_expectation_suite(cases, tid_cap: int = 8) -> SuiteSection:
    section = SuiteSection("expectations")
    for case in cases:
        section.checks += 1
        try:
            case.require_exhaustive()
        except InconclusiveBounds:
            section.fail(f"{case.name}: enumeration truncated (bounds too small)")
            continue
        got = case.oracle_site_pairs()
        want = case.expected_site_pairs()
        if got != want:
            section.fail(f"{case.name}: oracle races {sorted(got)} != expected {sorted(want)}")
        for subset in case.expected["race_free_subsets"]:
            section.checks += 1
            product, sol = case.solution(tuple(CANONICAL_ORDER), tid_cap)
            modes = {
                n: (BESPOKE if n in subset else DISABLED) for n in CANONICAL_ORDER
            }
            report = detect(sol, product, modes)
            if report.flagged:
                section.fail(
                    f"{case.name}: subset {subset} should prove race freedom but flags "
                    f"{sorted(p[1:] for p in report.site_pairs())}"
                )
    return section


def run_soundness_suite(cases, tid_cap: int = 8) -> SuiteSection:
    """Zero false negatives for every predicate subset, and ablation
    monotonicity along the subset order."""
    section = SuiteSection("soundness")
    for case in cases:
        try:
            case.require_exhaustive()
        except InconclusiveBounds:
            section.fail(f"{case.name}: InconclusiveBounds")
            continue
        oracle_pairs = case.oracle_site_pairs()
        flags = _subset_flags(case, tid_cap)
        for subset, flagged in flags.items():
            section.checks += 1
            missed = oracle_pairs - flagged
            if missed:
                section.fail(
                    f"{case.name}: subset {list(subset)} misses real races {sorted(missed)}"
                )
        for small, big in itertools.combinations(flags, 2):
            if set(small) <= set(big):
                section.checks += 1
                if not flags[big] <= flags[small]:
                    section.fail(
                        f"{case.name}: enabling {list(big)} flags more than {list(small)}"
                    )
    return section


def _shipped_digests(tid_cap: int) -> list[Digest]:
    digests = list(build_digests(CANONICAL_ORDER, tid_cap=tid_cap))
    digests.append(ProductDigest(tuple(build_digests(CANONICAL_ORDER, tid_cap=tid_cap))))
    return digests


def run_law_suite(cases, tid_cap: int = 8, digests=None) -> SuiteSection:
    section = SuiteSection("laws")
    digests = digests if digests is not None else _shipped_digests(tid_cap)
    for case in cases:
        try:
            ts = case.require_exhaustive()
        except InconclusiveBounds:
            section.fail(f"{case.name}: InconclusiveBounds")
            continue
        for d in digests:
            for report in (
                check_admissibility(d, case.program, ts),
                check_access_stability(d, case.program, ts),
                check_mhp_commutativity(d, case.program, ts),
            ):
                section.checks += report.checks
                for v in report.violations:
                    section.fail(f"{case.name}: {d.name}: {v.law}: {v.detail}")
    return section


def run_equivalence_suite(cases) -> SuiteSection:
    """Racy pairs coincide with bidirectionally compatible write pairs."""
    section = SuiteSection("equivalence")
    for case in cases:
        try:
            ts = case.require_exhaustive()
        except InconclusiveBounds:
            section.fail(f"{case.name}: InconclusiveBounds")
            continue
        sites = access_sites(case.program)
        racy = case.oracle_site_pairs()
        compatible = set()
        for i, (site_a, glob_a, type_a) in enumerate(sites):
            for site_b, glob_b, type_b in sites[i:]:
                if glob_a != glob_b or WRITE not in (type_a, type_b):
                    continue
                section.checks += 1
                if bidirectionally_compatible(case.program, ts, glob_a, site_a, site_b):
                    pair = tuple(sorted(((site_a, type_a), (site_b, type_b))))
                    compatible.add((glob_a, pair[0], pair[1]))
        if compatible != racy:
            section.fail(
                f"{case.name}: bidirectionally compatible {sorted(compatible)} != racy {sorted(racy)}"
            )
    return section


def run_subsumption_suite(cases, tid_cap: int = 8) -> SuiteSection:
    """Every record pair the thread flag excludes, thread ids exclude too."""
    section = SuiteSection("tid-subsumes-threadflag")
    names = tuple(CANONICAL_ORDER)
    for case in cases:
        product, sol = case.solution(names, tid_cap)
        by_name = {c.name: (i, c) for i, c in enumerate(product.components)}
        tf_i, tf = by_name["threadflag"]
        tid_i, tid = by_name["tid"]
        for glob in sorted(sol.races):
            records = sorted(
                sol.records(glob), key=lambda r: (r.site, r.type, product.format_elem(r.digest))
            )
            for i, r0 in enumerate(records):
                for r1 in records[i:]:
                    section.checks += 1
                    tf_v = tf.mhp(glob, r0.digest[tf_i], r1.digest[tf_i])
                    tid_v = tid.mhp(glob, r0.digest[tid_i], r1.digest[tid_i])
                    if tf_v is MhpVerdict.FALSE and tid_v is not MhpVerdict.FALSE:
                        section.fail(
                            f"{case.name}: {glob} {r0.site}/{r1.site}: threadflag excludes "
                            "but tid does not"
                        )
    return section


def run_mutant_suite(cases, tid_cap: int = 8) -> SuiteSection:
    """Each registered mutant must be caught by the laws or by soundness."""
    section = SuiteSection("mutants")
    for target, factory in sorted(MUTANTS.items()):
        mutant = factory() if target not in ("tid", "join") else factory(tid_cap)
        law_failures = 0
        sound_failures = 0
        for case in cases:
            ts = case.require_exhaustive()
            law = check_admissibility(mutant, case.program, ts)
            stability = check_access_stability(mutant, case.program, ts)
            law_failures += len(law.violations) + len(stability.violations)
            components = [
                mutant if name == target else build_digests([name] if name != "join" else ["tid", "join"], tid_cap=tid_cap)[-1]
                for name in CANONICAL_ORDER
            ]
            product = ProductDigest(tuple(components))
            sol = solve(build_system(case.program, product))
            flagged = detect(sol, product).site_pairs()
            sound_failures += len(case.oracle_site_pairs() - flagged)
        section.checks += 1
        if law_failures == 0 and sound_failures == 0:
            section.fail(f"mutant {mutant.name} (for {target}) survives all suites")
    return section


def run_all_suites(cases, tid_cap: int = 8) -> SuiteResult:
    return SuiteResult(
        [
            run_expectation_suite(cases, tid_cap),
            run_soundness_suite(cases, tid_cap),
            run_law_suite(cases, tid_cap),
            run_equivalence_suite(cases),
            run_subsumption_suite(cases, tid_cap),
            run_mutant_suite(cases, tid_cap),
        ]
    )
