"""Digest abstraction: history summaries with transfer functions.

A digest is a set of abstract values together with transfer functions that
mirror the concrete trace semantics: an initial set, a value for newly
created threads, a step per local action, and a binary step per observing
action combining the ego value with the value of the observed trace.  All
steps are deterministic -- they return one value or None for "impossible".

Each digest also provides a commutative may-happen-in-parallel predicate
over the two-point lattice {false, top}: ``false`` proves two accesses are
never unordered, ``top`` means nothing is claimed.  ``generic_mhp`` derives
such a predicate for any access-stable digest from its atomicity-mutex lock
step.  The law harness replays enumerated concrete steps against the
transfer functions to check the simulation, creation, and initialization
laws, plus access stability.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum

from .model import Action, Edge, Program, access_sequence, access_sites, atomicity_mutex
from .oracle import MAIN, LocalTrace, TraceSet


class MhpVerdict(Enum):
    FALSE = "false"
    TOP = "top"

    def meet(self, other: "MhpVerdict") -> "MhpVerdict":
        if self is MhpVerdict.FALSE or other is MhpVerdict.FALSE:
            return MhpVerdict.FALSE
        return MhpVerdict.TOP


class ConfigError(Exception):
    """Invalid digest configuration (e.g. join without thread ids)."""


class ArityMismatch(ValueError):
    """Product digest applied to tuples of the wrong width."""


class Digest:
    """Base digest: every action leaves the value unchanged.

    Subclasses override the actions they track.  ``step_observing`` falls
    back to the local step on the first argument, which realizes the usual
    "other observing" rows of transfer tables.
    """

    name = "digest"

    def init_digests(self) -> frozenset:
        raise NotImplementedError

    def new_digest(self, elem, create_edge: Edge):
        raise NotImplementedError

    def step_local(self, act: Action, elem):
        return elem

    def step_observing(self, act: Action, elem0, elem1):
        return self.step_local(act, elem0)

    def mhp(self, glob: str, a, b) -> MhpVerdict:
        raise NotImplementedError

    def abstract_trace(self, t: LocalTrace):
        raise NotImplementedError

    def format_elem(self, elem) -> str:
        return repr(elem)


def generic_mhp(d: Digest, glob: str, a, b) -> MhpVerdict:
    """The predicate any access-stable admissible digest induces: two
    accesses may be parallel only if the atomicity lock merges both ways."""
    act = Action("lock", atomicity_mutex(glob))
    if d.step_observing(act, a, b) is None or d.step_observing(act, b, a) is None:
        return MhpVerdict.FALSE
    return MhpVerdict.TOP


class ProductDigest(Digest):
    """Component-wise combination; the predicate is the meet of components."""

    def __init__(self, components: tuple[Digest, ...]):
        if not components:
            raise ConfigError("product of zero digests")
        self.components = tuple(components)
        self.name = "+".join(c.name for c in components)

    def _check_arity(self, elem) -> None:
        if not isinstance(elem, tuple) or len(elem) != len(self.components):
            raise ArityMismatch(
                f"expected {len(self.components)}-tuple, got {elem!r}"
            )

    def init_digests(self) -> frozenset:
        parts = [sorted(c.init_digests(), key=c.format_elem) for c in self.components]
        return frozenset(itertools.product(*parts))

    def new_digest(self, elem, create_edge: Edge):
        self._check_arity(elem)
        out = []
        for c, e in zip(self.components, elem):
            n = c.new_digest(e, create_edge)
            if n is None:
                return None
            out.append(n)
        return tuple(out)

    def step_local(self, act: Action, elem):
        self._check_arity(elem)
        out = []
        for c, e in zip(self.components, elem):
            n = c.step_local(act, e)
            if n is None:
                return None
            out.append(n)
        return tuple(out)

    def step_observing(self, act: Action, elem0, elem1):
        self._check_arity(elem0)
        self._check_arity(elem1)
        out = []
        for c, e0, e1 in zip(self.components, elem0, elem1):
            n = c.step_observing(act, e0, e1)
            if n is None:
                return None
            out.append(n)
        return tuple(out)

    def mhp(self, glob: str, a, b) -> MhpVerdict:
        self._check_arity(a)
        self._check_arity(b)
        verdict = MhpVerdict.TOP
        for c, ea, eb in zip(self.components, a, b):
            verdict = verdict.meet(c.mhp(glob, ea, eb))
        return verdict

    def abstract_trace(self, t: LocalTrace):
        return tuple(c.abstract_trace(t) for c in self.components)

    def format_elem(self, elem) -> str:
        self._check_arity(elem)
        return "(" + " | ".join(c.format_elem(e) for c, e in zip(self.components, elem)) + ")"


def product_mhp(p: ProductDigest, glob: str, a, b) -> MhpVerdict:
    return p.mhp(glob, a, b)


# ---------------------------------------------------------------------------
# Law harness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LawViolation:
    law: str
    detail: str


@dataclass
class LawReport:
    digest: str
    checks: int = 0
    violations: list[LawViolation] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def add(self, law: str, detail: str) -> None:
        self.violations.append(LawViolation(law, detail))

    def summary(self) -> str:
        status = "pass" if self.passed else f"FAIL ({len(self.violations)} violations)"
        return f"{self.digest}: {self.checks} checks, {status}"


class _AlphaCache:
    def __init__(self, d: Digest):
        self.d = d
        self.memo: dict[LocalTrace, object] = {}

    def __call__(self, t: LocalTrace):
        if t not in self.memo:
            self.memo[t] = self.d.abstract_trace(t)
        return self.memo[t]


def check_admissibility(d: Digest, p: Program, ts: TraceSet) -> LawReport:
    """Replay every concrete step observed in enumeration against the digest
    transfer functions: the simulation law for local/observing steps, the
    creation laws, and the initialization law."""
    report = LawReport(d.name)
    alpha = _AlphaCache(d)
    create_edges = p.create_edges()
    realized_at_create: set[tuple] = set()

    init_trace = next(
        t for t in ts.traces if t.top.instance == MAIN and t.top.index == 0
    )
    report.checks += 1
    if d.init_digests() != frozenset({alpha(init_trace)}):
        report.add(
            "init",
            f"init_digests() = {sorted(map(d.format_elem, d.init_digests()))} but "
            f"alpha(init) = {d.format_elem(alpha(init_trace))}",
        )

    seen_steps: set[tuple] = set()
    for pom in ts.sorted_pomsets():
        for e in pom.sorted_events():
            if e.edge is None:
                if e.instance == MAIN:
                    continue
                dep = pom.dep_to(e)
                t0 = pom.closure(dep.src)
                ce = e.instance[-1][0]
                step_key = ("new", t0, e.instance)
                if step_key in seen_steps:
                    continue
                seen_steps.add(step_key)
                report.checks += 1
                a_child = alpha(pom.closure(e))
                got = d.new_digest(alpha(t0), create_edges[ce])
                if got is None or got != a_child:
                    report.add(
                        "new-thread",
                        f"new_digest({d.format_elem(alpha(t0))}, {ce}) = "
                        f"{'none' if got is None else d.format_elem(got)} but alpha(child) = "
                        f"{d.format_elem(a_child)}",
                    )
                continue
            act = e.action
            pred = pom.po_pred(e)
            t0 = pom.closure(pred)
            if act.is_observing:
                dep = pom.dep_to(e)
                t1 = pom.closure(dep.src)
                step_key = (act, t0, t1)
                if step_key in seen_steps:
                    continue
                seen_steps.add(step_key)
                got = d.step_observing(act, alpha(t0), alpha(t1))
            else:
                step_key = (act, t0)
                if step_key in seen_steps:
                    continue
                seen_steps.add(step_key)
                got = d.step_local(act, alpha(t0))
            report.checks += 1
            a_out = alpha(pom.closure(e))
            if got is None or got != a_out:
                report.add(
                    "simulation",
                    f"step {e.describe()} from {d.format_elem(alpha(t0))} gave "
                    f"{'none' if got is None else d.format_elem(got)} but alpha(result) = "
                    f"{d.format_elem(a_out)}",
                )
            if act.kind == "create":
                realized_at_create.add((alpha(t0), act.create_id))

    for a0, ce in sorted(realized_at_create, key=lambda x: (d.format_elem(x[0]), x[1])):
        report.checks += 1
        act = create_edges[ce].action
        if d.step_local(act, a0) is not None and d.new_digest(a0, create_edges[ce]) is None:
            report.add(
                "new-thread-defined",
                f"create step defined on {d.format_elem(a0)} but new_digest is not",
            )
    return report


def check_mhp_commutativity(d: Digest, p: Program, ts: TraceSet) -> LawReport:
    """The parallelism predicate must not depend on argument order."""
    report = LawReport(d.name)
    alpha = _AlphaCache(d)
    realized = sorted({alpha(t) for t in ts.traces} | set(d.init_digests()),
                      key=d.format_elem)
    for glob in sorted(p.globals):
        for a in realized:
            for b in realized:
                report.checks += 1
                if d.mhp(glob, a, b) is not d.mhp(glob, b, a):
                    report.add(
                        "mhp-commutativity",
                        f"{glob}: mhp({d.format_elem(a)}, {d.format_elem(b)}) depends on order",
                    )
    return report


def check_access_stability(d: Digest, p: Program, ts: TraceSet) -> LawReport:
    """An access sequence lock(m_g); access; unlock(m_g) must leave any
    realized digest unchanged whenever it is defined."""
    report = LawReport(d.name)
    alpha = _AlphaCache(d)
    realized = sorted({alpha(t) for t in ts.traces} | set(d.init_digests()),
                      key=d.format_elem)
    for site, glob, _ in access_sites(p):
        lock_e, acc_e, unl_e = access_sequence(p, site)
        for a0 in realized:
            for a1 in realized:
                r = d.step_observing(lock_e.action, a0, a1)
                if r is not None:
                    r = d.step_local(acc_e.action, r)
                if r is not None:
                    r = d.step_local(unl_e.action, r)
                report.checks += 1
                if r is not None and r != a0:
                    report.add(
                        "access-stability",
                        f"sequence at {site} maps {d.format_elem(a0)} (observing "
                        f"{d.format_elem(a1)}) to {d.format_elem(r)}",
                    )
    return report
