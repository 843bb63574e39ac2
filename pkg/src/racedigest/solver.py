"""Digest-refined constraint system over the trivial reachability domain.

Unknowns are (program point, digest) and (observable action, digest) pairs
plus one access accumulator per global.  The point/action unknowns range
over a two-point domain: bottom (unreachable) or a value standing for "some
local traces reach here"; the accumulator for ``g`` collects
(site, access type, digest) records contributed by every reachable unlock
of the atomicity mutex ``m_g``.  Unknowns materialize lazily: only digests
actually reached create work, so the exponential digest universes never get
enumerated.  Solving is a FIFO worklist run to the least fixpoint; a
configurable evaluation cap guards against digests with unbounded realized
universes.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from .digest import Digest
from .model import READ, WRITE, Edge, Program, is_atomicity_mutex


class SolverDivergence(Exception):
    """The evaluation cap was hit; some digest realizes unboundedly many values."""


@dataclass(frozen=True)
class AccessRecord:
    """One recorded access: the digest is the value before the access
    sequence, which access stability guarantees equals the value after it."""

    site: str
    type: str  # W or R
    digest: object


@dataclass(frozen=True)
class ConstraintSystem:
    program: Program
    digest: Digest
    # unlock-of-m_g edge -> (access site, access type, global)
    accumulators: dict

    @staticmethod
    def build(program: Program, digest: Digest) -> "ConstraintSystem":
        accumulators = {}
        for e in program.all_edges():
            if e.action.kind == "unlock" and is_atomicity_mutex(e.action.target):
                (acc,) = program.edges_to(e.source)
                kind = acc.action.kind
                if kind not in ("read", "write"):
                    raise ValueError(f"unlock of {e.action.target} not preceded by an access")
                accumulators[e] = (
                    acc.source,
                    WRITE if kind == "write" else READ,
                    acc.action.target,
                )
        return ConstraintSystem(program, digest, accumulators)


def build_system(program: Program, digest: Digest) -> ConstraintSystem:
    return ConstraintSystem.build(program, digest)


@dataclass
class Solution:
    system: ConstraintSystem
    pp: dict  # node -> set of digest elements
    obs: dict  # observable key -> set of digest elements
    races: dict  # global -> set of AccessRecord
    evaluations: int = 0

    def reached(self, node: str, elem) -> bool:
        return elem in self.pp.get(node, ())

    def records(self, glob: str) -> frozenset:
        return frozenset(self.races.get(glob, ()))

    def to_json(self) -> dict:
        fmt = self.system.digest.format_elem
        pp = {
            node: sorted(fmt(e) for e in elems)
            for node, elems in sorted(self.pp.items())
        }
        obs = {
            f"{kind} {target}" if target else kind: sorted(fmt(e) for e in elems)
            for (kind, target), elems in sorted(
                self.obs.items(), key=lambda kv: (kv[0][0], kv[0][1] or "")
            )
        }
        races = {
            glob: [
                {"site": r.site, "type": r.type, "digest": fmt(r.digest)}
                for r in sorted(recs, key=lambda r: (r.site, r.type, fmt(r.digest)))
            ]
            for glob, recs in sorted(self.races.items())
        }
        return {"version": 1, "pp": pp, "obs": obs, "races": races}


def _observing_edges_by_partner(program: Program) -> dict:
    watchers: dict = {}
    for e in program.all_edges():
        if e.action.is_observing:
            for key in e.action.observed_keys():
                watchers.setdefault(key, []).append(e)
    return watchers


def solve(cs: ConstraintSystem, max_evaluations: int = 1_000_000) -> Solution:
    """Least solution of the refined system, computed by a FIFO worklist."""
    program, digest = cs.program, cs.digest
    watchers = _observing_edges_by_partner(program)
    sol = Solution(cs, pp={}, obs={}, races={})
    queue: deque = deque()

    def push_pp(node: str, elem) -> None:
        elems = sol.pp.setdefault(node, set())
        if elem not in elems:
            elems.add(elem)
            queue.append(("pp", node, elem))

    def push_obs(key, elem) -> None:
        elems = sol.obs.setdefault(key, set())
        if elem not in elems:
            elems.add(elem)
            queue.append(("obs", key, elem))

    def charge() -> None:
        sol.evaluations += 1
        if sol.evaluations > max_evaluations:
            raise SolverDivergence(
                f"exceeded {max_evaluations} constraint evaluations; "
                "does some digest realize unboundedly many elements?"
            )

    def flow_edge(edge: Edge, elem) -> None:
        act = edge.action
        if act.is_observing:
            for key in act.observed_keys():
                for other in sorted(sol.obs.get(key, ()), key=digest.format_elem):
                    charge()
                    out = digest.step_observing(act, elem, other)
                    if out is not None:
                        push_pp(edge.target, out)
            return
        charge()
        out = digest.step_local(act, elem)
        if out is None:
            return
        push_pp(edge.target, out)
        if act.is_observable:
            push_obs(act.obs_key(), out)
            if edge in cs.accumulators:
                site, typ, glob = cs.accumulators[edge]
                sol.races.setdefault(glob, set()).add(AccessRecord(site, typ, out))
        if act.kind == "create":
            charge()
            child = digest.new_digest(elem, edge)
            if child is not None:
                push_pp(program.prototypes[act.target].start_node, child)

    start = program.main().start_node
    for elem in sorted(digest.init_digests(), key=digest.format_elem):
        push_pp(start, elem)

    while queue:
        kind, a, b = queue.popleft()
        if kind == "pp":
            node, elem = a, b
            for edge in program.edges_from(node):
                flow_edge(edge, elem)
        else:
            key, other = a, b
            for edge in watchers.get(key, ()):
                act = edge.action
                for elem in sorted(sol.pp.get(edge.source, ()), key=digest.format_elem):
                    charge()
                    out = digest.step_observing(act, elem, other)
                    if out is not None:
                        push_pp(edge.target, out)
    return sol


def verify_postfixpoint(sol: Solution) -> bool:
    """Re-evaluate every materialized constraint; True iff nothing changes."""
    cs = sol.system
    program, digest = cs.program, cs.digest
    for elem in digest.init_digests():
        if not sol.reached(program.main().start_node, elem):
            return False
    for node, elems in sol.pp.items():
        for elem in elems:
            for edge in program.edges_from(node):
                act = edge.action
                if act.is_observing:
                    for key in act.observed_keys():
                        for other in sol.obs.get(key, ()):
                            out = digest.step_observing(act, elem, other)
                            if out is not None and not sol.reached(edge.target, out):
                                return False
                    continue
                out = digest.step_local(act, elem)
                if out is None:
                    continue
                if not sol.reached(edge.target, out):
                    return False
                if act.is_observable:
                    if out not in sol.obs.get(act.obs_key(), ()):
                        return False
                    if edge in cs.accumulators:
                        site, typ, glob = cs.accumulators[edge]
                        if AccessRecord(site, typ, out) not in sol.races.get(glob, ()):
                            return False
                if act.kind == "create":
                    child = digest.new_digest(elem, edge)
                    start = program.prototypes[act.target].start_node
                    if child is not None and not sol.reached(start, child):
                        return False
    return True
