"""The shipped digest instances.

* lockset    -- the set of mutexes held by the ego thread
* threadflag -- single-threaded main / multi-threaded main / other thread
* tid        -- creation-history thread ids with uniqueness and a record of
                create edges already taken (bounded by a path cap)
* join       -- creation paths of threads that must have terminated,
                propagated through join chains (rides on thread ids)
* once       -- active and completed once-control variables

Each digest implements the abstraction map from concrete local traces used
by the law harness, and a bespoke may-happen-in-parallel predicate.  A few
deliberately broken variants are registered for mutation testing.
"""

from __future__ import annotations

from dataclasses import dataclass

from .digest import ConfigError, Digest, MhpVerdict
from .model import Action, Edge, is_atomicity_mutex
from .oracle import LocalTrace, edge_path

ST_MAIN = "ST_main"
MT_MAIN = "MT_main"
MT = "MT"

DEFAULT_TID_CAP = 8

# Per-edge create counts saturate here: the predicates only ever distinguish
# "never", "exactly once", and "more than once", and saturation keeps the
# realized element universe finite under create loops.
CREATED_SATURATION = 2


def _saturate_counts(edge_ids) -> tuple[str, ...]:
    counts: dict[str, int] = {}
    for ce in edge_ids:
        counts[ce] = min(counts.get(ce, 0) + 1, CREATED_SATURATION)
    return tuple(sorted(ce for ce, n in counts.items() for _ in range(n)))


class LocksetDigest(Digest):
    name = "lockset"

    def init_digests(self) -> frozenset:
        return frozenset({frozenset()})

    def new_digest(self, elem, create_edge: Edge):
        return frozenset()

    def step_local(self, act: Action, elem):
        if act.kind == "unlock":
            if act.target not in elem:
                return None
            return elem - {act.target}
        return elem

    def step_observing(self, act: Action, elem0, elem1):
        if act.kind == "lock":
            if act.target in elem0:
                return None
            return elem0 | {act.target}
        return self.step_local(act, elem0)

    def mhp(self, glob: str, a, b) -> MhpVerdict:
        return MhpVerdict.FALSE if a & b else MhpVerdict.TOP

    def abstract_trace(self, t: LocalTrace):
        held = {}
        for e in t.instance_events(t.ego):
            a = e.action
            if a is not None and a.kind in ("lock", "unlock"):
                held[a.target] = a.kind == "lock"
        return frozenset(m for m, h in held.items() if h)

    def format_elem(self, elem) -> str:
        return "{" + ",".join(sorted(elem)) + "}"


class ThreadFlagDigest(Digest):
    name = "threadflag"

    def init_digests(self) -> frozenset:
        return frozenset({ST_MAIN})

    def new_digest(self, elem, create_edge: Edge):
        return MT

    def step_local(self, act: Action, elem):
        if act.kind == "create":
            return MT if elem == MT else MT_MAIN
        return elem

    def step_observing(self, act: Action, elem0, elem1):
        if act.kind == "lock":
            if elem0 == ST_MAIN and elem1 != ST_MAIN:
                return None
            return elem0
        return self.step_local(act, elem0)

    def mhp(self, glob: str, a, b) -> MhpVerdict:
        if a == ST_MAIN or b == ST_MAIN or (a == MT_MAIN and b == MT_MAIN):
            return MhpVerdict.FALSE
        return MhpVerdict.TOP

    def abstract_trace(self, t: LocalTrace):
        if t.ego != ():
            return MT
        created = any(
            e.action is not None and e.action.kind == "create"
            for e in t.instance_events(t.ego)
        )
        return MT_MAIN if created else ST_MAIN

    def format_elem(self, elem) -> str:
        return elem


@dataclass(frozen=True)
class TidElem:
    """path is None for the overflow element absorbing too-deep creation
    histories; created is a sorted multiset of create edges the ego took."""

    path: tuple[str, ...] | None
    created: tuple[str, ...]
    unique: bool


TID_OVERFLOW = TidElem(None, (), False)


def _alpha_unique(instance) -> bool:
    seen = set()
    for ce, serial in instance:
        if serial != 0 or ce in seen:
            return False
        seen.add(ce)
    return True


class ThreadIdDigest(Digest):
    name = "tid"

    def __init__(self, cap: int = DEFAULT_TID_CAP):
        self.cap = cap

    def init_digests(self) -> frozenset:
        return frozenset({TidElem((), (), True)})

    def new_digest(self, elem, create_edge: Edge):
        ce = create_edge.action.create_id
        if elem.path is None or len(elem.path) + 1 > self.cap:
            return TID_OVERFLOW
        unique = elem.unique and ce not in elem.path and ce not in elem.created
        return TidElem(elem.path + (ce,), (), unique)

    def step_local(self, act: Action, elem):
        if act.kind == "create" and elem.path is not None:
            created = _saturate_counts(elem.created + (act.create_id,))
            return TidElem(elem.path, created, elem.unique)
        return elem

    def may_run(self, a: TidElem, b: TidElem) -> bool:
        """False only when the thread of ``b`` provably has not started:
        both ids unique, b strictly below a, and the ego has not yet taken
        the create edge toward b."""
        if not (a.unique and b.unique) or a.path is None or b.path is None:
            return True
        if len(b.path) <= len(a.path) or b.path[: len(a.path)] != a.path:
            return True
        return b.path[len(a.path)] in a.created

    def mhp(self, glob: str, a, b) -> MhpVerdict:
        same = a.path is not None and a.path == b.path and a.unique and b.unique
        if same or not self.may_run(a, b) or not self.may_run(b, a):
            return MhpVerdict.FALSE
        return MhpVerdict.TOP

    def abstract_trace(self, t: LocalTrace):
        path = edge_path(t.ego)
        if len(path) > self.cap:
            return TID_OVERFLOW
        created = []
        for e in t.instance_events(t.ego):
            a = e.action
            if a is not None and a.kind == "create":
                created.append(a.create_id)
        return TidElem(path, _saturate_counts(created), _alpha_unique(t.ego))

    def format_elem(self, elem) -> str:
        if elem.path is None:
            return "tid:overflow"
        u = "!" if elem.unique else "?"
        return f"tid{u}[{','.join(elem.path)}]c[{','.join(elem.created)}]"


@dataclass(frozen=True)
class JoinElem:
    tid: TidElem
    joined: frozenset  # frozenset[tuple[str, ...]] of terminated creation paths


class JoinDigest(Digest):
    """Must-terminated threads by creation path.

    A path enters the set when the ego joins the unique child it created
    through an edge taken exactly once; the joined thread's own set is
    carried over because those threads terminated even earlier.
    """

    name = "join"

    def __init__(self, cap: int = DEFAULT_TID_CAP):
        self.cap = cap
        self._tid = ThreadIdDigest(cap)

    def init_digests(self) -> frozenset:
        (tid0,) = self._tid.init_digests()
        return frozenset({JoinElem(tid0, frozenset())})

    def new_digest(self, elem, create_edge: Edge):
        return JoinElem(self._tid.new_digest(elem.tid, create_edge), frozenset())

    def step_local(self, act: Action, elem):
        tid = self._tid.step_local(act, elem.tid)
        if tid is None:
            return None
        return JoinElem(tid, elem.joined)

    def step_observing(self, act: Action, elem0, elem1):
        if act.kind != "join":
            return self.step_local(act, elem0)
        ce = act.target
        tid0, tid1 = elem0.tid, elem1.tid
        if tid0.path is not None and len(tid0.path) + 1 <= self.cap:
            child_path = tid0.path + (ce,)
            if tid1.path is not None and tid1.path != child_path:
                return None  # exit of a thread this join cannot observe
        joined = elem0.joined | elem1.joined
        if (
            tid0.path is not None
            and len(tid0.path) + 1 <= self.cap
            and tid0.unique
            and tid0.created.count(ce) == 1
        ):
            joined = joined | {tid0.path + (ce,)}
        return JoinElem(tid0, joined)

    def mhp(self, glob: str, a, b) -> MhpVerdict:
        if self._terminated_before(a, b) or self._terminated_before(b, a):
            return MhpVerdict.FALSE
        return MhpVerdict.TOP

    @staticmethod
    def _terminated_before(ego: JoinElem, other: JoinElem) -> bool:
        return (
            other.tid.path is not None
            and other.tid.unique
            and other.tid.path in ego.joined
        )

    def abstract_trace(self, t: LocalTrace):
        return JoinElem(self._tid.abstract_trace(t), self._joined_of(t, t.ego, t.top.index))

    def _joined_of(self, t: LocalTrace, instance, upto: int) -> frozenset:
        joined: set = set()
        counts: dict[str, int] = {}
        join_deps = {d.dst: d for d in t.deps if d.kind == "join"}
        for e in t.instance_events(instance):
            if e.index > upto:
                break
            a = e.action
            if a is None:
                continue
            if a.kind == "create":
                counts[a.create_id] = counts.get(a.create_id, 0) + 1
            if a.kind == "join":
                dep = join_deps.get(e)
                child = dep.src.instance
                child_exit_index = dep.src.index
                joined |= self._joined_of(t, child, child_exit_index)
                path = edge_path(instance)
                if (
                    _alpha_unique(instance)
                    and len(path) + 1 <= self.cap
                    and counts.get(a.target, 0) == 1
                ):
                    joined.add(path + (a.target,))
        return frozenset(joined)

    def format_elem(self, elem) -> str:
        joined = ";".join(",".join(p) for p in sorted(elem.joined))
        return f"{self._tid.format_elem(elem.tid)}j[{joined}]"


class OnceDigest(Digest):
    name = "once"

    def init_digests(self) -> frozenset:
        return frozenset({(frozenset(), frozenset())})

    def new_digest(self, elem, create_edge: Edge):
        return (frozenset(), elem[1])

    def step_local(self, act: Action, elem):
        active, completed = elem
        if act.kind == "endO":
            return (active - {act.target}, completed | {act.target})
        if act.kind == "pos_ran":
            return elem if act.target in completed else None
        if act.kind == "neg_ran":
            return None if act.target in completed else elem
        return elem

    def step_observing(self, act: Action, elem0, elem1):
        if act.kind == "startO":
            active, completed = elem0
            if act.target in active:
                return None
            return (active | {act.target}, completed | elem1[1])
        return self.step_local(act, elem0)

    def mhp(self, glob: str, a, b) -> MhpVerdict:
        active_a, completed_a = a
        active_b, completed_b = b
        if active_a & (active_b | completed_b) or active_b & (active_a | completed_a):
            return MhpVerdict.FALSE
        return MhpVerdict.TOP

    def abstract_trace(self, t: LocalTrace):
        active = {}
        for e in t.instance_events(t.ego):
            a = e.action
            if a is not None and a.kind in ("startO", "endO"):
                active[a.target] = a.kind == "startO"
        return (
            frozenset(o for o, v in active.items() if v),
            self._completed_at(t, t.top),
        )

    def _completed_at(self, t: LocalTrace, event) -> frozenset:
        """Completed-set knowledge flows only along program order, thread
        creation, and once observations; other merges discard it."""
        memo: dict = {}
        once_deps = {d.dst: d for d in t.deps if d.kind == "once"}
        create_deps = {d.dst: d for d in t.deps if d.kind == "create"}

        def rec(e) -> frozenset:
            if e in memo:
                return memo[e]
            out: frozenset = frozenset()
            if e.index > 0:
                pred = next(
                    ev for ev in t.events
                    if ev.instance == e.instance and ev.index == e.index - 1
                )
                out = rec(pred)
                a = e.action
                if a is not None and a.kind == "endO":
                    out = out | {a.target}
                elif a is not None and a.kind == "startO":
                    out = out | rec(once_deps[e].src)
            elif e in create_deps:
                out = rec(create_deps[e].src)
            memo[e] = out
            return out

        return rec(event)

    def format_elem(self, elem) -> str:
        return "A{" + ",".join(sorted(elem[0])) + "}C{" + ",".join(sorted(elem[1])) + "}"


# ---------------------------------------------------------------------------
# Mutants for the mutation-testing hook
# ---------------------------------------------------------------------------

class OverlapEmptyLockset(LocksetDigest):
    """Declares atomicity locks impossible under overlapping locksets, which
    breaks the simulation law."""

    name = "lockset@overlap-empty"

    def step_observing(self, act: Action, elem0, elem1):
        if act.kind == "lock" and is_atomicity_mutex(act.target) and elem0 & elem1:
            return None
        return super().step_observing(act, elem0, elem1)


class SpawnedPairThreadFlag(ThreadFlagDigest):
    """Wrongly claims two spawned threads never run in parallel."""

    name = "threadflag@spawned-pair"

    def mhp(self, glob: str, a, b) -> MhpVerdict:
        if a == MT and b == MT:
            return MhpVerdict.FALSE
        return super().mhp(glob, a, b)


class EagerMayRunTid(ThreadIdDigest):
    """may_run ignores whether the creating edge was already taken."""

    name = "tid@eager-mayrun"

    def may_run(self, a: TidElem, b: TidElem) -> bool:
        if a.path is None or b.path is None:
            return True
        return not (len(b.path) > len(a.path) and b.path[: len(a.path)] == a.path)


class CreateCountsAsJoin(JoinDigest):
    """Marks a thread as terminated already at its creation."""

    name = "join@premature"

    def step_local(self, act: Action, elem):
        out = super().step_local(act, elem)
        if (
            out is not None
            and act.kind == "create"
            and out.tid.path is not None
            and len(out.tid.path) + 1 <= self.cap
        ):
            return JoinElem(out.tid, out.joined | {out.tid.path + (act.create_id,)})
        return out


class CompletedPairOnce(OnceDigest):
    """Wrongly orders any two accesses that both saw a completion."""

    name = "once@completed-pair"

    def mhp(self, glob: str, a, b) -> MhpVerdict:
        if a[1] & b[1]:
            return MhpVerdict.FALSE
        return super().mhp(glob, a, b)


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

CANONICAL_ORDER = ("lockset", "threadflag", "tid", "join", "once")


def build_digests(names, tid_cap: int = DEFAULT_TID_CAP) -> tuple[Digest, ...]:
    """Instantiate digests by registry name, normalized to canonical order."""
    requested = set(names)
    unknown = requested - set(CANONICAL_ORDER)
    if unknown:
        raise ConfigError(f"unknown digests: {sorted(unknown)}")
    if "join" in requested and "tid" not in requested:
        raise ConfigError("the join digest requires the tid digest")
    factories = {
        "lockset": LocksetDigest,
        "threadflag": ThreadFlagDigest,
        "tid": lambda: ThreadIdDigest(tid_cap),
        "join": lambda: JoinDigest(tid_cap),
        "once": OnceDigest,
    }
    return tuple(factories[n]() for n in CANONICAL_ORDER if n in requested)


MUTANTS = {
    "lockset": OverlapEmptyLockset,
    "threadflag": SpawnedPairThreadFlag,
    "tid": EagerMayRunTid,
    "join": CreateCountsAsJoin,
    "once": CompletedPairOnce,
}
