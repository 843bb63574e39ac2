"""Bounded concrete semantics: local traces as partial orders.

Executions of an instrumented program are enumerated exhaustively (up to an
event and a thread-instance bound) as partially ordered event sets.  Each
event set carries labeled cross-thread dependencies:

* ``create``  -- from the creating thread's last event before a create to the
  first configuration of the created thread,
* ``mutex(a)`` -- from an unlock/init of ``a`` to the lock observing it,
* ``once(o)`` -- from an endO/initO of ``o`` to the startO observing it,
* ``join``   -- from a thread-exit to the join observing it.

A *local trace* is the downward closure of a single event; its owning thread
is the ego thread.  Every per-mutex chain alternates init/unlock with at most
one following lock, which the step functions enforce when merging two local
traces at an observing action.

Thread instances are identified by their creation history: a tuple of
(create-edge-id, occurrence) pairs, the occurrence disambiguating repeated
creates through the same edge.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

from .model import READ, WRITE, Action, Edge, Program, atomicity_mutex, fmt_action

InstanceId = tuple  # tuple[tuple[str, int], ...]; main is ()

MAIN: InstanceId = ()


def edge_path(instance: InstanceId) -> tuple[str, ...]:
    """Creation path of an instance without occurrence counters."""
    return tuple(ce for ce, _ in instance)


def instance_name(instance: InstanceId) -> str:
    if not instance:
        return "main"
    return "<" + ",".join(f"{ce}#{k}" for ce, k in instance) + ">"


@dataclass(frozen=True)
class Event:
    """One configuration of one thread: the start marker (edge=None) or the
    state reached by taking ``edge``."""

    instance: InstanceId
    index: int
    proto: str
    node: str
    edge: Edge | None

    @property
    def action(self) -> Action | None:
        return self.edge.action if self.edge is not None else None

    def sort_key(self) -> tuple:
        return (self.instance, self.index)

    def describe(self) -> str:
        what = fmt_action(self.edge.action) if self.edge else "start"
        return f"{instance_name(self.instance)}[{self.index}] {what}"


@dataclass(frozen=True)
class DepEdge:
    kind: str  # "create" | "mutex" | "once" | "join"
    label: str | None
    src: Event
    dst: Event


@dataclass(frozen=True)
class Pomset:
    """A complete (or bound-truncated) execution as a partial order."""

    events: frozenset[Event]
    deps: frozenset[DepEdge]

    def sorted_events(self) -> list[Event]:
        return sorted(self.events, key=Event.sort_key)

    def po_pred(self, e: Event) -> Event | None:
        if e.index == 0:
            return None
        for ev in self.events:
            if ev.instance == e.instance and ev.index == e.index - 1:
                return ev
        raise ValueError(f"missing program-order predecessor of {e.describe()}")

    def dep_to(self, e: Event) -> DepEdge | None:
        for d in self.deps:
            if d.dst == e:
                return d
        return None

    def closure(self, top: Event) -> "LocalTrace":
        past = pomset_ancestors(self)[top]
        deps = frozenset(d for d in self.deps if d.dst in past)
        return LocalTrace(frozenset(past), deps, top)

    def sort_key(self) -> tuple:
        return tuple(sorted((e.sort_key(), e.node) for e in self.events))


@dataclass(frozen=True)
class LocalTrace:
    """Downward-closed event set with the unique maximal event ``top``.

    The ego thread is ``top.instance``; the trace is that thread's complete
    knowledge of the computation.
    """

    events: frozenset[Event]
    deps: frozenset[DepEdge]
    top: Event

    @property
    def ego(self) -> InstanceId:
        return self.top.instance

    def ego_node(self) -> str:
        return self.top.node

    def instance_events(self, instance: InstanceId) -> list[Event]:
        return sorted((e for e in self.events if e.instance == instance),
                      key=lambda e: e.index)

    def ego_holds(self, mutex: str) -> bool:
        last = None
        for e in self.instance_events(self.ego):
            a = e.action
            if a is not None and a.kind in ("lock", "unlock") and a.target == mutex:
                last = a.kind
        return last == "lock"

    def ego_once_active(self, once: str) -> bool:
        last = None
        for e in self.instance_events(self.ego):
            a = e.action
            if a is not None and a.kind in ("startO", "endO") and a.target == once:
                last = a.kind
        return last == "startO"

    def has_event(self, kind: str, target: str | None = None) -> bool:
        for e in self.events:
            a = e.action
            if a is not None and a.kind == kind and (target is None or a.target == target):
                return True
        return False

    def ego_create_count(self, create_id: str) -> int:
        return sum(
            1
            for e in self.instance_events(self.ego)
            if e.action is not None
            and e.action.kind == "create"
            and e.action.create_id == create_id
        )


@dataclass(frozen=True)
class RacePair:
    glob: str
    site_a: tuple[str, str]  # (node, W/R), site_a <= site_b
    site_b: tuple[str, str]
    witness: LocalTrace = field(compare=False, hash=False, default=None)

    def sites(self) -> tuple[tuple[str, str], tuple[str, str]]:
        return (self.site_a, self.site_b)


@dataclass(frozen=True)
class TraceSet:
    """Everything the bounded enumeration produced."""

    program: Program
    traces: frozenset[LocalTrace]
    pomsets: frozenset[Pomset]
    truncated: bool
    depth: int
    width: int

    def sorted_pomsets(self) -> list[Pomset]:
        return sorted(self.pomsets, key=Pomset.sort_key)


def ancestors(events, deps) -> dict[Event, frozenset[Event]]:
    """Reflexive-transitive predecessor sets over program order plus deps."""
    preds: dict[Event, list[Event]] = {e: [] for e in events}
    by_key = {(e.instance, e.index): e for e in events}
    for e in events:
        if e.index > 0:
            pred = by_key.get((e.instance, e.index - 1))
            if pred is not None:
                preds[e].append(pred)
    for d in deps:
        if d.dst in preds and d.src in preds:
            preds[d.dst].append(d.src)
    out: dict[Event, frozenset[Event]] = {}
    remaining = dict(preds)
    while remaining:
        progressed = False
        for e in list(remaining):
            if all(p in out for p in remaining[e]):
                acc = {e}
                for p in remaining[e]:
                    acc |= out[p]
                out[e] = frozenset(acc)
                del remaining[e]
                progressed = True
        if not progressed:
            raise ValueError("cycle in causality order")
    return out


@functools.lru_cache(maxsize=4096)
def pomset_ancestors(pom: Pomset) -> dict:
    return ancestors(pom.events, pom.deps)


def validate_local_trace(t: LocalTrace) -> None:
    """Assert the structural trace invariants; raises ValueError on violation."""
    anc = ancestors(t.events, t.deps)  # raises on cycles
    maximal = [e for e in t.events if not any(e in anc[o] and o != e for o in t.events)]
    if maximal != [t.top]:
        raise ValueError(f"trace has {len(maximal)} maximal events, expected exactly top")
    for e in t.events:
        if e.index > 0 and not any(
            o.instance == e.instance and o.index == e.index - 1 for o in t.events
        ):
            raise ValueError(f"trace not downward closed at {e.describe()}")
    _check_degrees(t.deps)


def _check_degrees(deps) -> bool:
    """Each observable feeds at most one observer; each observer has one source."""
    out_seen: set[tuple] = set()
    in_seen: set[tuple] = set()
    for d in deps:
        if d.kind in ("mutex", "once", "join"):
            okey = (d.src, d.kind, d.label)
            ikey = (d.dst, d.kind)
            if okey in out_seen or ikey in in_seen:
                return False
            out_seen.add(okey)
            in_seen.add(ikey)
    return True


def _acyclic(events, deps) -> bool:
    try:
        ancestors(events, deps)
        return True
    except ValueError:
        return False


# ---------------------------------------------------------------------------
# Step functions over local traces
# ---------------------------------------------------------------------------

def _local_guard_ok(edge: Edge, t: LocalTrace) -> bool:
    a = edge.action
    if a.kind == "pos_ran":
        return t.has_event("endO", a.target)
    if a.kind == "neg_ran":
        return not t.has_event("endO", a.target)
    if a.kind == "unlock":
        return t.ego_holds(a.target)
    if a.kind == "init":
        return not t.has_event("init", a.target)
    if a.kind == "initO":
        return not t.has_event("initO", a.target)
    if a.kind == "endO":
        return t.ego_once_active(a.target)
    return True


def _prolong(t: LocalTrace, edge: Edge) -> LocalTrace:
    e = Event(t.ego, t.top.index + 1, t.top.proto, edge.target, edge)
    return LocalTrace(t.events | {e}, t.deps, e)


def trace_step_local(p: Program, edge: Edge, t: LocalTrace) -> LocalTrace | None:
    """Prolong ``t`` along a non-observing, non-creating edge, if possible."""
    a = edge.action
    if a.is_observing or a.is_creating:
        raise ValueError(f"{a.kind} is not a local step")
    if t.ego_node() != edge.source:
        return None
    if not _local_guard_ok(edge, t):
        return None
    return _prolong(t, edge)


def spawn(p: Program, edge: Edge, t: LocalTrace) -> LocalTrace | None:
    """The local trace of the thread created by ``edge`` from ``t``."""
    a = edge.action
    if a.kind != "create" or t.ego_node() != edge.source:
        return None
    occurrence = t.ego_create_count(a.create_id)
    child: InstanceId = t.ego + ((a.create_id, occurrence),)
    proto = p.prototypes[a.target]
    start = Event(child, 0, a.target, proto.start_node, None)
    dep = DepEdge("create", None, t.top, start)
    return LocalTrace(t.events | {start}, t.deps | {dep}, start)


def step_creator(p: Program, edge: Edge, t: LocalTrace) -> LocalTrace | None:
    """Prolong the creating thread itself over its create edge."""
    if edge.action.kind != "create" or t.ego_node() != edge.source:
        return None
    return _prolong(t, edge)


def trace_step_observing(p: Program, edge: Edge, t0: LocalTrace,
                         t1: LocalTrace) -> LocalTrace | None:
    """Merge the observed trace ``t1`` into ``t0`` and prolong by ``edge``.

    Returns None unless the traces agree on their shared past and the
    per-mutex/per-once/per-join pairing rules still hold after adding the
    new dependency.
    """
    act = edge.action
    if not act.is_observing:
        raise ValueError(f"{act.kind} is not an observing action")
    if t0.ego_node() != edge.source:
        return None
    top1 = t1.top
    a1 = top1.action
    if a1 is None or a1.obs_key() not in act.observed_keys():
        return None
    if act.kind == "lock" and t0.ego_holds(act.target):
        return None
    if act.kind == "startO" and t0.ego_once_active(act.target):
        return None
    if act.kind == "join":
        count = t0.ego_create_count(act.target)
        if count == 0:
            return None
        # joins observe the most recently created child through this edge
        if top1.instance != t0.ego + ((act.target, count - 1),):
            return None

    events = t0.events | t1.events
    by_key: dict[tuple, Event] = {}
    for ev in events:
        key = (ev.instance, ev.index)
        if key in by_key:
            return None  # the two pasts disagree
        by_key[key] = ev
        if ev.instance == t0.ego and ev.index > t0.top.index:
            return None  # observed trace runs ahead of the ego thread
    deps = t0.deps | t1.deps
    kind = {"lock": "mutex", "startO": "once", "join": "join"}[act.kind]
    label = act.target if act.kind in ("lock", "startO") else None
    new = Event(t0.ego, t0.top.index + 1, t0.top.proto, edge.target, edge)
    deps = deps | {DepEdge(kind, label, top1, new)}
    all_events = events | {new}
    if not _check_degrees(deps):
        return None
    if not _acyclic(all_events, deps):
        return None
    return LocalTrace(all_events, deps, new)


# ---------------------------------------------------------------------------
# Exhaustive bounded enumeration
# ---------------------------------------------------------------------------

@dataclass
class _State:
    nodes: dict
    last: dict
    mutex: dict
    once: dict
    created: dict
    last_child: dict
    exited: dict
    joined: set
    events: frozenset
    deps: frozenset
    past: dict
    n_actions: int

    def copy(self) -> "_State":
        return _State(
            dict(self.nodes), dict(self.last), dict(self.mutex), dict(self.once),
            {k: dict(v) for k, v in self.created.items()}, dict(self.last_child),
            dict(self.exited), set(self.joined), self.events, self.deps,
            dict(self.past), self.n_actions,
        )

    def key(self) -> tuple:
        return (self.events, self.deps)


def _initial_state(p: Program) -> _State:
    main = p.main()
    start = Event(MAIN, 0, p.main_label, main.start_node, None)
    return _State(
        nodes={MAIN: main.start_node},
        last={MAIN: start},
        mutex={},
        once={},
        created={MAIN: {}},
        last_child={},
        exited={},
        joined=set(),
        events=frozenset({start}),
        deps=frozenset(),
        past={start: frozenset({start})},
        n_actions=0,
    )


def _candidate_edges(p: Program, s: _State, instance: InstanceId) -> list[Edge]:
    node = s.nodes.get(instance)
    if node is None:
        return []
    return p.edges_from(node)


def _guard_ok(p: Program, s: _State, instance: InstanceId, edge: Edge) -> bool:
    a = edge.action
    if a.kind in ("skip", "read", "write"):
        return True
    if a.kind == "pos_ran" or a.kind == "neg_ran":
        seen = any(
            ev.action is not None and ev.action.kind == "endO" and ev.action.target == a.target
            for ev in s.past[s.last[instance]]
        )
        return seen if a.kind == "pos_ran" else not seen
    if a.kind == "init":
        return s.mutex.get(a.target, ("uninit",))[0] == "uninit"
    if a.kind == "lock":
        return s.mutex.get(a.target, ("uninit",))[0] == "free"
    if a.kind == "unlock":
        st = s.mutex.get(a.target, ("uninit",))
        return st[0] == "held" and st[1] == instance
    if a.kind == "initO":
        return s.once.get(a.target, ("uninit",))[0] == "uninit"
    if a.kind == "startO":
        return s.once.get(a.target, ("uninit",))[0] == "ready"
    if a.kind == "endO":
        st = s.once.get(a.target, ("uninit",))
        return st[0] == "active" and st[1] == instance
    if a.kind == "join":
        child = s.last_child.get((instance, a.target))
        return child is not None and child in s.exited and child not in s.joined
    if a.kind in ("create", "exit"):
        return True
    raise ValueError(f"unhandled action kind {a.kind}")


def _apply(p: Program, s: _State, instance: InstanceId, edge: Edge) -> tuple[_State, list[Event]]:
    """Execute one enabled edge; returns the successor state and new events."""
    ns = s.copy()
    a = edge.action
    prev = ns.last[instance]
    ev = Event(instance, prev.index + 1, prev.proto, edge.target, edge)
    past = ns.past[prev] | {ev}
    dep_src: Event | None = None
    if a.kind == "lock":
        dep_src = ns.mutex[a.target][1]
        ns.mutex[a.target] = ("held", instance)
    elif a.kind == "startO":
        dep_src = ns.once[a.target][1]
        ns.once[a.target] = ("active", instance)
    elif a.kind == "join":
        child = ns.last_child[(instance, a.target)]
        dep_src = ns.exited[child]
        ns.joined.add(child)
    elif a.kind == "init":
        ns.mutex[a.target] = ("free", ev)
    elif a.kind == "unlock":
        ns.mutex[a.target] = ("free", ev)
    elif a.kind == "initO":
        ns.once[a.target] = ("ready", ev)
    elif a.kind == "endO":
        ns.once[a.target] = ("ready", ev)

    new_events = [ev]
    if dep_src is not None:
        kind = {"lock": "mutex", "startO": "once", "join": "join"}[a.kind]
        label = a.target if a.kind in ("lock", "startO") else None
        ns.deps = ns.deps | {DepEdge(kind, label, dep_src, ev)}
        past = past | ns.past[dep_src]
    ns.events = ns.events | {ev}
    ns.past[ev] = past
    ns.last[instance] = ev
    ns.nodes[instance] = edge.target
    ns.n_actions += 1

    if a.kind == "exit":
        ns.nodes[instance] = None
        ns.exited[instance] = ev
    elif a.kind == "create":
        occurrence = ns.created[instance].get(a.create_id, 0)
        ns.created[instance][a.create_id] = occurrence + 1
        child: InstanceId = instance + ((a.create_id, occurrence),)
        proto = p.prototypes[a.target]
        start = Event(child, 0, a.target, proto.start_node, None)
        # the child depends on the creator's last configuration before create
        ns.deps = ns.deps | {DepEdge("create", None, prev, start)}
        ns.events = ns.events | {start}
        ns.past[start] = ns.past[prev] | {start}
        ns.nodes[child] = proto.start_node
        ns.last[child] = start
        ns.created[child] = {}
        ns.last_child[(instance, a.create_id)] = child
        new_events.append(start)
    return ns, new_events


def enumerate_traces(p: Program, depth: int = 40, width: int = 4) -> TraceSet:
    """All local traces reachable within the event and instance bounds.

    The result also carries the maximal execution pomsets and a flag telling
    whether any branch was cut off by a bound.
    """
    if depth < 1 or width < 1:
        raise ValueError("bounds must be at least 1")
    init = _initial_state(p)
    traces: set[LocalTrace] = set()
    pomsets: set[tuple] = set()
    truncated = False
    visited: set[tuple] = set()

    init_trace = LocalTrace(init.events, init.deps, init.last[MAIN])
    traces.add(init_trace)

    stack = [init]
    visited.add(init.key())
    while stack:
        s = stack.pop()
        enabled: list[tuple[InstanceId, Edge]] = []
        blocked_by_bound = False
        for instance in sorted(s.nodes):
            for edge in _candidate_edges(p, s, instance):
                if not _guard_ok(p, s, instance, edge):
                    continue
                if s.n_actions + 1 > depth:
                    blocked_by_bound = True
                    continue
                if edge.action.kind == "create" and len(s.nodes) + 1 > width:
                    blocked_by_bound = True
                    continue
                enabled.append((instance, edge))
        if blocked_by_bound:
            truncated = True
        if not enabled:
            pomsets.add((s.events, s.deps))
            continue
        for instance, edge in enabled:
            ns, new_events = _apply(p, s, instance, edge)
            key = ns.key()
            if key in visited:
                continue
            visited.add(key)
            for ev in new_events:
                deps_in = frozenset(d for d in ns.deps if d.dst in ns.past[ev])
                traces.add(LocalTrace(ns.past[ev], deps_in, ev))
            stack.append(ns)

    return TraceSet(
        program=p,
        traces=frozenset(traces),
        pomsets=frozenset(Pomset(ev, dp) for ev, dp in pomsets),
        truncated=truncated,
        depth=depth,
        width=width,
    )


# ---------------------------------------------------------------------------
# Race definitions
# ---------------------------------------------------------------------------

def _access_events(pom: Pomset, glob: str | None = None) -> list[Event]:
    out = []
    for e in pom.sorted_events():
        a = e.action
        if a is not None and a.kind in ("read", "write"):
            if glob is None or a.target == glob:
                out.append(e)
    return out


def _site(e: Event) -> tuple[str, str]:
    return (e.edge.source, WRITE if e.action.kind == "write" else READ)


def find_racy_pairs(ts: TraceSet) -> frozenset[RacePair]:
    """Access pairs (>=1 write) left unordered once the order contributed by
    the accessed global's atomicity mutex is discarded."""
    found: dict[tuple, RacePair] = {}
    for pom in ts.sorted_pomsets():
        full = pomset_ancestors(pom)
        by_glob: dict[str, list[Event]] = {}
        for e in _access_events(pom):
            by_glob.setdefault(e.action.target, []).append(e)
        for glob, accesses in sorted(by_glob.items()):
            mg = atomicity_mutex(glob)
            stripped = frozenset(
                d for d in pom.deps if not (d.kind == "mutex" and d.label == mg)
            )
            partial = ancestors(pom.events, stripped)
            for i, ea in enumerate(accesses):
                for eb in accesses[i + 1:]:
                    if ea.action.kind != "write" and eb.action.kind != "write":
                        continue
                    if ea in partial[eb] or eb in partial[ea]:
                        continue
                    site_a, site_b = sorted((_site(ea), _site(eb)))
                    key = (glob, site_a, site_b)
                    if key in found:
                        continue
                    later = eb if ea in full[eb] else ea
                    found[key] = RacePair(glob, site_a, site_b,
                                          witness=pom.closure(later))
    return frozenset(found.values())


def bidirectionally_compatible(p: Program, ts: TraceSet, glob: str,
                               site_a: str, site_b: str) -> bool:
    """Both orders of the two access sequences are executable from some pair
    of prefix traces and some trace ending in an unlock/init of ``m_g``."""
    from .model import access_sequence

    seq_a = access_sequence(p, site_a)
    seq_b = access_sequence(p, site_b)
    mg = atomicity_mutex(glob)

    starters_a = _sequence_starters(ts, seq_a)
    starters_b = _sequence_starters(ts, seq_b)
    landings = [
        t for t in ts.traces
        if t.top.action is not None
        and t.top.action.obs_key() in (("unlock", mg), ("init", mg))
    ]

    def run(seq, t0: LocalTrace, t1: LocalTrace) -> LocalTrace | None:
        lock_e, acc_e, unl_e = seq
        r = trace_step_observing(p, lock_e, t0, t1)
        if r is None:
            return None
        r = trace_step_local(p, acc_e, r)
        if r is None:
            return None
        return trace_step_local(p, unl_e, r)

    # one witness triple (ta, tb, tl) must admit both orders
    for tl in landings:
        for ta in starters_a:
            a_first = run(seq_a, ta, tl)
            if a_first is None:
                continue
            for tb in starters_b:
                if run(seq_b, tb, a_first) is None:
                    continue
                b_first = run(seq_b, tb, tl)
                if b_first is not None and run(seq_a, ta, b_first) is not None:
                    return True
    return False


def _sequence_starters(ts: TraceSet, seq) -> list[LocalTrace]:
    lock_e = seq[0]
    return [t for t in ts.traces if t.ego_node() == lock_e.source]


def trace_to_dot(t: LocalTrace) -> str:
    """Graphviz rendering with one swimlane cluster per thread instance."""
    colors = {"create": "blue", "mutex": "red", "once": "purple", "join": "darkgreen"}
    lines = ["digraph trace {", "  rankdir=TB;", "  node [shape=box, fontsize=9];"]
    instances = sorted({e.instance for e in t.events})
    ids = {e: f"e{i}" for i, e in enumerate(sorted(t.events, key=Event.sort_key))}
    for k, inst in enumerate(instances):
        lines.append(f"  subgraph cluster_{k} {{")
        lines.append(f'    label="{instance_name(inst)} ({next(e.proto for e in t.events if e.instance == inst)})";')
        chain = t.instance_events(inst)
        for e in chain:
            shape = ", peripheries=2" if e == t.top else ""
            lines.append(f'    {ids[e]} [label="{e.describe()}"{shape}];')
        for a, b in zip(chain, chain[1:]):
            lines.append(f"    {ids[a]} -> {ids[b]};")
        lines.append("  }")
    for d in sorted(t.deps, key=lambda d: (d.kind, d.label or "", d.src.sort_key(), d.dst.sort_key())):
        label = f"{d.kind}" + (f"({d.label})" if d.label else "")
        lines.append(
            f'  {ids[d.src]} -> {ids[d.dst]} [color={colors[d.kind]}, label="{label}", constraint=false];'
        )
    lines.append("}")
    return "\n".join(lines) + "\n"
