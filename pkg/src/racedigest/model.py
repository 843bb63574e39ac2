"""Program model for the analyzed concurrent CFG language.

A program is a family of uniquely-labeled thread prototypes, each a
control-flow graph over typed actions: mutex init/lock/unlock, thread
create/join, reads and writes of global variables, once-control actions
(initO/startO/endO and the pos/neg ran guards), skip, and an implicit
thread-exit at every sink.  Accesses to a global ``g`` are instrumented
with a reserved atomicity mutex ``m_g`` so that all cross-thread
communication happens through lock/unlock pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

# Action kinds, partitioned by how they communicate between threads.
OBSERVABLE_KINDS = frozenset({"init", "unlock", "endO", "initO", "exit"})
OBSERVING_KINDS = frozenset({"lock", "startO", "join"})
CREATING_KINDS = frozenset({"create"})
LOCAL_KINDS = frozenset({"read", "write", "skip", "pos_ran", "neg_ran"})
ALL_KINDS = OBSERVABLE_KINDS | OBSERVING_KINDS | CREATING_KINDS | LOCAL_KINDS

WRITE = "W"
READ = "R"

RESERVED_MUTEX_PREFIX = "m_"


class ValidationError(Exception):
    """A structurally ill-formed program (duplicate nodes, unknown names, ...)."""


@dataclass(frozen=True)
class Action:
    """One CFG action.

    ``target`` holds the mutex / once variable / global / joined create-edge
    id depending on the kind; ``local`` the local variable of an access;
    ``create_id`` the identifier naming a create edge (referenced by join).
    """

    kind: str
    target: str | None = None
    local: str | None = None
    create_id: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ALL_KINDS:
            raise ValidationError(f"unknown action kind {self.kind!r}")

    @property
    def is_observable(self) -> bool:
        return self.kind in OBSERVABLE_KINDS

    @property
    def is_observing(self) -> bool:
        return self.kind in OBSERVING_KINDS

    @property
    def is_creating(self) -> bool:
        return self.kind in CREATING_KINDS

    def obs_key(self) -> tuple[str, str | None]:
        """Key identifying an observable action including its argument."""
        if self.kind == "exit":
            return ("exit", None)
        return (self.kind, self.target)

    def observed_keys(self) -> tuple[tuple[str, str | None], ...]:
        """Observable keys an observing action may pair with."""
        if self.kind == "lock":
            return (("unlock", self.target), ("init", self.target))
        if self.kind == "startO":
            return (("endO", self.target), ("initO", self.target))
        if self.kind == "join":
            return (("exit", None),)
        raise ValidationError(f"{self.kind} is not an observing action")


@dataclass(frozen=True)
class Edge:
    source: str
    action: Action
    target: str
    # Source line of the originating DSL text; ignored by equality so that
    # printing and re-parsing a program yields an equal model.
    line: int | None = field(default=None, compare=False)


@dataclass(frozen=True)
class ThreadPrototype:
    label: str
    start_node: str
    edges: frozenset[Edge]

    def nodes(self) -> set[str]:
        out = {self.start_node}
        for e in self.edges:
            out.add(e.source)
            out.add(e.target)
        return out


@dataclass(frozen=True, eq=True)
class Program:
    prototypes: dict[str, ThreadPrototype]
    globals: frozenset[str]
    mutexes: frozenset[str]
    once_vars: frozenset[str]
    main_label: str = "main"

    def __hash__(self) -> int:  # prototypes dict blocks the generated hash
        return hash((frozenset(self.prototypes), self.globals, self.mutexes))

    def main(self) -> ThreadPrototype:
        return self.prototypes[self.main_label]

    def all_edges(self) -> list[Edge]:
        out: list[Edge] = []
        for label in sorted(self.prototypes):
            out.extend(sorted_edges(self.prototypes[label].edges))
        return out

    def edges_from(self, node: str) -> list[Edge]:
        return self._by_source().get(node, [])

    def edges_to(self, node: str) -> list[Edge]:
        return self._by_target().get(node, [])

    def _by_source(self) -> dict[str, list[Edge]]:
        cache = object.__getattribute__(self, "__dict__").setdefault("_src_cache", {})
        if not cache:
            for e in self.all_edges():
                cache.setdefault(e.source, []).append(e)
        return cache

    def _by_target(self) -> dict[str, list[Edge]]:
        cache = object.__getattribute__(self, "__dict__").setdefault("_tgt_cache", {})
        if not cache:
            for e in self.all_edges():
                cache.setdefault(e.target, []).append(e)
        return cache

    def create_edges(self) -> dict[str, Edge]:
        """Map from create-edge id to its edge."""
        out: dict[str, Edge] = {}
        for e in self.all_edges():
            if e.action.kind == "create":
                out[e.action.create_id] = e
        return out

    def prototype_of_node(self, node: str) -> str:
        for label, proto in self.prototypes.items():
            if node in proto.nodes():
                return label
        raise KeyError(node)


def action_sort_key(a: Action) -> tuple:
    return (a.kind, a.target or "", a.local or "", a.create_id or "")


def sorted_edges(edges) -> list[Edge]:
    return sorted(edges, key=lambda e: (e.source, action_sort_key(e.action), e.target))


def atomicity_mutex(glob: str) -> str:
    return RESERVED_MUTEX_PREFIX + glob


def is_atomicity_mutex(mutex: str) -> bool:
    return mutex.startswith(RESERVED_MUTEX_PREFIX)


def validate_program(p: Program) -> Program:
    """Check the structural invariants; returns ``p`` or raises ValidationError."""
    if p.main_label not in p.prototypes:
        raise ValidationError("program has no 'main' prototype")
    seen_nodes: dict[str, str] = {}
    create_ids: dict[str, str] = {}
    for label, proto in p.prototypes.items():
        if proto.label != label:
            raise ValidationError(f"prototype {label!r} mislabeled as {proto.label!r}")
        for n in proto.nodes():
            if n in seen_nodes and seen_nodes[n] != label:
                raise ValidationError(f"node {n!r} appears in prototypes {seen_nodes[n]!r} and {label!r}")
            seen_nodes[n] = label
        for e in proto.edges:
            if e.target == proto.start_node:
                raise ValidationError(f"start node {proto.start_node!r} of {label!r} has an incoming edge")
        # connectivity from the start node
        reached = {proto.start_node}
        frontier = [proto.start_node]
        by_src: dict[str, list[Edge]] = {}
        for e in proto.edges:
            by_src.setdefault(e.source, []).append(e)
        while frontier:
            u = frontier.pop()
            for e in by_src.get(u, ()):
                if e.target not in reached:
                    reached.add(e.target)
                    frontier.append(e.target)
        unreachable = proto.nodes() - reached
        if unreachable:
            raise ValidationError(f"unreachable nodes in {label!r}: {sorted(unreachable)}")
        for e in proto.edges:
            a = e.action
            if a.kind == "create":
                if a.target not in p.prototypes:
                    raise ValidationError(f"create of unknown prototype {a.target!r}")
                if a.create_id is None:
                    raise ValidationError("create edge without an id")
                if a.create_id in create_ids:
                    raise ValidationError(f"duplicate create-edge id {a.create_id!r}")
                create_ids[a.create_id] = label
            elif a.kind in ("read", "write"):
                if a.target not in p.globals:
                    raise ValidationError(f"access to undeclared global {a.target!r}")
            elif a.kind in ("init", "lock", "unlock"):
                if a.target not in p.mutexes:
                    raise ValidationError(f"use of undeclared mutex {a.target!r}")
            elif a.kind in ("initO", "startO", "endO", "pos_ran", "neg_ran"):
                if a.target not in p.once_vars:
                    raise ValidationError(f"use of undeclared once variable {a.target!r}")
    for e in [e for e in p.all_edges() if e.action.kind == "join"]:
        if e.action.target not in create_ids:
            raise ValidationError(f"join of unknown create-edge id {e.action.target!r}")
    return p


def instrument_atomicity(p: Program) -> Program:
    """Wrap every global access in lock/unlock of its atomicity mutex.

    Each access edge ``(u, chi, v)`` becomes the three-edge sequence
    ``(u, lock m_g, s) . (s, chi, t) . (t, unlock m_g, v)`` with fresh nodes
    ``s`` (the access site) and ``t``, and an ``init m_g`` prologue for every
    global is prepended to main.  Rejects programs that already mention a
    reserved ``m_*`` mutex, which also makes double instrumentation an error.
    """
    for e in p.all_edges():
        if e.action.kind in ("init", "lock", "unlock") and is_atomicity_mutex(e.action.target):
            raise ValidationError(f"reserved mutex {e.action.target!r} used in source")

    new_protos: dict[str, ThreadPrototype] = {}
    for label in sorted(p.prototypes):
        proto = p.prototypes[label]
        edges: list[Edge] = []
        counter = 0
        for e in sorted_edges(proto.edges):
            if e.action.kind in ("read", "write"):
                mg = atomicity_mutex(e.action.target)
                site = f"{label}.s{counter}"
                post = f"{label}.t{counter}"
                counter += 1
                edges.append(Edge(e.source, Action("lock", mg), site, line=e.line))
                edges.append(Edge(site, e.action, post, line=e.line))
                edges.append(Edge(post, Action("unlock", mg), e.target, line=e.line))
            else:
                edges.append(e)
        start = proto.start_node
        if label == p.main_label:
            prologue: list[Edge] = []
            cur = "main.i0"
            for i, g in enumerate(sorted(p.globals)):
                nxt = f"main.i{i + 1}" if i + 1 < len(p.globals) else proto.start_node
                prologue.append(Edge(cur, Action("init", atomicity_mutex(g)), nxt))
                cur = nxt
            if prologue:
                start = "main.i0"
                edges.extend(prologue)
        new_protos[label] = ThreadPrototype(label, start, frozenset(edges))

    out = Program(
        prototypes=new_protos,
        globals=p.globals,
        mutexes=p.mutexes | frozenset(atomicity_mutex(g) for g in p.globals),
        once_vars=p.once_vars,
        main_label=p.main_label,
    )
    return validate_program(out)


def access_sites(p: Program) -> list[tuple[str, str, str]]:
    """All access sites of an instrumented program as (node, global, W/R).

    The site is the source node of the access edge, i.e. the point between
    locking and unlocking the atomicity mutex.
    """
    out = []
    for e in p.all_edges():
        if e.action.kind in ("read", "write"):
            out.append((e.source, e.action.target, WRITE if e.action.kind == "write" else READ))
    return sorted(out)


def access_sequence(p: Program, site: str) -> tuple[Edge, Edge, Edge]:
    """The (lock, access, unlock) edges of the access sequence at ``site``."""
    incoming = p.edges_to(site)
    if len(incoming) != 1 or incoming[0].action.kind != "lock":
        raise ValidationError(f"{site!r} is not an access site")
    lock_e = incoming[0]
    (acc_e,) = p.edges_from(site)
    (unl_e,) = p.edges_from(acc_e.target)
    return lock_e, acc_e, unl_e


def fmt_action(a: Action) -> str:
    if a.kind == "read":
        return f"{a.local} = {a.target}"
    if a.kind == "write":
        return f"{a.target} = {a.local}"
    if a.kind == "create":
        return f"create {a.target} as {a.create_id}"
    if a.kind == "join":
        return f"join {a.target}"
    if a.kind == "pos_ran":
        return f"pos ran {a.target}"
    if a.kind == "neg_ran":
        return f"neg ran {a.target}"
    if a.kind == "exit":
        return "thread_exit"
    if a.kind == "skip":
        return "skip"
    return f"{a.kind} {a.target}"


def program_to_dot(p: Program) -> str:
    """Graphviz rendering of all prototype CFGs, one cluster per prototype."""
    lines = ["digraph program {", "  node [shape=circle, fontsize=10];"]
    for i, label in enumerate(sorted(p.prototypes)):
        proto = p.prototypes[label]
        lines.append(f"  subgraph cluster_{i} {{")
        lines.append(f'    label="{label}";')
        lines.append(f'    "{proto.start_node}" [shape=doublecircle];')
        for e in sorted_edges(proto.edges):
            lines.append(f'    "{e.source}" -> "{e.target}" [label="{fmt_action(e.action)}"];')
        lines.append("  }")
    lines.append("}")
    return "\n".join(lines) + "\n"
