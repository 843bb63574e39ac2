from __future__ import annotations

from racedigest.dsl import parse_program
from racedigest.model import access_sites, instrument_atomicity
from racedigest.oracle import (
    MAIN,
    bidirectionally_compatible,
    edge_path,
    enumerate_traces,
    find_racy_pairs,
    pomset_ancestors,
    spawn,
    step_creator,
    trace_step_local,
    trace_step_observing,
    trace_to_dot,
    validate_local_trace,
)


def load(src: str):
    return instrument_atomicity(parse_program(src))


def traces_with_top(ts, kind: str, target: str | None = None, instance=None):
    out = []
    for t in ts.traces:
        a = t.top.action
        if a is None or a.kind != kind:
            continue
        if target is not None and a.target != target:
            continue
        if instance is not None and t.ego != instance:
            continue
        out.append(t)
    return out


def traces_at_node(ts, node: str):
    return [t for t in ts.traces if t.ego_node() == node]


def test_every_trace_is_well_formed(prog1_traces):
    for t in prog1_traces.traces:
        validate_local_trace(t)


def test_local_step_advances_access(prog1, prog1_traces):
    (site, _, _) = access_sites(prog1)[0]
    (acc_edge,) = prog1.edges_from(site)
    for t in traces_at_node(prog1_traces, site):
        out = trace_step_local(prog1, acc_edge, t)
        assert out is not None
        assert out.ego_node() == acc_edge.target
        validate_local_trace(out)


def test_local_step_wrong_node_is_empty(prog1, prog1_traces):
    (site, _, _) = access_sites(prog1)[0]
    (acc_edge,) = prog1.edges_from(site)
    t = next(t for t in prog1_traces.traces if t.ego_node() != site)
    assert trace_step_local(prog1, acc_edge, t) is None


def test_pos_ran_without_endo_is_empty():
    p = load("global g\nonce o\n\nmain:\n  initO o\n  pos ran o\n  g = 1\n")
    ts = enumerate_traces(p)
    (pos_edge,) = [e for e in p.main().edges if e.action.kind == "pos_ran"]
    for t in traces_at_node(ts, pos_edge.source):
        assert trace_step_local(p, pos_edge, t) is None
    # the guarded access is dead in every enumerated execution
    for pom in ts.sorted_pomsets():
        assert not any(
            e.action is not None and e.action.kind == "write" for e in pom.events
        )


def test_pos_ran_requires_local_knowledge():
    # Another thread completing the once block does not unblock the ego
    # thread's guard: knowledge only flows through synchronization.
    p = load(
        "global g\nonce o\n\nmain:\n  initO o\n  create t1 as e1\n  pos ran o\n  g = 1\n"
        "\nt1:\n  once o\n    skip\n  end\n"
    )
    ts = enumerate_traces(p)
    assert not ts.truncated
    endos = [t for t in ts.traces if t.has_event("endO", "o")]
    assert endos, "t1 does complete the once block"
    for pom in ts.sorted_pomsets():
        assert not any(
            e.action is not None and e.action.kind == "write" for e in pom.events
        )


def test_spawn_creates_child_with_extended_path(prog1, prog1_traces):
    (create_edge,) = [e for e in prog1.all_edges() if e.action.kind == "create"]
    t = next(t for t in traces_at_node(prog1_traces, create_edge.source) if t.ego == MAIN)
    child = spawn(prog1, create_edge, t)
    assert child is not None
    assert edge_path(child.ego) == ("e1",)
    assert child.top.index == 0 and child.top.node == prog1.prototypes["t1"].start_node
    validate_local_trace(child)
    # spawning from a node without a create edge yields nothing
    assert spawn(prog1, create_edge, child) is None
    # the creating thread itself advances over the same edge
    creator = step_creator(prog1, create_edge, t)
    assert creator is not None and creator.ego == MAIN
    assert creator.ego_node() == create_edge.target


def test_nested_creation_path_length_two():
    p = load("global g\n\nmain:\n  create p as e1\n\np:\n  create q as e2\n\nq:\n  g = 1\n")
    ts = enumerate_traces(p)
    grandchildren = {t.ego for t in ts.traces if len(t.ego) == 2}
    assert grandchildren == {(("e1", 0), ("e2", 0))}


def test_observing_step_merges_unlock(prog1, prog1_traces):
    # t1's first lock(a) can observe main's unlock(a): the merged trace is
    # exactly the stylized figure trace shape.
    (lock_edge,) = [
        e for e in prog1.prototypes["t1"].edges
        if e.action.kind == "lock" and e.action.target == "a"
    ]
    unlocks = [
        t for t in traces_with_top(prog1_traces, "unlock", "a", instance=MAIN)
    ]
    starters = [t for t in traces_at_node(prog1_traces, lock_edge.source) if t.ego != MAIN]
    merged = None
    for t0 in starters:
        for t1 in unlocks:
            merged = merged or trace_step_observing(prog1, lock_edge, t0, t1)
    assert merged is not None
    validate_local_trace(merged)
    assert merged.ego != MAIN
    assert any(d.kind == "mutex" and d.label == "a" for d in merged.deps)


def test_observable_consumed_at_most_once():
    # B relocks a after its own unlock; the init(a) observable is already
    # consumed by B's first lock, so observing it again must fail.
    p = load(
        "mutex a\n\nmain:\n  init a\n  create b as e1\n\n"
        "b:\n  lock a\n  unlock a\n  lock a\n"
    )
    ts = enumerate_traces(p)
    b_edges = sorted(
        (e for e in p.prototypes["b"].edges if e.action.kind == "lock"),
        key=lambda e: e.source,
    )
    init_traces = traces_with_top(ts, "init", "a")
    second_lock = None
    for e in b_edges:
        for t0 in traces_at_node(ts, e.source):
            if t0.ego == MAIN or not t0.has_event("unlock", "a"):
                continue
            second_lock = (e, t0)
    assert second_lock is not None
    e, t0 = second_lock
    for t1 in init_traces:
        assert trace_step_observing(p, e, t0, t1) is None
    own_unlock = [t for t in traces_with_top(ts, "unlock", "a") if t.ego == t0.ego]
    assert any(trace_step_observing(p, e, t0, t1) is not None for t1 in own_unlock)


def test_join_observes_only_matching_exit():
    p = load(
        "global g\n\nmain:\n  create t1 as e1\n  create t2 as e2\n  join e1\n  g = 0\n\n"
        "t1:\n  skip\n\nt2:\n  g = 1\n"
    )
    ts = enumerate_traces(p)
    (join_edge,) = [e for e in p.main().edges if e.action.kind == "join"]
    starters = [t for t in traces_at_node(ts, join_edge.source) if t.ego == MAIN]
    exits_t1 = [t for t in traces_with_top(ts, "exit") if edge_path(t.ego) == ("e1",)]
    exits_t2 = [t for t in traces_with_top(ts, "exit") if edge_path(t.ego) == ("e2",)]
    assert starters and exits_t1 and exits_t2
    assert any(
        trace_step_observing(p, join_edge, t0, t1) is not None
        for t0 in starters
        for t1 in exits_t1
    )
    for t0 in starters:
        for t1 in exits_t2:
            assert trace_step_observing(p, join_edge, t0, t1) is None


def test_enumeration_contains_figure_trace(prog1, prog1_traces):
    ts = enumerate_traces(prog1, depth=30, width=2)
    assert not ts.truncated
    figure = [
        t
        for t in ts.traces
        if t.ego != MAIN
        and t.top.action is not None
        and t.top.action.kind == "lock"
        and t.top.action.target == "a"
        and t.has_event("unlock", "a")
    ]
    assert figure, "t1 locking a after main's unlock must be reachable"


def test_single_thread_traces_totally_ordered():
    p = load("global g\n\nmain:\n  g = 1\n  g = 2\n")
    ts = enumerate_traces(p)
    for pom in ts.sorted_pomsets():
        anc = pomset_ancestors(pom)
        events = pom.sorted_events()
        for i, a in enumerate(events):
            for b in events[i + 1:]:
                assert a in anc[b] or b in anc[a]


def test_empty_main_yields_init_trace():
    p = load("main:\n")
    ts = enumerate_traces(p)
    init = [t for t in ts.traces if t.top.index == 0]
    assert len(init) == 1 and init[0].ego == MAIN


def test_step_determinism(prog1, prog1_traces):
    # local and observing steps return at most one trace and are stable
    (site, _, _) = access_sites(prog1)[0]
    (acc_edge,) = prog1.edges_from(site)
    for t in traces_at_node(prog1_traces, site):
        assert trace_step_local(prog1, acc_edge, t) == trace_step_local(prog1, acc_edge, t)


def test_truncation_flag_on_infinite_loop():
    p = load("global g\n\nmain:\n  skip\n  label T\n  g = 1\n  goto T\n")
    ts = enumerate_traces(p, depth=10, width=2)
    assert ts.truncated
    assert ts.traces


def test_create_loop_truncated_prefix_shows_self_race():
    p = load("global g\n\nmain:\n  skip\n  label T\n  create w as e\n  goto T\n\nw:\n  g = 1\n")
    ts = enumerate_traces(p, depth=16, width=3)
    assert ts.truncated
    pairs = {(r.glob, r.site_a, r.site_b) for r in find_racy_pairs(ts)}
    assert ("g", ("w.s0", "W"), ("w.s0", "W")) in pairs


def test_racy_pairs_prog0(prog0, prog0_traces):
    pairs = {(r.glob, r.site_a, r.site_b) for r in find_racy_pairs(prog0_traces)}
    assert pairs == {("g", ("main.s0", "W"), ("t1.s0", "W"))}
    (pair,) = find_racy_pairs(prog0_traces)
    validate_local_trace(pair.witness)
    site_nodes = {pair.site_a[0], pair.site_b[0]}
    witnessed = {
        e.edge.source
        for e in pair.witness.events
        if e.action is not None and e.action.kind in ("read", "write")
    }
    assert site_nodes <= witnessed


def test_racy_pairs_need_a_write():
    p = load("global g\n\nmain:\n  create t1 as e1\n  x = g\n\nt1:\n  y = g\n")
    assert find_racy_pairs(enumerate_traces(p)) == frozenset()


def test_bidirectional_same_thread_false():
    p = load("global g\n\nmain:\n  g = 1\n  g = 2\n")
    ts = enumerate_traces(p)
    sites = [s for s, _, _ in access_sites(p)]
    assert not bidirectionally_compatible(p, ts, "g", sites[0], sites[1])


def test_bidirectional_unsynchronized_true(prog0, prog0_traces):
    sites = [s for s, _, _ in access_sites(prog0)]
    assert bidirectionally_compatible(prog0, prog0_traces, "g", sites[0], sites[1])


def test_bidirectional_lock_protected_false(prog1, prog1_traces):
    sites = access_sites(prog1)
    protected = [s for s, _, _ in sites if s != "main.s0"]
    assert not bidirectionally_compatible(prog1, prog1_traces, "g", protected[0], protected[1])


def test_mutex_chain_invariants(prog1_traces):
    # every lock has exactly one mutex dependency; every observable feeds
    # at most one observer
    for pom in prog1_traces.sorted_pomsets():
        by_src = {}
        for d in pom.deps:
            if d.kind == "mutex":
                key = (d.src, d.label)
                assert key not in by_src
                by_src[key] = d.dst
        locks = [
            e for e in pom.events
            if e.action is not None and e.action.kind == "lock"
        ]
        for lk in locks:
            deps = [d for d in pom.deps if d.dst == lk]
            assert len(deps) == 1 and deps[0].kind == "mutex"


def test_trace_dot_golden(prog0, prog0_traces):
    t = sorted(
        (t for t in prog0_traces.traces if t.top.index == 0 and t.ego != MAIN),
        key=lambda t: t.top.sort_key(),
    )[0]
    dot = trace_to_dot(t)
    assert dot.startswith("digraph trace {")
    assert 'color=blue, label="create"' in dot
    assert "main (main)" in dot and "<e1#0> (t1)" in dot
