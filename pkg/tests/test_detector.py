from __future__ import annotations

import json

import pytest

from racedigest.detector import BESPOKE, DISABLED, GENERIC, ablate, detect
from racedigest.digest import ProductDigest
from racedigest.digests import build_digests
from racedigest.solver import build_system, solve


def run(program, names, modes=None):
    product = ProductDigest(build_digests(names))
    sol = solve(build_system(program, product))
    return detect(sol, product, modes)


def sites(report):
    return {(f.site_a[0], f.site_b[0]) for f in report.flagged}


def test_prog1_combined_digests_prove_race_freedom(prog1):
    assert run(prog1, ["lockset", "threadflag"]).flagged == []
    assert run(prog1, ["lockset", "tid"]).flagged == []


def test_prog1_lockset_alone(prog1):
    report = run(prog1, ["lockset"])
    assert sites(report) == {
        ("main.s0", "main.s0"),
        ("main.s0", "main.s1"),
        ("main.s0", "t1.s0"),
    }
    assert {p[1:] for p in report.distinct_site_pairs()} == {
        (("main.s0", "W"), ("main.s1", "W")),
        (("main.s0", "W"), ("t1.s0", "W")),
    }


def test_prog1_threadflag_alone(prog1):
    report = run(prog1, ["threadflag"])
    assert sites(report) == {("main.s1", "t1.s0"), ("t1.s0", "t1.s0")}


def test_identical_records_can_race(prog0):
    # disabling all exclusion flags the self pairs too: equal digests may
    # belong to different concrete threads
    report = run(prog0, ["lockset"], {"lockset": DISABLED})
    assert sites(report) == {
        ("main.s0", "main.s0"),
        ("main.s0", "t1.s0"),
        ("t1.s0", "t1.s0"),
    }


def test_self_pair_exclusion_needs_thread_identity(prog0):
    # the flag knows main is unique but not that t1 is; thread ids know both
    report = run(prog0, ["threadflag"])
    assert sites(report) == {("main.s0", "t1.s0"), ("t1.s0", "t1.s0")}
    report = run(prog0, ["tid"])
    assert sites(report) == {("main.s0", "t1.s0")}


def test_read_pairs_never_flagged():
    from tests.conftest import corpus_program

    p = corpus_program("read_only_pair")
    assert run(p, ["lockset"], {"lockset": DISABLED}).flagged == []


def test_generic_mode_weaker_than_bespoke(prog1):
    bespoke = sites(run(prog1, ["lockset"]))
    generic = sites(run(prog1, ["lockset"], {"lockset": GENERIC}))
    assert bespoke < generic
    assert generic - bespoke == {
        ("main.s1", "main.s1"),
        ("main.s1", "t1.s0"),
        ("t1.s0", "t1.s0"),
    }


def test_mode_validation(prog1):
    with pytest.raises(ValueError):
        run(prog1, ["lockset"], {"threadflag": BESPOKE})
    with pytest.raises(ValueError):
        run(prog1, ["lockset"], {"lockset": "sometimes"})


def test_report_metadata_and_witnesses(prog0):
    report = run(prog0, ["threadflag", "tid"])
    (pair,) = report.flagged
    assert pair.glob == "g"
    assert pair.site_a == ("main.s0", "W") and pair.site_b == ("t1.s0", "W")
    assert [v for _, v in pair.component_verdicts] == ["top", "top"]
    assert report.record_counts == {"g": 2}


def test_report_json_schema(prog0):
    report = run(prog0, ["lockset"])
    payload = report.to_json()
    assert payload["version"] == 1
    assert payload["race_free"] is False
    flagged = payload["flagged"]
    assert flagged == sorted(
        flagged, key=lambda f: (f["global"], f["a"]["site"], f["b"]["site"])
    )
    json.dumps(payload)  # serializable


def test_text_report_includes_source_lines(prog0):
    report = run(prog0, ["lockset", "threadflag"])
    text = report.to_text(prog0)
    assert "race on g" in text
    assert "(line" in text


def test_ablation_rows_and_monotonicity(prog1):
    product = ProductDigest(build_digests(["lockset", "threadflag", "tid", "join", "once"]))
    sol = solve(build_system(prog1, product))
    rows = ablate(sol, product)
    assert len(rows) == 32
    by_subset = {frozenset(r["predicates"]): r["flagged"] for r in rows}
    for small, n_small in by_subset.items():
        for big, n_big in by_subset.items():
            if small <= big:
                assert n_big <= n_small
    assert by_subset[frozenset()] == 6
    assert by_subset[frozenset({"lockset", "threadflag"})] == 0
