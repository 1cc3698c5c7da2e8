from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import pytest

from masabs.benchmarks import PHI_BSTUFF, build_postal
from masabs.checker import GlobalModel, check, explore, project_reachable
from masabs.errors import EvaluationError, ResolutionError, UnsupportedFeature
from masabs.expr import evaluate, parse_query
from masabs.xmlio import parse_model

from oracles import checker_graph, exact_projection, random_model, reference_graph

DATA = Path(__file__).parent / "data"


@pytest.fixture(autouse=True)
def _quiet(caplog):
    caplog.set_level(logging.ERROR, logger="masabs")


def peterson():
    return parse_model((DATA / "peterson.xml").read_bytes())


@pytest.mark.parametrize("seed", range(120))
def test_matches_reference_semantics(seed):
    m = random_model(seed)
    ref, got = reference_graph(m), checker_graph(m)
    assert got.initial == ref.initial
    order = [got.variables.index(v) for v in ref.variables]

    def remap(s):
        return (s[0], tuple(s[1][k] for k in order))

    assert {remap(s) for s in got.states} == ref.states
    assert {(remap(s), remap(t)) for s, t in got.transitions} == ref.transitions


@pytest.mark.parametrize("seed", range(0, 120, 7))
def test_project_reachable_matches_reference(seed):
    m = random_model(seed)
    ref = reference_graph(m)
    g, _ = m.templates[0]
    names = [v.name for v in m.globals] + [v.name for v in g.privates]
    if names:
        got = project_reachable(m, names, g.name)
        assert got == exact_projection(ref, m, names, g.name)


def test_peterson_mutual_exclusion():
    m = peterson()
    assert check(m, parse_query("A[] !(P1.cs && P2.cs)")).verdict == "holds"
    assert check(m, parse_query("E<> P1.cs")).verdict == "holds"
    assert explore(m).states == 10


def test_postal_counts():
    assert [explore(build_postal(nv)).states for nv in (1, 2, 3)] == [45, 509, 6291]


@pytest.mark.parametrize("threads", [1, 4, 8])
def test_thread_count_does_not_change_results(threads):
    m = build_postal(3)
    base = GlobalModel(m).search(keep_layers=False)
    res = GlobalModel(m).search(threads=threads, keep_layers=False)
    assert res.stats.states == base.stats.states
    assert res.stats.transitions == base.stats.transitions
    assert np.array_equal(res.visited, base.visited)


def _replay(model, trace):
    """Re-execute a trace step by step with the scalar evaluator."""
    gm = GlobalModel(model)
    assert trace[0]["transition"] is None
    init = gm.state_dict(gm.initial_matrix()[0].tolist())
    assert trace[0]["values"] == init["values"]
    for prev, step in zip(trace, trace[1:]):
        M = np.array([[gm.procs[k].locations.index(prev["locations"][p.name])
                       for k, p in enumerate(gm.procs)]
                      + [prev["values"][v.name] for v in gm.variables]], dtype=np.int64)
        succ, _, tids = gm.successors(M)
        options = [gm.state_dict(r) for r, t in zip(succ.tolist(), tids.tolist())
                   if t == step["transition_index"]]
        assert {"locations": step["locations"], "values": step["values"]} in \
            [{"locations": o["locations"], "values": o["values"]} for o in options]


def test_counterexample_trace_replays():
    m = build_postal(2)
    q = parse_query("A[] b_recv < 2")
    res = check(m, q)
    assert res.verdict == "fails"
    last = res.trace[-1]
    assert evaluate(q.prop, last["values"]) == 0
    _replay(m, res.trace)


def test_witness_is_shortest():
    m = peterson()
    res = check(m, parse_query("E<> P1.cs"))
    assert [s["locations"]["P1(1)"] for s in res.trace] == ["idle", "want", "cs"]


@pytest.mark.parametrize("prop", ["b_recv <= ep_sent", "Voter(1).mem_vt == 0",
                                  "Authority.done", "ep_sent < 2 || b_recv == 0"])
def test_invariance_and_reachability_are_dual(prop):
    m = build_postal(2)
    a = check(m, parse_query(f"A[] {prop}")).holds
    e = check(m, parse_query(f"E<> !({prop})")).holds
    assert a != e


def test_cap_makes_result_inconclusive():
    m = build_postal(2)
    res = check(m, parse_query(PHI_BSTUFF), cap=100)
    assert res.verdict == "inconclusive"
    assert res.stats.capped and res.stats.states == 100
    # a violation found before the cap is still conclusive
    assert check(m, parse_query("A[] ep_sent == 0"), cap=100).verdict == "fails"


def test_quantified_property():
    m = build_postal(2)
    q = parse_query("A[] forall(i:int[1,2]) Voter(i).mem_dec <= 2")
    assert check(m, q).holds


def test_runtime_errors_surface():
    doc = ("<nta><declaration>int[0,2] x; int[0,9] y;</declaration><template><name>T</name>"
           "<location id='a'><name>a</name></location><init ref='a'/>"
           "<transition><source ref='a'/><target ref='a'/>"
           "<label kind='guard'>x &lt; 2</label><label kind='assignment'>x++</label>"
           "</transition>"
           "<transition><source ref='a'/><target ref='a'/>"
           "<label kind='guard'>x == 2</label><label kind='assignment'>y = 9 / (x - 2)</label>"
           "</transition></template><system>system T;</system></nta>")
    with pytest.raises(EvaluationError):
        explore(parse_model(doc))
    with pytest.raises(ResolutionError):
        check(build_postal(1), parse_query("A[] nothing == 0"))


def test_out_of_range_update_blocks_edge():
    doc = ("<nta><declaration>int[0,2] x;</declaration><template><name>T</name>"
           "<location id='a'><name>a</name></location><init ref='a'/>"
           "<transition><source ref='a'/><target ref='a'/>"
           "<label kind='assignment'>x++</label></transition>"
           "</template><system>system T;</system></nta>")
    assert explore(parse_model(doc)).states == 3


@pytest.mark.parametrize("label", [
    "<label kind='guard'>P(id).b</label>",
    "<label kind='assignment'>x = P(3 - id).b</label>",
])
def test_indexed_location_predicates_are_rejected_on_edges(label):
    doc = ("<nta><declaration>int[0,2] x;</declaration><template><name>P</name>"
           "<parameter>const int[1,2] id</parameter>"
           "<location id='a'><name>a</name></location><location id='b'><name>b</name></location>"
           f"<init ref='a'/><transition><source ref='a'/><target ref='b'/>{label}</transition>"
           "</template><system>system P;</system></nta>")
    with pytest.raises(UnsupportedFeature):
        explore(parse_model(doc))
