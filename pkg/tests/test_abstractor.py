from __future__ import annotations

import logging

import pytest

from masabs.abstractor import (MappingFunction, Merge, abstract, check_scope_boundary)
from masabs.approx import approx_lower, approx_upper, approximate
from masabs.benchmarks import (PHI_BSTUFF, build_postal, postal_a1, postal_a2_authority,
                               postal_a2_voter)
from masabs.checker import check, explore
from masabs.domain import LocalDomain
from masabs.errors import AbstractionError
from masabs.expr import Const, parse_expr, parse_query, to_text
from masabs.xmlio import parse_model, serialize_model

from oracles import (alpha_factory, may_violations, must_violations, random_case,
                     reference_graph)

ALL_CHANNELS = ("declare", "post", "pickup", "ballot")


@pytest.fixture(autouse=True)
def _quiet(caplog):
    caplog.set_level(logging.ERROR, logger="masabs")


def edges_of(model, name):
    return [(e.source, e.target, to_text(e.guard), [(x, to_text(v)) for x, v in e.updates])
            for e in model.template(name).edges]


def test_full_removal_drops_declarations_and_updates():
    m = build_postal(2)
    a = abstract(m, postal_a1(), approx_upper(m, ["mem_vt", "mem_sg"], "Voter"))
    assert [v.name for v in a.template("Voter").privates] == ["mem_dec"]
    ballot = [e for e in a.template("Voter").edges if e.source == "has"]
    assert len(ballot) == 1 and ballot[0].updates == ()
    # the selects that fed the removed variables are kept
    assert [s.name for s in ballot[0].selects] == ["vt", "sg"]
    assert check(a, parse_query(PHI_BSTUFF)).holds
    assert explore(a).states < explore(m).states


def test_merge_replaces_removed_variables():
    m = build_postal(2)
    merge = Merge("valid", 0, parse_expr("mem_sg * mem_vt > 0"))
    mf = MappingFunction("Voter", ("mem_vt", "mem_sg"), merge=merge)
    a = abstract(m, mf, approx_upper(m, ["mem_vt", "mem_sg"], "Voter"))
    valid = a.template("Voter").privates[-1]
    assert (valid.name, valid.lo, valid.hi, valid.initial) == ("valid", 0, 1, 0)
    (ballot,) = [e for e in a.template("Voter").edges if e.source == "has"]
    assert [(x, to_text(v)) for x, v in ballot.updates] == [("valid", "sg * vt > 0")]
    ref, aref = reference_graph(m), reference_graph(a)
    assert may_violations(ref, aref, alpha_factory(m, mf, ref, aref)) == []


def test_merge_rules():
    m = build_postal(1)
    d = approx_upper(m, ["mem_vt", "mem_sg"], "Voter")
    bad_init = MappingFunction("Voter", ("mem_vt", "mem_sg"),
                               merge=Merge("valid", 1, parse_expr("mem_sg * mem_vt > 0")))
    with pytest.raises(AbstractionError):
        abstract(m, bad_init, d)
    partial = MappingFunction("Voter", ("mem_vt", "mem_sg"), scope=("voted",),
                              merge=Merge("valid", 0, parse_expr("mem_sg * mem_vt > 0")))
    with pytest.raises(AbstractionError):
        abstract(m, partial, d)
    must = MappingFunction("Voter", ("mem_vt", "mem_sg"),
                           merge=Merge("valid", 0, parse_expr("mem_sg * mem_vt > 0")))
    with pytest.raises(AbstractionError):
        abstract(m, must, approx_lower(m, ["mem_vt", "mem_sg"], "Voter"))


def test_unused_variable_is_identity_on_behaviour():
    doc = ("<nta><declaration>int[0,3] x;</declaration><template><name>T</name>"
           "<declaration>int[0,1] junk = 1;</declaration>"
           "<location id='a'><name>a</name></location><location id='b'><name>b</name></location>"
           "<init ref='a'/><transition><source ref='a'/><target ref='b'/>"
           "<label kind='assignment'>x = x + 1</label></transition>"
           "<transition><source ref='b'/><target ref='a'/><label kind='guard'>x &lt; 3</label>"
           "</transition></template><system>system T;</system></nta>")
    m = parse_model(doc)
    a = abstract(m, MappingFunction("T", ("junk",)), approx_upper(m, ["junk"], "T"))
    assert a.template("T").edges == m.template("T").edges
    assert explore(a).states == explore(m).states


def test_partial_scope_boundary_edges():
    m = build_postal(2)
    dv = approx_upper(m, ["mem_dec"], "Voter")
    entering = check_scope_boundary(m, postal_a2_voter(), dv)
    assert [(b.edge.source, b.edge.target, b.direction) for b in entering] == \
        [("waits", "has", "enter"), ("waits", "has", "enter")]
    assert not any(b.needs_confirmation for b in entering)
    assert check_scope_boundary(m, MappingFunction("Voter", ("mem_dec",)), dv) == []
    a = abstract(m, postal_a2_voter(), dv)
    assert ("waits", "has", "mem_dec == 2", [("mem_dec", "0")]) in edges_of(a, "Voter")
    # outside the scope the variable is still declared and written
    assert "mem_dec" in [v.name for v in a.template("Voter").privates]


def test_exit_reintroduces_from_target_domain():
    m = build_postal(2)
    mf = MappingFunction("Authority", ("dec_recv",), scope=("coll_decl",))
    d = approx_upper(m, ["dec_recv"], "Authority")
    (b,) = [b for b in check_scope_boundary(m, mf, d) if b.direction == "exit"]
    assert b.reintroduce == ((2,),)
    a = abstract(m, mf, d)
    leaving = [e for e in edges_of(a, "Authority") if e[0] == "coll_decl" and e[1] == "distr"]
    assert leaving and all(("dec_recv", "2") in e[3] for e in leaving)


def test_lower_exit_needs_confirmation():
    m = build_postal(2)
    mf = MappingFunction("Voter", ("mem_dec",), scope=("has",))
    d = approximate(m, ["mem_dec"], "Voter", "lower", sync_available=ALL_CHANNELS)
    exits = [b for b in check_scope_boundary(m, mf, d) if b.direction == "exit"]
    assert exits and all(b.needs_confirmation for b in exits)
    plain = abstract(m, mf, d)
    confirmed = abstract(m, mf, d, confirm_boundary=True)
    n_exit = lambda a: sum(1 for e in a.template("Voter").edges if e.source == "has")
    assert n_exit(plain) == 0
    # one edge per select instance (vt, sg) and per confirmed value of mem_dec
    assert n_exit(confirmed) == 6 * 2


def test_must_abstraction_of_postal():
    m = build_postal(1)
    mf = postal_a2_authority()
    d = approximate(m, ["dec_recv"], "Authority", "lower", sync_available=ALL_CHANNELS)
    a = abstract(m, mf, d)
    ref, aref = reference_graph(m), reference_graph(a)
    assert must_violations(ref, aref, alpha_factory(m, mf, ref, aref)) == []
    assert len(aref.states) > 1


def test_bad_mappings():
    m = build_postal(2)
    d = approx_upper(m, ["mem_dec"], "Voter")
    for mf in (MappingFunction("Voter", ("ghost",)),
               MappingFunction("Voter", ("ep_sent",)),
               MappingFunction("Voter(1)", ("mem_dec",)),
               MappingFunction("Nobody", ("mem_dec",)),
               MappingFunction("Voter", ("mem_dec",), scope=("nowhere",))):
        with pytest.raises(AbstractionError):
            abstract(m, mf, d)
    empty = LocalDomain(("mem_dec",), "upper", "Voter", {})
    with pytest.raises(AbstractionError):
        abstract(m, MappingFunction("Voter", ("mem_dec",)), empty)


def test_abstract_models_reparse():
    m = build_postal(2)
    a = abstract(m, postal_a2_voter(), approx_upper(m, ["mem_dec"], "Voter"))
    assert parse_model(serialize_model(a)) == a


def test_constant_out_of_range_drops_variant():
    doc = ("<nta><declaration>int[0,3] y;</declaration><template><name>T</name>"
           "<declaration>int[0,1] x;</declaration>"
           "<location id='a'><name>a</name></location><location id='b'><name>b</name></location>"
           "<init ref='a'/><transition><source ref='a'/><target ref='b'/>"
           "<label kind='assignment'>x = 1, y = x + 2</label></transition>"
           "</template><system>system T;</system></nta>")
    m = parse_model(doc)
    a = abstract(m, MappingFunction("T", ("x",)), approx_upper(m, ["x"], "T"))
    (e,) = a.template("T").edges
    assert e.updates == (("y", Const(3)),)


@pytest.mark.parametrize("seed", range(100))
def test_may_simulation_and_must_containment(seed):
    case = random_case(seed)
    mf = case.mapping
    cref = reference_graph(case.concrete)
    for kind in ("upper", "lower"):
        try:
            d = approximate(case.model, list(mf.remove), mf.target, kind)
            a = abstract(case.model, mf, d)
        except AbstractionError:
            continue
        aref = reference_graph(a)
        alpha = alpha_factory(case.concrete, mf, cref, aref)
        if kind == "upper":
            assert may_violations(cref, aref, alpha) == []
        else:
            assert must_violations(cref, aref, alpha) == []
