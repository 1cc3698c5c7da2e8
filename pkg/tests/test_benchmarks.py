from __future__ import annotations

import json
import logging

import pytest

from masabs import benchmarks as b
from masabs.checker import check, explore
from masabs.errors import SpecificationError
from masabs.expr import parse_query


@pytest.fixture(autouse=True)
def _quiet(caplog):
    caplog.set_level(logging.ERROR, logger="masabs")


def by_config(records):
    return {(r.config, tuple(r.params.values())): r for r in records}


def test_postal_grid():
    recs = by_config(b.run_postal([1, 2], 3))
    assert all(r.verdict == "holds" for r in recs.values())
    for nv in (1, 2):
        c = recs[("concrete", (nv, 3))].states
        a1, a2, a3 = (recs[(k, (nv, 3))].states for k in ("A1", "A2", "A3"))
        assert a3 <= min(a1, a2) <= c
    assert recs[("concrete", (2, 3))].published_states == 529


def test_postal_abstractions_keep_the_property():
    m = b.build_postal(2)
    q = parse_query(b.PHI_BSTUFF, dict(m.constants))
    for name, a in b.postal_abstractions(m).items():
        assert check(a, q).holds, name


def test_postal_candidates_scale():
    assert explore(b.build_postal(1, nc=1)).states < explore(b.build_postal(1, nc=3)).states


def test_social_reduction_increases():
    recs = b.run_social([2, 3])
    pct = []
    for nag in (2, 3):
        c, a = [r for r in recs if r.params["NAg"] == nag]
        assert c.verdict == a.verdict == "holds"
        pct.append(b.reduction(c.states, a.states))
    assert pct[0] >= 50 and pct[1] > pct[0]


def test_social_needs_two_agents():
    with pytest.raises(SpecificationError):
        b.build_social_ai(1)


def test_reports():
    recs = b.run_social([2])
    table = b.format_table(recs)
    assert "Reduct" in table and "published" in table
    docs = [json.loads(line) for line in b.json_lines(recs).splitlines()]
    assert {d["config"] for d in docs} == {"concrete", "abstract"}
    assert b.reduction(200, 50) == pytest.approx(75.0)


def test_capped_points_are_marked():
    recs = b.run_postal([2], 3, cap=50)
    assert any(r.capped and r.verdict == "inconclusive" for r in recs)
    assert ">=" in b.format_table(recs)
