from __future__ import annotations

import json

import pytest
from hypothesis import given, settings, strategies as st

from masabs.domain import LocalDomain, read_domain, write_domain
from masabs.errors import FormatError


def test_file_layout_is_sorted_and_deduplicated():
    d = LocalDomain(("x", "y"), "upper", "Voter",
                    {"b": frozenset({(2, 1), (0, 1)}), "a": frozenset()})
    doc = json.loads(write_domain(d))
    assert doc == {"variables": ["x", "y"], "tag": "upper", "target": "Voter",
                   "entries": {"a": [], "b": [[0, 1], [2, 1]]}}
    assert list(doc["entries"]) == ["a", "b"]


def test_duplicates_in_input_collapse():
    text = '{"variables": ["x"], "tag": "lower", "target": "ext", "entries": {"l": [[1], [1]]}}'
    assert read_domain(text)["l"] == frozenset({(1,)})


def test_projection():
    d = LocalDomain(("x", "y"), "upper", "T", {"l": frozenset({(1, 2), (1, 3)})})
    assert d.project(["x"])["l"] == frozenset({(1,)})
    with pytest.raises(FormatError):
        d.project(["z"])


@pytest.mark.parametrize("text", [
    "not json",
    "[]",
    '{"variables": ["x"], "tag": "upper", "target": "T"}',
    '{"variables": "x", "tag": "upper", "target": "T", "entries": {}}',
    '{"variables": ["x"], "tag": "maybe", "target": "T", "entries": {}}',
    '{"variables": ["x"], "tag": "upper", "target": "T", "entries": {"l": [[1, 2]]}}',
    '{"variables": ["x"], "tag": "upper", "target": "T", "entries": {"l": [["1"]]}}',
    '{"variables": ["x"], "tag": "upper", "target": "T", "entries": {"l": [[true]]}}',
    '{"variables": ["x"], "tag": "upper", "target": "T", "entries": {"l": 3}}',
])
def test_malformed_files(text):
    with pytest.raises(FormatError):
        read_domain(text)


vectors = st.lists(st.integers(-5, 5), min_size=2, max_size=2).map(tuple)
domains = st.builds(
    lambda tag, entries: LocalDomain(("a", "b"), tag, "ext",
                                     {k: frozenset(v) for k, v in entries.items()}),
    st.sampled_from(["upper", "lower"]),
    st.dictionaries(st.sampled_from(["l0", "l1", "l0.l1"]), st.sets(vectors, max_size=5)),
)


@settings(max_examples=100, deadline=None)
@given(domains)
def test_roundtrip(d):
    data = write_domain(d)
    assert read_domain(data) == d
    assert write_domain(read_domain(data)) == data
