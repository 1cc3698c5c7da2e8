"""Local domains and their JSON file format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping

from .errors import FormatError

TAGS = ("upper", "lower")


@dataclass(frozen=True)
class LocalDomain:
    """Per-location sets of value vectors over ``variables``.

    ``tag`` says whether the sets over-approximate (``upper``) or
    under-approximate (``lower``) the reachable values; ``target`` is a
    template name or ``"ext"`` for the combined graph.
    """

    variables: tuple[str, ...]
    tag: str
    target: str
    entries: Mapping[str, frozenset] = field(default_factory=dict)

    def __post_init__(self):
        if self.tag not in TAGS:
            raise FormatError(f"domain tag must be 'upper' or 'lower', got {self.tag!r}")
        n = len(self.variables)
        for loc, vectors in self.entries.items():
            for vec in vectors:
                if len(vec) != n:
                    raise FormatError(
                        f"location {loc!r}: vector {list(vec)} has length {len(vec)}, expected {n}")

    def __getitem__(self, location: str) -> frozenset:
        return self.entries[location]

    def vectors(self, location: str) -> list[tuple[int, ...]]:
        return sorted(self.entries.get(location, ()))

    def project(self, names) -> "LocalDomain":
        """Restrict every vector to the components named in ``names``."""
        idx = []
        for n in names:
            if n not in self.variables:
                raise FormatError(f"variable {n!r} not in domain {list(self.variables)}")
            idx.append(self.variables.index(n))
        entries = {loc: frozenset(tuple(v[i] for i in idx) for v in vecs)
                   for loc, vecs in self.entries.items()}
        return LocalDomain(tuple(names), self.tag, self.target, entries)

    def total(self) -> int:
        return sum(len(v) for v in self.entries.values())

    def __eq__(self, other):
        if not isinstance(other, LocalDomain):
            return NotImplemented
        return (self.variables, self.tag, self.target, dict(self.entries)) == \
            (other.variables, other.tag, other.target, dict(other.entries))

    def __hash__(self):
        return hash((self.variables, self.tag, self.target))


def write_domain(d: LocalDomain) -> bytes:
    """JSON with sorted, duplicate-free vectors per location."""
    doc = {
        "variables": list(d.variables),
        "tag": d.tag,
        "target": d.target,
        "entries": {loc: [list(v) for v in sorted(d.entries[loc])] for loc in sorted(d.entries)},
    }
    return (json.dumps(doc, indent=2) + "\n").encode("utf-8")


def read_domain(data: bytes | str) -> LocalDomain:
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"domain file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise FormatError("domain file must hold a JSON object")
    for key in ("variables", "tag", "target", "entries"):
        if key not in doc:
            raise FormatError(f"domain file lacks key {key!r}")
    variables = doc["variables"]
    if not isinstance(variables, list) or not all(isinstance(v, str) for v in variables):
        raise FormatError("'variables' must be a list of names")
    if not isinstance(doc["entries"], dict):
        raise FormatError("'entries' must map location ids to vector arrays")
    entries = {}
    for loc, vecs in doc["entries"].items():
        if not isinstance(vecs, list):
            raise FormatError(f"location {loc!r}: expected an array of vectors")
        out = set()
        for v in vecs:
            if not isinstance(v, list) or not all(isinstance(x, int) and not isinstance(x, bool)
                                                  for x in v):
                raise FormatError(f"location {loc!r}: vector {v!r} is not an integer array")
            if len(v) != len(variables):
                raise FormatError(
                    f"location {loc!r}: vector {v} has length {len(v)}, expected {len(variables)}")
            out.add(tuple(v))
        entries[loc] = frozenset(out)
    return LocalDomain(tuple(variables), doc["tag"], str(doc["target"]), entries)
