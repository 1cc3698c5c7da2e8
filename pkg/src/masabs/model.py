"""MAS graphs, MAS templates and select expansion."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Optional

from .errors import ResolutionError, SpecificationError
from .expr import (INT_MAX, INT_MIN, TRUE, Const, Expr, free_vars, simplify,
                   substitute)

GLOBAL = "global"
PRIVATE = "private"


@dataclass(frozen=True)
class VarDecl:
    name: str
    lo: int
    hi: int
    initial: int
    kind: str = GLOBAL

    def __post_init__(self):
        if not (INT_MIN <= self.lo <= self.hi <= INT_MAX):
            raise SpecificationError(
                f"variable {self.name!r}: bounds [{self.lo},{self.hi}] outside 16-bit range or empty")
        if not self.lo <= self.initial <= self.hi:
            raise SpecificationError(
                f"variable {self.name!r}: initial value {self.initial} outside [{self.lo},{self.hi}]")

    @property
    def size(self) -> int:
        return self.hi - self.lo + 1


@dataclass(frozen=True)
class Select:
    name: str
    lo: int
    hi: int


@dataclass(frozen=True)
class Edge:
    source: str
    target: str
    selects: tuple[Select, ...] = ()
    guard: Expr = TRUE
    sync: Optional[tuple[str, str]] = None
    updates: tuple[tuple[str, Expr], ...] = ()
    nails: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        names = [s.name for s in self.selects]
        if len(set(names)) != len(names):
            raise SpecificationError(f"edge {self.source}->{self.target}: duplicate select names")
        if self.sync is not None and self.sync[1] not in ("!", "?"):
            raise SpecificationError(f"edge {self.source}->{self.target}: bad sync {self.sync!r}")

    def describe(self) -> str:
        return f"{self.source} -> {self.target}"

    def reads(self) -> set[str]:
        out = free_vars(self.guard)
        for _, e in self.updates:
            out |= free_vars(e)
        return out - {s.name for s in self.selects}

    def writes(self) -> set[str]:
        return {name for name, _ in self.updates}


@dataclass(frozen=True)
class AgentGraph:
    name: str
    locations: tuple[str, ...]
    initial: str
    privates: tuple[VarDecl, ...] = ()
    edges: tuple[Edge, ...] = ()
    coords: tuple[tuple[str, str, str], ...] = ()
    # Names of the agent instances whose locations form each tuple component;
    # set only on combined graphs.
    components: tuple[str, ...] = ()

    def __post_init__(self):
        if len(set(self.locations)) != len(self.locations):
            raise SpecificationError(f"template {self.name!r}: duplicate location names")
        if self.initial not in self.locations:
            raise SpecificationError(
                f"template {self.name!r}: initial location {self.initial!r} not declared")
        locs = set(self.locations)
        for k, e in enumerate(self.edges):
            for end in (e.source, e.target):
                if end not in locs:
                    raise SpecificationError(
                        f"template {self.name!r}, edge #{k} ({e.describe()}): unknown location {end!r}")
        names = [v.name for v in self.privates]
        if len(set(names)) != len(names):
            raise SpecificationError(f"template {self.name!r}: duplicate private variable")

    def edges_from(self, location: str) -> list[Edge]:
        return [e for e in self.edges if e.source == location]

    def private(self, name: str) -> Optional[VarDecl]:
        for v in self.privates:
            if v.name == name:
                return v
        return None


@dataclass(frozen=True)
class MasTemplate:
    templates: tuple[tuple[AgentGraph, int], ...] = ()
    globals: tuple[VarDecl, ...] = ()
    channels: tuple[str, ...] = ()
    constants: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        names = [v.name for v in self.globals]
        if len(set(names)) != len(names):
            raise SpecificationError("duplicate global variable")
        seen = set()
        for t, n in self.templates:
            if n < 1:
                raise SpecificationError(f"template {t.name!r}: instance count {n} < 1")
            if t.name in seen:
                raise SpecificationError(f"duplicate template {t.name!r}")
            seen.add(t.name)

    def template(self, name: str) -> AgentGraph:
        for t, _ in self.templates:
            if t.name == name:
                return t
        raise ResolutionError(f"no template named {name!r}")

    def count(self, name: str) -> int:
        for t, n in self.templates:
            if t.name == name:
                return n
        raise ResolutionError(f"no template named {name!r}")

    def global_var(self, name: str) -> Optional[VarDecl]:
        for v in self.globals:
            if v.name == name:
                return v
        return None

    def with_template(self, graph: AgentGraph) -> "MasTemplate":
        return replace(self, templates=tuple(
            (graph if t.name == graph.name else t, n) for t, n in self.templates))

    @property
    def is_combined(self) -> bool:
        return len(self.templates) == 1 and bool(self.templates[0][0].components)


def expand_selects(edge: Edge) -> list[Edge]:
    """One edge per select valuation, in lexicographic order of the values."""
    if not edge.selects:
        return [edge]
    for s in edge.selects:
        if s.lo > s.hi:
            raise SpecificationError(
                f"edge {edge.describe()}: empty select range {s.name}:[{s.lo},{s.hi}]")
    ranges = [range(s.lo, s.hi + 1) for s in edge.selects]
    out = []
    for values in itertools.product(*ranges):
        binding = {s.name: Const(v) for s, v in zip(edge.selects, values)}
        out.append(Edge(
            source=edge.source,
            target=edge.target,
            guard=simplify(substitute(edge.guard, binding)),
            sync=edge.sync,
            updates=tuple((name, simplify(substitute(e, binding))) for name, e in edge.updates),
            nails=edge.nails,
        ))
    return out


def expand_graph(graph: AgentGraph) -> AgentGraph:
    edges = tuple(x for e in graph.edges for x in expand_selects(e))
    return replace(graph, edges=edges)


def validate_names(model: MasTemplate) -> None:
    """Check every guard/update reference and sync channel resolves."""
    globals_ = {v.name for v in model.globals}
    channels = set(model.channels)
    for t, _ in model.templates:
        visible = globals_ | {v.name for v in t.privates} | {"id"}
        for k, e in enumerate(t.edges):
            where = f"template {t.name!r}, edge #{k} ({e.describe()})"
            unknown = e.reads() - visible
            if unknown:
                raise ResolutionError(f"{where}: unknown variable(s) {sorted(unknown)}")
            for name, _ in e.updates:
                if name not in visible or name == "id":
                    raise ResolutionError(f"{where}: cannot assign {name!r}")
            if e.sync is not None and e.sync[0] not in channels:
                raise ResolutionError(f"{where}: unknown channel {e.sync[0]!r}")
            for s in e.selects:
                if s.name in visible:
                    raise SpecificationError(f"{where}: select {s.name!r} shadows a variable")


def all_variables(model: MasTemplate, graph: AgentGraph) -> dict[str, VarDecl]:
    out = {v.name: v for v in model.globals}
    out.update({v.name: v for v in graph.privates})
    return out
