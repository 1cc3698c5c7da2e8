"""Template instantiation and the combined (asynchronous product) graph."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import replace

from .expr import Binary, Const, Var, instance_name, simplify, substitute
from .model import (GLOBAL, PRIVATE, AgentGraph, Edge, MasTemplate, VarDecl,
                    expand_graph)

log = logging.getLogger(__name__)

COMBINED_NAME = "Combined"


def instantiate_one(graph: AgentGraph, index: int) -> AgentGraph:
    """Instance ``Name(index)``: ``id`` bound, privates instance-qualified."""
    inst = instance_name(graph.name, index)
    rename = {v.name: Var(f"{inst}.{v.name}") for v in graph.privates}
    binding = dict(rename)
    binding["id"] = Const(index)

    edges = []
    for e in graph.edges:
        sel = {s.name for s in e.selects}
        local = {k: v for k, v in binding.items() if k not in sel}
        edges.append(replace(
            e,
            guard=simplify(substitute(e.guard, local)),
            updates=tuple((rename[n].name if n in rename else n, simplify(substitute(x, local)))
                          for n, x in e.updates),
        ))
    privates = tuple(VarDecl(f"{inst}.{v.name}", v.lo, v.hi, v.initial, PRIVATE)
                     for v in graph.privates)
    return replace(graph, name=inst, privates=privates, edges=tuple(edges))


def instantiate(model: MasTemplate) -> list[AgentGraph]:
    agents = []
    for graph, count in model.templates:
        for i in range(1, count + 1):
            agents.append(instantiate_one(graph, i))
    return agents


def _pair_edge(send: Edge, recv: Edge, source: str, target: str) -> Edge:
    guard = simplify(Binary("&&", send.guard, recv.guard))
    return Edge(source=source, target=target, guard=guard,
                updates=send.updates + recv.updates)


def combine(agents: list[AgentGraph], globals_: tuple[VarDecl, ...] = (),
            constants: tuple = ()) -> MasTemplate:
    """Asynchronous product of ``agents`` with binary channel handshakes.

    Only combined locations structurally reachable from the initial vector
    (guards ignored) are produced. Locations are named by joining the
    component locations with dots.
    """
    agents = [expand_graph(a) for a in agents]
    n = len(agents)
    by_loc = []
    for a in agents:
        table: dict[str, tuple[list[Edge], dict[str, list[Edge]], dict[str, list[Edge]]]] = {}
        for loc in a.locations:
            table[loc] = ([], {}, {})
        for e in a.edges:
            internal, sends, recvs = table[e.source]
            if e.sync is None:
                internal.append(e)
            elif e.sync[1] == "!":
                sends.setdefault(e.sync[0], []).append(e)
            else:
                recvs.setdefault(e.sync[0], []).append(e)
        by_loc.append(table)

    senders = {}
    receivers = {}
    for i, a in enumerate(agents):
        for e in a.edges:
            if e.sync is not None:
                side = senders if e.sync[1] == "!" else receivers
                side.setdefault(e.sync[0], set()).add(i)
    for chan, idx in sorted(senders.items()):
        if not any(j != i for i in idx for j in receivers.get(chan, ())):
            log.warning("channel %r: send edges have no receiving partner; dropped", chan)
    for chan, idx in sorted(receivers.items()):
        if not any(j != i for i in idx for j in senders.get(chan, ())):
            log.warning("channel %r: receive edges have no sending partner; dropped", chan)

    def name(vec: tuple[str, ...]) -> str:
        return ".".join(vec)

    init = tuple(a.initial for a in agents)
    seen = {init: 0}
    order = [init]
    queue = deque([init])
    edges: list[Edge] = []
    while queue:
        vec = queue.popleft()
        succ: list[tuple[Edge, tuple[str, ...]]] = []
        for i in range(n):
            internal, sends, _ = by_loc[i][vec[i]]
            for e in internal:
                nxt = vec[:i] + (e.target,) + vec[i + 1:]
                succ.append((e, nxt))
            for chan, send_edges in sends.items():
                for j in range(n):
                    if j == i:
                        continue
                    recv_edges = by_loc[j][vec[j]][2].get(chan, ())
                    for s in send_edges:
                        for r in recv_edges:
                            nxt = list(vec)
                            nxt[i] = s.target
                            nxt[j] = r.target
                            succ.append((_pair_edge(s, r, "", ""), tuple(nxt)))
        for e, nxt in succ:
            if nxt not in seen:
                seen[nxt] = len(order)
                order.append(nxt)
                queue.append(nxt)
            edges.append(Edge(source=name(vec), target=name(nxt), guard=e.guard,
                              updates=e.updates))

    variables = list(globals_)
    for a in agents:
        variables.extend(VarDecl(v.name, v.lo, v.hi, v.initial, GLOBAL) for v in a.privates)
    graph = AgentGraph(
        name=COMBINED_NAME,
        locations=tuple(name(v) for v in order),
        initial=name(init),
        edges=tuple(edges),
        components=tuple(a.name for a in agents),
    )
    return MasTemplate(templates=((graph, 1),), globals=tuple(variables),
                       constants=tuple(constants))


def unfold(model: MasTemplate) -> MasTemplate:
    """Combined MAS graph of a MAS template."""
    if model.is_combined:
        return model
    return combine(instantiate(model), model.globals, model.constants)


def split_location(graph: AgentGraph, location: str) -> dict[str, str]:
    """Map component agent name to its location inside a combined location."""
    parts = location.split(".")
    if len(parts) != len(graph.components):
        raise ValueError(f"location {location!r} does not match {len(graph.components)} components")
    return dict(zip(graph.components, parts))
