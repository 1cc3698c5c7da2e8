"""Upper and lower approximations of local domains.

Both directions run the same worklist fixpoint over the projection of the
state onto the chosen variables. Variables outside the projection are
unknown: a guard keeps a vector if it is *possibly* true (upper) or
*necessarily* true (lower) over every completion of the unknown variables
that the edge reads.
"""

from __future__ import annotations

import itertools
import logging
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .domain import LocalDomain
from .errors import (AbstractionError, DomainTooLarge, EvaluationError,
                     ResolutionError)
from .expr import evaluate
from .model import AgentGraph, Edge, MasTemplate, VarDecl, expand_graph
from .unfold import unfold

log = logging.getLogger(__name__)

COMPLETION_CAP = 4096
VECTOR_CAP = 10_000_000


@dataclass
class ApproxTarget:
    """The graph a domain is computed on together with its variable table."""

    name: str
    graph: AgentGraph
    variables: dict[str, VarDecl]


def approx_target(model: MasTemplate, target: str) -> ApproxTarget:
    if target == "ext":
        comb = unfold(model)
        graph = expand_graph(comb.templates[0][0])
        return ApproxTarget("ext", graph, {v.name: v for v in comb.globals})
    try:
        graph = expand_graph(model.template(target))
    except ResolutionError as exc:
        raise AbstractionError(str(exc)) from None
    table = {v.name: v for v in model.globals}
    table.update({v.name: v for v in graph.privates})
    count = model.count(target)
    table["id"] = VarDecl("id", 1, count, 1)
    return ApproxTarget(target, graph, table)


def _check_request(model: MasTemplate, tgt: ApproxTarget, variables: Sequence[str]) -> None:
    if not variables:
        raise AbstractionError("approximation needs at least one variable")
    if len(set(variables)) != len(variables):
        raise AbstractionError(f"duplicate variables in {list(variables)}")
    for v in variables:
        if v not in tgt.variables or v == "id":
            raise AbstractionError(f"variable {v!r} does not resolve in target {tgt.name!r}")
    if tgt.name == "ext":
        return
    # On a template target, a global in the projection must not be written by
    # anybody but the (single) target instance.
    privates = {v.name for v in tgt.graph.privates}
    for v in variables:
        if v in privates:
            continue
        for graph, count in model.templates:
            writes = any(v in e.writes() for e in graph.edges)
            if writes and (graph.name != tgt.name or count > 1):
                raise AbstractionError(
                    f"global {v!r} is written outside a single {tgt.name!r} instance; "
                    "approximate it on the combined graph ('ext') instead")


class _Transfer:
    def __init__(self, tgt: ApproxTarget, variables: Sequence[str], kind: str,
                 completion_cap: int, sync_available: Iterable[str]):
        self.tgt = tgt
        self.V = tuple(variables)
        self.kind = kind
        self.cap = completion_cap
        self.sync_available = set(sync_available)

    def edge_enabled(self, e: Edge) -> bool:
        if e.sync is None:
            return True
        if self.kind == "upper":
            return True
        return e.sync[0] in self.sync_available

    def apply(self, e: Edge, u: tuple[int, ...]) -> set[tuple[int, ...]]:
        known = dict(zip(self.V, u))
        unknown = sorted(e.reads() - set(self.V))
        sizes = 1
        for name in unknown:
            sizes *= self.tgt.variables[name].size
        if sizes > self.cap:
            return self._apply_over_cap(e, known) if self.kind == "upper" else set()
        ranges = [range(self.tgt.variables[n].lo, self.tgt.variables[n].hi + 1) for n in unknown]
        results: set[tuple[int, ...]] = set()
        for combo in itertools.product(*ranges):
            env = dict(known)
            env.update(zip(unknown, combo))
            r = self._fire(e, env)
            if r is None:
                if self.kind == "lower":
                    return set()
                continue
            results.add(r)
            if self.kind == "lower" and len(results) > 1:
                return set()
        return results

    def _fire(self, e: Edge, env: dict[str, int]) -> Optional[tuple[int, ...]]:
        try:
            if not evaluate(e.guard, env):
                return None
            for name, expr in e.updates:
                value = evaluate(expr, env)
                decl = self.tgt.variables[name]
                if not decl.lo <= value <= decl.hi:
                    return None
                env[name] = value
        except EvaluationError:
            return None
        return tuple(env[v] for v in self.V)

    def _apply_over_cap(self, e: Edge, known: dict[str, int]) -> set[tuple[int, ...]]:
        env = dict(known)
        try:
            if evaluate(e.guard, env) == 0:
                return set()
        except ResolutionError:
            pass
        except EvaluationError:
            return set()
        for name, expr in e.updates:
            try:
                value = evaluate(expr, env)
            except ResolutionError:
                env.pop(name, None)
                continue
            except EvaluationError:
                env.pop(name, None)
                continue
            decl = self.tgt.variables[name]
            if not decl.lo <= value <= decl.hi:
                return set()
            env[name] = value
        options = []
        for v in self.V:
            if v in env:
                options.append((env[v],))
            else:
                d = self.tgt.variables[v]
                options.append(tuple(range(d.lo, d.hi + 1)))
        return set(itertools.product(*options))


@dataclass
class ApproxStats:
    iterations: int = 0
    vectors: int = 0


def approximate(model: MasTemplate, variables: Sequence[str], target: str = "ext",
                kind: str = "upper", *, sync_available: Iterable[str] = (),
                completion_cap: int = COMPLETION_CAP, vector_cap: int = VECTOR_CAP,
                stats: Optional[ApproxStats] = None) -> LocalDomain:
    """Worklist fixpoint of the projected collecting semantics."""
    if kind not in ("upper", "lower"):
        raise AbstractionError(f"approximation type must be 'upper' or 'lower', got {kind!r}")
    tgt = approx_target(model, target)
    _check_request(model, tgt, variables)
    transfer = _Transfer(tgt, variables, kind, completion_cap, sync_available)
    graph = tgt.graph
    out_edges: dict[str, list[Edge]] = {loc: [] for loc in graph.locations}
    for e in graph.edges:
        if transfer.edge_enabled(e):
            out_edges[e.source].append(e)

    domain: dict[str, set[tuple[int, ...]]] = {loc: set() for loc in graph.locations}
    pending: dict[str, set[tuple[int, ...]]] = {loc: set() for loc in graph.locations}
    u0 = tuple(tgt.variables[v].initial for v in variables)
    domain[graph.initial].add(u0)
    pending[graph.initial].add(u0)
    queue = deque([graph.initial])
    queued = {graph.initial}
    total = 1
    st = stats if stats is not None else ApproxStats()
    while queue:
        loc = queue.popleft()
        queued.discard(loc)
        delta = pending[loc]
        pending[loc] = set()
        st.iterations += 1
        for e in out_edges[loc]:
            for u in sorted(delta):
                for r in transfer.apply(e, u):
                    if r in domain[e.target]:
                        continue
                    domain[e.target].add(r)
                    pending[e.target].add(r)
                    total += 1
                    if total > vector_cap:
                        raise DomainTooLarge(
                            f"domain exceeds {vector_cap} vectors at location {e.target!r}")
                    if e.target not in queued:
                        queued.add(e.target)
                        queue.append(e.target)
    st.vectors = total
    log.debug("%s domain of %s over %s: %d vectors after %d iterations",
              kind, target, list(variables), total, st.iterations)
    return LocalDomain(tuple(variables), kind, target,
                       {loc: frozenset(v) for loc, v in domain.items()})


def approx_upper(model: MasTemplate, variables: Sequence[str], target: str = "ext",
                 **kw) -> LocalDomain:
    return approximate(model, variables, target, "upper", **kw)


def approx_lower(model: MasTemplate, variables: Sequence[str], target: str = "ext",
                 **kw) -> LocalDomain:
    return approximate(model, variables, target, "lower", **kw)
