"""May- and must-abstractions that remove variables from a MAS template.

An upper domain gives the may-abstraction: every edge leaving an in-scope
location is split into one variant per domain vector, with the removed
variables replaced by the vector's values. A lower domain gives the
must-abstraction: a single edge whose guard requires the original guard
under *every* vector of the source domain, kept only when all vectors
agree on the retained effect. That is what makes each must-transition have
a concrete witness.

With a partial scope the removed variables stay declared and hold their
initial value as a placeholder while an agent is inside the scope.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

from .domain import LocalDomain
from .errors import AbstractionError, EvaluationError, ResolutionError
from .expr import (FALSE, INT_MAX, INT_MIN, Binary, Const, Expr, Var,
                   conjunction, disjunction, evaluate, expand_quantifiers,
                   free_vars, is_boolean, map_expr, simplify, substitute)
from .model import GLOBAL, PRIVATE, AgentGraph, Edge, MasTemplate, VarDecl, expand_selects
from .unfold import COMBINED_NAME, unfold

log = logging.getLogger(__name__)

_RANGE_ENUM_CAP = 1 << 16


@dataclass(frozen=True)
class Merge:
    """A fresh variable summarising the removed ones."""

    name: str
    initial: int
    expr: Expr


@dataclass(frozen=True)
class MappingFunction:
    target: str
    remove: tuple[str, ...]
    scope: tuple[str, ...] = ()
    merge: Optional[Merge] = None

    def __post_init__(self):
        object.__setattr__(self, "remove", tuple(self.remove))
        object.__setattr__(self, "scope", tuple(self.scope))


@dataclass(frozen=True)
class BoundaryEdge:
    """An edge crossing the scope border.

    ``direction`` is ``"enter"`` (outside to inside) or ``"exit"``. For
    exits under an upper domain ``reintroduce`` lists the candidate vectors
    of the removed variables at the target; under a lower domain the edge
    needs explicit confirmation.
    """

    index: int
    edge: Edge
    direction: str
    reintroduce: tuple[tuple[int, ...], ...] = ()
    needs_confirmation: bool = False


# ---------------------------------------------------------------------------
# Target resolution
# ---------------------------------------------------------------------------

def _resolve(model: MasTemplate, m: MappingFunction) -> tuple[MasTemplate, AgentGraph, dict[str, VarDecl]]:
    if m.target in ("ext", COMBINED_NAME):
        model = unfold(model)
        graph = model.templates[0][0]
        removable = {v.name: v for v in model.globals}
    else:
        if "(" in m.target:
            raise AbstractionError(
                f"target {m.target!r}: single instances cannot be abstracted separately; "
                "use the template name or 'ext'")
        try:
            graph = model.template(m.target)
        except ResolutionError as exc:
            raise AbstractionError(str(exc)) from None
        removable = {v.name: v for v in graph.privates}
    if not m.remove:
        raise AbstractionError("mapping function removes no variables")
    if len(set(m.remove)) != len(m.remove):
        raise AbstractionError(f"duplicate variables in {list(m.remove)}")
    for v in m.remove:
        if v not in removable:
            if model.global_var(v) is not None:
                raise AbstractionError(
                    f"{v!r} is a global variable; template targets may only remove their "
                    "own private variables (abstract the combined graph 'ext' instead)")
            raise AbstractionError(f"variable {v!r} is not declared in target {m.target!r}")
    for loc in m.scope:
        if loc not in graph.locations:
            raise AbstractionError(f"scope location {loc!r} is not a location of {graph.name!r}")
    return model, graph, {v: removable[v] for v in m.remove}


def _scope(graph: AgentGraph, m: MappingFunction) -> set[str]:
    return set(m.scope) if m.scope else set(graph.locations)


def _project(d: LocalDomain, m: MappingFunction, graph: AgentGraph, model: MasTemplate) -> LocalDomain:
    """Domain over exactly ``m.remove``, keyed by the target's locations."""
    if d.target == m.target or (d.target == "ext" and m.target == COMBINED_NAME) or \
            (m.target == "ext" and d.target == COMBINED_NAME):
        missing = [v for v in m.remove if v not in d.variables]
        if missing:
            raise AbstractionError(f"domain does not cover removed variable(s) {missing}")
        return d.project(m.remove)
    if d.target == "ext" and graph.name == m.target:
        return _from_combined(d, m, model)
    raise AbstractionError(f"domain was computed for {d.target!r}, mapping targets {m.target!r}")


def _from_combined(d: LocalDomain, m: MappingFunction, model: MasTemplate) -> LocalDomain:
    # Combined locations name every instance's location; merge the instances
    # of the target template (union), renaming Name(i).x back to x.
    comb = unfold(model).templates[0][0]
    n = model.count(m.target)
    entries: dict[str, set] = {loc: set() for loc in model.template(m.target).locations}
    for i in range(1, n + 1):
        inst = f"{m.target}({i})"
        names = [f"{inst}.{v}" for v in m.remove]
        missing = [x for x in names if x not in d.variables]
        if missing:
            raise AbstractionError(f"domain does not cover removed variable(s) {missing}")
        idx = [d.variables.index(x) for x in names]
        k = comb.components.index(inst)
        for cloc, vecs in d.entries.items():
            loc = cloc.split(".")[k]
            entries[loc].update(tuple(v[j] for j in idx) for v in vecs)
    return LocalDomain(tuple(m.remove), d.tag, m.target, {k: frozenset(v) for k, v in entries.items()})


# ---------------------------------------------------------------------------
# Boundary edges
# ---------------------------------------------------------------------------

def check_scope_boundary(model: MasTemplate, m: MappingFunction,
                         d: Optional[LocalDomain] = None) -> list[BoundaryEdge]:
    """Edges of the target that cross the scope border (empty for full scope)."""
    model, graph, _ = _resolve(model, m)
    scope = _scope(graph, m)
    if scope == set(graph.locations):
        return []
    dom = _project(d, m, graph, model) if d is not None else None
    out = []
    for k, e in enumerate(graph.edges):
        src, tgt = e.source in scope, e.target in scope
        if src == tgt:
            continue
        if not src:
            out.append(BoundaryEdge(k, e, "enter"))
        elif dom is None or dom.tag == "upper":
            vecs = tuple(dom.vectors(e.target)) if dom is not None else ()
            out.append(BoundaryEdge(k, e, "exit", reintroduce=vecs))
        else:
            out.append(BoundaryEdge(k, e, "exit", needs_confirmation=True))
    return out


# ---------------------------------------------------------------------------
# Edge rewriting
# ---------------------------------------------------------------------------

def _defuse(e: Expr) -> Expr:
    """Replace subterms that can only fail (a literal zero divisor) by 0.

    Such a subterm raises whenever it is evaluated, so the concrete model
    either errors or short-circuits around it; in both cases its value is
    irrelevant, and the output has to stay parseable.
    """
    def fn(node: Expr) -> Optional[Expr]:
        if isinstance(node, Binary) and node.op in ("/", "%") and node.right == Const(0):
            return Const(0)
        return None
    return simplify(map_expr(e, fn))


def _in_range(value: Expr, decl: VarDecl) -> Optional[bool]:
    if isinstance(value, Const):
        return decl.lo <= value.value <= decl.hi
    return None


@dataclass
class _Variant:
    guard: Expr
    updates: tuple[tuple[str, Expr], ...]
    final: dict[str, Expr]   # removed var -> value after the edge, in pre-state terms


class _Rewriter:
    def __init__(self, removed: dict[str, VarDecl], kind: str):
        self.removed = removed
        self.names = tuple(removed)
        self.kind = kind

    def variants(self, e: Edge, u: Sequence[int]) -> Optional[list[_Variant]]:
        """Substitute the vector ``u`` into ``e`` under sequential updates.

        ``pre`` holds written variables in terms of the pre-state, which is
        what boundary checks and the merge value need. ``cur`` holds removed
        variables in terms of the current point of the update sequence, for
        substitution into later retained updates; an entry becomes unknown
        (None) once a variable it depends on is overwritten. Returns None
        when a must-edge cannot be expressed without that lost value.
        """
        binding = {x: Const(v) for x, v in zip(self.names, u)}
        guard = _defuse(substitute(expand_quantifiers(e.guard), binding))
        if guard == FALSE:
            return []
        states = [((), dict(binding), dict(binding))]
        for name, rhs in e.updates:
            nxt = []
            for ups, pre, cur in states:
                value_pre = _defuse(substitute(rhs, pre))
                if name in self.removed and _in_range(value_pre, self.removed[name]) is False:
                    continue
                choices = self._bind_current(rhs, cur)
                if choices is None:
                    return None
                for rhs_cur in choices:
                    pre2, cur2 = dict(pre), dict(cur)
                    pre2[name] = value_pre
                    if name in self.removed:
                        cur2[name] = _defuse(rhs_cur)
                        nxt.append((ups, pre2, cur2))
                        continue
                    for x, ex in cur2.items():
                        if ex is not None and name in free_vars(ex):
                            cur2[x] = None
                    nxt.append((ups + ((name, _defuse(rhs_cur)),), pre2, cur2))
            states = nxt
        return [_Variant(guard, ups, {x: pre[x] for x in self.names}) for ups, pre, _ in states]

    def _bind_current(self, rhs: Expr, cur: dict[str, Optional[Expr]]) -> Optional[list[Expr]]:
        reads = [x for x in self.names if x in free_vars(rhs)]
        unknown = [x for x in reads if cur[x] is None]
        known = {x: cur[x] for x in reads if cur[x] is not None}
        if not unknown:
            return [substitute(rhs, known)]
        if self.kind == "lower":
            return None
        # may: any value of a lost variable over-approximates
        out = []
        ranges = [range(self.removed[x].lo, self.removed[x].hi + 1) for x in unknown]
        for combo in itertools.product(*ranges):
            b = dict(known)
            b.update({x: Const(v) for x, v in zip(unknown, combo)})
            out.append(substitute(rhs, b))
        return out


def _dedup(edges: Iterable[Edge]) -> list[Edge]:
    seen = set()
    out = []
    for e in edges:
        if e not in seen:
            seen.add(e)
            out.append(e)
    return out


def _membership(values: dict[str, Expr], vectors: Iterable[tuple[int, ...]], names) -> Expr:
    parts = []
    for w in vectors:
        parts.append(conjunction(Binary("==", values[x], Const(c)) for x, c in zip(names, w)))
    return simplify(disjunction(parts))


def _merge_decl(merge: Merge, removed: dict[str, VarDecl], kind: str) -> VarDecl:
    if is_boolean(merge.expr):
        lo, hi = 0, 1
    else:
        names = sorted(free_vars(merge.expr))
        combos = 1
        for x in names:
            combos *= removed[x].size
        if combos > _RANGE_ENUM_CAP:
            lo, hi = INT_MIN, INT_MAX
        else:
            vals = []
            for combo in itertools.product(*(range(removed[x].lo, removed[x].hi + 1) for x in names)):
                try:
                    vals.append(evaluate(merge.expr, dict(zip(names, combo))))
                except EvaluationError:
                    pass
            lo, hi = (min(vals), max(vals)) if vals else (merge.initial, merge.initial)
    lo, hi = min(lo, merge.initial), max(hi, merge.initial)
    return VarDecl(merge.name, lo, hi, merge.initial, kind)


def _check_merge(model: MasTemplate, graph: AgentGraph, m: MappingFunction,
                 removed: dict[str, VarDecl], d: LocalDomain, full: bool) -> None:
    merge = m.merge
    extra = free_vars(merge.expr) - set(removed)
    if extra:
        raise AbstractionError(
            f"merge expression may only read removed variables, found {sorted(extra)}")
    if not full:
        raise AbstractionError("a merge variable requires the full scope")
    if d.tag != "upper":
        raise AbstractionError("a merge variable is only supported for may-abstractions")
    taken = {v.name for v in model.globals} | {v.name for v in graph.privates}
    for g, _ in model.templates:
        taken |= {v.name for v in g.privates}
    if merge.name in taken and merge.name not in removed:
        raise AbstractionError(f"merge variable {merge.name!r} clashes with a declared name")
    try:
        expected = evaluate(merge.expr, {x: v.initial for x, v in removed.items()})
    except EvaluationError as exc:
        raise AbstractionError(f"merge expression fails on the initial values: {exc}") from None
    if expected != merge.initial:
        raise AbstractionError(
            f"merge initial value {merge.initial} differs from the merge expression on the "
            f"initial values ({expected})")


def abstract(model: MasTemplate, m: MappingFunction, d: LocalDomain, *,
             confirm_boundary: bool = False) -> MasTemplate:
    """The may- (upper ``d``) or must- (lower ``d``) abstraction of ``model``."""
    model, graph, removed = _resolve(model, m)
    dom = _project(d, m, graph, model)
    scope = _scope(graph, m)
    full = scope == set(graph.locations)
    for loc in sorted(scope):
        if loc not in dom.entries:
            raise AbstractionError(f"domain has no entry for in-scope location {loc!r}")
    if m.merge is not None:
        _check_merge(model, graph, m, removed, dom, full)
    rw = _Rewriter(removed, dom.tag)

    new_edges: list[Edge] = []
    for e in graph.edges:
        src_in, tgt_in = e.source in scope, e.target in scope
        if not src_in and not tgt_in:
            new_edges.append(e)
        elif not src_in:
            new_edges.extend(_entering(e, dom, removed))
        elif dom.tag == "upper":
            new_edges.extend(_may_edges(e, dom, rw, tgt_in, m.merge))
        else:
            unconfirmed: list[Edge] = []
            for edge in expand_selects(e):
                new_edges.extend(_must_edges(edge, dom, rw, tgt_in, confirm_boundary, unconfirmed))
            if unconfirmed:
                log.warning("edge %s leaves the scope under a lower domain; dropped "
                            "(confirm the boundary to reintroduce from the target domain)",
                            e.describe())
    new_edges = _dedup(new_edges)

    if full:
        privates = tuple(v for v in graph.privates if v.name not in removed)
        globals_ = tuple(v for v in model.globals if v.name not in removed)
    else:
        privates, globals_ = graph.privates, model.globals
    if m.merge is not None:
        if model.is_combined:
            globals_ = globals_ + (_merge_decl(m.merge, removed, GLOBAL),)
        else:
            privates = privates + (_merge_decl(m.merge, removed, PRIVATE),)
    new_graph = replace(graph, privates=privates, edges=tuple(new_edges))
    return replace(model, globals=globals_).with_template(new_graph)


def _entering(e: Edge, dom: LocalDomain, removed: dict[str, VarDecl]) -> list[Edge]:
    # Concrete outside the scope; the placeholder takes over inside it.
    reset = tuple((x, Const(v.initial)) for x, v in removed.items())
    if dom.tag == "upper":
        return [replace(e, updates=tuple(e.updates) + reset)]
    # must: only enter with values the lower domain vouches for
    names = tuple(removed)
    out = []
    for ev in expand_selects(e):
        pre: dict[str, Expr] = {}
        for name, rhs in ev.updates:
            pre[name] = simplify(substitute(rhs, pre))
        values = {x: pre.get(x, Var(x)) for x in names}
        member = _membership(values, dom.vectors(e.target), names)
        if e.sync is not None and free_vars(member) - set(names):
            # a handshake partner may change what the updates read before they run
            continue
        guard = _defuse(Binary("&&", ev.guard, member))
        if guard != FALSE:
            out.append(replace(ev, guard=guard, updates=tuple(ev.updates) + reset))
    return out


def _may_edges(e: Edge, dom: LocalDomain, rw: _Rewriter, tgt_in: bool,
               merge: Optional[Merge]) -> list[Edge]:
    names = rw.names
    exit_vectors = None
    if not tgt_in and e.target in dom.entries:
        exit_vectors = dom.entries[e.target]
    writes_removed = any(x in rw.removed for x, _ in e.updates)
    out = []
    for u in dom.vectors(e.source):
        for v in rw.variants(e, u):
            ups = list(v.updates)
            if not tgt_in:
                # Leaving the scope: the removed variables become concrete again.
                if exit_vectors is not None and all(isinstance(v.final[x], Const) for x in names):
                    if tuple(v.final[x].value for x in names) not in exit_vectors:
                        continue
                ups = [(x, v.final[x]) for x in names] + ups
            if merge is not None and writes_removed:
                ups = [(merge.name, _defuse(substitute(merge.expr, v.final)))] + ups
            out.append(replace(e, guard=v.guard, updates=tuple(ups)))
    return out


def _must_edges(e: Edge, dom: LocalDomain, rw: _Rewriter, tgt_in: bool,
                confirm: bool, unconfirmed: list[Edge]) -> list[Edge]:
    names = rw.names
    vectors = dom.vectors(e.source)
    if not vectors:
        return []
    guards, finals = [], []
    updates = None
    for u in vectors:
        vs = rw.variants(e, u)
        # disabled or ambiguous for some vector: the universal guard cannot hold
        if vs is None or len(vs) != 1:
            return []
        v = vs[0]
        if updates is None:
            updates = v.updates
        elif v.updates != updates:
            return []
        guards.append(v.guard)
        finals.append(v.final)
    guard = _defuse(conjunction(guards))
    if guard == FALSE:
        return []
    if tgt_in:
        target_vecs = dom.entries.get(e.target, frozenset())
        for f in finals:
            if not all(isinstance(f[x], Const) for x in names):
                return []
            if tuple(f[x].value for x in names) not in target_vecs:
                return []
        return [replace(e, guard=guard, updates=updates)]
    if all(f == finals[0] for f in finals):
        ups = tuple((x, finals[0][x]) for x in names) + updates
        return [replace(e, guard=guard, updates=ups)]
    if not confirm:
        unconfirmed.append(e)
        return []
    if e.target not in dom.entries:
        raise AbstractionError(f"domain has no entry for exit target {e.target!r}")
    return [replace(e, guard=guard, updates=tuple((x, Const(c)) for x, c in zip(names, w)) + updates)
            for w in dom.vectors(e.target)]
