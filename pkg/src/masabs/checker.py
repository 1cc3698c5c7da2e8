"""Explicit-state global model exploration and invariant checking.

States are packed into 64-bit words with a mixed-radix encoding; the
visited set is a sorted ``int64`` array and the search proceeds one BFS
layer at a time with all edge semantics evaluated as vectorised numpy
expressions over the whole frontier.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (EvaluationError, ResolutionError, SpecificationError,
                     UnsupportedFeature)
from .expr import (INT_MAX, INT_MIN, Binary, Const, Expr, LocIs, Member, Query,
                   Quant, Unary, Var, expand_quantifiers, resolve_members,
                   simplify, substitute, to_text, walk)
from .model import Edge, MasTemplate, VarDecl, expand_graph
from .unfold import instantiate

CHUNK = 1 << 16
_WORD_LIMIT = 1 << 62

Compiled = Callable[[np.ndarray, Optional[np.ndarray]], object]


@dataclass
class Process:
    name: str
    locations: list[str]
    initial: int
    components: tuple[str, ...] = ()


@dataclass
class Transition:
    """One compiled firing rule: a single edge or a send/receive pair."""

    label: str
    procs: tuple[int, ...]
    sources: tuple[int, ...]
    targets: tuple[int, ...]
    edges: tuple[Edge, ...]
    guard: Compiled = None
    guard_const: Optional[int] = None
    updates: list[tuple[int, Compiled, int, int]] = field(default_factory=list)
    index: int = -1


class _Layout:
    """Column layout of a decoded state: process locations, then variables."""

    def __init__(self, procs: list[Process], variables: list[VarDecl]):
        self.procs = procs
        self.variables = variables
        self.nproc = len(procs)
        self.slot = {v.name: self.nproc + k for k, v in enumerate(variables)}
        self.proc_index = {p.name: k for k, p in enumerate(procs)}

    def location_test(self, agent: str, location: str) -> tuple[int, list[int]]:
        if agent in self.proc_index:
            p = self.proc_index[agent]
            proc = self.procs[p]
            if location not in proc.locations:
                raise ResolutionError(f"agent {agent!r} has no location {location!r}")
            return p, [proc.locations.index(location)]
        for p, proc in enumerate(self.procs):
            if agent in proc.components:
                k = proc.components.index(agent)
                hits = [i for i, name in enumerate(proc.locations)
                        if name.split(".")[k] == location]
                return p, hits
        raise ResolutionError(f"unknown agent {agent!r} in location predicate {agent}.{location}")


def _overflow(res, active, ctx: str):
    if isinstance(res, np.ndarray):
        bad = (res < INT_MIN) | (res > INT_MAX)
        if active is not None:
            bad &= active
        if bad.any():
            raise EvaluationError(f"16-bit overflow evaluating {ctx}")
    elif not INT_MIN <= res <= INT_MAX:
        raise EvaluationError(f"16-bit overflow evaluating {ctx}")
    return res


def _risky(e: Expr) -> bool:
    if isinstance(e, Binary):
        return e.op in ("/", "%", "+", "-", "*") or _risky(e.left) or _risky(e.right)
    if isinstance(e, Unary):
        return e.op == "-" or _risky(e.arg)
    return False


def _variables_only(e: Expr, where: str) -> None:
    if any(isinstance(node, LocIs) for node in walk(e)):
        raise UnsupportedFeature(f"{where}: location predicates are only allowed in queries")


def compile_expr(e: Expr, layout: _Layout, ctx: str) -> Compiled:
    """Compile ``e`` to ``f(M, active)`` evaluated row-wise over matrix ``M``.

    ``active`` (bool array or None) marks the rows whose evaluation is
    semantically required; errors on inactive rows are ignored, which gives
    ``&&``/``||`` their short-circuit meaning.
    """
    e = simplify(expand_quantifiers(e))
    e = resolve_members(e, layout.slot)
    return _compile(e, layout, ctx)


def _compile(e: Expr, layout: _Layout, ctx: str) -> Compiled:
    if isinstance(e, Const):
        v = e.value
        return lambda M, act: v
    if isinstance(e, Var):
        if e.name not in layout.slot:
            raise ResolutionError(f"unknown variable {e.name!r} in {ctx}")
        s = layout.slot[e.name]
        return lambda M, act: M[:, s]
    if isinstance(e, LocIs):
        p, hits = layout.location_test(e.agent, e.location)
        if len(hits) == 1:
            h = hits[0]
            return lambda M, act: (M[:, p] == h).astype(np.int64)
        arr = np.array(hits, dtype=np.int64)
        return lambda M, act: np.isin(M[:, p], arr).astype(np.int64)
    if isinstance(e, Member):
        raise ResolutionError(f"cannot resolve {to_text(e)!r} in {ctx}")
    if isinstance(e, Quant):
        return _compile(expand_quantifiers(e), layout, ctx)
    if isinstance(e, Unary):
        a = _compile(e.arg, layout, ctx)
        if e.op == "!":
            return lambda M, act: np.asarray(a(M, act) == 0).astype(np.int64)
        return lambda M, act: _overflow(-np.asarray(a(M, act), dtype=np.int64), act, ctx)
    op = e.op
    left = _compile(e.left, layout, ctx)
    right = _compile(e.right, layout, ctx)
    if op in ("&&", "||"):
        guarded = _risky(e.right)
        want = op == "&&"

        def logic(M, act):
            lv = np.asarray(left(M, act)) != 0
            if guarded:
                sel = lv if want else ~lv
                sub = np.broadcast_to(sel, (M.shape[0],)) if sel.ndim == 0 else sel
                act2 = sub if act is None else (act & sub)
                rv = np.asarray(right(M, act2)) != 0
            else:
                rv = np.asarray(right(M, act)) != 0
            res = (lv & rv) if want else (lv | rv)
            return res.astype(np.int64)
        return logic
    if op in ("+", "-", "*"):
        fn = {"+": np.add, "-": np.subtract, "*": np.multiply}[op]
        return lambda M, act: _overflow(
            fn(np.asarray(left(M, act), dtype=np.int64), right(M, act)), act, ctx)
    if op in ("/", "%"):
        is_div = op == "/"

        def divide(M, act):
            a = np.asarray(left(M, act), dtype=np.int64)
            b = np.asarray(right(M, act), dtype=np.int64)
            zero = b == 0
            if zero.any():
                hit = zero if act is None else (zero & act)
                if np.any(hit):
                    raise EvaluationError(f"division by zero evaluating {ctx}")
                b = np.where(zero, 1, b)
            q = np.abs(a) // np.abs(b)
            q = np.where((a >= 0) == (b >= 0), q, -q)
            res = q if is_div else a - b * q
            return _overflow(res, act, ctx)
        return divide
    cmp = {"<": np.less, "<=": np.less_equal, ">": np.greater, ">=": np.greater_equal,
           "==": np.equal, "!=": np.not_equal}[op]
    return lambda M, act: np.asarray(cmp(left(M, act), right(M, act))).astype(np.int64)


@dataclass
class ExploreStats:
    states: int = 0
    transitions: int = 0
    peak_frontier: int = 0
    depth: int = 0
    time_ms: float = 0.0
    capped: bool = False
    bytes_per_state: float = 0.0

    def as_dict(self) -> dict:
        return {"states": self.states, "transitions": self.transitions,
                "peak_frontier": self.peak_frontier, "depth": self.depth,
                "time_ms": round(self.time_ms, 3), "capped": self.capped}


@dataclass
class CheckResult:
    verdict: str  # "holds" | "fails" | "inconclusive"
    query: Query
    stats: ExploreStats
    trace: Optional[list[dict]] = None

    @property
    def holds(self) -> bool:
        return self.verdict == "holds"


class GlobalModel:
    """Compiled global-model semantics of a MAS template or combined graph."""

    def __init__(self, model: MasTemplate):
        self.model = model
        if model.is_combined:
            graph = expand_graph(model.templates[0][0])
            agents = [graph]
        else:
            agents = [expand_graph(a) for a in instantiate(model)]
        self.agents = agents
        procs = [Process(a.name, list(a.locations), list(a.locations).index(a.initial),
                         a.components) for a in agents]
        variables = list(model.globals)
        for a in agents:
            variables.extend(a.privates)
        self.layout = _Layout(procs, variables)
        self.procs = procs
        self.variables = variables
        self.ncols = len(procs) + len(variables)
        self.radix = np.array([max(1, len(p.locations)) for p in procs]
                              + [v.size for v in variables], dtype=np.int64)
        self.offset = np.array([0] * len(procs) + [v.lo for v in variables], dtype=np.int64)
        self._plan_words()
        self.transitions = self._build_transitions()
        self._group()

    # -- encoding ------------------------------------------------------------
    def _plan_words(self) -> None:
        words: list[list[int]] = [[]]
        prod = 1
        for c, r in enumerate(self.radix.tolist()):
            if prod * r >= _WORD_LIMIT and words[-1]:
                words.append([])
                prod = 1
            words[-1].append(c)
            prod *= r
        self.words = words
        self.mult = np.zeros(self.ncols, dtype=np.int64)
        for cols in words:
            m = 1
            for c in reversed(cols):
                self.mult[c] = m
                m *= int(self.radix[c])

    @property
    def nwords(self) -> int:
        return len(self.words)

    def encode(self, M: np.ndarray) -> np.ndarray:
        Z = M - self.offset
        if self.nwords == 1:
            return Z @ self.mult if self.ncols else np.zeros(len(M), dtype=np.int64)
        W = np.empty((len(M), self.nwords), dtype=np.int64)
        for w, cols in enumerate(self.words):
            W[:, w] = Z[:, cols] @ self.mult[cols]
        return np.ascontiguousarray(W).view(np.dtype((np.void, 8 * self.nwords))).ravel()

    def decode(self, keys: np.ndarray) -> np.ndarray:
        n = len(keys)
        M = np.empty((n, self.ncols), dtype=np.int64)
        if self.nwords == 1:
            W = keys.reshape(n, 1)
        else:
            W = np.ascontiguousarray(keys).view(np.int64).reshape(n, self.nwords)
        for w, cols in enumerate(self.words):
            word = W[:, w]
            for c in cols:
                M[:, c] = (word // self.mult[c]) % self.radix[c]
        return M + self.offset

    def initial_matrix(self) -> np.ndarray:
        row = [p.initial for p in self.procs] + [v.initial for v in self.variables]
        return np.array([row], dtype=np.int64).reshape(1, self.ncols)

    def state_dict(self, row: Sequence[int]) -> dict:
        locs = {p.name: p.locations[int(row[k])] for k, p in enumerate(self.procs)}
        vals = {v.name: int(row[len(self.procs) + k]) for k, v in enumerate(self.variables)}
        return {"locations": locs, "values": vals}

    # -- transitions -----------------------------------------------------------
    def _build_transitions(self) -> list[Transition]:
        out: list[Transition] = []
        index = [{loc: i for i, loc in enumerate(p.locations)} for p in self.procs]
        sends: dict[str, list[tuple[int, Edge]]] = {}
        recvs: dict[str, list[tuple[int, Edge]]] = {}
        for p, agent in enumerate(self.agents):
            for e in agent.edges:
                if e.sync is None:
                    label = f"{agent.name}: {e.source} -> {e.target}"
                    out.append(self._compile_transition(
                        label, (p,), (index[p][e.source],), (index[p][e.target],), (e,)))
                elif e.sync[1] == "!":
                    sends.setdefault(e.sync[0], []).append((p, e))
                else:
                    recvs.setdefault(e.sync[0], []).append((p, e))
        for chan in sorted(sends):
            for p, s in sends[chan]:
                for q, r in recvs.get(chan, ()):
                    if p == q:
                        continue
                    label = (f"{self.agents[p].name}: {s.source} -> {s.target} {chan}! / "
                             f"{self.agents[q].name}: {r.source} -> {r.target} {chan}?")
                    out.append(self._compile_transition(
                        label, (p, q), (index[p][s.source], index[q][r.source]),
                        (index[p][s.target], index[q][r.target]), (s, r)))
        for k, t in enumerate(out):
            t.index = k
        return out

    def _compile_transition(self, label, procs, sources, targets, edges) -> Transition:
        t = Transition(label, procs, sources, targets, edges)
        guard = simplify(Binary("&&", edges[0].guard, edges[1].guard)) if len(edges) == 2 \
            else edges[0].guard
        guard = simplify(resolve_members(guard, self.layout.slot))
        _variables_only(guard, f"guard of {label}")
        if isinstance(guard, Const):
            t.guard_const = int(guard.value != 0)
        else:
            t.guard = compile_expr(guard, self.layout, f"guard of {label}")
        for e in edges:
            for name, value in e.updates:
                if name not in self.layout.slot:
                    raise ResolutionError(f"{label}: assignment to unknown variable {name!r}")
                slot = self.layout.slot[name]
                v = self.variables[slot - self.layout.nproc]
                _variables_only(resolve_members(value, self.layout.slot),
                                f"update {name} of {label}")
                fn = compile_expr(value, self.layout, f"update {name} of {label}")
                t.updates.append((slot, fn, v.lo, v.hi))
        return t

    def _group(self) -> None:
        groups: dict[tuple, list[Transition]] = {}
        for t in self.transitions:
            key = tuple(zip(t.procs, t.sources))
            groups.setdefault(key, []).append(t)
        self.groups = list(groups.items())

    # -- successor computation -----------------------------------------------
    def successors(self, M: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All successors of the rows of ``M``.

        Returns (successor matrix, parent row index, transition index), in
        transition order.
        """
        outs, parents, tids = [], [], []
        cache: dict[tuple[int, int], np.ndarray] = {}
        by_proc: dict[int, tuple[np.ndarray, np.ndarray]] = {}

        def rows_at(p: int, loc: int) -> np.ndarray:
            key = (p, loc)
            if key not in cache:
                if p not in by_proc:
                    col = M[:, p]
                    order = np.argsort(col, kind="stable")
                    by_proc[p] = (order, col[order])
                order, sorted_col = by_proc[p]
                lo, hi = np.searchsorted(sorted_col, [loc, loc + 1])
                cache[key] = np.sort(order[lo:hi])
            return cache[key]

        for key, trans in self.groups:
            (p, l0) = key[0]
            idx = rows_at(p, l0)
            for q, l1 in key[1:]:
                if idx.size:
                    idx = idx[M[idx, q] == l1]
            if not idx.size:
                continue
            sub = M[idx]
            for t in trans:
                if t.guard_const is not None:
                    if not t.guard_const:
                        continue
                    ok = np.arange(len(sub))
                else:
                    g = np.asarray(t.guard(sub, None))
                    if g.ndim == 0:
                        if not g:
                            continue
                        ok = np.arange(len(sub))
                    else:
                        ok = np.flatnonzero(g)
                if not ok.size:
                    continue
                N = sub[ok].copy()
                alive = None
                for slot, fn, lo, hi in t.updates:
                    val = np.asarray(fn(N, alive), dtype=np.int64)
                    inside = (val >= lo) & (val <= hi)
                    if val.ndim == 0:
                        if not inside:
                            alive = np.zeros(len(N), dtype=bool)
                            break
                        N[:, slot] = val
                        continue
                    if not inside.all():
                        alive = inside if alive is None else (alive & inside)
                        val = np.where(inside, val, lo)
                    N[:, slot] = val if alive is None else np.where(alive, val, N[:, slot])
                if alive is not None:
                    N = N[alive]
                    ok = ok[alive]
                    if not len(N):
                        continue
                for p_, tgt in zip(t.procs, t.targets):
                    N[:, p_] = tgt
                outs.append(N)
                parents.append(idx[ok])
                tids.append(np.full(len(N), t.index,
                                    dtype=np.int32))
        if not outs:
            return (np.empty((0, self.ncols), dtype=np.int64),
                    np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int32))
        return np.concatenate(outs), np.concatenate(parents), np.concatenate(tids)

    # -- search ----------------------------------------------------------------
    def _expand_chunk(self, keys: np.ndarray, target) -> tuple:
        M = self.decode(keys)
        hits = None
        if target is not None:
            h = np.asarray(target(M, None))
            if h.ndim == 0:
                h = np.full(len(M), bool(h))
            hits = keys[h != 0]
        succ, parent, tid = self.successors(M)
        return self.encode(succ), keys[parent], tid, hits

    def search(self, cap: Optional[int] = None, threads: int = 1, target: Compiled = None,
               keep_layers: bool = True) -> "SearchResult":
        """Breadth-first search from the initial state.

        ``target`` marks goal rows; the search stops after the first BFS
        layer containing one. ``cap`` bounds the number of stored states.
        """
        t0 = time.perf_counter()
        stats = ExploreStats()
        k0 = self.encode(self.initial_matrix())
        visited = k0.copy()
        layers = [(k0, k0.copy(), np.full(1, -1, dtype=np.int32))]
        frontier = k0
        hit = None
        pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
        try:
            while len(frontier):
                stats.peak_frontier = max(stats.peak_frontier, len(frontier))
                chunks = [frontier[i:i + CHUNK] for i in range(0, len(frontier), CHUNK)]
                if pool is None:
                    parts = [self._expand_chunk(c, target) for c in chunks]
                else:
                    parts = list(pool.map(lambda c: self._expand_chunk(c, target), chunks))
                if target is not None:
                    hits = [p[3] for p in parts if len(p[3])]
                    if hits:
                        hit = np.sort(np.concatenate(hits))[0]
                        break
                keys = np.concatenate([p[0] for p in parts])
                parents = np.concatenate([p[1] for p in parts])
                tids = np.concatenate([p[2] for p in parts])
                stats.transitions += len(keys)
                if not len(keys):
                    break
                uk, first = np.unique(keys, return_index=True)
                pos = np.searchsorted(visited, uk)
                seen = pos < len(visited)
                seen[seen] = visited[pos[seen]] == uk[seen]
                fresh = ~seen
                new = uk[fresh]
                if not len(new):
                    break
                if cap is not None and len(visited) + len(new) > cap:
                    room = max(0, cap - len(visited))
                    new = new[:room]
                    fresh_idx = first[fresh][:room]
                    stats.capped = True
                else:
                    fresh_idx = first[fresh]
                visited = np.sort(np.concatenate([visited, new]), kind="stable")
                if keep_layers:
                    layers.append((new, parents[fresh_idx], tids[fresh_idx]))
                stats.depth += 1
                frontier = new
                if stats.capped:
                    break
        finally:
            if pool is not None:
                pool.shutdown()
        stats.states = len(visited)
        stats.time_ms = (time.perf_counter() - t0) * 1000.0
        stored = visited.nbytes + sum(a.nbytes + b.nbytes + c.nbytes for a, b, c in layers)
        stats.bytes_per_state = stored / max(1, stats.states)
        return SearchResult(self, stats, layers if keep_layers else None, hit, visited)

    def explore(self, cap: Optional[int] = None, threads: int = 1) -> ExploreStats:
        return self.search(cap=cap, threads=threads, keep_layers=False).stats

    def compile_property(self, prop: Expr) -> Compiled:
        consts = {n: Const(v) for n, v in self.model.constants if n not in self.layout.slot}
        return compile_expr(substitute(prop, consts), self.layout, f"property {to_text(prop)!r}")

    def check(self, query: Query, cap: Optional[int] = None, threads: int = 1) -> CheckResult:
        p = self.compile_property(query.prop)
        if query.quantifier == "A[]":
            target = lambda M, act: np.asarray(p(M, act)) == 0
        else:
            target = lambda M, act: np.asarray(p(M, act)) != 0
        res = self.search(cap=cap, threads=threads, target=target)
        if res.hit is not None:
            verdict = "fails" if query.quantifier == "A[]" else "holds"
            return CheckResult(verdict, query, res.stats, res.trace(res.hit))
        if res.stats.capped:
            return CheckResult("inconclusive", query, res.stats)
        verdict = "holds" if query.quantifier == "A[]" else "fails"
        return CheckResult(verdict, query, res.stats)

    def location_key(self, row: Sequence[int]) -> str:
        """Dot-joined location vector (the combined-graph location name)."""
        return ".".join(p.locations[int(row[k])] for k, p in enumerate(self.procs))


@dataclass
class SearchResult:
    model: GlobalModel
    stats: ExploreStats
    layers: Optional[list]
    hit: object
    visited: np.ndarray

    def states(self) -> np.ndarray:
        """Decoded matrix of every visited state."""
        return self.model.decode(self.visited)

    def trace(self, key) -> list[dict]:
        """Shortest path from the initial state to ``key`` as a list of steps."""
        assert self.layers is not None
        steps = []
        cur = key
        for depth in range(len(self.layers) - 1, -1, -1):
            keys, parents, tids = self.layers[depth]
            i = int(np.searchsorted(keys, cur))
            if i >= len(keys) or keys[i] != cur:
                continue
            row = self.model.decode(keys[i:i + 1])[0]
            tid = int(tids[i])
            label = self.model.transitions[tid].label if tid >= 0 else None
            steps.append({"transition": label, "transition_index": tid,
                          **self.model.state_dict(row)})
            cur = parents[i]
            if tid < 0:
                break
        steps.reverse()
        return steps


def explore(model: MasTemplate, cap: Optional[int] = None, threads: int = 1) -> ExploreStats:
    return GlobalModel(model).explore(cap=cap, threads=threads)


def check(model: MasTemplate, query: Query, cap: Optional[int] = None,
          threads: int = 1) -> CheckResult:
    return GlobalModel(model).check(query, cap=cap, threads=threads)


def project_reachable(model: MasTemplate, variables: Sequence[str], target: str = "ext",
                      instance: Optional[int] = None, cap: Optional[int] = None
                      ) -> dict[str, set[tuple[int, ...]]]:
    """Exact per-location projection of the reachable valuations onto ``variables``.

    For ``target == "ext"`` locations are combined (dot-joined) locations and
    variable names are global/instance-qualified. For a template target the
    names are template-local; the result is the union over all instances, or
    a single instance when ``instance`` is given.
    """
    gm = GlobalModel(model)
    res = gm.search(cap=cap, keep_layers=False)
    if res.stats.capped:
        raise SpecificationError(f"state cap {cap} exceeded while projecting reachable values")
    M = res.states()
    out: dict[str, set[tuple[int, ...]]] = {}
    if target == "ext":
        slots = [gm.layout.slot[v] for v in variables]
        P = gm.layout.nproc
        rows = np.unique(M[:, list(range(P)) + slots], axis=0)
        for r in rows.tolist():
            loc = ".".join(gm.procs[k].locations[r[k]] for k in range(P))
            out.setdefault(loc, set()).add(tuple(r[P:]))
        return out
    count = model.count(target)
    indices = [instance] if instance is not None else range(1, count + 1)
    for i in indices:
        inst = f"{target}({i})"
        p = gm.layout.proc_index[inst]
        slots = []
        for v in variables:
            q = f"{inst}.{v}"
            slots.append(gm.layout.slot[q] if q in gm.layout.slot else gm.layout.slot[v])
        rows = np.unique(M[:, [p] + slots], axis=0)
        for r in rows.tolist():
            out.setdefault(gm.procs[p].locations[r[0]], set()).add(tuple(r[1:]))
    return out
