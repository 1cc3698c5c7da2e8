"""Independent reference implementations used as test oracles.

``reference_graph`` is a plain dictionary-based BFS over instantiated agents
using the scalar evaluator; it shares no code with the vectorised checker
beyond the expression evaluator. ``random_model`` draws the small MAS
models the property tests run on.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass

from masabs.expr import Binary, Const, Unary, Var, evaluate
from masabs.model import AgentGraph, Edge, MasTemplate, Select, VarDecl, expand_graph
from masabs.unfold import instantiate
from masabs.xmlio import parse_model, serialize_model


# ---------------------------------------------------------------------------
# Reference semantics
# ---------------------------------------------------------------------------

@dataclass
class RefGraph:
    agents: list[str]
    variables: list[str]
    initial: tuple
    states: set
    transitions: set   # (state, state) pairs

    def state_dict(self, s) -> tuple[dict, dict]:
        locs, vals = s
        return dict(zip(self.agents, locs)), dict(zip(self.variables, vals))


def _fire(edges, values: dict, decls: dict):
    env = dict(values)
    for e in edges:
        if not evaluate(e.guard, values):
            return None
    for e in edges:
        for name, rhs in e.updates:
            v = evaluate(rhs, env)
            d = decls[name]
            if not d.lo <= v <= d.hi:
                return None
            env[name] = v
    return env


def reference_graph(model: MasTemplate, limit: int = 200_000) -> RefGraph:
    """Reachable global states and transitions of ``model``.

    A combined model is a single process whose location names are split at
    dots, so that its states compare directly with the instance-level ones.
    """
    if model.is_combined:
        g = expand_graph(model.templates[0][0])
        agents_ = [g]
        names = list(g.components)
    else:
        agents_ = [expand_graph(a) for a in instantiate(model)]
        names = [a.name for a in agents_]
    decls = {v.name: v for v in model.globals}
    for a in agents_:
        decls.update({v.name: v for v in a.privates})
    variables = list(decls)

    def pack(locs, env):
        if model.is_combined:
            locs = tuple(locs[0].split("."))
        return (tuple(locs), tuple(env[v] for v in variables))

    init_locs = tuple(a.initial for a in agents_)
    init_env = {v: decls[v].initial for v in variables}
    start = (init_locs, tuple(init_env[v] for v in variables))
    seen = {start: (init_locs, init_env)}
    queue = deque([start])
    trans = set()
    while queue:
        key = queue.popleft()
        locs, env = seen[key]
        succ = []
        for i, a in enumerate(agents_):
            for e in a.edges:
                if e.source != locs[i]:
                    continue
                if e.sync is None:
                    out = _fire([e], env, decls)
                    if out is not None:
                        succ.append((locs[:i] + (e.target,) + locs[i + 1:], out))
                elif e.sync[1] == "!":
                    for j, b in enumerate(agents_):
                        if j == i:
                            continue
                        for r in b.edges:
                            if r.source != locs[j] or r.sync != (e.sync[0], "?"):
                                continue
                            out = _fire([e, r], env, decls)
                            if out is not None:
                                nl = list(locs)
                                nl[i], nl[j] = e.target, r.target
                                succ.append((tuple(nl), out))
        for nlocs, nenv in succ:
            nkey = (nlocs, tuple(nenv[v] for v in variables))
            trans.add((pack(locs, env), pack(nlocs, nenv)))
            if nkey not in seen:
                if len(seen) >= limit:
                    raise RuntimeError("reference exploration limit reached")
                seen[nkey] = (nlocs, nenv)
                queue.append(nkey)
    states = {pack(l, e) for l, e in seen.values()}
    return RefGraph(names, variables, pack(init_locs, init_env), states, trans)


def exact_projection(ref: RefGraph, model: MasTemplate, variables, target: str) -> dict:
    """Per-location reachable projections, keyed like the domains."""
    out: dict[str, set] = {}
    idx = {v: k for k, v in enumerate(ref.variables)}
    for locs, vals in ref.states:
        if target == "ext":
            out.setdefault(".".join(locs), set()).add(tuple(vals[idx[v]] for v in variables))
            continue
        for k, agent in enumerate(ref.agents):
            if not agent.startswith(target + "("):
                continue
            vec = tuple(vals[idx[f"{agent}.{v}"]] if f"{agent}.{v}" in idx else vals[idx[v]]
                        for v in variables)
            out.setdefault(locs[k], set()).add(vec)
    return out


# ---------------------------------------------------------------------------
# Random models
# ---------------------------------------------------------------------------

_CMP = ("<", "<=", "==", "!=", ">", ">=")


def _rand_value_expr(rng: random.Random, names: list[str], decls: dict) -> object:
    x = rng.choice(names) if names else None
    kind = rng.random()
    if x is None or kind < 0.3:
        return Const(rng.randint(0, 3))
    if kind < 0.55:
        return Var(x)
    if kind < 0.7:
        return Binary(rng.choice(("+", "-")), Var(x), Const(1))
    if kind < 0.8 and len(names) > 1:
        y = rng.choice([n for n in names if n != x])
        return Binary(rng.choice(("+", "-")), Var(x), Var(y))
    if kind < 0.9:
        return Binary(rng.choice(("/", "%")), Var(x), Const(rng.randint(1, 3)))
    return Binary("*", Var(x), Const(2))


def _rand_guard(rng: random.Random, names: list[str]) -> object:
    if not names or rng.random() < 0.35:
        return Const(1)
    def atom():
        x = rng.choice(names)
        if len(names) > 1 and rng.random() < 0.3:
            return Binary(rng.choice(_CMP), Var(x), Var(rng.choice(names)))
        return Binary(rng.choice(_CMP), Var(x), Const(rng.randint(0, 3)))
    g = atom()
    r = rng.random()
    if r < 0.2:
        g = Binary("&&", g, atom())
    elif r < 0.35:
        g = Binary("||", g, atom())
    elif r < 0.42:
        g = Unary("!", g)
    return g


def random_model(seed: int) -> MasTemplate:
    """≤3 agents, ≤4 locations each, ≤2 variables of domain size ≤4, ≤2 channels."""
    rng = random.Random(seed)
    n_templates = rng.randint(1, 3)
    counts = []
    budget = 3
    for t in range(n_templates):
        c = rng.randint(1, max(1, budget - (n_templates - t - 1)))
        counts.append(c)
        budget -= c
    channels = [f"c{k}" for k in range(rng.randint(0, 2))]
    nvars = rng.randint(1, 2)
    owners = []
    for k in range(nvars):
        owners.append(rng.choice(["global"] + list(range(n_templates))))
    globals_ = []
    privates = {t: [] for t in range(n_templates)}
    for k, owner in enumerate(owners):
        hi = rng.randint(1, 3)
        decl = VarDecl(f"v{k}", 0, hi, rng.randint(0, hi))
        if owner == "global":
            globals_.append(decl)
        else:
            privates[owner].append(VarDecl(decl.name, decl.lo, decl.hi, decl.initial, "private"))
    templates = []
    for t in range(n_templates):
        names = [v.name for v in globals_] + [v.name for v in privates[t]]
        nloc = rng.randint(1, 4)
        locs = [f"l{k}" for k in range(nloc)]
        edges = []
        for _ in range(rng.randint(1, 5)):
            src, tgt = rng.choice(locs), rng.choice(locs)
            sync = None
            if channels and rng.random() < 0.4:
                sync = (rng.choice(channels), rng.choice("!?"))
            selects = ()
            scope_names = list(names)
            if rng.random() < 0.15:
                selects = (Select("s", 0, rng.randint(1, 2)),)
                scope_names = names + ["s"]
            ups = []
            for _ in range(rng.randint(0, 2)):
                if not names:
                    break
                x = rng.choice(names)
                ups.append((x, _rand_value_expr(rng, scope_names, None)))
            if counts[t] > 1 and rng.random() < 0.15:
                guard = Binary("==", Var("id"), Const(rng.randint(1, counts[t])))
            else:
                guard = _rand_guard(rng, names)
            edges.append(Edge(src, tgt, selects, guard, sync, tuple(ups)))
        templates.append((AgentGraph(f"T{t}", tuple(locs), locs[0], tuple(privates[t]),
                                     tuple(edges)), counts[t]))
    model = MasTemplate(tuple(templates), tuple(globals_), tuple(channels))
    # normalise through the writer and reader, as every user-facing model is
    return parse_model(serialize_model(model))


# ---------------------------------------------------------------------------
# Abstraction map
# ---------------------------------------------------------------------------

def alpha_factory(concrete: MasTemplate, mapping, ref: RefGraph, abs_ref: RefGraph):
    """α from concrete reference states to abstract reference states.

    Removed variables disappear (full scope) or show their initial value while
    the owning agent sits inside the scope; a merge variable takes the value
    of the merge expression.
    """
    target = mapping.target
    removed = set(mapping.remove)
    scope = set(mapping.scope)
    initial = dict(zip(ref.variables, ref.initial[1]))
    cidx = {v: k for k, v in enumerate(ref.variables)}
    concrete_names = {}  # abstract variable -> (kind, info)
    for name in abs_ref.variables:
        if mapping.merge is not None and name.endswith(mapping.merge.name) and name not in cidx:
            concrete_names[name] = ("merge", name)
        else:
            concrete_names[name] = ("copy", name)

    def owner_and_local(name: str):
        if target in ("ext", "Combined"):
            return None, name if name in removed else None
        if "." in name:
            inst, local = name.split(".", 1)
            if inst.startswith(target + "(") and local in removed:
                return inst, local
        return None, None

    def alpha(state):
        locs, vals = state
        out = []
        for name in abs_ref.variables:
            kind, _ = concrete_names[name]
            if kind == "merge":
                prefix = name[: -len(mapping.merge.name)]
                env = {x: vals[cidx[prefix + x]] for x in removed}
                out.append(evaluate(mapping.merge.expr, env))
                continue
            v = vals[cidx[name]]
            inst, local = owner_and_local(name)
            if local is not None and scope:
                if target in ("ext", "Combined"):
                    inside = ".".join(locs) in scope
                else:
                    inside = locs[ref.agents.index(inst)] in scope
                if inside:
                    v = initial[name]
            out.append(v)
        return (locs, tuple(out))

    return alpha


def checker_graph(model: MasTemplate) -> RefGraph:
    """The vectorised checker's reachable graph in the reference format."""
    from masabs.checker import GlobalModel

    gm = GlobalModel(model)
    res = gm.search(keep_layers=False)
    M = res.states()
    succ, parent, _ = gm.successors(M)
    names = [v.name for v in gm.variables]

    def pack(row):
        d = gm.state_dict(row)
        locs = tuple(d["locations"].values())
        if model.is_combined:
            locs = tuple(locs[0].split("."))
        return (locs, tuple(d["values"][n] for n in names))

    states = {pack(r) for r in M.tolist()}
    rows = M.tolist()
    trans = {(pack(rows[p]), pack(s)) for s, p in zip(succ.tolist(), parent.tolist())}
    agents = list(gm.procs[0].components) if model.is_combined else [p.name for p in gm.procs]
    return RefGraph(agents, names, pack(gm.initial_matrix()[0].tolist()), states, trans)


# ---------------------------------------------------------------------------
# Abstraction cases over the random corpus
# ---------------------------------------------------------------------------

@dataclass
class Case:
    seed: int
    model: MasTemplate
    concrete: MasTemplate      # the model α is taken over (unfolded for "ext")
    mapping: object            # MappingFunction
    kept: list                 # VarDecls still visible after removal
    agents: list               # instantiated agents, for location atoms


def random_case(seed: int) -> Case:
    """A model plus a random removal of one or more variables.

    Targets alternate between the combined graph and one template; a drawn
    template without private variables falls back to the combined graph.
    Half of the cases restrict the scope to a random subset of locations.
    """
    from masabs.abstractor import MappingFunction
    from masabs.unfold import unfold

    model = random_model(seed)
    rng = random.Random(10_000 + seed)
    agents = instantiate(model)
    graph, _ = rng.choice(model.templates)
    if rng.random() < 0.5 or not graph.privates:
        concrete = unfold(model)
        graph = concrete.templates[0][0]
        target, pool = "ext", [v.name for v in concrete.globals]
    else:
        concrete = model
        target, pool = graph.name, [v.name for v in graph.privates]
    removed = rng.sample(pool, rng.randint(1, len(pool)))
    scope: tuple = ()
    if rng.random() < 0.5:
        scope = tuple(rng.sample(list(graph.locations), rng.randint(1, len(graph.locations))))
    if target == "ext":
        kept = [v for v in concrete.globals if v.name not in removed]
    else:
        kept = list(model.globals)
        for a in agents:
            mine = a.name.startswith(target + "(")
            kept.extend(v for v in a.privates if not (mine and v.name.split(".", 1)[1] in removed))
    return Case(seed, model, concrete, MappingFunction(target, tuple(removed), scope), kept, agents)


def random_invariants(case: Case, n: int = 5) -> list[str]:
    """``n`` random ``A[]`` queries over atoms that survive the abstraction."""
    rng = random.Random(20_000 + case.seed)
    out = []
    for _ in range(n):
        if case.kept and rng.random() < 0.6:
            v = rng.choice(case.kept)
            atom = f"{v.name} {rng.choice(_CMP)} {rng.randint(v.lo, v.hi)}"
        else:
            a = rng.choice(case.agents)
            atom = f"{a.name}.{rng.choice(a.locations)}"
            if rng.random() < 0.5:
                atom = "!" + atom
        out.append(f"A[] {atom}")
    return out


def may_violations(concrete: RefGraph, abstract_: RefGraph, alpha) -> list:
    """Concrete transitions with no α-image among the abstract ones."""
    bad = []
    if alpha(concrete.initial) != abstract_.initial:
        bad.append(("initial", concrete.initial))
    for s, t in concrete.transitions:
        if (alpha(s), alpha(t)) not in abstract_.transitions:
            bad.append((s, t))
    return bad


def must_violations(concrete: RefGraph, abstract_: RefGraph, alpha) -> list:
    """Abstract transitions without a concrete witness."""
    image = {(alpha(s), alpha(t)) for s, t in concrete.transitions}
    bad = [tr for tr in abstract_.transitions if tr not in image]
    if alpha(concrete.initial) != abstract_.initial:
        bad.append(("initial", abstract_.initial))
    return bad
