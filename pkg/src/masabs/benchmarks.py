"""Benchmark model families and the regression harness.

The models are authored natively as XML text and go through the regular
parser, so every benchmark also exercises the reader.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence
from xml.sax.saxutils import escape

from .abstractor import MappingFunction, abstract
from .approx import approximate
from .checker import check
from .errors import SpecificationError
from .expr import parse_query
from .model import MasTemplate
from .xmlio import parse_model

# Published state counts, for side-by-side deltas only.
PUBLISHED_POSTAL = {
    1: {"concrete": 31, "A1": 23, "A2": 22, "A3": 18},
    2: {"concrete": 529, "A1": 217, "A2": 214, "A3": 120},
    3: {"concrete": 10891, "A1": 2203, "A2": 2440, "A3": 838},
    4: {"concrete": 230000, "A1": 22625, "A2": 29938, "A3": 5937},
    5: {"concrete": 5100000, "A1": 230000, "A2": 370000, "A3": 42100},
}
PUBLISHED_SOCIAL = {
    2: {"concrete": 165, "abstract": 38},
    3: {"concrete": 8917, "abstract": 555},
    4: {"concrete": 460000, "abstract": 10247},
    5: {"concrete": 21000000, "abstract": 150000},
}

PHI_BSTUFF = "A[](b_recv<=ep_sent && ep_sent<=NV)"
PHI_COMPR = "A[](exists(i:int[1,NA])(impersonated!=i && (!AI(i).wait || AI(i).mqual<2)))"


# ---------------------------------------------------------------------------
# XML authoring helpers
# ---------------------------------------------------------------------------

def _label(kind: str, text: str) -> str:
    return f'<label kind="{kind}">{escape(text)}</label>' if text else ""


def _template(name: str, count: int, decls: str, locations: Sequence[str],
              edges: Sequence[tuple]) -> str:
    """``edges`` holds tuples (source, target, select, guard, sync, assign)."""
    ids = {loc: f"{name.lower()}{k}" for k, loc in enumerate(locations)}
    out = [f"<template><name>{name}</name>",
           f"<parameter>const int[1,{count}] id</parameter>",
           f"<declaration>{escape(decls)}</declaration>"]
    for k, loc in enumerate(locations):
        out.append(f'<location id="{ids[loc]}" x="{120 * k}" y="0"><name>{loc}</name></location>')
    out.append(f'<init ref="{ids[locations[0]]}"/>')
    for src, tgt, sel, guard, sync, assign in edges:
        out.append(f'<transition><source ref="{ids[src]}"/><target ref="{ids[tgt]}"/>'
                   + _label("select", sel) + _label("guard", guard)
                   + _label("synchronisation", sync) + _label("assignment", assign)
                   + "</transition>")
    out.append("</template>")
    return "\n".join(out)


def _nta(decls: str, templates: Sequence[str], system: str) -> str:
    return ("<?xml version=\"1.0\" encoding=\"utf-8\"?>\n<nta>\n"
            f"<declaration>{escape(decls)}</declaration>\n"
            + "\n".join(templates)
            + f"\n<system>{system}</system>\n</nta>\n")


# ---------------------------------------------------------------------------
# Postal voting
# ---------------------------------------------------------------------------

def postal_xml(nv: int, nc: int) -> str:
    if nv < 1 or nc < 1:
        raise SpecificationError(f"postal voting needs NV>=1 and NC>=1, got NV={nv}, NC={nc}")
    decls = (f"const int NV = {nv};\nconst int NC = {nc};\n"
             "int[0,NV] ep_sent = 0;\nint[0,NV] b_recv = 0;\nint[0,2] msg = 0;\n"
             "chan declare, post, pickup, ballot;\n")
    voter = _template(
        "Voter", nv,
        "int[0,2] mem_dec = 0;\nint[0,NC] mem_vt = 0;\nint[0,1] mem_sg = 0;\n",
        ["idle", "waits", "has", "voted"],
        [
            ("idle", "waits", "dec:int[1,2]", "", "declare!", "mem_dec = dec, msg = dec"),
            ("waits", "has", "", "mem_dec == 2", "post?", ""),
            ("waits", "has", "", "mem_dec == 1", "pickup?", ""),
            ("has", "voted", "vt:int[1,NC], sg:int[0,1]", "", "ballot!",
             "mem_vt = vt, mem_sg = sg"),
        ])
    authority = _template(
        "Authority", 1,
        "int[0,NV] dec_recv = 0;\nint[0,NV] npost = 0;\nint[0,NV] sent_post = 0;\n",
        ["coll_decl", "distr", "coll_vts", "tally", "done"],
        [
            ("coll_decl", "coll_decl", "", "dec_recv < NV", "declare?",
             "dec_recv++, npost += (msg == 2), msg = 0"),
            ("coll_decl", "distr", "", "dec_recv == NV", "", ""),
            ("distr", "distr", "", "sent_post < npost", "post!", "ep_sent++, sent_post++"),
            ("distr", "distr", "", "ep_sent - sent_post < NV - npost", "pickup!", "ep_sent++"),
            ("distr", "coll_vts", "", "ep_sent == NV", "", ""),
            ("coll_vts", "coll_vts", "", "b_recv < NV", "ballot?", "b_recv++"),
            ("coll_vts", "tally", "", "b_recv == NV", "", ""),
            ("tally", "done", "", "", "", ""),
        ])
    return _nta(decls, [voter, authority], "system Voter, Authority;")


def build_postal(nv: int, nc: int = 3) -> MasTemplate:
    return parse_model(postal_xml(nv, nc))


def postal_a1() -> MappingFunction:
    return MappingFunction(target="Voter", remove=("mem_vt", "mem_sg"))


def postal_a2_voter() -> MappingFunction:
    return MappingFunction(target="Voter", remove=("mem_dec",), scope=("has", "voted"))


def postal_a2_authority() -> MappingFunction:
    return MappingFunction(target="Authority", remove=("dec_recv",), scope=("coll_vts",))


# ---------------------------------------------------------------------------
# Social AI
# ---------------------------------------------------------------------------

def social_ai_xml(nag: int) -> str:
    if nag < 2:
        raise SpecificationError(f"social AI needs at least 2 agents, got {nag}")
    decls = (f"const int NA = {nag};\n"
             "int[0,NA] impersonated = 0;\nint[0,NA] src = 0;\nint[0,2] msg = 0;\n"
             "chan gossip;\n")
    ai = _template(
        "AI", nag,
        "int[0,2] data = 0;\nint[0,2] mqual = 0;\n",
        ["gather", "learn", "share", "sending", "wait"],
        [
            ("gather", "learn", "d:int[0,2]", "impersonated > 0", "", "data = d"),
            ("learn", "share", "", "", "", "mqual = (mqual + data + 1) / 2"),
            ("share", "sending", "", "src == 0 && impersonated != id", "", "src = id"),
            ("sending", "wait", "", "", "gossip!", "msg = mqual"),
            ("wait", "gather", "", "src == (id + NA - 2) % NA + 1", "gossip?",
             "mqual = (mqual + msg) / 2, msg = 0, src = 0"),
        ])
    attacker = _template(
        "Attacker", 1, "",
        ["init", "attack", "sending"],
        [
            ("init", "attack", "k:int[1,NA]", "", "", "impersonated = k"),
            ("attack", "sending", "", "src == 0", "", "src = impersonated"),
            ("sending", "attack", "", "", "gossip!", "msg = 0"),
        ])
    return _nta(decls, [ai, attacker], "system AI, Attacker;")


def build_social_ai(nag: int) -> MasTemplate:
    return parse_model(social_ai_xml(nag))


def social_mapping() -> MappingFunction:
    return MappingFunction(target="AI", remove=("data",))


# ---------------------------------------------------------------------------
# Harness
# ---------------------------------------------------------------------------

@dataclass
class BenchRecord:
    family: str
    params: dict
    config: str
    states: int
    time_ms: float
    verdict: str
    capped: bool = False
    published_states: Optional[int] = None

    def as_dict(self) -> dict:
        return {"family": self.family, "params": self.params, "config": self.config,
                "states": self.states, "time_ms": round(self.time_ms, 3),
                "verdict": self.verdict}


def _timed_check(family, params, config, build, query, cap, published) -> BenchRecord:
    # The time includes producing the abstract specification.
    t0 = time.perf_counter()
    model = build()
    q = parse_query(query, dict(model.constants))
    res = check(model, q, cap=cap)
    ms = (time.perf_counter() - t0) * 1000
    return BenchRecord(family, dict(params), config, res.stats.states, ms, res.verdict,
                       res.stats.capped, published)


def postal_a1_model(model: MasTemplate) -> MasTemplate:
    d = approximate(model, ["mem_vt", "mem_sg"], "Voter", "upper")
    return abstract(model, postal_a1(), d)


def postal_a2_model(model: MasTemplate) -> MasTemplate:
    dv = approximate(model, ["mem_dec"], "Voter", "upper")
    da = approximate(model, ["dec_recv"], "Authority", "upper")
    return abstract(abstract(model, postal_a2_voter(), dv), postal_a2_authority(), da)


POSTAL_CONFIGS = {
    "A1": postal_a1_model,
    "A2": postal_a2_model,
    "A3": lambda m: postal_a2_model(postal_a1_model(m)),
}


def postal_abstractions(model: MasTemplate) -> dict[str, MasTemplate]:
    return {name: make(model) for name, make in POSTAL_CONFIGS.items()}


def _postal_point(nv: int, nc: int, cap: Optional[int]) -> list[BenchRecord]:
    params = {"NV": nv, "NC": nc}
    published = PUBLISHED_POSTAL.get(nv, {}) if nc == 3 else {}
    out = [_timed_check("postal", params, "concrete", lambda: build_postal(nv, nc),
                        PHI_BSTUFF, cap, published.get("concrete"))]
    for name, make in POSTAL_CONFIGS.items():
        out.append(_timed_check("postal", params, name,
                                lambda make=make: make(build_postal(nv, nc)),
                                PHI_BSTUFF, cap, published.get(name)))
    return out


def social_abstraction(model: MasTemplate) -> MasTemplate:
    d = approximate(model, ["data"], "AI", "upper")
    return abstract(model, social_mapping(), d)


def _social_point(nag: int, cap: Optional[int]) -> list[BenchRecord]:
    params = {"NAg": nag}
    published = PUBLISHED_SOCIAL.get(nag, {})
    return [
        _timed_check("social", params, "concrete", lambda: build_social_ai(nag),
                     PHI_COMPR, cap, published.get("concrete")),
        _timed_check("social", params, "abstract",
                     lambda: social_abstraction(build_social_ai(nag)),
                     PHI_COMPR, cap, published.get("abstract")),
    ]


def run_postal(nvs: Sequence[int], nc: int = 3, cap: Optional[int] = None,
               threads: int = 1) -> list[BenchRecord]:
    return _grid(lambda nv: _postal_point(nv, nc, cap), nvs, threads)


def run_social(nags: Sequence[int], cap: Optional[int] = None, threads: int = 1) -> list[BenchRecord]:
    return _grid(lambda n: _social_point(n, cap), nags, threads)


def _grid(point, values, threads) -> list[BenchRecord]:
    if threads > 1 and len(values) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(point, values))
    else:
        parts = [point(v) for v in values]
    return [r for part in parts for r in part]


def reduction(concrete: int, abstract_: int) -> float:
    """State-space reduction in percent."""
    return (1.0 - abstract_ / concrete) * 100.0


def _count(r: BenchRecord) -> str:
    return f">={r.states}" if r.capped else str(r.states)


def _delta(r: BenchRecord) -> str:
    if r.published_states is None:
        return "-"
    return f"{r.states - r.published_states:+d}"


def format_table(records: Sequence[BenchRecord]) -> str:
    """Aligned text table, one row per grid point."""
    if not records:
        return ""
    family = records[0].family
    key = "NV" if family == "postal" else "NAg"
    configs = list(dict.fromkeys(r.config for r in records))
    rows: dict[int, dict[str, BenchRecord]] = {}
    for r in records:
        rows.setdefault(r.params[key], {})[r.config] = r
    header = ["#V" if family == "postal" else "#Ag"]
    for c in configs:
        header += [f"{c} #St", "t"]
        if family == "social" and c != "concrete":
            header.append("Reduct")
        header += ["published", "delta"]
    header.append("verdicts")
    table = [header]
    for n in sorted(rows):
        line = [str(n)]
        for c in configs:
            r = rows[n].get(c)
            if r is None:
                line += ["-", "-", "-", "-"] + (["-"] if family == "social" and c != "concrete" else [])
                continue
            line += [_count(r), f"{r.time_ms / 1000:.2f}"]
            if family == "social" and c != "concrete":
                conc = rows[n].get("concrete")
                ok = conc is not None and not conc.capped and not r.capped
                line.append(f"{reduction(conc.states, r.states):.2f}" if ok else "-")
            line += ["-" if r.published_states is None else str(r.published_states), _delta(r)]
        line.append(",".join(rows[n][c].verdict for c in configs if c in rows[n]))
        table.append(line)
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    out = []
    for k, row in enumerate(table):
        out.append(" | ".join(cell.rjust(w) for cell, w in zip(row, widths)))
        if k == 0:
            out.append("-+-".join("-" * w for w in widths))
    return "\n".join(out)


def json_lines(records: Sequence[BenchRecord]) -> str:
    return "\n".join(json.dumps(r.as_dict(), sort_keys=True) for r in records)
