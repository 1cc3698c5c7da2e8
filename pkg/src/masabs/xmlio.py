"""Reader and writer for the supported subset of the Uppaal XML format.

See ``docs/format.md`` for the exact subset. Anything outside it raises
:class:`UnsupportedFeature` instead of being dropped.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from typing import Optional
from xml.sax.saxutils import escape, quoteattr

from .errors import (ParseError, ResolutionError, SpecificationError,
                     UnsupportedFeature)
from .expr import (TRUE, Expr, LocIs, Parser, resolve_members, simplify, to_text,
                   updates_text, walk)
from .model import (GLOBAL, PRIVATE, AgentGraph, Edge, MasTemplate, Select,
                    VarDecl, validate_names)

LABEL_KINDS = ("select", "guard", "synchronisation", "assignment")

_DOCTYPE = ("<!DOCTYPE nta PUBLIC '-//Uppaal Team//DTD Flat System 1.1//EN' "
            "'http://www.it.uu.se/research/group/darts/uppaal/flat-1_2.dtd'>")


class Declarations:
    """Result of parsing one ``<declaration>`` block."""

    def __init__(self):
        self.constants: dict[str, int] = {}
        self.variables: list[VarDecl] = []
        self.channels: list[str] = []


def parse_declarations(text: str, constants: dict[str, int], kind: str,
                       context: str) -> Declarations:
    out = Declarations()
    known = dict(constants)
    p = Parser(text, known, context)
    while not p.at_end():
        if p.accept(";"):
            continue
        word = p.tok.text
        if word in ("clock", "urgent", "broadcast", "typedef", "struct", "double",
                    "meta", "scalar", "void", "hybrid"):
            raise UnsupportedFeature(f"{context}: unsupported declaration {word!r}")
        if p.accept("const"):
            if p.at("int") or p.at("bool"):
                p.i += 1
                if p.at("["):
                    p.expect("[")
                    p.constant_expression()
                    p.expect(",")
                    p.constant_expression()
                    p.expect("]")
            while True:
                name = p.ident()
                p.expect("=")
                value = p.constant_expression()
                known[name] = value
                p.constants[name] = value
                out.constants[name] = value
                if not p.accept(","):
                    break
            p.expect(";")
        elif p.accept("chan"):
            while True:
                name = p.ident()
                if p.at("["):
                    raise UnsupportedFeature(f"{context}: channel arrays are not supported")
                out.channels.append(name)
                if not p.accept(","):
                    break
            p.expect(";")
        elif p.at("int") or p.at("bool"):
            is_bool = p.tok.text == "bool"
            p.i += 1
            if is_bool:
                lo, hi = 0, 1
            elif p.accept("["):
                lo = p.constant_expression()
                p.expect(",")
                hi = p.constant_expression()
                p.expect("]")
            else:
                lo, hi = -32768, 32767
            while True:
                name = p.lvalue()
                if p.at("["):
                    raise UnsupportedFeature(f"{context}: arrays are not supported ({name})")
                init = lo if lo > 0 or hi < 0 else 0
                if p.accept("="):
                    init = p.constant_expression()
                try:
                    out.variables.append(VarDecl(name, lo, hi, init, kind))
                except SpecificationError as exc:
                    raise SpecificationError(f"{context}: {exc}") from None
                if not p.accept(","):
                    break
            p.expect(";")
        else:
            raise UnsupportedFeature(f"{context}: unsupported declaration starting with {word!r}")
    return out


def _text(el: Optional[ET.Element]) -> str:
    return (el.text or "") if el is not None else ""


def _parse_parameter(text: str, constants: dict[str, int], context: str) -> int:
    text = text.strip()
    if not text:
        return 1
    p = Parser(text, constants, context)
    p.expect("const")
    lo, hi = p.int_range()
    name = p.ident()
    p.finish()
    if name != "id" or lo != 1 or hi < 1:
        raise UnsupportedFeature(
            f"{context}: only the parameter 'const int[1,N] id' is supported, got {text!r}")
    return hi


def parse_model(data: bytes | str) -> MasTemplate:
    """Parse a model file into a resolved :class:`MasTemplate`."""
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise ParseError(f"malformed XML: {exc}") from None
    if root.tag != "nta":
        raise ParseError(f"root element must be <nta>, found <{root.tag}>")

    decl_el = root.find("declaration")
    gdecl = parse_declarations(_text(decl_el), {}, GLOBAL, "global declaration")
    constants = dict(gdecl.constants)

    raw_templates = []
    system_text = None
    for child in root:
        if child.tag == "template":
            raw_templates.append(child)
        elif child.tag == "system":
            system_text = child.text or ""
        elif child.tag not in ("declaration", "queries"):
            raise UnsupportedFeature(f"unsupported element <{child.tag}>")

    templates: dict[str, tuple[AgentGraph, int]] = {}
    declared_vars = {v.name for v in gdecl.variables}
    for el in raw_templates:
        graph, count = _parse_template(el, constants, declared_vars, set(gdecl.channels))
        if graph.name in templates:
            raise SpecificationError(f"duplicate template {graph.name!r}")
        templates[graph.name] = (graph, count)

    order = _parse_system(system_text, list(templates)) if (system_text or "").strip() else []
    for name in templates:
        if name not in order:
            raise SpecificationError(f"template {name!r} is not instantiated in the system line")
    model = MasTemplate(
        templates=tuple(templates[n] for n in order),
        globals=tuple(gdecl.variables),
        channels=tuple(gdecl.channels),
        constants=tuple(constants.items()),
    )
    validate_names(model)
    return model


def _parse_system(text: str, names: list[str]) -> list[str]:
    p = Parser(text, {}, "system line")
    p.expect("system")
    order = []
    while True:
        name = p.ident()
        if name not in names:
            raise SpecificationError(f"system line: unknown template {name!r}")
        if name in order:
            raise SpecificationError(f"system line: template {name!r} listed twice")
        order.append(name)
        if not p.accept(","):
            break
    p.expect(";")
    p.finish()
    return order


def _parse_template(el: ET.Element, constants: dict[str, int], global_vars: set[str],
                    channels: set[str]) -> tuple[AgentGraph, int]:
    name = _text(el.find("name")).strip()
    if not name:
        raise ParseError("template without <name>")
    ctx = f"template {name!r}"
    for child in el:
        if child.tag not in ("name", "parameter", "declaration", "location", "init", "transition"):
            raise UnsupportedFeature(f"{ctx}: unsupported element <{child.tag}>")
    count = _parse_parameter(_text(el.find("parameter")), constants, ctx)
    local = parse_declarations(_text(el.find("declaration")), constants, PRIVATE, f"{ctx} declaration")
    if local.channels:
        raise UnsupportedFeature(f"{ctx}: local channel declarations are not supported")
    consts = dict(constants)
    consts.update(local.constants)
    declared = global_vars | {v.name for v in local.variables}

    ids: dict[str, str] = {}
    locations = []
    coords = []
    for loc in el.findall("location"):
        lid = loc.get("id")
        if lid is None:
            raise ParseError(f"{ctx}: location without id")
        for sub in loc:
            if sub.tag in ("urgent", "committed"):
                raise UnsupportedFeature(f"{ctx}, location {lid}: {sub.tag} locations are not supported")
            if sub.tag == "label":
                raise UnsupportedFeature(
                    f"{ctx}, location {lid}: location label {sub.get('kind')!r} is not supported")
            if sub.tag != "name":
                raise UnsupportedFeature(f"{ctx}, location {lid}: unsupported element <{sub.tag}>")
        lname = _text(loc.find("name")).strip() or lid
        ids[lid] = lname
        locations.append(lname)
        if loc.get("x") is not None or loc.get("y") is not None:
            coords.append((lname, loc.get("x", ""), loc.get("y", "")))
    init_el = el.find("init")
    if init_el is None:
        if not locations:
            raise SpecificationError(f"{ctx}: no locations")
        initial = locations[0]
    else:
        ref = init_el.get("ref")
        if ref not in ids:
            raise SpecificationError(f"{ctx}: init refers to unknown location {ref!r}")
        initial = ids[ref]

    edges = []
    for k, tr in enumerate(el.findall("transition")):
        edges.append(_parse_transition(tr, ids, consts, declared, channels, f"{ctx}, edge #{k}"))

    graph = AgentGraph(
        name=name,
        locations=tuple(locations),
        initial=initial,
        privates=tuple(local.variables),
        edges=tuple(edges),
        coords=tuple(coords),
        components=tuple(c for c in (el.get("components") or "").split(",") if c),
    )
    return graph, count


def _parse_transition(tr: ET.Element, ids: dict[str, str], constants: dict[str, int],
                      declared: set[str], channels: set[str], ctx: str) -> Edge:
    src = tr.find("source")
    tgt = tr.find("target")
    if src is None or tgt is None:
        raise ParseError(f"{ctx}: transition needs <source> and <target>")
    try:
        source, target = ids[src.get("ref")], ids[tgt.get("ref")]
    except KeyError as exc:
        raise SpecificationError(f"{ctx}: reference to unknown location {exc.args[0]!r}") from None
    ctx = f"{ctx} ({source} -> {target})"
    selects: list[Select] = []
    guard: Expr = TRUE
    sync = None
    updates: list[tuple[str, Expr]] = []
    nails = []
    for sub in tr:
        if sub.tag in ("source", "target"):
            continue
        if sub.tag == "nail":
            nails.append((sub.get("x", ""), sub.get("y", "")))
            continue
        if sub.tag != "label":
            raise UnsupportedFeature(f"{ctx}: unsupported element <{sub.tag}>")
        kind = sub.get("kind")
        text = sub.text or ""
        if kind not in LABEL_KINDS:
            raise UnsupportedFeature(f"{ctx}: unsupported label kind {kind!r}")
        p = Parser(text, constants, f"{ctx} {kind}")
        if kind == "select":
            selects = [Select(*s) for s in p.selects()]
            constants = {k: v for k, v in constants.items()
                         if k not in {s.name for s in selects}}
        elif kind == "guard":
            if text.strip():
                guard = p.expression()
                p.finish()
        elif kind == "synchronisation":
            sync = p.sync()
            if sync[0] not in channels:
                raise ResolutionError(f"{ctx}: unknown channel {sync[0]!r}")
        elif kind == "assignment":
            updates = p.updates()
    select_names = {s.name for s in selects}
    visible = declared | select_names
    guard = simplify(resolve_members(guard, visible))
    updates = [(n, resolve_members(e, visible)) for n, e in updates]
    for e in [guard] + [v for _, v in updates]:
        if any(isinstance(node, LocIs) for node in walk(e)):
            raise UnsupportedFeature(
                f"{ctx}: location predicates are only allowed in queries ({to_text(e)!r})")
    return Edge(source=source, target=target, selects=tuple(selects), guard=guard,
                sync=sync, updates=tuple(updates), nails=tuple(nails))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _decl_line(v: VarDecl) -> str:
    if v.lo == -32768 and v.hi == 32767:
        typ = "int"
    else:
        typ = f"int[{v.lo},{v.hi}]"
    return f"{typ} {v.name} = {v.initial};"


def declarations_text(model: MasTemplate) -> str:
    lines = [f"const int {n} = {v};" for n, v in model.constants]
    lines += [_decl_line(v) for v in model.globals]
    lines += [f"chan {c};" for c in model.channels]
    return "\n".join(lines)


def serialize_model(model: MasTemplate) -> bytes:
    """Deterministic XML rendering; ``parse_model`` inverts it exactly."""
    out = ['<?xml version="1.0" encoding="utf-8"?>', _DOCTYPE, "<nta>"]
    out.append(f"\t<declaration>{escape(declarations_text(model))}</declaration>")
    next_id = 0
    for graph, count in model.templates:
        attrs = ""
        if graph.components:
            attrs = f" components={quoteattr(','.join(graph.components))}"
        out.append(f"\t<template{attrs}>")
        out.append(f"\t\t<name>{escape(graph.name)}</name>")
        out.append(f"\t\t<parameter>const int[1,{count}] id</parameter>")
        decl = "\n".join(_decl_line(v) for v in graph.privates)
        out.append(f"\t\t<declaration>{escape(decl)}</declaration>")
        ids = {}
        coords = {c[0]: c[1:] for c in graph.coords}
        for loc in graph.locations:
            ids[loc] = f"id{next_id}"
            next_id += 1
            pos = ""
            if loc in coords:
                x, y = coords[loc]
                pos = f" x={quoteattr(x)} y={quoteattr(y)}"
            out.append(f"\t\t<location id=\"{ids[loc]}\"{pos}>"
                       f"<name>{escape(loc)}</name></location>")
        out.append(f"\t\t<init ref=\"{ids[graph.initial]}\"/>")
        for e in graph.edges:
            out.append("\t\t<transition>")
            out.append(f"\t\t\t<source ref=\"{ids[e.source]}\"/>")
            out.append(f"\t\t\t<target ref=\"{ids[e.target]}\"/>")
            if e.selects:
                text = ", ".join(f"{s.name} : int[{s.lo},{s.hi}]" for s in e.selects)
                out.append(f"\t\t\t<label kind=\"select\">{escape(text)}</label>")
            if e.guard != TRUE:
                out.append(f"\t\t\t<label kind=\"guard\">{escape(to_text(e.guard))}</label>")
            if e.sync is not None:
                out.append(f"\t\t\t<label kind=\"synchronisation\">{escape(e.sync[0] + e.sync[1])}</label>")
            if e.updates:
                out.append(f"\t\t\t<label kind=\"assignment\">{escape(updates_text(e.updates))}</label>")
            for x, y in e.nails:
                out.append(f"\t\t\t<nail x={quoteattr(x)} y={quoteattr(y)}/>")
            out.append("\t\t</transition>")
        out.append("\t</template>")
    names = ", ".join(g.name for g, _ in model.templates)
    out.append(f"\t<system>system {names};</system>" if names else "\t<system></system>")
    out.append("</nta>")
    return ("\n".join(out) + "\n").encode("utf-8")


def read_model(path) -> MasTemplate:
    with open(path, "rb") as fh:
        return parse_model(fh.read())


def write_model(model: MasTemplate, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_model(model))
