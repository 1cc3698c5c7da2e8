"""Command-line front end.

Exit codes: 0 success (including a property that fails), 1 I/O or parse
error, 2 usage error, 3 inconclusive result.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Optional, Sequence

from . import benchmarks
from .abstractor import abstract, check_scope_boundary
from .approx import VECTOR_CAP, approximate
from .checker import GlobalModel
from .config import TYPES, Config, read_config, write_config
from .domain import read_domain, write_domain
from .errors import (AbstractionError, ConfigError, DomainTooLarge, MasError)
from .expr import parse_query, to_text, updates_text
from .model import MasTemplate
from .unfold import unfold
from .xmlio import parse_model, serialize_model

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_INCONCLUSIVE = 0, 1, 2, 3
DEFAULT_CONFIG = "masabs.ini"

log = logging.getLogger("masabs")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _load_config(args, must_exist: bool = False) -> Config:
    path = args.config
    if path is None:
        path = DEFAULT_CONFIG if os.path.exists(DEFAULT_CONFIG) else None
    if path is None:
        if must_exist:
            raise UsageError("no config file given (--config)")
        return Config()
    if not os.path.exists(path):
        if must_exist:
            raise OSError(f"config file {path!r} not found")
        return Config()
    with open(path, "rb") as fh:
        return read_config(fh.read())


def _overlay(cfg: Config, args) -> Config:
    """Flags override the config file."""
    for key in ("input", "output", "domain", "target", "type", "merge_name", "merge_init",
                "merge_expr"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    for key in ("vars", "scope", "sync_available"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, [x.strip() for x in value.split(",") if x.strip()])
    cfg.validate()
    return cfg


def _read_model(path: Optional[str]) -> MasTemplate:
    if not path:
        raise UsageError("no input model given (--input)")
    with open(path, "rb") as fh:
        return parse_model(fh.read())


def _emit(data: bytes, path: Optional[str]) -> None:
    if path:
        with open(path, "wb") as fh:
            fh.write(data)
        print(path)
    else:
        sys.stdout.write(data.decode("utf-8"))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_configure(args) -> int:
    path = args.config or DEFAULT_CONFIG
    cfg = Config()
    if os.path.exists(path):
        with open(path, "rb") as fh:
            cfg = read_config(fh.read())
    changed = any(getattr(args, k, None) is not None for k in
                  ("input", "output", "domain", "target", "type", "vars", "scope",
                   "merge_name", "merge_init", "merge_expr", "sync_available")) \
        or args.cap is not None
    cfg = _overlay(cfg, args)
    if args.cap is not None:
        cfg.cap = args.cap
    data = write_config(cfg)
    if changed:
        with open(path, "wb") as fh:
            fh.write(data)
    sys.stdout.write(data.decode("utf-8"))
    return EXIT_OK


def cmd_unfold(args) -> int:
    cfg = _overlay(_load_config(args), args)
    model = _read_model(cfg.input)
    _emit(serialize_model(unfold(model)), args.output)
    return EXIT_OK


def cmd_approx(args) -> int:
    cfg = _overlay(_load_config(args), args)
    model = _read_model(cfg.input)
    if not cfg.vars:
        raise UsageError("no variables given (--vars or 'vars' in the config)")
    cap = args.cap or cfg.cap or VECTOR_CAP
    dom = approximate(model, cfg.vars, cfg.target, cfg.type,
                      sync_available=cfg.sync_available, vector_cap=cap)
    _emit(write_domain(dom), args.output or cfg.domain)
    return EXIT_OK


def cmd_abstract(args) -> int:
    cfg = _overlay(_load_config(args), args)
    model = _read_model(cfg.input)
    if not cfg.domain:
        raise UsageError("no domain file given (--domain or 'domain' in the config)")
    with open(cfg.domain, "rb") as fh:
        dom = read_domain(fh.read())
    mapping = cfg.mapping(dict(model.constants))
    out = abstract(model, mapping, dom, confirm_boundary=args.confirm_boundary)
    pending = [b for b in check_scope_boundary(model, mapping, dom) if b.needs_confirmation]
    if pending and not args.confirm_boundary:
        log.warning("%d exit edge(s) need confirmation; rerun with --confirm-boundary to "
                    "reintroduce the removed variables from the target domain", len(pending))
    _emit(serialize_model(out), args.output)
    return EXIT_OK


def model_info(model: MasTemplate) -> dict:
    consts = dict(model.constants)
    info = {
        "constants": consts,
        "channels": list(model.channels),
        "globals": [_var(v) for v in model.globals],
        "templates": [],
    }
    for graph, count in model.templates:
        info["templates"].append({
            "name": graph.name,
            "instances": count,
            "variables": [_var(v) for v in graph.privates],
            "locations": list(graph.locations),
            "initial": graph.initial,
            "edges": [_edge(e) for e in graph.edges],
        })
    return info


def _var(v) -> dict:
    return {"name": v.name, "lo": v.lo, "hi": v.hi, "initial": v.initial}


def _edge(e) -> dict:
    return {
        "source": e.source, "target": e.target,
        "select": ", ".join(f"{s.name}:int[{s.lo},{s.hi}]" for s in e.selects),
        "guard": to_text(e.guard),
        "sync": "".join(e.sync) if e.sync else "",
        "assign": updates_text(e.updates),
    }


def cmd_info(args) -> int:
    cfg = _overlay(_load_config(args), args)
    model = _read_model(cfg.input)
    info = model_info(model)
    if args.json:
        print(json.dumps(info, indent=2, sort_keys=True))
        return EXIT_OK
    lines = []
    if info["globals"]:
        lines.append("global variables:")
        lines += [f"  {v['name']} : int[{v['lo']},{v['hi']}] = {v['initial']}" for v in info["globals"]]
    if info["channels"]:
        lines.append("channels: " + ", ".join(info["channels"]))
    for t in info["templates"]:
        lines.append(f"template {t['name']} (x{t['instances']}):")
        for v in t["variables"]:
            lines.append(f"  var {v['name']} : int[{v['lo']},{v['hi']}] = {v['initial']}")
        for loc in t["locations"]:
            lines.append(f"  location {loc}" + (" (initial)" if loc == t["initial"] else ""))
        for e in t["edges"]:
            parts = [f"  edge {e['source']} -> {e['target']}"]
            for key in ("select", "guard", "sync", "assign"):
                if e[key] and not (key == "guard" and e[key] == "true"):
                    parts.append(f"{key}: {e[key]}")
            lines.append("; ".join(parts))
    if lines:
        print("\n".join(lines))
    return EXIT_OK


def cmd_check(args) -> int:
    cfg = _overlay(_load_config(args), args)
    model = _read_model(cfg.input)
    text = args.query
    if args.query_file:
        with open(args.query_file, encoding="utf-8") as fh:
            text = fh.read().strip()
    if not text:
        raise UsageError("no query given (--query or --query-file)")
    query = parse_query(text, dict(model.constants))
    res = GlobalModel(model).check(query, cap=args.cap, threads=args.threads)
    verdict = "inconclusive (cap)" if res.verdict == "inconclusive" else res.verdict
    if args.json:
        doc = {"states": res.stats.states, "transitions": res.stats.transitions,
               "result": res.verdict, "time_ms": round(res.stats.time_ms, 3)}
        if res.trace is not None:
            doc["trace"] = res.trace
        print(json.dumps(doc, sort_keys=True))
    else:
        print(verdict)
        print(f"states: {res.stats.states}, transitions: {res.stats.transitions}, "
              f"time: {res.stats.time_ms / 1000:.3f}s")
        if res.trace:
            kind = "counterexample" if query.quantifier == "A[]" else "witness"
            print(f"{kind} ({len(res.trace) - 1} steps):")
            for k, step in enumerate(res.trace):
                locs = ", ".join(f"{a}.{l}" for a, l in step["locations"].items())
                vals = ", ".join(f"{n}={v}" for n, v in step["values"].items())
                head = f"  {k}: " + (step["transition"] or "initial")
                print(head)
                print(f"     [{locs}] {vals}")
    return EXIT_INCONCLUSIVE if res.verdict == "inconclusive" else EXIT_OK


def _grid(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise ValueError("empty grid")
    return out


def cmd_bench(args) -> int:
    try:
        grid = _grid(args.grid) if args.grid else None
    except ValueError:
        raise UsageError(f"--grid: expected values like '1-3' or '2,3,4', got {args.grid!r}")
    if args.family == "postal":
        records = benchmarks.run_postal(grid or [1, 2, 3], nc=args.nc, cap=args.cap,
                                        threads=args.threads)
    else:
        records = benchmarks.run_social(grid or [2, 3, 4], cap=args.cap, threads=args.threads)
    if args.json:
        print(benchmarks.json_lines(records))
    else:
        print(benchmarks.format_table(records))
    if any(r.verdict == "inconclusive" for r in records):
        return EXIT_INCONCLUSIVE
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = {"default": argparse.SUPPRESS} if suppress else {}
    p.add_argument("--input", "-i", help="input model file", **d)
    p.add_argument("--output", "-o", help="output file (default: stdout)", **d)
    p.add_argument("--config", "-c", help=f"config file (default: ./{DEFAULT_CONFIG} if present)", **d)
    p.add_argument("--cap", type=_positive, help="state cap (check/bench) or vector cap (approx)", **d)
    p.add_argument("--threads", type=_positive, help="worker threads", **d)
    p.add_argument("--json", action="store_true", help="machine-readable output", **d)


def _positive(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return value


def _mapping_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--target", help="template name or 'ext' for the combined graph")
    p.add_argument("--vars", help="comma-separated variable names")
    p.add_argument("--type", choices=TYPES, help="approximation type")
    p.add_argument("--scope", help="comma-separated scope locations (default: all)")
    p.add_argument("--sync-available", dest="sync_available",
                   help="channels treated as always available by lower approximations")
    p.add_argument("--domain", help="domain JSON file")
    p.add_argument("--merge-name", dest="merge_name")
    p.add_argument("--merge-init", dest="merge_init", type=int)
    p.add_argument("--merge-expr", dest="merge_expr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="masabs",
        description="Variable abstraction for multi-agent system graphs.")
    _global_flags(parser, suppress=False)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)

    p = sub.add_parser("configure", parents=[common], help="set parameters in the config file")
    _mapping_flags(p)
    p.set_defaults(func=cmd_configure)

    p = sub.add_parser("unfold", parents=[common], help="write the combined MAS graph")
    p.set_defaults(func=cmd_unfold)

    p = sub.add_parser("approx", parents=[common], help="approximate a local domain")
    _mapping_flags(p)
    p.set_defaults(func=cmd_approx)

    p = sub.add_parser("abstract", parents=[common], help="write a may/must abstraction")
    _mapping_flags(p)
    p.add_argument("--confirm-boundary", action="store_true",
                   help="reintroduce removed variables on scope exits under lower domains")
    p.set_defaults(func=cmd_abstract)

    p = sub.add_parser("info", parents=[common], help="list variables, locations and edges")
    p.set_defaults(func=cmd_info)

    p = sub.add_parser("check", parents=[common], help="check an A[] or E<> query")
    p.add_argument("--query", "-q", help="query text, e.g. 'A[](x<=3)'")
    p.add_argument("--query-file", help="file holding the query")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("bench", parents=[common], help="run a benchmark family")
    p.add_argument("family", choices=("postal", "social"))
    p.add_argument("--grid", help="scaling values, e.g. '1-3' (NV) or '2,3,4' (NAg)")
    p.add_argument("--nc", type=_positive, default=3, help="candidates for postal (default 3)")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.threads is None:
        args.threads = 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, ConfigError, AbstractionError) as exc:
        print(f"masabs {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DomainTooLarge as exc:
        print(f"masabs {args.command}: inconclusive: {exc}", file=sys.stderr)
        return EXIT_INCONCLUSIVE
    except (OSError, MasError) as exc:
        msg = exc.strerror + f": {exc.filename!r}" if isinstance(exc, OSError) and exc.strerror \
            else str(exc)
        print(f"masabs {args.command}: error: {msg}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
