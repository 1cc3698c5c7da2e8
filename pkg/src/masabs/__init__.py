"""Variable abstraction for multi-agent system graphs."""

from .abstractor import MappingFunction, Merge, abstract, check_scope_boundary
from .approx import approx_lower, approx_upper, approximate
from .checker import GlobalModel, check, explore, project_reachable
from .domain import LocalDomain, read_domain, write_domain
from .expr import parse_expr, parse_query
from .model import AgentGraph, Edge, MasTemplate, VarDecl
from .unfold import unfold
from .xmlio import parse_model, serialize_model

__all__ = [
    "AgentGraph", "Edge", "GlobalModel", "LocalDomain", "MappingFunction", "MasTemplate",
    "Merge", "VarDecl", "abstract", "approx_lower", "approx_upper", "approximate", "check",
    "check_scope_boundary", "explore", "parse_expr", "parse_model", "parse_query",
    "project_reachable", "read_domain", "serialize_model", "unfold", "write_domain",
]
