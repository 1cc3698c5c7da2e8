"""Expression language shared by guards, updates, merge mappings and queries.

The grammar follows C precedence::

    ||  <  &&  <  == !=  <  < <= > >=  <  + -  <  * / %  <  unary - !

Booleans are the integers 0 and 1; any nonzero value is true. Integer
arithmetic is signed, division truncates toward zero, and every
intermediate result must stay within the signed 16-bit range.
"""

from __future__ import annotations

import re
from collections import ChainMap
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Mapping, Optional, Union

from .errors import EvaluationError, ParseError, ResolutionError, UnsupportedFeature

INT_MIN = -32768
INT_MAX = 32767

RELATIONAL = ("<", "<=", ">", ">=")
EQUALITY = ("==", "!=")
ARITH = ("+", "-", "*", "/", "%")
LOGICAL = ("&&", "||")

_PREC = {"||": 1, "&&": 2, "==": 3, "!=": 3, "<": 4, "<=": 4, ">": 4, ">=": 4,
         "+": 5, "-": 5, "*": 6, "/": 6, "%": 6}
_UNARY_PREC = 7
_ATOM_PREC = 8


@dataclass(frozen=True)
class Const:
    value: int


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str
    arg: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Quant:
    """Bounded quantifier ``exists(i:int[lo,hi])(body)`` / ``forall(...)``."""

    kind: str
    var: str
    lo: int
    hi: int
    body: "Expr"


@dataclass(frozen=True)
class Member:
    """Unresolved instance reference ``Owner(index).member``.

    ``index`` may depend on a quantifier variable, so resolution to a
    variable or a location predicate is deferred until the index is known.
    """

    owner: str
    index: "Expr"
    member: str


@dataclass(frozen=True)
class LocIs:
    """True iff agent ``agent`` currently occupies ``location``."""

    agent: str
    location: str


Expr = Union[Const, Var, Unary, Binary, Quant, Member, LocIs]

TRUE = Const(1)
FALSE = Const(0)


def instance_name(owner: str, index: int) -> str:
    return f"{owner}({index})"


# ---------------------------------------------------------------------------
# Tokenizer / parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+|//[^\n]*|/\*.*?\*/)
  | (?P<num>\d+)
  | (?P<id>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>:=|\+\+|--|\+=|-=|&&|\|\||==|!=|<=|>=|\[\]|<>|[-+*/%<>!()\[\]:,.=;{}?])
    """,
    re.VERBOSE | re.DOTALL,
)

_KEYWORD_OPS = {"and": "&&", "or": "||", "not": "!"}


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    pos: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r} at offset {pos} in {text!r}")
        kind = m.lastgroup
        if kind != "ws":
            word = m.group()
            if kind == "id" and word in _KEYWORD_OPS:
                tokens.append(Token("op", _KEYWORD_OPS[word], pos))
            else:
                tokens.append(Token(kind, word, pos))
        pos = m.end()
    tokens.append(Token("eof", "", pos))
    return tokens


class Parser:
    """Recursive-descent parser over one piece of label or declaration text.

    ``constants`` are substituted by their values while parsing, so select
    bounds, quantifier bounds and array-free declarations get literal bounds.
    """

    def __init__(self, text: str, constants: Optional[Mapping[str, int]] = None,
                 context: str = ""):
        self.text = text
        self.tokens = tokenize(text)
        self.i = 0
        self.constants = dict(constants or {})
        self.context = context
        self._bound: list[str] = []

    # -- token helpers -----------------------------------------------------
    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.tokens[min(self.i + k, len(self.tokens) - 1)]

    def error(self, msg: str) -> ParseError:
        where = f" in {self.context}" if self.context else ""
        return ParseError(f"{msg} at offset {self.tok.pos}{where}: {self.text!r}")

    def at(self, text: str) -> bool:
        return self.tok.kind in ("op", "id") and self.tok.text == text

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        if not self.at(text):
            raise self.error(f"expected {text!r}, found {self.tok.text or 'end of input'!r}")
        t = self.tok
        self.i += 1
        return t

    def ident(self) -> str:
        if self.tok.kind != "id":
            raise self.error(f"expected identifier, found {self.tok.text or 'end of input'!r}")
        t = self.tok
        self.i += 1
        return t.text

    def at_end(self) -> bool:
        return self.tok.kind == "eof"

    def finish(self) -> None:
        if not self.at_end():
            raise self.error(f"unexpected {self.tok.text!r}")

    # -- expressions -------------------------------------------------------
    def expression(self) -> Expr:
        return self._binary(1)

    def _binary(self, level: int) -> Expr:
        if level > 6:
            return self._unary()
        left = self._binary(level + 1)
        while self.tok.kind == "op" and _PREC.get(self.tok.text) == level:
            op = self.tok.text
            self.i += 1
            right = self._binary(level + 1)
            if op in ("/", "%") and right == Const(0):
                raise self.error("division by constant zero")
            left = Binary(op, left, right)
        return left

    def _unary(self) -> Expr:
        if self.tok.kind == "op" and self.tok.text in ("-", "!"):
            op = self.tok.text
            self.i += 1
            if op == "-" and self.tok.kind == "num":
                value = int(self.tok.text)
                self.i += 1
                return Const(-value)
            return Unary(op, self._unary())
        if self.accept("+"):
            return self._unary()
        return self._primary()

    def _primary(self) -> Expr:
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            return Const(int(tok.text))
        if self.accept("("):
            e = self.expression()
            self.expect(")")
            return e
        if tok.kind == "id":
            name = tok.text
            if name == "true":
                self.i += 1
                return TRUE
            if name == "false":
                self.i += 1
                return FALSE
            if name in ("exists", "forall") and self.peek().text == "(":
                return self._quantifier()
            self.i += 1
            if self.at("(") and self.peek().kind != "eof":
                # Owner(index).member
                self.expect("(")
                index = self.expression()
                self.expect(")")
                self.expect(".")
                member = self.ident()
                return Member(name, self.fold_constants(index), member)
            if self.at(".") and self.peek().kind == "id":
                self.expect(".")
                member = self.ident()
                return Member(name, Const(1), member)
            if name in self.constants and name not in self._bound:
                return Const(self.constants[name])
            return Var(name)
        raise self.error(f"unexpected {tok.text or 'end of input'!r}")

    def _quantifier(self) -> Expr:
        kind = self.ident()
        self.expect("(")
        var = self.ident()
        self.expect(":")
        lo, hi = self.int_range()
        self.expect(")")
        self._bound.append(var)
        try:
            # the body extends as far right as possible
            body = self.expression()
        finally:
            self._bound.pop()
        return Quant(kind, var, lo, hi, body)

    def int_range(self) -> tuple[int, int]:
        """Parse ``int[lo,hi]`` with constant-expression bounds."""
        self.expect("int")
        self.expect("[")
        lo = self.constant_expression()
        self.expect(",")
        hi = self.constant_expression()
        self.expect("]")
        return lo, hi

    def constant_expression(self) -> int:
        e = self.fold_constants(self.expression())
        if not isinstance(e, Const):
            raise self.error(f"expected a constant, got {to_text(e)!r}")
        return e.value

    def fold_constants(self, e: Expr) -> Expr:
        return simplify(e)

    # -- labels --------------------------------------------------------------
    def updates(self) -> list[tuple[str, Expr]]:
        """Assignment label: ``x = e, y := e, z++, w += e``."""
        out: list[tuple[str, Expr]] = []
        if self.at_end():
            return out
        while True:
            target = self.lvalue()
            if self.accept("=") or self.accept(":="):
                out.append((target, self.expression()))
            elif self.accept("++"):
                out.append((target, Binary("+", Var(target), Const(1))))
            elif self.accept("--"):
                out.append((target, Binary("-", Var(target), Const(1))))
            elif self.accept("+="):
                out.append((target, Binary("+", Var(target), self.expression())))
            elif self.accept("-="):
                out.append((target, Binary("-", Var(target), self.expression())))
            else:
                raise self.error("expected assignment operator")
            if not self.accept(","):
                break
        self.finish()
        return out

    def lvalue(self) -> str:
        name = self.ident()
        if self.at("("):
            self.expect("(")
            idx = self.constant_expression()
            self.expect(")")
            self.expect(".")
            return f"{instance_name(name, idx)}.{self.ident()}"
        if self.at("["):
            raise UnsupportedFeature(f"arrays are not supported ({self.context})")
        return name

    def selects(self) -> list[tuple[str, int, int]]:
        out = []
        if self.at_end():
            return out
        while True:
            name = self.ident()
            self.expect(":")
            lo, hi = self.int_range()
            out.append((name, lo, hi))
            if not self.accept(","):
                break
        self.finish()
        return out

    def sync(self) -> tuple[str, str]:
        name = self.ident()
        if self.at("["):
            raise UnsupportedFeature(f"channel arrays are not supported ({self.context})")
        if self.accept("!"):
            direction = "!"
        elif self.accept("?"):
            direction = "?"
        else:
            raise self.error("expected '!' or '?'")
        self.finish()
        return name, direction


def parse_expr(text: str, constants: Optional[Mapping[str, int]] = None,
               context: str = "") -> Expr:
    p = Parser(text, constants, context)
    e = p.expression()
    p.finish()
    return e


@dataclass(frozen=True)
class Query:
    quantifier: str  # "A[]" or "E<>"
    prop: Expr

    def __str__(self) -> str:
        return f"{self.quantifier} {to_text(self.prop)}"


def parse_query(text: str, constants: Optional[Mapping[str, int]] = None) -> Query:
    p = Parser(text.strip(), constants, "query")
    if p.accept("A"):
        p.expect("[]")
        q = "A[]"
    elif p.accept("E"):
        p.expect("<>")
        q = "E<>"
    else:
        raise p.error("query must start with 'A[]' or 'E<>'")
    e = p.expression()
    p.finish()
    return Query(q, e)


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------

def _prec(e: Expr) -> int:
    if isinstance(e, Binary):
        return _PREC[e.op]
    if isinstance(e, Unary):
        return _UNARY_PREC
    if isinstance(e, Const) and e.value < 0:
        return _UNARY_PREC
    if isinstance(e, Quant):
        return 0
    return _ATOM_PREC


def to_text(e: Expr) -> str:
    if isinstance(e, Const):
        return str(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, LocIs):
        return f"{e.agent}.{e.location}"
    if isinstance(e, Member):
        return f"{e.owner}({to_text(e.index)}).{e.member}"
    if isinstance(e, Quant):
        return f"{e.kind}({e.var}:int[{e.lo},{e.hi}])({to_text(e.body)})"
    if isinstance(e, Unary):
        inner = to_text(e.arg)
        nested_minus = e.op == "-" and (
            (isinstance(e.arg, Unary) and e.arg.op == "-")
            or isinstance(e.arg, Const))
        if _prec(e.arg) < _UNARY_PREC or nested_minus:
            inner = f"({inner})"
        return f"{e.op}{inner}"
    if isinstance(e, Binary):
        p = _PREC[e.op]
        left = to_text(e.left)
        right = to_text(e.right)
        if _prec(e.left) < p:
            left = f"({left})"
        if _prec(e.right) <= p:
            right = f"({right})"
        return f"{left} {e.op} {right}"
    raise TypeError(f"not an expression: {e!r}")


def updates_text(updates: Iterable[tuple[str, Expr]]) -> str:
    return ", ".join(f"{name} = {to_text(value)}" for name, value in updates)


# ---------------------------------------------------------------------------
# Scalar evaluation
# ---------------------------------------------------------------------------

def check_int(value: int, e: Expr) -> int:
    if value < INT_MIN or value > INT_MAX:
        raise EvaluationError(f"16-bit overflow ({value}) evaluating {to_text(e)!r}")
    return value


def int_div(a: int, b: int) -> int:
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b >= 0) else -q


def int_mod(a: int, b: int) -> int:
    return a - b * int_div(a, b)


def evaluate(e: Expr, values: Mapping[str, int],
             locations: Optional[Mapping[str, str]] = None) -> int:
    """Evaluate ``e`` under a variable valuation and an agent-location map.

    Raises :class:`ResolutionError` for unbound names and
    :class:`EvaluationError` for division by zero or 16-bit overflow.
    """
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return values[e.name]
        except KeyError:
            raise ResolutionError(f"unbound variable {e.name!r}") from None
    if isinstance(e, Binary):
        op = e.op
        if op == "&&":
            return int(bool(evaluate(e.left, values, locations))
                       and bool(evaluate(e.right, values, locations)))
        if op == "||":
            return int(bool(evaluate(e.left, values, locations))
                       or bool(evaluate(e.right, values, locations)))
        a = evaluate(e.left, values, locations)
        b = evaluate(e.right, values, locations)
        if op == "+":
            return check_int(a + b, e)
        if op == "-":
            return check_int(a - b, e)
        if op == "*":
            return check_int(a * b, e)
        if op in ("/", "%"):
            if b == 0:
                raise EvaluationError(f"division by zero in {to_text(e)!r}")
            return check_int(int_div(a, b) if op == "/" else int_mod(a, b), e)
        if op == "<":
            return int(a < b)
        if op == "<=":
            return int(a <= b)
        if op == ">":
            return int(a > b)
        if op == ">=":
            return int(a >= b)
        if op == "==":
            return int(a == b)
        if op == "!=":
            return int(a != b)
        raise EvaluationError(f"unknown operator {op!r}")
    if isinstance(e, Unary):
        a = evaluate(e.arg, values, locations)
        if e.op == "-":
            return check_int(-a, e)
        return int(a == 0)
    if isinstance(e, Quant):
        scope = ChainMap({}, values)
        results = []
        for i in range(e.lo, e.hi + 1):
            scope.maps[0][e.var] = i
            results.append(bool(evaluate(e.body, scope, locations)))
            if e.kind == "exists" and results[-1]:
                return 1
            if e.kind == "forall" and not results[-1]:
                return 0
        return int(e.kind == "forall")
    if isinstance(e, LocIs):
        if locations is None or e.agent not in locations:
            raise ResolutionError(f"unknown agent {e.agent!r}")
        return int(locations[e.agent] == e.location)
    if isinstance(e, Member):
        agent = instance_name(e.owner, evaluate(e.index, values, locations))
        qualified = f"{agent}.{e.member}"
        if qualified in values:
            return values[qualified]
        if locations is not None and agent in locations:
            return int(locations[agent] == e.member)
        raise ResolutionError(f"cannot resolve {qualified!r}")
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# Traversal and rewriting
# ---------------------------------------------------------------------------

def children(e: Expr) -> tuple[Expr, ...]:
    if isinstance(e, Unary):
        return (e.arg,)
    if isinstance(e, Binary):
        return (e.left, e.right)
    if isinstance(e, Quant):
        return (e.body,)
    if isinstance(e, Member):
        return (e.index,)
    return ()


def walk(e: Expr) -> Iterator[Expr]:
    stack = [e]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(children(node))


def free_vars(e: Expr) -> set[str]:
    """Names of variables read by ``e`` (quantifier indices excluded)."""
    out: set[str] = set()

    def go(node: Expr, bound: frozenset) -> None:
        if isinstance(node, Var):
            if node.name not in bound:
                out.add(node.name)
        elif isinstance(node, Quant):
            go(node.body, bound | {node.var})
        else:
            for c in children(node):
                go(c, bound)

    go(e, frozenset())
    return out


def map_expr(e: Expr, fn: Callable[[Expr], Optional[Expr]]) -> Expr:
    """Bottom-up rebuild; ``fn`` may return a replacement or None."""
    if isinstance(e, Unary):
        e = Unary(e.op, map_expr(e.arg, fn))
    elif isinstance(e, Binary):
        e = Binary(e.op, map_expr(e.left, fn), map_expr(e.right, fn))
    elif isinstance(e, Quant):
        e = Quant(e.kind, e.var, e.lo, e.hi, map_expr(e.body, fn))
    elif isinstance(e, Member):
        e = Member(e.owner, map_expr(e.index, fn), e.member)
    r = fn(e)
    return e if r is None else r


def substitute(e: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """Replace free variable occurrences according to ``mapping``."""
    if not mapping:
        return e
    if isinstance(e, Var):
        return mapping.get(e.name, e)
    if isinstance(e, Quant):
        inner = {k: v for k, v in mapping.items() if k != e.var}
        return Quant(e.kind, e.var, e.lo, e.hi, substitute(e.body, inner))
    if isinstance(e, Unary):
        return Unary(e.op, substitute(e.arg, mapping))
    if isinstance(e, Binary):
        return Binary(e.op, substitute(e.left, mapping), substitute(e.right, mapping))
    if isinstance(e, Member):
        return Member(e.owner, substitute(e.index, mapping), e.member)
    return e


def rename_vars(e: Expr, names: Mapping[str, str]) -> Expr:
    return substitute(e, {k: Var(v) for k, v in names.items()})


def is_boolean(e: Expr) -> bool:
    """True when ``e`` always evaluates to 0 or 1."""
    if isinstance(e, Const):
        return e.value in (0, 1)
    if isinstance(e, Binary):
        return e.op in LOGICAL or e.op in RELATIONAL or e.op in EQUALITY
    if isinstance(e, Unary):
        return e.op == "!"
    return isinstance(e, (Quant, LocIs))


def _fits(v: int) -> bool:
    return INT_MIN <= v <= INT_MAX


def simplify(e: Expr) -> Expr:
    """Constant folding plus the boolean identities that preserve values.

    Folding never hides a runtime error: a division by zero or an overflow
    stays symbolic so that evaluation still reports it.
    """
    if isinstance(e, Unary):
        a = simplify(e.arg)
        if isinstance(a, Const):
            if e.op == "!":
                return Const(int(a.value == 0))
            if _fits(-a.value):
                return Const(-a.value)
        if e.op == "!" and isinstance(a, Unary) and a.op == "!" and is_boolean(a.arg):
            return a.arg
        return Unary(e.op, a)
    if isinstance(e, Binary):
        a = simplify(e.left)
        b = simplify(e.right)
        op = e.op
        if op == "&&":
            if isinstance(a, Const):
                if a.value == 0:
                    return FALSE
                if isinstance(b, Const):
                    return Const(int(b.value != 0))
                return b if is_boolean(b) else Binary(op, TRUE, b)
            if isinstance(b, Const) and b.value != 0 and is_boolean(a):
                return a
            if b == FALSE and not _may_fail(a):
                return FALSE
            return Binary(op, a, b)
        if op == "||":
            if isinstance(a, Const):
                if a.value != 0:
                    return TRUE
                if isinstance(b, Const):
                    return Const(int(b.value != 0))
                return b if is_boolean(b) else Binary(op, FALSE, b)
            if b == FALSE and is_boolean(a):
                return a
            if isinstance(b, Const) and b.value != 0 and not _may_fail(a):
                return TRUE
            return Binary(op, a, b)
        if isinstance(a, Const) and isinstance(b, Const):
            try:
                v = evaluate(Binary(op, a, b), {})
            except EvaluationError:
                return Binary(op, a, b)
            return Const(v)
        if op == "+" and b == Const(0):
            return a
        if op == "+" and a == Const(0):
            return b
        if op == "-" and b == Const(0):
            return a
        if op == "*" and (a == Const(1)):
            return b
        if op == "*" and (b == Const(1)):
            return a
        if op == "==" and a == b and not _may_fail(a):
            return TRUE
        return Binary(op, a, b)
    if isinstance(e, Quant):
        body = simplify(e.body)
        if isinstance(body, Const):
            if e.lo > e.hi:
                return Const(int(e.kind == "forall"))
            return Const(int(body.value != 0))
        return Quant(e.kind, e.var, e.lo, e.hi, body)
    if isinstance(e, Member):
        return Member(e.owner, simplify(e.index), e.member)
    return e


def _may_fail(e: Expr) -> bool:
    """Whether evaluating ``e`` could raise (division or arithmetic overflow)."""
    for node in walk(e):
        if isinstance(node, Binary) and node.op in ARITH:
            return True
        if isinstance(node, Unary) and node.op == "-":
            return True
    return False


def conjunction(parts: Iterable[Expr]) -> Expr:
    out: Optional[Expr] = None
    for p in parts:
        out = p if out is None else Binary("&&", out, p)
    return TRUE if out is None else out


def disjunction(parts: Iterable[Expr]) -> Expr:
    out: Optional[Expr] = None
    for p in parts:
        out = p if out is None else Binary("||", out, p)
    return FALSE if out is None else out


def resolve_members(e: Expr, variables: Iterable[str]) -> Expr:
    """Turn ``Owner(k).member`` with a literal index into a variable reference
    when ``Owner(k).member`` is declared, otherwise into a location predicate."""
    declared = set(variables)

    def fn(node: Expr) -> Optional[Expr]:
        if isinstance(node, Member) and isinstance(node.index, Const):
            agent = instance_name(node.owner, node.index.value)
            qualified = f"{agent}.{node.member}"
            if qualified in declared:
                return Var(qualified)
            return LocIs(agent, node.member)
        return None

    return map_expr(e, fn)


def expand_quantifiers(e: Expr) -> Expr:
    """Replace bounded quantifiers by finite conjunctions/disjunctions."""

    def fn(node: Expr) -> Optional[Expr]:
        if isinstance(node, Quant):
            parts = [substitute(node.body, {node.var: Const(i)})
                     for i in range(node.lo, node.hi + 1)]
            parts = [simplify(p) for p in parts]
            if node.kind == "exists":
                return disjunction(parts) if parts else FALSE
            return conjunction(parts) if parts else TRUE
        return None

    return map_expr(e, fn)
