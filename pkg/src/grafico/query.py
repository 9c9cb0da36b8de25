"""Read-only SPARQL subset: parser, guard checks, evaluator, VALUES templating.

The grammar covers SELECT/ASK with sub-selects, OPTIONAL, FILTER and
FILTER NOT EXISTS, BIND (COALESCE / REPLACE / STR / CONCAT), VALUES, UNION,
and property paths (inverse, sequence, zero-or-more closure). Both ``^p`` and
``~p`` spell the inverse path; the canonical printer normalizes to ``^p``.
Anything that can write (update keywords, statement-terminating semicolons)
is rejected before parsing.
"""

from __future__ import annotations

import re
import time
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional, Union

from .atoms import IRI
from .store import Literal, Term, TripleStore

RDF_TYPE_IRI = IRI("http://www.w3.org/1999/02/22-rdf-syntax-ns#type")


# --------------------------------------------------------------------------
# errors

class QuerySyntaxError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        self.line = line
        self.column = column
        super().__init__(f"{message} at line {line}, column {column}")


class NotReadOnly(ValueError):
    pass


class UnsupportedForm(ValueError):
    pass


class ComplexityViolation(ValueError):
    def __init__(self, limit_name: str, observed: int, allowed: int):
        self.limit_name = limit_name
        self.observed = observed
        self.allowed = allowed
        super().__init__(f"{limit_name}: {observed} exceeds limit {allowed}")


class QueryTimeout(TimeoutError):
    pass


class EvaluationFault(RuntimeError):
    pass


class UnknownMarker(KeyError):
    pass


# --------------------------------------------------------------------------
# guard configuration

@dataclass(frozen=True)
class GuardConfig:
    max_triple_patterns: int = 50
    max_optional_depth: int = 5
    max_union_branches: int = 10
    timeout: float = 45.0

    def __post_init__(self):
        for name in ("max_triple_patterns", "max_optional_depth",
                     "max_union_branches", "timeout"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


# --------------------------------------------------------------------------
# AST

@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self) -> str:
        return f"?{self.name}"


Node = Union[Var, IRI, Literal]


@dataclass(frozen=True)
class PredicatePath:
    iri: IRI


@dataclass(frozen=True)
class InversePath:
    inner: "Path"


@dataclass(frozen=True)
class SequencePath:
    parts: tuple


@dataclass(frozen=True)
class ZeroOrMorePath:
    inner: "Path"


Path = Union[PredicatePath, InversePath, SequencePath, ZeroOrMorePath]


@dataclass(frozen=True)
class TriplePattern:
    subject: Node
    predicate: Path
    object: Node


@dataclass(frozen=True)
class FuncCall:
    name: str  # COALESCE | REPLACE | STR | CONCAT
    args: tuple


@dataclass(frozen=True)
class Comparison:
    op: str  # "=" | "!="
    left: Any
    right: Any


Expr = Union[Var, Literal, FuncCall, Comparison]


@dataclass(frozen=True)
class FilterClause:
    expr: Expr


@dataclass(frozen=True)
class FilterNotExists:
    group: "Group"


@dataclass(frozen=True)
class OptionalClause:
    group: "Group"


@dataclass(frozen=True)
class BindClause:
    expr: Expr
    var: Var


@dataclass(frozen=True)
class ValuesClause:
    var: Var
    terms: tuple


@dataclass(frozen=True)
class UnionClause:
    branches: tuple  # of Group


@dataclass(frozen=True)
class SubSelect:
    query: "QueryAST"


@dataclass(frozen=True)
class Group:
    elements: tuple


@dataclass(frozen=True)
class QueryAST:
    form: str  # SELECT | ASK
    prefixes: tuple  # of (prefix, namespace)
    select: tuple  # of Var; empty for ASK
    distinct: bool
    pattern: Group
    order_by: tuple = ()  # of Var


# --------------------------------------------------------------------------
# read-only screening

_STRING_OR_COMMENT = re.compile(r'"(?:[^"\\]|\\.)*"|#[^\n]*')
_UPDATE_KEYWORDS = re.compile(
    r"\b(INSERT|DELETE|DROP|CLEAR|LOAD|CREATE)\b", re.IGNORECASE
)


def _blank_strings_and_comments(text: str) -> str:
    return _STRING_OR_COMMENT.sub(lambda m: " " * len(m.group(0)), text)


def screen_read_only(text: str) -> None:
    """Reject update keywords and statement-terminating semicolons."""
    stripped = _blank_strings_and_comments(text)
    m = _UPDATE_KEYWORDS.search(stripped)
    if m:
        raise NotReadOnly(f"update keyword {m.group(1).upper()} is not allowed")
    depth = 0
    for c in stripped:
        if c == "{":
            depth += 1
        elif c == "}":
            depth -= 1
        elif c == ";" and depth == 0:
            raise NotReadOnly("statement-terminating semicolon is not allowed")


# --------------------------------------------------------------------------
# tokenizer

@dataclass(frozen=True)
class _Token:
    kind: str
    value: str
    line: int
    column: int


_KEYWORDS = {
    "PREFIX", "SELECT", "ASK", "DISTINCT", "WHERE", "FILTER", "OPTIONAL",
    "BIND", "VALUES", "UNION", "ORDER", "BY", "NOT", "EXISTS", "AS",
    "CONSTRUCT", "DESCRIBE",
}

_TOKEN_RE = re.compile(
    r"""
      (?P<WS>\s+)
    | (?P<COMMENT>\#[^\n]*)
    | (?P<IRIREF><[^<>\s]*>)
    | (?P<VAR>\?[A-Za-z_][A-Za-z0-9_]*)
    | (?P<STRING>"(?:[^"\\\n]|\\.)*")
    | (?P<NUMBER>[+-]?\d+(?:\.\d+)?)
    | (?P<PNAME>[A-Za-z_][A-Za-z0-9_-]*:[A-Za-z_][A-Za-z0-9_.-]*)
    | (?P<NAME>[A-Za-z_][A-Za-z0-9_]*)
    | (?P<NEQ>!=)
    | (?P<PUNCT>[{}().;,/*^~=<>:])
    """,
    re.VERBOSE,
)


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, col = 1, 1
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise QuerySyntaxError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        value = m.group(0)
        if kind == "NAME" and value.upper() in _KEYWORDS:
            tokens.append(_Token("KEYWORD", value.upper(), line, col))
        elif kind == "NAME" and value == "a":
            tokens.append(_Token("A", value, line, col))
        elif kind not in ("WS", "COMMENT"):
            tokens.append(_Token(kind, value, line, col))
        newlines = value.count("\n")
        if newlines:
            line += newlines
            col = len(value) - value.rfind("\n")
        else:
            col += len(value)
        pos = m.end()
    tokens.append(_Token("EOF", "", line, col))
    return tokens


# --------------------------------------------------------------------------
# parser

class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0
        self.prefixes: dict[str, str] = {}

    def peek(self, ahead: int = 0) -> _Token:
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)]

    def next(self) -> _Token:
        tok = self.tokens[self.pos]
        if tok.kind != "EOF":
            self.pos += 1
        return tok

    def fail(self, message: str) -> None:
        tok = self.peek()
        raise QuerySyntaxError(message, tok.line, tok.column)

    def expect(self, kind: str, value: Optional[str] = None) -> _Token:
        tok = self.peek()
        if tok.kind != kind or (value is not None and tok.value != value):
            self.fail(f"expected {value or kind}, found {tok.value!r}")
        return self.next()

    def at_keyword(self, *words: str) -> bool:
        tok = self.peek()
        return tok.kind == "KEYWORD" and tok.value in words

    # -- entry points ------------------------------------------------------

    def parse_query(self) -> QueryAST:
        while self.at_keyword("PREFIX"):
            self.next()
            pname = self.expect("PNAME") if self.peek().kind == "PNAME" else None
            if pname is None:
                # bare "prefix:" is tokenized as NAME + PUNCT; handle it
                name = self.expect("NAME").value
                self.expect("PUNCT", ":")
                prefix = name
            else:
                if not pname.value.endswith(":") and ":" in pname.value:
                    # PNAME token always carries a local part; a declaration
                    # like "mofs:" never matches PNAME, so this is an error
                    self.fail("prefix declaration must end with ':'")
                prefix = pname.value[:-1]
            iri = self.expect("IRIREF").value[1:-1]
            self.prefixes[prefix] = iri
        if self.at_keyword("CONSTRUCT", "DESCRIBE"):
            raise UnsupportedForm(f"{self.peek().value} queries are not supported")
        if self.at_keyword("ASK"):
            self.next()
            pattern = self.parse_group()
            self.expect("EOF")
            return QueryAST("ASK", tuple(self.prefixes.items()), (), False, pattern)
        if not self.at_keyword("SELECT"):
            self.fail("expected SELECT or ASK")
        ast = self.parse_select(top_level=True)
        self.expect("EOF")
        return ast

    def parse_select(self, top_level: bool) -> QueryAST:
        self.expect("KEYWORD", "SELECT")
        distinct = False
        if self.at_keyword("DISTINCT"):
            distinct = True
            self.next()
        select: list[Var] = []
        if self.peek().kind == "PUNCT" and self.peek().value == "*":
            self.next()
        else:
            while self.peek().kind == "VAR":
                select.append(Var(self.next().value[1:]))
            if not select:
                self.fail("expected projection variables")
        if self.at_keyword("WHERE"):
            self.next()
        pattern = self.parse_group()
        order_by: list[Var] = []
        if self.at_keyword("ORDER"):
            self.next()
            self.expect("KEYWORD", "BY")
            while self.peek().kind == "VAR":
                order_by.append(Var(self.next().value[1:]))
            if not order_by:
                self.fail("expected ORDER BY variables")
        return QueryAST(
            "SELECT", tuple(self.prefixes.items()), tuple(select),
            distinct, pattern, tuple(order_by),
        )

    # -- group patterns ----------------------------------------------------

    def parse_group(self) -> Group:
        self.expect("PUNCT", "{")
        elements: list[Any] = []
        while not (self.peek().kind == "PUNCT" and self.peek().value == "}"):
            tok = self.peek()
            if tok.kind == "EOF":
                self.fail("unterminated group")
            elif self.at_keyword("FILTER"):
                elements.append(self.parse_filter())
            elif self.at_keyword("OPTIONAL"):
                self.next()
                elements.append(OptionalClause(self.parse_group()))
            elif self.at_keyword("BIND"):
                elements.append(self.parse_bind())
            elif self.at_keyword("VALUES"):
                elements.append(self.parse_values())
            elif tok.kind == "PUNCT" and tok.value == "{":
                elements.append(self.parse_braced())
            elif tok.kind in ("VAR", "IRIREF", "PNAME", "STRING", "NUMBER", "A"):
                elements.extend(self.parse_triples_block())
            else:
                self.fail(f"unexpected {tok.value!r} in group")
        self.expect("PUNCT", "}")
        return Group(tuple(elements))

    def parse_braced(self) -> Any:
        # Either a sub-select, a nested group, or the head of a UNION chain.
        if self.peek(1).kind == "KEYWORD" and self.peek(1).value == "SELECT":
            self.expect("PUNCT", "{")
            inner = self.parse_select(top_level=False)
            self.expect("PUNCT", "}")
            first: Any = SubSelect(inner)
        else:
            first = self.parse_group()
        if self.at_keyword("UNION"):
            branches = [first if isinstance(first, Group) else Group((first,))]
            while self.at_keyword("UNION"):
                self.next()
                if self.peek(1).kind == "KEYWORD" and self.peek(1).value == "SELECT":
                    self.expect("PUNCT", "{")
                    inner = self.parse_select(top_level=False)
                    self.expect("PUNCT", "}")
                    branches.append(Group((SubSelect(inner),)))
                else:
                    branches.append(self.parse_group())
            return UnionClause(tuple(branches))
        return first

    def parse_filter(self) -> Any:
        self.expect("KEYWORD", "FILTER")
        if self.at_keyword("NOT"):
            self.next()
            self.expect("KEYWORD", "EXISTS")
            return FilterNotExists(self.parse_group())
        self.expect("PUNCT", "(")
        expr = self.parse_expr()
        self.expect("PUNCT", ")")
        return FilterClause(expr)

    def parse_bind(self) -> BindClause:
        self.expect("KEYWORD", "BIND")
        self.expect("PUNCT", "(")
        expr = self.parse_expr()
        self.expect("KEYWORD", "AS")
        var = Var(self.expect("VAR").value[1:])
        self.expect("PUNCT", ")")
        return BindClause(expr, var)

    def parse_values(self) -> ValuesClause:
        self.expect("KEYWORD", "VALUES")
        var = Var(self.expect("VAR").value[1:])
        self.expect("PUNCT", "{")
        terms: list[Term] = []
        while not (self.peek().kind == "PUNCT" and self.peek().value == "}"):
            terms.append(self.parse_term())
        self.expect("PUNCT", "}")
        return ValuesClause(var, tuple(terms))

    def parse_triples_block(self) -> list[TriplePattern]:
        out: list[TriplePattern] = []
        subject = self.parse_node()
        while True:
            predicate = self.parse_path()
            while True:
                obj = self.parse_node()
                out.append(TriplePattern(subject, predicate, obj))
                if self.peek().kind == "PUNCT" and self.peek().value == ",":
                    self.next()
                    continue
                break
            if self.peek().kind == "PUNCT" and self.peek().value == ";":
                self.next()
                # A dangling ';' before '.' or '}' is tolerated
                if self.peek().kind == "PUNCT" and self.peek().value in (".", "}"):
                    break
                continue
            break
        if self.peek().kind == "PUNCT" and self.peek().value == ".":
            self.next()
        return out

    def parse_node(self) -> Node:
        tok = self.peek()
        if tok.kind == "VAR":
            return Var(self.next().value[1:])
        return self.parse_term()

    def parse_term(self) -> Term:
        tok = self.peek()
        if tok.kind == "IRIREF":
            return IRI(self.next().value[1:-1])
        if tok.kind == "PNAME":
            return self.resolve_pname(self.next())
        if tok.kind == "STRING":
            return Literal(_decode_string(self.next().value))
        if tok.kind == "NUMBER":
            raw = self.next().value
            if "." in raw:
                return Literal(float(raw), "double")
            return Literal(int(raw), "integer")
        if tok.kind == "A":
            self.fail("'a' is only valid in predicate position")
        self.fail(f"expected a term, found {tok.value!r}")

    def resolve_pname(self, tok: _Token) -> IRI:
        prefix, local = tok.value.split(":", 1)
        if prefix not in self.prefixes:
            raise QuerySyntaxError(
                f"undeclared prefix {prefix!r}", tok.line, tok.column
            )
        return IRI(self.prefixes[prefix] + local)

    # -- property paths ----------------------------------------------------

    def parse_path(self) -> Path:
        parts = [self.parse_path_element()]
        while self.peek().kind == "PUNCT" and self.peek().value == "/":
            self.next()
            parts.append(self.parse_path_element())
        if len(parts) == 1:
            return parts[0]
        return SequencePath(tuple(parts))

    def parse_path_element(self) -> Path:
        tok = self.peek()
        if tok.kind == "VAR":
            return Var(self.next().value[1:])
        if tok.kind == "PUNCT" and tok.value in ("^", "~"):
            self.next()
            return InversePath(self.parse_path_element())
        if tok.kind == "PUNCT" and tok.value == "(":
            self.next()
            inner = self.parse_path()
            self.expect("PUNCT", ")")
            if self.peek().kind == "PUNCT" and self.peek().value == "*":
                self.next()
                return ZeroOrMorePath(inner)
            return inner
        if tok.kind == "A":
            self.next()
            return PredicatePath(RDF_TYPE_IRI)
        if tok.kind == "IRIREF":
            return PredicatePath(IRI(self.next().value[1:-1]))
        if tok.kind == "PNAME":
            return PredicatePath(self.resolve_pname(self.next()))
        self.fail(f"expected a predicate path, found {tok.value!r}")

    # -- expressions -------------------------------------------------------

    def parse_expr(self) -> Expr:
        left = self.parse_primary()
        tok = self.peek()
        if tok.kind == "NEQ":
            self.next()
            return Comparison("!=", left, self.parse_primary())
        if tok.kind == "PUNCT" and tok.value == "=":
            self.next()
            return Comparison("=", left, self.parse_primary())
        return left

    def parse_primary(self) -> Expr:
        tok = self.peek()
        if tok.kind == "VAR":
            return Var(self.next().value[1:])
        if tok.kind == "STRING":
            return Literal(_decode_string(self.next().value))
        if tok.kind == "NUMBER":
            return self.parse_term()
        if tok.kind == "NAME" and tok.value.upper() in ("COALESCE", "REPLACE", "STR", "CONCAT"):
            name = self.next().value.upper()
            self.expect("PUNCT", "(")
            args: list[Expr] = []
            while not (self.peek().kind == "PUNCT" and self.peek().value == ")"):
                args.append(self.parse_expr())
                if self.peek().kind == "PUNCT" and self.peek().value == ",":
                    self.next()
            self.expect("PUNCT", ")")
            return FuncCall(name, tuple(args))
        if tok.kind in ("IRIREF", "PNAME"):
            return self.parse_term()
        self.fail(f"expected an expression, found {tok.value!r}")


def _decode_string(raw: str) -> str:
    body = raw[1:-1]
    out, i = [], 0
    while i < len(body):
        if body[i] == "\\" and i + 1 < len(body):
            nxt = body[i + 1]
            out.append({"n": "\n", "t": "\t", "r": "\r"}.get(nxt, nxt))
            i += 2
        else:
            out.append(body[i])
            i += 1
    return "".join(out)


def parse(text: str) -> QueryAST:
    """AST for a read-only query; rejects anything that could write."""
    screen_read_only(text)
    return _Parser(_tokenize(text)).parse_query()


# --------------------------------------------------------------------------
# guard checks

def check_limits(ast: QueryAST, guards: GuardConfig = GuardConfig()) -> None:
    patterns = _count_patterns(ast.pattern)
    if patterns > guards.max_triple_patterns:
        raise ComplexityViolation("triple_patterns", patterns, guards.max_triple_patterns)
    depth = _optional_depth(ast.pattern)
    if depth > guards.max_optional_depth:
        raise ComplexityViolation("optional_depth", depth, guards.max_optional_depth)
    branches = _max_union_branches(ast.pattern)
    if branches > guards.max_union_branches:
        raise ComplexityViolation("union_branches", branches, guards.max_union_branches)


def _count_patterns(group: Group) -> int:
    total = 0
    for el in group.elements:
        if isinstance(el, TriplePattern):
            total += 1
        elif isinstance(el, Group):
            total += _count_patterns(el)
        elif isinstance(el, (OptionalClause, FilterNotExists)):
            total += _count_patterns(el.group)
        elif isinstance(el, SubSelect):
            total += _count_patterns(el.query.pattern)
        elif isinstance(el, UnionClause):
            total += sum(_count_patterns(b) for b in el.branches)
    return total


def _optional_depth(group: Group) -> int:
    deepest = 0
    for el in group.elements:
        if isinstance(el, OptionalClause):
            deepest = max(deepest, 1 + _optional_depth(el.group))
        elif isinstance(el, Group):
            deepest = max(deepest, _optional_depth(el))
        elif isinstance(el, FilterNotExists):
            deepest = max(deepest, _optional_depth(el.group))
        elif isinstance(el, SubSelect):
            deepest = max(deepest, _optional_depth(el.query.pattern))
        elif isinstance(el, UnionClause):
            deepest = max(deepest, max(_optional_depth(b) for b in el.branches))
    return deepest


def _max_union_branches(group: Group) -> int:
    widest = 0
    for el in group.elements:
        if isinstance(el, UnionClause):
            widest = max(widest, len(el.branches))
            widest = max(widest, max(_max_union_branches(b) for b in el.branches))
        elif isinstance(el, Group):
            widest = max(widest, _max_union_branches(el))
        elif isinstance(el, (OptionalClause, FilterNotExists)):
            widest = max(widest, _max_union_branches(el.group))
        elif isinstance(el, SubSelect):
            widest = max(widest, _max_union_branches(el.query.pattern))
    return widest


# --------------------------------------------------------------------------
# evaluation

Solution = dict  # variable name -> Term


class _Unbound(Exception):
    pass


class _Deadline:
    """Cooperative timeout: checked every 1024 intermediate solutions."""

    CHECK_EVERY = 1024

    def __init__(self, seconds: float):
        self.expires = time.monotonic() + seconds
        self.counter = 0

    def tick(self) -> None:
        self.counter += 1
        if self.counter % self.CHECK_EVERY == 0 and time.monotonic() > self.expires:
            raise QueryTimeout("query exceeded its time budget")


def evaluate(
    ast: QueryAST,
    store: TripleStore,
    guards: GuardConfig = GuardConfig(),
) -> Any:
    """Solutions for a SELECT (list of binding dicts) or a boolean for ASK."""
    check_limits(ast, guards)
    deadline = _Deadline(guards.timeout)
    solutions = _eval_group(ast.pattern, store, [{}], deadline)
    if ast.form == "ASK":
        return bool(solutions)
    return _project(ast, solutions)


def _project(ast: QueryAST, solutions: list[Solution]) -> list[Solution]:
    names = [v.name for v in ast.select]
    rows = [
        {name: s[name] for name in names if name in s}
        for s in solutions
    ]
    if ast.distinct:
        seen = set()
        unique = []
        for row in rows:
            key = frozenset(row.items())
            if key not in seen:
                seen.add(key)
                unique.append(row)
        rows = unique
    for var in reversed(ast.order_by):
        rows.sort(key=lambda r: _order_key(r.get(var.name)))
    return rows


def _order_key(term: Optional[Term]):
    if term is None:
        return (0, "")
    if isinstance(term, IRI):
        return (1, str(term))
    return (2, term.lexical())


def _eval_group(
    group: Group, store: TripleStore, solutions: list[Solution], deadline: _Deadline
) -> list[Solution]:
    for el in group.elements:
        solutions = _eval_element(el, store, solutions, deadline)
        if not solutions:
            return []
    return solutions


def _compatible(a: Solution, b: Solution) -> Optional[Solution]:
    merged = dict(a)
    for k, v in b.items():
        if k in merged and merged[k] != v:
            return None
        merged[k] = v
    return merged


def _join(
    left: list[Solution], right: list[Solution], deadline: _Deadline
) -> list[Solution]:
    out = []
    for a in left:
        for b in right:
            deadline.tick()
            merged = _compatible(a, b)
            if merged is not None:
                out.append(merged)
    return out


def _eval_element(el, store, solutions, deadline) -> list[Solution]:
    if isinstance(el, TriplePattern):
        out = []
        for s in solutions:
            for binding in _match_pattern(el, store, s, deadline):
                deadline.tick()
                out.append(binding)
        return out
    if isinstance(el, Group):
        return _eval_group(el, store, solutions, deadline)
    if isinstance(el, SubSelect):
        inner = _eval_group(el.query.pattern, store, [{}], deadline)
        inner = _project(el.query, inner)
        return _join(solutions, inner, deadline)
    if isinstance(el, OptionalClause):
        out = []
        for s in solutions:
            extended = _eval_group(el.group, store, [s], deadline)
            out.extend(extended if extended else [s])
        return out
    if isinstance(el, FilterClause):
        return [s for s in solutions if _truthy(el.expr, s)]
    if isinstance(el, FilterNotExists):
        return [
            s for s in solutions
            if not _eval_group(el.group, store, [s], deadline)
        ]
    if isinstance(el, BindClause):
        out = []
        for s in solutions:
            try:
                value = _eval_expr(el.expr, s)
            except _Unbound:
                out.append(s)
                continue
            if el.var.name in s and s[el.var.name] != value:
                continue
            extended = dict(s)
            extended[el.var.name] = value
            out.append(extended)
        return out
    if isinstance(el, ValuesClause):
        rows = [{el.var.name: term} for term in el.terms]
        return _join(solutions, rows, deadline)
    if isinstance(el, UnionClause):
        out = []
        for branch in el.branches:
            out.extend(_eval_group(branch, store, solutions, deadline))
        return out
    raise EvaluationFault(f"unknown pattern element {type(el).__name__}")


def _resolve(node: Node, solution: Solution) -> Optional[Term]:
    if isinstance(node, Var):
        return solution.get(node.name)
    return node


def _match_pattern(
    pattern: TriplePattern, store: TripleStore, solution: Solution, deadline: _Deadline
) -> Iterable[Solution]:
    s_term = _resolve(pattern.subject, solution)
    o_term = _resolve(pattern.object, solution)
    predicate = pattern.predicate
    if isinstance(predicate, Var):
        bound = solution.get(predicate.name)
        if bound is not None:
            if not isinstance(bound, IRI):
                return
            matches = [
                (t.subject, t.predicate, t.object)
                for t in store.triples(
                    s_term if isinstance(s_term, IRI) else None, bound, o_term
                )
            ]
        else:
            subject = s_term if isinstance(s_term, IRI) else None
            if s_term is not None and subject is None:
                return
            matches = [
                (t.subject, t.predicate, t.object)
                for t in store.triples(subject, None, o_term)
            ]
    else:
        matches = [
            (s, None, o)
            for s, o in _path_pairs(predicate, store, s_term, o_term, deadline)
        ]
    for s, p, o in matches:
        deadline.tick()
        extended = dict(solution)
        ok = True
        if isinstance(predicate, Var) and p is not None:
            if predicate.name in extended and extended[predicate.name] != p:
                continue
            extended[predicate.name] = p
        for node, value in ((pattern.subject, s), (pattern.object, o)):
            if isinstance(node, Var):
                if node.name in extended and extended[node.name] != value:
                    ok = False
                    break
                extended[node.name] = value
            elif node != value:
                ok = False
                break
        if ok:
            yield extended


def _path_pairs(
    path: Path, store: TripleStore, s: Optional[Term], o: Optional[Term],
    deadline: _Deadline,
) -> Iterable[tuple]:
    if isinstance(path, PredicatePath):
        subject = s if isinstance(s, IRI) else None
        if s is not None and subject is None:
            return  # literal subjects never match
        for t in store.triples(subject, path.iri, o):
            deadline.tick()
            yield t.subject, t.object
    elif isinstance(path, InversePath):
        for b, a in _path_pairs(path.inner, store, o, s, deadline):
            yield a, b
    elif isinstance(path, SequencePath):
        yield from _sequence_pairs(path.parts, store, s, o, deadline)
    elif isinstance(path, ZeroOrMorePath):
        yield from _closure_pairs(path.inner, store, s, o, deadline)
    else:
        raise EvaluationFault(f"unknown path {type(path).__name__}")


def _sequence_pairs(parts, store, s, o, deadline):
    if len(parts) == 1:
        yield from _path_pairs(parts[0], store, s, o, deadline)
        return
    head, rest = parts[0], parts[1:]
    # Constrain the cheaper side first when one endpoint is bound.
    if s is None and o is not None:
        for mid, end in _sequence_pairs(rest, store, None, o, deadline):
            for start, mid2 in _path_pairs(head, store, None, mid, deadline):
                yield start, end
        return
    for start, mid in _path_pairs(head, store, s, None, deadline):
        for mid2, end in _sequence_pairs(rest, store, mid, o, deadline):
            yield start, end


def _step_forward(path, store, node, deadline):
    return {o for _, o in _path_pairs(path, store, node, None, deadline)}


def _step_backward(path, store, node, deadline):
    return {s for s, _ in _path_pairs(path, store, None, node, deadline)}


def _bfs(start, step):
    reached = {start}
    frontier = [start]
    while frontier:
        nxt = []
        for node in frontier:
            for neighbor in step(node):
                if neighbor not in reached:
                    reached.add(neighbor)
                    nxt.append(neighbor)
        frontier = nxt
    return reached


def _graph_nodes(store: TripleStore) -> set:
    nodes = set()
    for t in store.triples():
        nodes.add(t.subject)
        nodes.add(t.object)
    return nodes


def _closure_pairs(inner, store, s, o, deadline):
    if s is not None:
        reached = _bfs(s, lambda n: _step_forward(inner, store, n, deadline))
        for node in reached:
            deadline.tick()
            if o is None or node == o:
                yield s, node
    elif o is not None:
        reached = _bfs(o, lambda n: _step_backward(inner, store, n, deadline))
        for node in reached:
            deadline.tick()
            yield node, o
    else:
        for start in _graph_nodes(store):
            for node in _bfs(start, lambda n: _step_forward(inner, store, n, deadline)):
                deadline.tick()
                yield start, node


# --------------------------------------------------------------------------
# expressions

def _as_string(value: Any) -> str:
    if isinstance(value, IRI):
        return str(value)
    if isinstance(value, Literal):
        return value.lexical()
    return str(value)


def _eval_expr(expr: Expr, solution: Solution) -> Any:
    if isinstance(expr, Var):
        if expr.name not in solution:
            raise _Unbound(expr.name)
        return solution[expr.name]
    if isinstance(expr, (Literal, IRI)):
        return expr
    if isinstance(expr, Comparison):
        left = _eval_expr(expr.left, solution)
        right = _eval_expr(expr.right, solution)
        equal = left == right
        return Literal(equal if expr.op == "=" else not equal, "boolean")
    if isinstance(expr, FuncCall):
        if expr.name == "COALESCE":
            for arg in expr.args:
                try:
                    return _eval_expr(arg, solution)
                except _Unbound:
                    continue
            raise _Unbound("COALESCE: all arguments unbound")
        if expr.name == "STR":
            return Literal(_as_string(_eval_expr(expr.args[0], solution)))
        if expr.name == "CONCAT":
            return Literal(
                "".join(_as_string(_eval_expr(a, solution)) for a in expr.args)
            )
        if expr.name == "REPLACE":
            text = _as_string(_eval_expr(expr.args[0], solution))
            pattern = _as_string(_eval_expr(expr.args[1], solution))
            replacement = _as_string(_eval_expr(expr.args[2], solution))
            try:
                return Literal(re.sub(pattern, replacement, text))
            except re.error as exc:
                raise EvaluationFault(f"bad REPLACE pattern: {exc}") from exc
    raise EvaluationFault(f"cannot evaluate {expr!r}")


def _truthy(expr: Expr, solution: Solution) -> bool:
    try:
        value = _eval_expr(expr, solution)
    except _Unbound:
        return False
    if isinstance(value, Literal):
        if value.datatype == "boolean":
            return bool(value.value)
        return bool(value.value)
    return value is not None


# --------------------------------------------------------------------------
# canonical printer

def print_query(ast: QueryAST) -> str:
    """Canonical text form; parse(print_query(parse(q))) is a fixpoint."""
    out = [f"PREFIX {p}: <{ns}>" for p, ns in ast.prefixes]
    if ast.form == "ASK":
        out.append("ASK " + _print_group(ast.pattern, 0, dict(ast.prefixes)))
    else:
        head = "SELECT " + ("DISTINCT " if ast.distinct else "")
        head += " ".join(str(v) for v in ast.select)
        out.append(head)
        out.append("WHERE " + _print_group(ast.pattern, 0, dict(ast.prefixes)))
        if ast.order_by:
            out.append("ORDER BY " + " ".join(str(v) for v in ast.order_by))
    return "\n".join(out) + "\n"


def _shorten(iri: IRI, prefixes: dict) -> str:
    for prefix, ns in sorted(prefixes.items(), key=lambda kv: -len(kv[1])):
        if iri.startswith(ns):
            local = iri[len(ns):]
            if re.fullmatch(r"[A-Za-z_][A-Za-z0-9_.-]*", local):
                return f"{prefix}:{local}"
    return f"<{iri}>"


def _print_term(term: Any, prefixes: dict) -> str:
    if isinstance(term, Var):
        return str(term)
    if isinstance(term, IRI):
        return _shorten(term, prefixes)
    if isinstance(term, Literal):
        if term.datatype == "string":
            escaped = term.value.replace("\\", "\\\\").replace('"', '\\"')
            return f'"{escaped}"'
        return term.lexical()
    raise ValueError(f"unprintable term {term!r}")


def _print_path(path: Path, prefixes: dict) -> str:
    if isinstance(path, Var):
        return str(path)
    if isinstance(path, PredicatePath):
        if path.iri == RDF_TYPE_IRI:
            return "a"
        return _shorten(path.iri, prefixes)
    if isinstance(path, InversePath):
        return "^" + _print_path(path.inner, prefixes)
    if isinstance(path, SequencePath):
        return "/".join(_print_path(p, prefixes) for p in path.parts)
    if isinstance(path, ZeroOrMorePath):
        return f"({_print_path(path.inner, prefixes)})*"
    raise ValueError(f"unprintable path {path!r}")


def _print_expr(expr: Expr, prefixes: dict) -> str:
    if isinstance(expr, Comparison):
        return (
            f"{_print_expr(expr.left, prefixes)} {expr.op} "
            f"{_print_expr(expr.right, prefixes)}"
        )
    if isinstance(expr, FuncCall):
        args = ", ".join(_print_expr(a, prefixes) for a in expr.args)
        return f"{expr.name}({args})"
    return _print_term(expr, prefixes)


def _print_group(group: Group, indent: int, prefixes: dict) -> str:
    pad = "  " * (indent + 1)
    lines = ["{"]
    for el in group.elements:
        if isinstance(el, TriplePattern):
            lines.append(
                pad + f"{_print_term(el.subject, prefixes)} "
                f"{_print_path(el.predicate, prefixes)} "
                f"{_print_term(el.object, prefixes)} ."
            )
        elif isinstance(el, Group):
            lines.append(pad + _print_group(el, indent + 1, prefixes))
        elif isinstance(el, SubSelect):
            inner = el.query
            head = "SELECT " + ("DISTINCT " if inner.distinct else "")
            head += " ".join(str(v) for v in inner.select)
            lines.append(pad + "{ " + head)
            lines.append(pad + "  WHERE " + _print_group(inner.pattern, indent + 2, prefixes))
            lines.append(pad + "}")
        elif isinstance(el, OptionalClause):
            lines.append(pad + "OPTIONAL " + _print_group(el.group, indent + 1, prefixes))
        elif isinstance(el, FilterClause):
            lines.append(pad + f"FILTER ({_print_expr(el.expr, prefixes)})")
        elif isinstance(el, FilterNotExists):
            lines.append(pad + "FILTER NOT EXISTS " + _print_group(el.group, indent + 1, prefixes))
        elif isinstance(el, BindClause):
            lines.append(pad + f"BIND ({_print_expr(el.expr, prefixes)} AS {el.var})")
        elif isinstance(el, ValuesClause):
            terms = " ".join(f"<{t}>" if isinstance(t, IRI) else _print_term(t, prefixes)
                             for t in el.terms)
            lines.append(pad + f"VALUES {el.var} {{ {terms} }}")
        elif isinstance(el, UnionClause):
            joined = (" UNION ").join(
                _print_group(b, indent + 1, prefixes) for b in el.branches
            )
            lines.append(pad + joined)
        else:
            raise ValueError(f"unprintable element {el!r}")
    lines.append("  " * indent + "}")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# VALUES injection

VALUES_BINDINGS = {
    "TOPOLOGY": "?topology",
    "METAL": "?metal_node",
    "LINKER": "?organic_linker",
}

_MARKER = re.compile(r"(?m)^(?P<indent>[ \t]*)#[ \t]*\{\{VALUES_(?P<name>[A-Z_]+)\}\}[ \t]*$")


def inject_values(template: str, values: dict[str, list[str]]) -> str:
    """Replace ``# {{VALUES_<NAME>}}`` marker lines with VALUES clauses.

    Markers without a map entry stay as inert comments; map keys without a
    matching marker raise UnknownMarker.
    """
    present = {m.group("name") for m in _MARKER.finditer(template)}
    missing = set(values) - present
    if missing:
        raise UnknownMarker(f"no marker for {sorted(missing)}")
    if not values:
        return template

    def substitute(m: re.Match) -> str:
        name = m.group("name")
        if name not in values:
            return m.group(0)
        var = VALUES_BINDINGS.get(name, "?" + name.lower())
        iris = " ".join(f"<{iri}>" for iri in values[name])
        return f"{m.group('indent')}VALUES {var} {{ {iris} }}"

    return _MARKER.sub(substitute, template)
