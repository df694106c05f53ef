"""Restricted query language: AST, parser, canonical printer, evaluator.

The grammar is the minimal closure of the queries the engine rewrites:

    query   := select (UNION select)*
    select  := SELECT proj FROM table [alias] (, table [alias])* [WHERE conj]
    proj    := '*' | item (, item)*            item := col | table.'*'
    conj    := pred (AND pred)*
    pred    := col = col
             | col = literal
             | col = sys_context:key
             | col IN ( query )
             | sys_context:key IN range(subject, location|time)

Keywords are case-insensitive, identifiers case-sensitive. UNION has set
semantics (duplicates eliminated). Anything outside the subset (OR,
ordering, grouping, aggregates, non-equality comparisons, constant-only
predicates) is rejected at parse time. Absent values (None) compare
unequal to everything, including each other.

Parsing and evaluation are pure; Query and RowSet values are immutable.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import (
    QuerySyntaxError,
    UnknownColumnError,
    UnknownTableError,
    UnsupportedFeatureError,
    VpdGateError,
)

CONTEXT_KEYS = ("session_user", "l", "t")
RANGE_KINDS = ("location", "time")


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ColumnRef:
    qualifier: str | None
    column: str  # "*" for a qualified star in projections

    def __str__(self) -> str:
        return f"{self.qualifier}.{self.column}" if self.qualifier else self.column


@dataclass(frozen=True)
class TableRef:
    table: str
    alias: str | None = None

    @property
    def binding(self) -> str:
        return self.alias or self.table

    def __str__(self) -> str:
        return f"{self.table} {self.alias}" if self.alias else self.table


@dataclass(frozen=True)
class ColEqCol:
    a: ColumnRef
    b: ColumnRef


@dataclass(frozen=True)
class ColEqConst:
    a: ColumnRef
    value: str | int | float


@dataclass(frozen=True)
class ColEqContext:
    a: ColumnRef
    key: str


@dataclass(frozen=True)
class RangeRef:
    subject: str
    kind: str  # "location" | "time"


@dataclass(frozen=True)
class InRange:
    key: str  # "l" | "t"
    range: RangeRef


@dataclass(frozen=True)
class InSubquery:
    a: ColumnRef
    query: "Query"


Predicate = ColEqCol | ColEqConst | ColEqContext | InRange | InSubquery


@dataclass(frozen=True)
class Select:
    projection: tuple[ColumnRef, ...]  # (ColumnRef(None, "*"),) for bare *
    tables: tuple[TableRef, ...]
    where: tuple[Predicate, ...] = ()


@dataclass(frozen=True)
class Union:
    left: "Query"
    right: "Query"


Query = Select | Union

STAR = ColumnRef(None, "*")


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""(?P<ws>\s+)
      | (?P<string>'(?:[^']|'')*')
      | (?P<number>\d+(?:\.\d+)?)
      | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
      | (?P<op><=|>=|!=|<>|[*,()=.:;<>-])
    """,
    re.VERBOSE,
)

_UNSUPPORTED_KEYWORDS = {
    "OR", "ORDER", "GROUP", "HAVING", "JOIN", "LEFT", "RIGHT", "INNER", "OUTER",
    "CROSS", "ON", "NOT", "LIKE", "BETWEEN", "LIMIT", "OFFSET", "DISTINCT",
    "EXISTS", "INSERT", "UPDATE", "DELETE", "CREATE", "DROP", "NULL", "IS",
}

_KEYWORDS = {"SELECT", "FROM", "WHERE", "AND", "UNION", "IN", "AS"}


@dataclass(frozen=True)
class _Token:
    kind: str  # "ident" | "string" | "number" | "op" | "eof"
    text: str
    pos: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise QuerySyntaxError(f"unexpected character {text[pos]!r}", pos)
        pos = m.end()
        if m.lastgroup == "ws":
            continue
        tokens.append(_Token(m.lastgroup, m.group(), m.start()))
    tokens.append(_Token("eof", "", len(text)))
    return tokens


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def next(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def at_keyword(self, word: str) -> bool:
        tok = self.peek()
        return tok.kind == "ident" and tok.text.upper() == word

    def accept_keyword(self, word: str) -> bool:
        if self.at_keyword(word):
            self.next()
            return True
        return False

    def expect_keyword(self, word: str) -> None:
        tok = self.peek()
        if not self.accept_keyword(word):
            raise QuerySyntaxError(f"expected {word}, found {tok.text!r}", tok.pos)

    def expect_op(self, op: str) -> _Token:
        tok = self.peek()
        if tok.kind == "op" and tok.text == op:
            return self.next()
        raise QuerySyntaxError(f"expected {op!r}, found {tok.text!r}", tok.pos)

    def accept_op(self, op: str) -> bool:
        tok = self.peek()
        if tok.kind == "op" and tok.text == op:
            self.next()
            return True
        return False

    def ident(self, what: str) -> _Token:
        tok = self.peek()
        if tok.kind != "ident":
            raise QuerySyntaxError(f"expected {what}, found {tok.text!r}", tok.pos)
        upper = tok.text.upper()
        if upper in _UNSUPPORTED_KEYWORDS:
            raise UnsupportedFeatureError(f"{tok.text!r} is outside the supported subset")
        if upper in _KEYWORDS:
            raise QuerySyntaxError(f"expected {what}, found keyword {tok.text!r}", tok.pos)
        return self.next()

    # grammar -----------------------------------------------------------

    def query(self) -> Query:
        node: Query = self.select()
        while self.accept_keyword("UNION"):
            node = Union(node, self.select())
        return node

    def top(self) -> Query:
        node = self.query()
        self.accept_op(";")
        tok = self.peek()
        if tok.kind != "eof":
            if tok.kind == "ident" and tok.text.upper() in _UNSUPPORTED_KEYWORDS:
                raise UnsupportedFeatureError(
                    f"{tok.text!r} is outside the supported subset")
            raise QuerySyntaxError(f"unexpected trailing input {tok.text!r}", tok.pos)
        return node

    def select(self) -> Select:
        self.expect_keyword("SELECT")
        projection = self.projection()
        self.expect_keyword("FROM")
        tables = [self.table_ref()]
        while self.accept_op(","):
            tables.append(self.table_ref())
        where: tuple = ()
        if self.accept_keyword("WHERE"):
            preds = [self.predicate()]
            while self.accept_keyword("AND"):
                preds.append(self.predicate())
            where = tuple(preds)
        return Select(projection=projection, tables=tuple(tables), where=where)

    def projection(self) -> tuple[ColumnRef, ...]:
        if self.accept_op("*"):
            return (STAR,)
        items = [self.projection_item()]
        while self.accept_op(","):
            items.append(self.projection_item())
        return tuple(items)

    def projection_item(self) -> ColumnRef:
        name = self.ident("column")
        if self.peek().kind == "op" and self.peek().text == "(":
            raise UnsupportedFeatureError(
                f"function call {name.text!r}(...) is outside the supported subset")
        if self.accept_op("."):
            if self.accept_op("*"):
                return ColumnRef(name.text, "*")
            col = self.ident("column")
            return ColumnRef(name.text, col.text)
        return ColumnRef(None, name.text)

    def table_ref(self) -> TableRef:
        table = self.ident("table")
        self.accept_keyword("AS")
        tok = self.peek()
        if tok.kind == "ident" and tok.text.upper() not in _KEYWORDS \
                and tok.text.upper() not in _UNSUPPORTED_KEYWORDS:
            return TableRef(table.text, self.next().text)
        return TableRef(table.text)

    def column_ref(self) -> ColumnRef:
        name = self.ident("column")
        if self.accept_op("."):
            col = self.ident("column")
            return ColumnRef(name.text, col.text)
        return ColumnRef(None, name.text)

    def predicate(self) -> Predicate:
        tok = self.peek()
        if tok.kind in ("number", "string") or (tok.kind == "op" and tok.text == "-"):
            raise UnsupportedFeatureError("constant-only predicates are rejected")
        if tok.kind == "ident" and tok.text == "sys_context":
            return self.range_predicate()
        col = self.column_ref()
        nxt = self.peek()
        if nxt.kind == "op" and nxt.text in ("<", ">", "<=", ">=", "!=", "<>"):
            raise UnsupportedFeatureError(
                f"comparison {nxt.text!r} is outside the supported subset (equality only)")
        if self.accept_keyword("IN"):
            self.expect_op("(")
            sub = self.query()
            self.expect_op(")")
            return InSubquery(col, sub)
        self.expect_op("=")
        rhs = self.peek()
        if rhs.kind == "string":
            self.next()
            return ColEqConst(col, rhs.text[1:-1].replace("''", "'"))
        negative = self.accept_op("-")
        if negative and self.peek().kind != "number":
            raise QuerySyntaxError("expected number after '-'", self.peek().pos)
        if self.peek().kind == "number":
            rhs = self.next()
            value = float(rhs.text) if "." in rhs.text else int(rhs.text)
            return ColEqConst(col, -value if negative else value)
        if rhs.kind == "ident" and rhs.text == "sys_context":
            self.next()
            self.expect_op(":")
            key = self.ident("context key")
            if key.text not in CONTEXT_KEYS:
                raise QuerySyntaxError(f"unknown context key {key.text!r}", key.pos)
            return ColEqContext(col, key.text)
        return ColEqCol(col, self.column_ref())

    def range_predicate(self) -> InRange:
        self.next()  # sys_context
        self.expect_op(":")
        key = self.ident("context key")
        if key.text not in ("l", "t"):
            raise QuerySyntaxError(
                f"only sys_context:l or sys_context:t can be range-checked, got {key.text!r}",
                key.pos)
        self.expect_keyword("IN")
        fn = self.ident("range")
        if fn.text != "range":
            raise QuerySyntaxError(f"expected range(...), found {fn.text!r}", fn.pos)
        self.expect_op("(")
        subject = self.ident("subject name")
        self.expect_op(",")
        kind = self.ident("range kind")
        if kind.text not in RANGE_KINDS:
            raise QuerySyntaxError(f"range kind must be location or time, got {kind.text!r}",
                                   kind.pos)
        self.expect_op(")")
        return InRange(key.text, RangeRef(subject.text, kind.text))


def parse_query(text: str) -> Query:
    """Parse query text into an AST; parse-print-parse is a fixpoint."""
    return _Parser(text).top()


# ---------------------------------------------------------------------------
# Canonical printer
# ---------------------------------------------------------------------------

def _render_literal(value: str | int | float) -> str:
    if isinstance(value, str):
        return "'" + value.replace("'", "''") + "'"
    return repr(value)


def _render_predicate(p: Predicate) -> str:
    if isinstance(p, ColEqCol):
        return f"{p.a} = {p.b}"
    if isinstance(p, ColEqConst):
        return f"{p.a} = {_render_literal(p.value)}"
    if isinstance(p, ColEqContext):
        return f"{p.a} = sys_context:{p.key}"
    if isinstance(p, InRange):
        return f"sys_context:{p.key} IN range({p.range.subject}, {p.range.kind})"
    if isinstance(p, InSubquery):
        return f"{p.a} IN ({render_query(p.query)})"
    raise TypeError(f"not a predicate: {p!r}")


def render_query(q: Query) -> str:
    """Canonical text: upper-case keywords, one predicate per AND, stable order."""
    if isinstance(q, Union):
        return f"{render_query(q.left)} UNION {render_query(q.right)}"
    parts = ["SELECT ", ", ".join(str(c) for c in q.projection),
             " FROM ", ", ".join(str(t) for t in q.tables)]
    if q.where:
        parts += [" WHERE ", " AND ".join(_render_predicate(p) for p in q.where)]
    return "".join(parts)


# ---------------------------------------------------------------------------
# RowSet
# ---------------------------------------------------------------------------

def row_sort_key(row: tuple):
    return tuple((v is None, type(v).__name__, str(v)) for v in row)


@dataclass(frozen=True)
class RowSet:
    schema: tuple[str, ...]
    rows: tuple[tuple, ...]

    def sorted_rows(self) -> tuple[tuple, ...]:
        """Deterministic canonical ordering for comparisons."""
        return tuple(sorted(self.rows, key=row_sort_key))

    def distinct(self) -> "RowSet":
        return RowSet(self.schema, tuple(dict.fromkeys(self.rows)))

    def as_set(self) -> frozenset:
        return frozenset(self.rows)

    def column(self, name: str) -> list:
        """Column values by exact qualified name or unique unqualified suffix."""
        if name in self.schema:
            idx = self.schema.index(name)
        else:
            matches = [i for i, s in enumerate(self.schema) if s.endswith("." + name)]
            if not matches:
                raise UnknownColumnError(f"no column {name!r} in {self.schema}")
            if len(matches) > 1:
                raise UnknownColumnError(f"ambiguous column {name!r} in {self.schema}")
            idx = matches[0]
        return [row[idx] for row in self.rows]

    def __len__(self) -> int:
        return len(self.rows)


# ---------------------------------------------------------------------------
# Evaluator
# ---------------------------------------------------------------------------

class _Scope:
    """Column resolution over the FROM bindings of one Select."""

    def __init__(self, select: Select, dataset):
        self.bindings: list[str] = []
        self.columns: dict[str, tuple[str, ...]] = {}
        self.rows: dict[str, tuple[tuple, ...]] = {}
        for t in select.tables:
            binding = t.binding
            if binding in self.columns:
                raise UnknownTableError(f"duplicate table binding {binding!r}")
            cols, rows = dataset.table(t.table)
            self.bindings.append(binding)
            self.columns[binding] = cols
            self.rows[binding] = rows

    def resolve(self, ref: ColumnRef) -> tuple[str, int]:
        if ref.qualifier is not None:
            if ref.qualifier not in self.columns:
                raise UnknownTableError(
                    f"column {ref} references {ref.qualifier!r}, which is not in FROM")
            cols = self.columns[ref.qualifier]
            if ref.column not in cols:
                raise UnknownColumnError(f"no column {ref.column!r} in {ref.qualifier!r}")
            return ref.qualifier, cols.index(ref.column)
        hits = [(b, self.columns[b].index(ref.column))
                for b in self.bindings if ref.column in self.columns[b]]
        if not hits:
            raise UnknownColumnError(f"no column {ref.column!r} in FROM tables")
        if len(hits) > 1:
            raise UnknownColumnError(f"column {ref.column!r} is ambiguous")
        return hits[0]


def _context_value(ctx, key: str):
    from .sessionctx import context_lookup
    from .timeutil import format_timestamp
    from datetime import datetime

    value = context_lookup(ctx, key)
    if isinstance(value, datetime):
        return format_timestamp(value)
    return value


def _in_range_holds(pred: InRange, dataset, ctx) -> bool:
    # Local import: linkage builds route ranges from the dataset manifest
    # and itself depends on this module's AST types.
    from . import linkage
    from .sessionctx import context_lookup

    if pred.key == "l":
        loc = context_lookup(ctx, "l")
        ranges = linkage.location_range(pred.range.subject, dataset)
        return any(r.distance_km(loc) <= r.corridor_km for r in ranges)
    t = context_lookup(ctx, "t")
    return any(t_b <= t <= t_e
               for t_b, t_e in linkage.time_range(pred.range.subject, dataset))


def evaluate(q: Query, dataset, ctx=None) -> RowSet:
    """Bag-semantics evaluation of a Select, set semantics for UNION."""
    if isinstance(q, Union):
        left = evaluate(q.left, dataset, ctx)
        right = evaluate(q.right, dataset, ctx)
        if len(left.schema) != len(right.schema):
            raise VpdGateError(
                f"UNION branches have different arity: {len(left.schema)} vs {len(right.schema)}")
        merged = tuple(dict.fromkeys(left.rows + right.rows))
        return RowSet(left.schema, merged)

    scope = _Scope(q, dataset)

    # Row-independent gates first: a false range predicate empties the result.
    plain: list[Predicate] = []
    for pred in q.where:
        if isinstance(pred, InRange):
            if not _in_range_holds(pred, dataset, ctx):
                return RowSet(_projection_schema(q, scope), ())
        else:
            plain.append(pred)

    # Pre-resolve predicate columns and constants.
    equalities: list[tuple[tuple[str, int], tuple[str, int]]] = []
    filters: list[tuple[tuple[str, int], object]] = []
    memberships: list[tuple[tuple[str, int], frozenset]] = []
    for pred in plain:
        if isinstance(pred, ColEqCol):
            equalities.append((scope.resolve(pred.a), scope.resolve(pred.b)))
        elif isinstance(pred, ColEqConst):
            filters.append((scope.resolve(pred.a), pred.value))
        elif isinstance(pred, ColEqContext):
            filters.append((scope.resolve(pred.a), _context_value(ctx, pred.key)))
        elif isinstance(pred, InSubquery):
            inner = evaluate(pred.query, dataset, ctx)
            if len(inner.schema) != 1:
                raise VpdGateError("IN subquery must project exactly one column")
            memberships.append((scope.resolve(pred.a),
                                frozenset(v for v in inner.column(inner.schema[0])
                                          if v is not None)))

    env = _join(scope, equalities, filters, memberships)

    schema = _projection_schema(q, scope)
    extractors = _projection_extractors(q, scope)
    rows = tuple(tuple(row[b][i] for b, i in extractors) for row in env)
    return RowSet(schema, rows)


def _projection_targets(q: Select, scope: _Scope) -> list[tuple[str, str, int]]:
    targets: list[tuple[str, str, int]] = []
    for item in q.projection:
        if item.column == "*":
            bindings = scope.bindings if item.qualifier is None else [item.qualifier]
            for b in bindings:
                if b not in scope.columns:
                    raise UnknownTableError(f"{item} references {b!r}, which is not in FROM")
                for i, col in enumerate(scope.columns[b]):
                    targets.append((b, col, i))
        else:
            b, i = scope.resolve(item)
            targets.append((b, scope.columns[b][i], i))
    return targets


def _projection_schema(q: Select, scope: _Scope) -> tuple[str, ...]:
    return tuple(f"{b}.{col}" for b, col, _ in _projection_targets(q, scope))


def _projection_extractors(q: Select, scope: _Scope) -> list[tuple[str, int]]:
    return [(b, i) for b, _, i in _projection_targets(q, scope)]


def _join(scope: _Scope, equalities, filters, memberships) -> list[dict[str, tuple]]:
    """Incremental join over the FROM bindings.

    Each binding is folded in with a hash join when an equality predicate
    links it to an already-bound table, falling back to a cross product.
    Unary filters are applied to a table's rows before it joins.
    """
    bound: set[str] = set()
    env: list[dict[str, tuple]] = [{}]
    pending_eq = list(equalities)
    pending_mem = list(memberships)

    for binding in scope.bindings:
        rows = list(scope.rows[binding])
        for (b, i), value in filters:
            if b == binding:
                rows = [r for r in rows if r[i] is not None and r[i] == value]
        for (b, i), values in list(pending_mem):
            if b == binding:
                rows = [r for r in rows if r[i] in values]
                pending_mem.remove(((b, i), values))

        join_key = None
        for eq in pending_eq:
            (b1, i1), (b2, i2) = eq
            if b1 in bound and b2 == binding:
                join_key = ((b1, i1), i2, eq)
                break
            if b2 in bound and b1 == binding:
                join_key = ((b2, i2), i1, eq)
                break

        if join_key is not None:
            (ob, oi), ni, used = join_key
            pending_eq.remove(used)
            table: dict[object, list[tuple]] = {}
            for r in rows:
                if r[ni] is not None:
                    table.setdefault(r[ni], []).append(r)
            env = [dict(e, **{binding: r})
                   for e in env
                   if e[ob][oi] is not None
                   for r in table.get(e[ob][oi], ())]
        else:
            env = [dict(e, **{binding: r}) for e in env for r in rows]
        bound.add(binding)

        # Apply any remaining predicates that just became fully bound.
        for eq in list(pending_eq):
            (b1, i1), (b2, i2) = eq
            if b1 in bound and b2 in bound:
                env = [e for e in env
                       if e[b1][i1] is not None and e[b1][i1] == e[b2][i2]]
                pending_eq.remove(eq)
        for (b, i), values in list(pending_mem):
            if b in bound:
                env = [e for e in env if e[b][i] in values]
                pending_mem.remove(((b, i), values))

    return env
