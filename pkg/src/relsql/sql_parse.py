"""Recursive-descent parser for the supported SQL subset.

Accepted shape: SELECT (with aggregates and DISTINCT), FROM with explicit
JOIN ... ON equality chains and AS aliases, WHERE with AND/OR and
parenthesized groups, nested queries in value position, GROUP BY / HAVING,
ORDER BY with one direction, LIMIT, and INTERSECT/UNION/EXCEPT. All
literal values become placeholders; names resolve case-insensitively
against the schema.

The FROM clause is recorded on each query node but never becomes part of
the tree itself.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .grammar import SQL_GRAMMAR, FromClause, Grammar, Node, make
from .schema import Schema


class ParseError(ValueError):
    def __init__(self, message: str, position: int | None = None):
        suffix = f" (at token {position})" if position is not None else ""
        super().__init__(message + suffix)
        self.position = position


KEYWORDS = {
    "select", "distinct", "from", "as", "join", "inner", "on", "where", "and", "or",
    "not", "in", "like", "between", "group", "by", "having", "order", "asc", "desc",
    "limit", "intersect", "union", "except", "count", "max", "min", "sum", "avg",
}

AGG_NAMES = {"count": "agg_count", "max": "agg_max", "min": "agg_min",
             "sum": "agg_sum", "avg": "agg_avg"}

_TOKEN_RE = re.compile(r"""
    \s*(
        '[^']*' | "[^"]*"
      | \d+(?:\.\d+)?
      | <> | != | <= | >= | [=<>(),.;*]
      | [A-Za-z_][A-Za-z0-9_]*
    )""", re.VERBOSE)


@dataclass(frozen=True)
class Tok:
    text: str
    kind: str  # "kw", "name", "num", "str", "sym"


def tokenize_sql(text: str) -> list[Tok]:
    toks, pos = [], 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            if text[pos:].strip() == "":
                break
            raise ParseError(f"cannot tokenize near {text[pos:pos + 12]!r}", len(toks))
        pos = m.end()
        raw = m.group(1)
        if raw[0] in "'\"":
            toks.append(Tok(raw[1:-1], "str"))
        elif raw[0].isdigit():
            toks.append(Tok(raw, "num"))
        elif re.match(r"[A-Za-z_]", raw):
            low = raw.lower()
            toks.append(Tok(low, "kw" if low in KEYWORDS else "name"))
        else:
            toks.append(Tok(raw, "sym"))
    return toks


class _Resolver:
    """Case-insensitive name resolution against one query's FROM tables."""

    def __init__(self, schema: Schema):
        self.schema = schema
        self.table_by_name = {}
        for i, t in enumerate(schema.tables):
            self.table_by_name[t.orig_name.lower()] = i
            self.table_by_name[" ".join(t.name_tokens)] = i
        self.star_index = next((i for i, c in enumerate(schema.columns) if c.is_star), None)

    def table(self, name: str, aliases: dict[str, int], pos: int) -> int:
        key = name.lower()
        if key in aliases:
            return aliases[key]
        if key in self.table_by_name:
            return self.table_by_name[key]
        raise ParseError(f"unresolvable table name {name!r}", pos)

    def column_in_table(self, name: str, table: int) -> int | None:
        key = name.lower()
        for i, c in enumerate(self.schema.columns):
            if c.table_index == table and (c.orig_name.lower() == key
                                           or " ".join(c.name_tokens) == key):
                return i
        return None

    def column(self, name: str, qualifier: str | None,
               from_tables: list[int], aliases: dict[str, int], pos: int) -> int:
        if name == "*":
            if self.star_index is None:
                raise ParseError("schema has no '*' column", pos)
            return self.star_index
        if qualifier is not None:
            t = self.table(qualifier, aliases, pos)
            col = self.column_in_table(name, t)
            if col is None:
                raise ParseError(f"unresolvable column name {qualifier}.{name}", pos)
            return col
        hits = [c for t in dict.fromkeys(from_tables)
                if (c := self.column_in_table(name, t)) is not None]
        if len(hits) == 1:
            return hits[0]
        if len(hits) > 1:
            raise ParseError(f"ambiguous column name {name!r}", pos)
        raise ParseError(f"unresolvable column name {name!r}", pos)


class _Parser:
    def __init__(self, toks: list[Tok], schema: Schema, grammar: Grammar):
        self.toks = toks
        self.i = 0
        self.schema = schema
        self.g = grammar
        self.resolver = _Resolver(schema)

    # -- token plumbing ------------------------------------------------------

    def peek(self, ahead: int = 0) -> Tok | None:
        j = self.i + ahead
        return self.toks[j] if j < len(self.toks) else None

    def at(self, text: str) -> bool:
        t = self.peek()
        return t is not None and t.text == text

    def take(self) -> Tok:
        if self.i >= len(self.toks):
            raise ParseError("unexpected end of query", self.i)
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> Tok:
        t = self.take()
        if t.text != text:
            raise ParseError(f"expected {text!r}, found {t.text!r}", self.i - 1)
        return t

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    # -- query structure -----------------------------------------------------

    def parse_query(self) -> Node:
        self.expect("select")
        distinct = self.accept("distinct")

        raw_items = [self.parse_raw_sel_item()]
        while self.accept(","):
            raw_items.append(self.parse_raw_sel_item())

        from_tables, aliases, joins = self.parse_from()

        where = self.parse_where(from_tables, aliases)
        group = self.parse_group(from_tables, aliases)
        order = self.parse_order(from_tables, aliases)
        lim = make(self.g, "limit") if self.parse_limit() else make(self.g, "no_limit")
        tail = self.parse_set_tail()

        items = [self.finish_sel_item(it, from_tables, aliases) for it in raw_items]
        sel_items = make(self.g, "sel_one", items[-1])
        for item in reversed(items[:-1]):
            sel_items = make(self.g, "sel_cons", item, sel_items)
        select = make(self.g, "select_distinct" if distinct else "select_plain", sel_items)

        node = make(self.g, "query", select, where, group, order, lim, tail)
        node.from_clause = FromClause.of(from_tables, joins)
        return node

    # select items are parsed before FROM is known, so resolution is deferred
    def parse_raw_sel_item(self):
        agg = "agg_none"
        t = self.peek()
        if t is not None and t.text in AGG_NAMES:
            agg = AGG_NAMES[t.text]
            self.take()
            self.expect("(")
            qualifier, name, pos = self.parse_name_path()
            self.expect(")")
        else:
            qualifier, name, pos = self.parse_name_path()
        return agg, qualifier, name, pos

    def parse_name_path(self) -> tuple[str | None, str, int]:
        pos = self.i
        t = self.take()
        if t.text == "*":
            return None, "*", pos
        if t.kind != "name":
            raise ParseError(f"expected a name, found {t.text!r}", pos)
        if self.accept("."):
            col = self.take()
            if col.kind != "name":
                raise ParseError(f"expected a column after {t.text!r}.", self.i - 1)
            return t.text, col.text, pos
        return None, t.text, pos

    def finish_sel_item(self, raw, from_tables, aliases) -> Node:
        agg, qualifier, name, pos = raw
        agg_node = make(self.g, agg)
        if name == "*" and qualifier is None:
            # anchored to the first table listed in FROM
            return make(self.g, "sel_star", agg_node, from_tables[0])
        col = self.resolver.column(name, qualifier, from_tables, aliases, pos)
        return make(self.g, "sel_col", agg_node, col)

    def parse_from(self):
        self.expect("from")
        aliases: dict[str, int] = {}
        tables: list[int] = []
        joins: list[tuple[int, int]] = []

        def table_ref() -> int:
            pos = self.i
            t = self.take()
            if t.kind != "name":
                raise ParseError(f"expected a table name, found {t.text!r}", pos)
            idx = self.resolver.table(t.text, {}, pos)
            if self.accept("as"):
                alias = self.take()
                aliases[alias.text.lower()] = idx
            return idx

        tables.append(table_ref())
        while True:
            if self.accept("inner"):
                self.expect("join")
            elif not self.accept("join"):
                break
            tables.append(table_ref())
            if self.accept("on"):
                while True:
                    q1, n1, p1 = self.parse_name_path()
                    a = self.resolver.column(n1, q1, tables, aliases, p1)
                    self.expect("=")
                    q2, n2, p2 = self.parse_name_path()
                    b = self.resolver.column(n2, q2, tables, aliases, p2)
                    joins.append((a, b))
                    if not self.accept("and"):
                        break
        return tables, aliases, joins

    # -- conditions ------------------------------------------------------------

    def parse_where(self, from_tables, aliases) -> Node:
        if not self.accept("where"):
            return make(self.g, "no_where")
        return make(self.g, "where", self.parse_or(from_tables, aliases))

    def parse_or(self, from_tables, aliases) -> Node:
        node = self.parse_and(from_tables, aliases)
        while self.accept("or"):
            node = make(self.g, "cond_or", node, self.parse_and(from_tables, aliases))
        return node

    def parse_and(self, from_tables, aliases) -> Node:
        node = self.parse_cond_primary(from_tables, aliases)
        while self.accept("and"):
            node = make(self.g, "cond_and", node, self.parse_cond_primary(from_tables, aliases))
        return node

    def parse_cond_primary(self, from_tables, aliases) -> Node:
        if self.accept("("):
            node = self.parse_or(from_tables, aliases)
            self.expect(")")
            return node
        agg = "agg_none"
        t = self.peek()
        if t is not None and t.text in AGG_NAMES:
            agg = AGG_NAMES[t.text]
            self.take()
            self.expect("(")
            qualifier, name, pos = self.parse_name_path()
            self.expect(")")
        else:
            qualifier, name, pos = self.parse_name_path()
        col = self.resolver.column(name, qualifier, from_tables, aliases, pos)
        op, val = self.parse_op_and_value(from_tables, aliases)
        return make(self.g, "cmp", make(self.g, agg), col, make(self.g, op), val)

    def parse_op_and_value(self, from_tables, aliases) -> tuple[str, Node]:
        pos = self.i
        t = self.take()
        text = t.text
        negated = False
        if text == "not":
            negated = True
            t = self.take()
            text = t.text
        simple = {"=": "op_eq", "!=": "op_ne", "<>": "op_ne", "<": "op_lt",
                  ">": "op_gt", "<=": "op_le", ">=": "op_ge"}
        if text in simple and not negated:
            return simple[text], self.parse_value(from_tables, aliases)
        if text == "like":
            return ("op_not_like" if negated else "op_like",
                    self.parse_value(from_tables, aliases))
        if text == "in":
            return ("op_not_in" if negated else "op_in",
                    self.parse_value(from_tables, aliases, in_list=True))
        if text == "between" and not negated:
            self.parse_literal()
            self.expect("and")
            self.parse_literal()
            return "op_between", make(self.g, "val_literal")
        raise ParseError(f"unsupported operator {text!r}", pos)

    def parse_literal(self) -> None:
        t = self.take()
        if t.kind not in ("num", "str"):
            raise ParseError(f"expected a literal value, found {t.text!r}", self.i - 1)

    def parse_value(self, from_tables, aliases, in_list: bool = False) -> Node:
        if self.at("("):
            nxt = self.peek(1)
            if nxt is not None and nxt.text == "select":
                self.expect("(")
                sub = self.parse_query()
                self.expect(")")
                return make(self.g, "val_query", sub)
            if in_list:
                self.expect("(")
                self.parse_literal()
                while self.accept(","):
                    self.parse_literal()
                self.expect(")")
                return make(self.g, "val_literal")
        self.parse_literal()
        return make(self.g, "val_literal")

    # -- trailing clauses --------------------------------------------------------

    def parse_group(self, from_tables, aliases) -> Node:
        if not (self.at("group")):
            return make(self.g, "no_group")
        self.expect("group")
        self.expect("by")

        def group_col() -> int:
            qualifier, name, pos = self.parse_name_path()
            return self.resolver.column(name, qualifier, from_tables, aliases, pos)

        cols = [group_col()]
        while self.accept(","):
            cols.append(group_col())
        col_list = make(self.g, "col_one", cols[-1])
        for c in reversed(cols[:-1]):
            col_list = make(self.g, "col_cons", c, col_list)
        having = make(self.g, "no_having")
        if self.accept("having"):
            having = make(self.g, "having", self.parse_or(from_tables, aliases))
        return make(self.g, "group_by", col_list, having)

    def parse_order(self, from_tables, aliases) -> Node:
        if not self.at("order"):
            return make(self.g, "no_order")
        self.expect("order")
        self.expect("by")
        keys = [self._order_key(from_tables, aliases)]
        while self.accept(","):
            keys.append(self._order_key(from_tables, aliases))
        direction = "dir_desc" if self.accept("desc") else "dir_asc"
        if direction == "dir_asc":
            self.accept("asc")
        key_list = make(self.g, "okey_one", keys[-1])
        for k in reversed(keys[:-1]):
            key_list = make(self.g, "okey_cons", k, key_list)
        return make(self.g, "order_by", key_list, make(self.g, direction))

    def _order_key(self, from_tables, aliases) -> Node:
        agg = "agg_none"
        t = self.peek()
        if t is not None and t.text in AGG_NAMES:
            agg = AGG_NAMES[t.text]
            self.take()
            self.expect("(")
            qualifier, name, pos = self.parse_name_path()
            self.expect(")")
        else:
            qualifier, name, pos = self.parse_name_path()
        col = self.resolver.column(name, qualifier, from_tables, aliases, pos)
        return make(self.g, "okey", make(self.g, agg), col)

    def parse_limit(self) -> bool:
        if not self.accept("limit"):
            return False
        t = self.take()
        if t.kind != "num":
            raise ParseError(f"expected a number after LIMIT, found {t.text!r}", self.i - 1)
        return True

    def parse_set_tail(self) -> Node:
        for kw, rule in (("intersect", "set_intersect"), ("union", "set_union"),
                         ("except", "set_except")):
            if self.accept(kw):
                return make(self.g, rule, self.parse_query())
        return make(self.g, "set_none")


def parse_sql(text: str, schema: Schema, grammar: Grammar = SQL_GRAMMAR) -> Node:
    """Parse one query; literals become placeholders, FROM is recorded aside."""
    toks = tokenize_sql(text)
    if not toks:
        raise ParseError("empty query")
    parser = _Parser(toks, schema, grammar)
    node = parser.parse_query()
    parser.accept(";")
    if parser.i != len(toks):
        raise ParseError(f"trailing input starting at {toks[parser.i].text!r}", parser.i)
    return node
