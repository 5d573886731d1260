"""FROM-clause recovery from the columns and tables a query references.

The required table set is gathered per query level (nested queries recover
independently). When more than one table is required, the smallest
connected subgraph of the foreign-key graph covering them is chosen, with
deterministic tie-breaking: fewer tables first, then the lexicographically
smallest sorted table-index tuple. Join conditions come from a spanning
tree of the chosen subgraph, one foreign-key equality per edge.
"""

from __future__ import annotations

from itertools import combinations

from .grammar import COLUMN, NODE, TABLE, FromClause, Node
from .schema import Schema


class FromRecoveryError(ValueError):
    pass


def referenced_elements(node: Node) -> tuple[set[int], set[int]]:
    """Column and table indices referenced at this query level (nested queries excluded)."""
    cols: set[int] = set()
    tabs: set[int] = set()

    def walk(n: Node):
        for slot, child in zip(n.rule.slots, n.children):
            if slot.kind == COLUMN:
                cols.add(child)
            elif slot.kind == TABLE:
                tabs.add(child)
            elif slot.kind == NODE and child.rule.head != "query":
                walk(child)

    walk(node)
    return cols, tabs


def _table_edges(schema: Schema) -> dict[tuple[int, int], list[tuple[int, int]]]:
    """Undirected table pairs -> the FK column pairs that realize them."""
    edges: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for a, b in schema.foreign_keys:
        ta, tb = schema.columns[a].table_index, schema.columns[b].table_index
        if ta is None or tb is None or ta == tb:
            continue
        key = (min(ta, tb), max(ta, tb))
        edges.setdefault(key, []).append((min(a, b), max(a, b)))
    return edges


def _connected(tables: tuple[int, ...], edges) -> bool:
    if len(tables) <= 1:
        return True
    members = set(tables)
    seen = {tables[0]}
    stack = [tables[0]]
    while stack:
        t = stack.pop()
        for (a, b) in edges:
            if a == t and b in members and b not in seen:
                seen.add(b)
                stack.append(b)
            elif b == t and a in members and a not in seen:
                seen.add(a)
                stack.append(a)
    return seen == members


def _components(tables: set[int], edges) -> list[set[int]]:
    remaining = set(tables)
    comps = []
    while remaining:
        start = min(remaining)
        comp = {start}
        stack = [start]
        while stack:
            t = stack.pop()
            for (a, b) in edges:
                o = b if a == t else a if b == t else None
                if o is not None and o not in comp:
                    comp.add(o)
                    stack.append(o)
        comps.append(comp & tables)
        remaining -= comp
    return comps


def minimum_join_tables(required: set[int], schema: Schema) -> tuple[int, ...]:
    """Smallest connected table superset of `required` in the FK graph."""
    edges = _table_edges(schema)
    base = tuple(sorted(required))
    if _connected(base, edges):
        return base
    others = sorted(set(range(len(schema.tables))) - required)
    for extra in range(1, len(others) + 1):
        for combo in combinations(others, extra):
            candidate = tuple(sorted(required | set(combo)))
            if _connected(candidate, edges):
                return candidate
    groups = _components(required, edges)
    pretty = " / ".join("{" + ", ".join(schema.tables[t].orig_name for t in sorted(g)) + "}"
                        for g in groups)
    raise FromRecoveryError(f"cannot connect required tables via foreign keys: {pretty}")


def _spanning_joins(tables: tuple[int, ...], schema: Schema) -> tuple[tuple[int, int], ...]:
    edges = _table_edges(schema)
    parent = {t: t for t in tables}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    joins = []
    for (a, b) in sorted(k for k in edges if k[0] in tables and k[1] in tables):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            joins.append(min(edges[(a, b)]))
    return tuple(sorted(joins))


def recover_from_clause(ast: Node, schema: Schema) -> FromClause:
    """Attach a recovered FROM to every query node in the tree; return the root's.

    A query that references no table at all (only the '*' column) falls back
    to the schema's first table.
    """
    if ast.rule.head != "query":
        raise ValueError(f"expected a query node, got {ast.rule.head}")

    def visit(q: Node) -> FromClause:
        cols, tabs = referenced_elements(q)
        required = set(tabs)
        for c in cols:
            ti = schema.columns[c].table_index
            if ti is not None:
                required.add(ti)
        if not required:
            required = {0}
        tables = minimum_join_tables(required, schema)
        joins = _spanning_joins(tables, schema) if len(tables) > 1 else ()
        q.from_clause = FromClause.of(tables, joins)
        for sub in _nested_queries(q):
            visit(sub)
        return q.from_clause

    return visit(ast)


def _nested_queries(q: Node) -> list[Node]:
    found: list[Node] = []

    def walk(n: Node):
        for slot, child in zip(n.rule.slots, n.children):
            if slot.kind == NODE:
                if child.rule.head == "query":
                    found.append(child)
                else:
                    walk(child)

    walk(q)
    return found
