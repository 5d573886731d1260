"""Deterministic canonical SQL surface form for grammar trees.

Non-star columns always render table-qualified, value placeholders render
as 'terminal' (LIMIT uses 1), and the FROM clause is laid out from the
node's attached FromClause: smallest table first, joins added in discovery
order along the join conditions.
"""

from __future__ import annotations

from .grammar import FromClause, Node
from .schema import Schema

_AGG_SQL = {"agg_max": "max", "agg_min": "min", "agg_count": "count",
            "agg_sum": "sum", "agg_avg": "avg"}

_OP_SQL = {"op_eq": "=", "op_ne": "!=", "op_lt": "<", "op_gt": ">",
           "op_le": "<=", "op_ge": ">="}

PLACEHOLDER = "'terminal'"


def _column_sql(schema: Schema, index: int) -> str:
    col = schema.columns[index]
    if col.is_star:
        return "*"
    table = schema.tables[col.table_index].orig_name
    return f"{table}.{col.orig_name}"


def _agg_wrap(agg_rule: str, inner: str) -> str:
    if agg_rule == "agg_none":
        return inner
    return f"{_AGG_SQL[agg_rule]}({inner})"


def _sel_item_sql(item: Node, schema: Schema) -> str:
    agg = item.children[0].rule.name
    if item.rule.name == "sel_star":
        return _agg_wrap(agg, "*")
    return _agg_wrap(agg, _column_sql(schema, item.children[1]))


def _list_nodes(node: Node) -> list:
    items = []
    while node.rule.name.endswith("_cons"):
        items.append(node.children[0])
        node = node.children[1]
    items.append(node.children[0])
    return items


def _from_sql(fc: FromClause, schema: Schema) -> str:
    tables = list(fc.tables)
    if len(tables) == 1:
        return schema.tables[tables[0]].orig_name

    def tables_of(pair):
        return {schema.columns[pair[0]].table_index, schema.columns[pair[1]].table_index}

    pending = list(fc.joins)
    placed = {tables[0]}
    remaining = [t for t in tables[1:]]
    parts = [schema.tables[tables[0]].orig_name]
    while remaining:
        pick = next((t for t in remaining
                     if any(tables_of(j) <= placed | {t} for j in pending)), remaining[0])
        remaining.remove(pick)
        placed.add(pick)
        # every not-yet-emitted condition now fully in scope joins here, so no
        # condition is lost even for cyclic or multi-condition FROM clauses
        here = [j for j in pending if tables_of(j) <= placed]
        pending = [j for j in pending if j not in here]
        ons = " AND ".join(f"{_column_sql(schema, a)} = {_column_sql(schema, b)}"
                           for a, b in here)
        if ons:
            parts.append(f"JOIN {schema.tables[pick].orig_name} ON {ons}")
        else:
            parts.append(f"JOIN {schema.tables[pick].orig_name}")
    return " ".join(parts)


def _cond_sql(node: Node, schema: Schema, level: int = 0) -> str:
    name = node.rule.name
    if name == "cond_or":
        s = f"{_cond_sql(node.children[0], schema, 0)} OR {_cond_sql(node.children[1], schema, 0)}"
        return f"({s})" if level > 0 else s
    if name == "cond_and":
        return (f"{_cond_sql(node.children[0], schema, 1)} AND "
                f"{_cond_sql(node.children[1], schema, 1)}")
    agg, col, op, val = node.children
    lhs = _agg_wrap(agg.rule.name, _column_sql(schema, col))
    op_name = op.rule.name
    rhs = _val_sql(val, schema)
    if op_name in _OP_SQL:
        return f"{lhs} {_OP_SQL[op_name]} {rhs}"
    if op_name == "op_between":
        return f"{lhs} BETWEEN {PLACEHOLDER} AND {PLACEHOLDER}"
    if op_name == "op_like":
        return f"{lhs} LIKE {rhs}"
    if op_name == "op_not_like":
        return f"{lhs} NOT LIKE {rhs}"
    if op_name == "op_in":
        return f"{lhs} IN ({_val_sql(val, schema, bare=True)})"
    if op_name == "op_not_in":
        return f"{lhs} NOT IN ({_val_sql(val, schema, bare=True)})"
    raise ValueError(f"unknown operator rule {op_name}")


def _val_sql(val: Node, schema: Schema, bare: bool = False) -> str:
    if val.rule.name == "val_literal":
        return PLACEHOLDER
    inner = render_sql(val.children[0], schema)
    return inner if bare else f"({inner})"


def render_sql(ast: Node, schema: Schema) -> str:
    """Canonical SQL string; requires from_clause on every query node."""
    if ast.rule.head != "query":
        raise ValueError(f"expected a query node, got {ast.rule.head}")
    if ast.from_clause is None:
        raise ValueError("query has no FROM clause; parse or recover one first")
    select, where, group, order, limit, tail = ast.children

    items = ", ".join(_sel_item_sql(i, schema) for i in _list_nodes(select.children[0]))
    distinct = "DISTINCT " if select.rule.name == "select_distinct" else ""
    parts = [f"SELECT {distinct}{items}", f"FROM {_from_sql(ast.from_clause, schema)}"]

    if where.rule.name == "where":
        parts.append(f"WHERE {_cond_sql(where.children[0], schema)}")
    if group.rule.name == "group_by":
        cols = ", ".join(_column_sql(schema, c) for c in _list_nodes(group.children[0]))
        parts.append(f"GROUP BY {cols}")
        having = group.children[1]
        if having.rule.name == "having":
            parts.append(f"HAVING {_cond_sql(having.children[0], schema)}")
    if order.rule.name == "order_by":
        keys = ", ".join(_agg_wrap(k.children[0].rule.name, _column_sql(schema, k.children[1]))
                         for k in _list_nodes(order.children[0]))
        direction = "ASC" if order.children[1].rule.name == "dir_asc" else "DESC"
        parts.append(f"ORDER BY {keys} {direction}")
    if limit.rule.name == "limit":
        parts.append("LIMIT 1")
    if tail.rule.name != "set_none":
        kw = {"set_intersect": "INTERSECT", "set_union": "UNION",
              "set_except": "EXCEPT"}[tail.rule.name]
        parts.append(f"{kw} {render_sql(tail.children[0], schema)}")
    return " ".join(parts)
