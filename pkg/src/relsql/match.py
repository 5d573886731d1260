"""Exact set match between two query trees over the same schema.

Clause contents compare as sets where ordering is incidental (SELECT
items, conjuncts/disjuncts per AND/OR level, GROUP BY columns, FROM tables
and join conditions) and as ordered structure where it is semantic
(ORDER BY keys and direction, set-operator chains, nesting). Value
placeholders always match each other; LIMIT compares by presence.
"""

from __future__ import annotations

from .grammar import Node

CLAUSES = ("select", "where", "group", "having", "order", "limit", "set_op", "from")


def _canon_val(val: Node):
    if val.rule.name == "val_literal":
        return "value"
    return ("subquery", canonical_query(val.children[0]))


def _canon_cond(node: Node):
    name = node.rule.name
    if name in ("cond_and", "cond_or"):
        op = "and" if name == "cond_and" else "or"
        kids = []

        def flatten(n: Node):
            if n.rule.name == name:
                flatten(n.children[0])
                flatten(n.children[1])
            else:
                kids.append(_canon_cond(n))

        flatten(node)
        return (op, frozenset(kids))
    agg, col, op, val = node.children
    return ("cmp", agg.rule.name, col, op.rule.name, _canon_val(val))


def _canon_item(item: Node):
    agg = item.children[0].rule.name
    if item.rule.name == "sel_star":
        return ("star", agg, item.children[1])
    return ("col", agg, item.children[1])


def _list_nodes(node: Node) -> list:
    items = []
    while node.rule.name.endswith("_cons"):
        items.append(node.children[0])
        node = node.children[1]
    items.append(node.children[0])
    return items


def clause_views(ast: Node) -> dict[str, object]:
    """Hashable canonical value per clause; None marks an absent clause."""
    if ast.rule.head != "query":
        raise ValueError(f"expected a query node, got {ast.rule.head}")
    select, where, group, order, limit, tail = ast.children
    views: dict[str, object] = {}
    views["select"] = (select.rule.name == "select_distinct",
                       frozenset(_canon_item(i) for i in _list_nodes(select.children[0])))
    views["where"] = _canon_cond(where.children[0]) if where.rule.name == "where" else None
    if group.rule.name == "group_by":
        views["group"] = frozenset(_list_nodes(group.children[0]))
        having = group.children[1]
        views["having"] = (_canon_cond(having.children[0])
                           if having.rule.name == "having" else None)
    else:
        views["group"] = None
        views["having"] = None
    if order.rule.name == "order_by":
        keys = tuple((k.children[0].rule.name, k.children[1])
                     for k in _list_nodes(order.children[0]))
        views["order"] = (keys, order.children[1].rule.name)
    else:
        views["order"] = None
    views["limit"] = limit.rule.name == "limit"
    if tail.rule.name != "set_none":
        views["set_op"] = (tail.rule.name, canonical_query(tail.children[0]))
    else:
        views["set_op"] = None
    if ast.from_clause is None:
        raise ValueError("query has no FROM clause; parse or recover one first")
    views["from"] = (frozenset(ast.from_clause.tables),
                     frozenset(ast.from_clause.joins))
    return views


def canonical_query(ast: Node):
    views = clause_views(ast)
    return tuple((name, views[name]) for name in CLAUSES)


def exact_set_match(gold: Node, pred: Node) -> tuple[bool, dict[str, bool]]:
    """Whole-query match plus per-clause breakdown (True = clause agrees)."""
    gv, pv = clause_views(gold), clause_views(pred)
    breakdown = {name: gv[name] == pv[name] for name in CLAUSES}
    return all(breakdown.values()), breakdown
