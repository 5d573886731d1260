"""Production-rule grammar for the FROM-less SQL subset.

Queries are typed trees: every interior node was built by one grammar rule,
and leaf slots hold column pointers, table pointers, or literal-value
placeholders. The FROM clause is not part of the tree; it lives alongside a
query node (recorded by the parser, or recovered from referenced columns).

Rule order matters in one place: the first rule listed for each node type
must lead to a finite completion, because truncated decodes are closed with
lowest-index rules.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .relations import ElemKind, Element
from .schema import Schema

NODE = "node"
COLUMN = "column"
TABLE = "table"


@dataclass(frozen=True)
class Slot:
    kind: str            # NODE / COLUMN / TABLE
    head: str | None     # node type for NODE slots


@dataclass(frozen=True)
class Rule:
    index: int
    head: str
    name: str
    slots: tuple[Slot, ...]


class Grammar:
    def __init__(self, root: str, rules: list[tuple[str, str, list[Slot]]]):
        self.root = root
        self.rules: list[Rule] = [
            Rule(i, head, name, tuple(slots)) for i, (head, name, slots) in enumerate(rules)
        ]
        self.by_name = {r.name: r for r in self.rules}
        self.by_head: dict[str, list[Rule]] = {}
        for r in self.rules:
            self.by_head.setdefault(r.head, []).append(r)
        self.node_types = sorted(self.by_head)
        # slot types needing an embedding row: nonterminals plus the two pointer kinds
        self.slot_types = self.node_types + [COLUMN, TABLE]
        self.slot_type_index = {t: i for i, t in enumerate(self.slot_types)}
        for r in self.rules:
            for s in r.slots:
                if s.kind == NODE and s.head not in self.by_head:
                    raise ValueError(f"rule {r.name}: undeclared node type {s.head}")

    def __len__(self) -> int:
        return len(self.rules)

    def rule(self, name: str) -> Rule:
        return self.by_name[name]

    def fingerprint(self) -> str:
        return ";".join(f"{r.head}:{r.name}" for r in self.rules)


def _n(head: str) -> Slot:
    return Slot(NODE, head)


_COL = Slot(COLUMN, None)
_TAB = Slot(TABLE, None)

COMPARISON_OPS = ("eq", "ne", "lt", "gt", "le", "ge",
                  "between", "like", "not_like", "in", "not_in")

_RULES: list[tuple[str, str, list[Slot]]] = [
    ("query", "query", [_n("select"), _n("where_opt"), _n("group_opt"),
                        _n("order_opt"), _n("limit_opt"), _n("set_tail")]),
    ("set_tail", "set_none", []),
    ("set_tail", "set_intersect", [_n("query")]),
    ("set_tail", "set_union", [_n("query")]),
    ("set_tail", "set_except", [_n("query")]),
    ("select", "select_plain", [_n("sel_items")]),
    ("select", "select_distinct", [_n("sel_items")]),
    ("sel_items", "sel_one", [_n("sel_item")]),
    ("sel_items", "sel_cons", [_n("sel_item"), _n("sel_items")]),
    ("sel_item", "sel_col", [_n("agg"), _COL]),
    ("sel_item", "sel_star", [_n("agg"), _TAB]),
    ("agg", "agg_none", []),
    ("agg", "agg_max", []),
    ("agg", "agg_min", []),
    ("agg", "agg_count", []),
    ("agg", "agg_sum", []),
    ("agg", "agg_avg", []),
    ("where_opt", "no_where", []),
    ("where_opt", "where", [_n("cond")]),
    ("cond", "cmp", [_n("agg"), _COL, _n("cmp_op"), _n("val")]),
    ("cond", "cond_and", [_n("cond"), _n("cond")]),
    ("cond", "cond_or", [_n("cond"), _n("cond")]),
    *[("cmp_op", f"op_{op}", []) for op in COMPARISON_OPS],
    ("val", "val_literal", []),
    ("val", "val_query", [_n("query")]),
    ("group_opt", "no_group", []),
    ("group_opt", "group_by", [_n("col_list"), _n("having_opt")]),
    ("col_list", "col_one", [_COL]),
    ("col_list", "col_cons", [_COL, _n("col_list")]),
    ("having_opt", "no_having", []),
    ("having_opt", "having", [_n("cond")]),
    ("order_opt", "no_order", []),
    ("order_opt", "order_by", [_n("order_keys"), _n("order_dir")]),
    ("order_dir", "dir_asc", []),
    ("order_dir", "dir_desc", []),
    ("order_keys", "okey_one", [_n("order_key")]),
    ("order_keys", "okey_cons", [_n("order_key"), _n("order_keys")]),
    ("order_key", "okey", [_n("agg"), _COL]),
    ("limit_opt", "no_limit", []),
    ("limit_opt", "limit", []),
]

SQL_GRAMMAR = Grammar("query", _RULES)


@dataclass(frozen=True)
class FromClause:
    tables: tuple[int, ...]                 # sorted table indices
    joins: tuple[tuple[int, int], ...]      # sorted (low col, high col) equality pairs

    @staticmethod
    def of(tables, joins=()) -> "FromClause":
        norm = tuple(sorted({tuple(sorted(j)) for j in joins}))
        return FromClause(tuple(sorted(set(tables))), norm)


class Node:
    """AST node: one applied rule plus children aligned with the rule's slots.

    Children are Node for nonterminal slots and int indices for pointer
    slots. Query nodes additionally carry `from_clause` once it is known.
    """

    __slots__ = ("rule", "children", "from_clause")

    def __init__(self, rule: Rule, children: list):
        self.rule = rule
        self.children = children
        self.from_clause: FromClause | None = None

    def child(self, i: int):
        return self.children[i]

    def __repr__(self) -> str:
        return f"Node({self.rule.name})"


def make(grammar: Grammar, name: str, *children) -> Node:
    return Node(grammar.rule(name), list(children))


def check_conformance(node: Node, grammar: Grammar, schema: Schema) -> None:
    """Raise ValueError if the tree breaks the grammar or points out of range."""
    if not isinstance(node, Node) or node.rule is not grammar.rules[node.rule.index]:
        raise ValueError(f"node {node!r} does not belong to this grammar")
    if len(node.children) != len(node.rule.slots):
        raise ValueError(f"{node.rule.name}: arity {len(node.children)}, "
                         f"expected {len(node.rule.slots)}")
    for slot, child in zip(node.rule.slots, node.children):
        if slot.kind == NODE:
            if not isinstance(child, Node):
                raise ValueError(f"{node.rule.name}: expected a node in a {slot.head} slot")
            if child.rule.head != slot.head:
                raise ValueError(f"{node.rule.name}: got {child.rule.head}, "
                                 f"expected {slot.head}")
            check_conformance(child, grammar, schema)
        elif slot.kind == COLUMN:
            if not isinstance(child, int) or not 0 <= child < len(schema.columns):
                raise ValueError(f"{node.rule.name}: bad column index {child!r}")
        else:
            if not isinstance(child, int) or not 0 <= child < len(schema.tables):
                raise ValueError(f"{node.rule.name}: bad table index {child!r}")


# ---------------------------------------------------------------------------
# actions: the decoder's view of a tree
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ApplyRule:
    rule_index: int


@dataclass(frozen=True)
class PointTo:
    element: Element  # restricted to column/table kinds


Action = ApplyRule | PointTo


def linearize(node: Node, grammar: Grammar) -> list[Action]:
    """Depth-first pre-order action sequence that rebuilds the tree exactly."""
    actions: list[Action] = []

    def walk(n: Node):
        if n.rule.name not in grammar.by_name:
            raise ValueError(f"node {n.rule.name} not representable in the grammar")
        actions.append(ApplyRule(n.rule.index))
        for slot, child in zip(n.rule.slots, n.children):
            if slot.kind == NODE:
                walk(child)
            elif slot.kind == COLUMN:
                actions.append(PointTo(Element(ElemKind.COLUMN, child)))
            else:
                actions.append(PointTo(Element(ElemKind.TABLE, child)))

    walk(node)
    return actions


@dataclass
class Hole:
    parent: Node | None
    slot_index: int
    slot: Slot


class TreeBuilder:
    """Incremental construction shared by delinearize and the decoder."""

    def __init__(self, grammar: Grammar):
        self.grammar = grammar
        self.root: Node | None = None
        self.frontier: list[Hole] = [Hole(None, 0, Slot(NODE, grammar.root))]

    @property
    def done(self) -> bool:
        return not self.frontier

    def next_slot(self) -> Slot:
        return self.frontier[-1].slot

    def apply(self, action: Action) -> None:
        hole = self.frontier.pop()
        if isinstance(action, ApplyRule):
            rule = self.grammar.rules[action.rule_index]
            if hole.slot.kind != NODE or rule.head != hole.slot.head:
                raise ValueError(f"rule {rule.name} does not fit a {hole.slot} slot")
            node = Node(rule, [None] * len(rule.slots))
            self._attach(hole, node)
            for i in range(len(rule.slots) - 1, -1, -1):
                self.frontier.append(Hole(node, i, rule.slots[i]))
        else:
            elem = action.element
            want = COLUMN if hole.slot.kind == COLUMN else TABLE if hole.slot.kind == TABLE else None
            got = COLUMN if elem.kind is ElemKind.COLUMN else TABLE
            if want is None or want != got:
                raise ValueError(f"pointer {elem} does not fit a {hole.slot} slot")
            self._attach(hole, elem.index)

    def _attach(self, hole: Hole, value) -> None:
        if hole.parent is None:
            if isinstance(value, Node):
                self.root = value
            else:
                raise ValueError("root must be a node")
        else:
            hole.parent.children[hole.slot_index] = value


def delinearize(actions: list[Action], grammar: Grammar) -> Node:
    builder = TreeBuilder(grammar)
    for a in actions:
        if builder.done:
            raise ValueError("actions continue past a completed tree")
        builder.apply(a)
    if not builder.done:
        raise ValueError("action sequence ended with unexpanded slots")
    return builder.root


# convenience accessors used by rendering, matching, and recovery -----------

def named_children(node: Node) -> dict[str, object]:
    return {f"{s.kind}{i}": c for i, (s, c) in enumerate(zip(node.rule.slots, node.children))}


def iter_list(node: Node, cons_suffix: str = "_cons") -> list[Node]:
    """Flatten a cons-list nonterminal (sel_items, col_list, order_keys)."""
    items = []
    while True:
        if node.rule.name.endswith(cons_suffix):
            items.append(node.children[0])
            node = node.children[1]
        else:
            items.append(node.children[0])
            return items
