from itertools import combinations

import numpy as np
import pytest

from relsql.from_recovery import FromRecoveryError, minimum_join_tables, recover_from_clause
from relsql.grammar import (
    COLUMN, NODE, TABLE, SQL_GRAMMAR, ApplyRule, FromClause, PointTo,
    check_conformance, delinearize, linearize, make,
)
from relsql.match import exact_set_match
from relsql.sql_parse import ParseError, parse_sql
from relsql.sql_render import render_sql
from util import flights_schema, make_schema

G = SQL_GRAMMAR


def rt(schema, sql):
    return parse_sql(sql, schema)


def test_minimal_query():
    schema = flights_schema()
    ast = rt(schema, "SELECT airline_name FROM airlines")
    assert ast.rule.name == "query"
    assert ast.from_clause == FromClause.of([0])
    item = ast.children[0].children[0].children[0]
    assert item.rule.name == "sel_col"
    assert item.children[1] == 1  # airlines.airline_name
    check_conformance(ast, G, schema)


def test_values_become_placeholders():
    schema = flights_schema(star=True)
    ast = rt(schema, "SELECT count(*) FROM flights WHERE flight_id = 2000")
    where = ast.children[1]
    assert where.rule.name == "where"
    cmp_node = where.children[0]
    assert cmp_node.children[3].rule.name == "val_literal"
    # star item is anchored to the FROM table
    item = ast.children[0].children[0].children[0]
    assert item.rule.name == "sel_star" and item.children[1] == 2


def test_alias_resolution():
    schema = flights_schema()
    ast = rt(schema, "SELECT T1.airline_name, T2.source FROM airlines AS T1 "
                     "JOIN flights AS T2 ON T1.uid = T2.airline")
    items = [n for n in _items(ast)]
    assert [i.children[1] for i in items] == [1, 8]
    assert ast.from_clause == FromClause.of([0, 2], [(0, 7)])


def _items(ast):
    node = ast.children[0].children[0]
    out = []
    while node.rule.name == "sel_cons":
        out.append(node.children[0])
        node = node.children[1]
    out.append(node.children[0])
    return out


def test_parse_errors():
    schema = flights_schema()
    with pytest.raises(ParseError, match="nosuch"):
        rt(schema, "SELECT nosuch FROM airlines")
    with pytest.raises(ParseError, match="unresolvable table"):
        rt(schema, "SELECT uid FROM nowhere")
    with pytest.raises(ParseError):
        rt(schema, "DELETE FROM airlines")
    with pytest.raises(ParseError, match="ambiguous"):
        # both flights.source and airports share no name, but uid vs airport_id do not
        # collide; force ambiguity via a duplicated name
        s2 = make_schema("amb", ["a", "b"], [("x", "text", 0), ("x", "text", 1)])
        parse_sql("SELECT x FROM a JOIN b ON a.x = b.x", s2)


def test_nested_query_and_operators():
    schema = flights_schema()
    sql = ("SELECT airline_name FROM airlines WHERE uid IN "
           "(SELECT airline FROM flights WHERE source > 5) AND country != 'usa'")
    ast = rt(schema, sql)
    check_conformance(ast, G, schema)
    cond = ast.children[1].children[0]
    assert cond.rule.name == "cond_and"
    left, right = cond.children
    assert left.children[2].rule.name == "op_in"
    sub = left.children[3].children[0]
    assert sub.rule.head == "query"
    assert sub.from_clause == FromClause.of([2])
    assert right.children[2].rule.name == "op_ne"


def test_round_trip_minimal_is_canonical_fixed_point():
    schema = flights_schema()
    ast = rt(schema, "select   airline_name  from airlines")
    text = render_sql(ast, schema)
    assert text == "SELECT airlines.airline_name FROM airlines"
    assert render_sql(rt(schema, text), schema) == text


def test_render_preserves_select_order():
    schema = flights_schema()
    ast = rt(schema, "SELECT country, uid FROM airlines")
    assert render_sql(ast, schema) == "SELECT airlines.country, airlines.uid FROM airlines"


CORPUS = [
    "SELECT airline_name FROM airlines",
    "SELECT DISTINCT city FROM airports",
    "SELECT count(*) FROM flights",
    "SELECT count(*) FROM flights WHERE source = 1",
    "SELECT uid, country FROM airlines WHERE airline_name = 'x' OR country = 'y'",
    "SELECT airline_name FROM airlines JOIN flights ON airlines.uid = flights.airline",
    "SELECT city FROM airports JOIN flights ON airports.airport_id = flights.source "
    "WHERE flights.airline = 5",
    "SELECT country FROM airlines WHERE uid IN (SELECT airline FROM flights)",
    "SELECT city, count(*) FROM airports JOIN flights ON airports.airport_id = flights.dest "
    "GROUP BY city HAVING count(*) > 10",
    "SELECT airline_name FROM airlines ORDER BY airline_name ASC",
    "SELECT city FROM airports ORDER BY count(*) DESC LIMIT 5",
    "SELECT uid FROM airlines WHERE uid BETWEEN 1 AND 5",
    "SELECT uid FROM airlines WHERE country LIKE 'a%'",
    "SELECT uid FROM airlines WHERE uid NOT IN (1, 2, 3)",
    "SELECT airline_name FROM airlines INTERSECT SELECT airline_name FROM airlines "
    "WHERE uid > 3",
    "SELECT airline_name FROM airlines WHERE (uid = 1 OR uid = 2) AND country = 'z'",
]


@pytest.mark.parametrize("sql", CORPUS)
def test_parse_render_parse_fixed_point(sql):
    schema = flights_schema(star=True)
    first = parse_sql(sql, schema)
    check_conformance(first, G, schema)
    rendered = render_sql(first, schema)
    second = parse_sql(rendered, schema)
    ok, breakdown = exact_set_match(first, second)
    assert ok, (rendered, breakdown)
    assert render_sql(second, schema) == rendered


def test_exact_match_reflexive_and_set_semantics():
    schema = flights_schema()
    a = rt(schema, "SELECT uid, country FROM airlines")
    b = rt(schema, "SELECT country, uid FROM airlines")
    assert exact_set_match(a, a)[0]
    assert exact_set_match(a, b)[0] and exact_set_match(b, a)[0]

    c = rt(schema, "SELECT uid FROM airlines WHERE uid > 3 AND country < 'x'")
    d = rt(schema, "SELECT uid FROM airlines WHERE country < 'x' AND uid > 3")
    assert exact_set_match(c, d)[0]

    e = rt(schema, "SELECT uid FROM airlines WHERE uid >= 3 AND country < 'x'")
    ok, breakdown = exact_set_match(c, e)
    assert not ok
    assert breakdown["where"] is False
    assert breakdown["select"] is True


def test_exact_match_order_by_is_ordered():
    schema = flights_schema()
    a = rt(schema, "SELECT uid FROM airlines ORDER BY uid, country ASC")
    b = rt(schema, "SELECT uid FROM airlines ORDER BY country, uid ASC")
    c = rt(schema, "SELECT uid FROM airlines ORDER BY uid, country DESC")
    assert not exact_set_match(a, b)[0]
    assert not exact_set_match(a, c)[0]
    assert exact_set_match(a, rt(schema, "SELECT uid FROM airlines ORDER BY uid, country"))[0]


def test_exact_match_values_always_agree():
    schema = flights_schema()
    a = rt(schema, "SELECT uid FROM airlines WHERE uid = 5")
    b = rt(schema, "SELECT uid FROM airlines WHERE uid = 99")
    assert exact_set_match(a, b)[0]


def test_exact_match_from_clause():
    schema = flights_schema()
    a = rt(schema, "SELECT airline_name FROM airlines JOIN flights "
                   "ON airlines.uid = flights.airline")
    b = rt(schema, "SELECT airline_name FROM flights JOIN airlines "
                   "ON flights.airline = airlines.uid")
    assert exact_set_match(a, b)[0]
    c = rt(schema, "SELECT airline_name FROM airlines")
    ok, breakdown = exact_set_match(a, c)
    assert not ok and breakdown["from"] is False


# ---------------------------------------------------------------------------
# FROM recovery
# ---------------------------------------------------------------------------

def strip_from(ast):
    ast.from_clause = None
    return ast


def test_recovery_single_table():
    schema = flights_schema()
    ast = strip_from(rt(schema, "SELECT flight_id FROM flights"))
    fc = recover_from_clause(ast, schema)
    assert fc == FromClause.of([2])
    assert "FROM flights" in render_sql(ast, schema)


def test_recovery_two_tables_via_fk():
    schema = flights_schema()
    ast = strip_from(rt(schema, "SELECT airline_name FROM airlines JOIN flights "
                                "ON airlines.uid = flights.airline WHERE flights.dest = 1"))
    fc = recover_from_clause(ast, schema)
    assert fc == FromClause.of([0, 2], [(0, 7)])


def test_recovery_three_table_chain():
    # airlines and airports are only connected through flights
    schema = flights_schema()
    ast = strip_from(rt(schema, "SELECT airline_name FROM airlines JOIN flights "
                                "ON airlines.uid = flights.airline "
                                "JOIN airports ON flights.source = airports.airport_id "
                                "WHERE airports.city = 'ny'"))
    for n in _walk(ast):
        n.from_clause = None
    fc = recover_from_clause(ast, schema)
    assert set(fc.tables) == {0, 1, 2}
    assert len(fc.joins) == 2


def _walk(node):
    yield node
    for slot, child in zip(node.rule.slots, node.children):
        if slot.kind == NODE:
            yield from _walk(child)


def test_recovery_star_only_falls_back_to_first_table():
    schema = flights_schema(star=True)
    ast = strip_from(rt(schema, "SELECT count(*) FROM flights"))
    # sel_star still references flights, so recovery stays put
    assert recover_from_clause(ast, schema) == FromClause.of([2])
    # a bare-star tree built by hand references nothing
    bare = make(G, "query",
                make(G, "select_plain", make(G, "sel_one",
                     make(G, "sel_col", make(G, "agg_count"), 0))),
                make(G, "no_where"), make(G, "no_group"), make(G, "no_order"),
                make(G, "no_limit"), make(G, "set_none"))
    assert recover_from_clause(bare, schema) == FromClause.of([0])


def test_recovery_disconnected_reports_groups():
    schema = make_schema("disc", ["a", "b"],
                         [("x", "number", 0), ("y", "number", 1)])
    ast = strip_from(rt(schema, "SELECT x, y FROM a JOIN b"))
    with pytest.raises(FromRecoveryError, match="a.*b|b.*a"):
        recover_from_clause(ast, schema)


def _oracle_min_tables(required, schema):
    """Brute force: enumerate all table subsets, keep connected supersets."""
    from relsql.from_recovery import _connected, _table_edges
    edges = _table_edges(schema)
    n = len(schema.tables)
    best = None
    for size in range(len(required), n + 1):
        for combo in combinations(range(n), size):
            if required <= set(combo) and _connected(tuple(sorted(combo)), edges):
                cand = tuple(sorted(combo))
                if best is None or (len(cand), cand) < (len(best), best):
                    best = cand
        if best is not None:
            return best
    return None


@pytest.mark.parametrize("seed", range(12))
def test_recovery_minimality_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    n_tables = int(rng.integers(2, 7))
    from util import random_connected_schema
    schema = random_connected_schema(rng, n_tables=n_tables, star=False)
    for _ in range(8):
        k = int(rng.integers(1, n_tables + 1))
        required = set(int(t) for t in rng.choice(n_tables, size=k, replace=False))
        got = minimum_join_tables(required, schema)
        want = _oracle_min_tables(required, schema)
        assert got == want


def test_recovered_tables_are_minimal_superset():
    schema = flights_schema()
    tables = minimum_join_tables({0, 1}, schema)
    assert set(tables) == {0, 1, 2}
    for drop in tables:
        sub = tuple(t for t in tables if t != drop)
        from relsql.from_recovery import _connected, _table_edges
        assert not ({0, 1} <= set(sub) and _connected(sub, _table_edges(schema)))


# ---------------------------------------------------------------------------
# linearize / delinearize
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("sql", CORPUS)
def test_linearize_roundtrip(sql):
    schema = flights_schema(star=True)
    ast = parse_sql(sql, schema)
    actions = linearize(ast, G)
    rebuilt = delinearize(actions, G)
    rebuilt.from_clause = ast.from_clause
    for orig, new in zip(_walk(ast), _walk(rebuilt)):
        if orig.rule.head == "query":
            new.from_clause = orig.from_clause
    assert exact_set_match(ast, rebuilt)[0]
    assert linearize(rebuilt, G) == actions


def test_actions_are_typed():
    schema = flights_schema()
    ast = rt(schema, "SELECT uid FROM airlines")
    actions = linearize(ast, G)
    assert isinstance(actions[0], ApplyRule)
    assert actions[0].rule_index == G.rule("query").index
    assert any(isinstance(a, PointTo) for a in actions)


def test_grammar_first_rules_terminate():
    """Closing every slot with its head's first rule must reach a finite tree."""
    seen_heads = set()

    def expand(head, depth):
        assert depth < 50, "lowest-index closure recursed too deep"
        rule = G.by_head[head][0]
        for slot in rule.slots:
            if slot.kind == NODE:
                expand(slot.head, depth + 1)

    for head in G.by_head:
        expand(head, 0)
        seen_heads.add(head)
    assert "query" in seen_heads
