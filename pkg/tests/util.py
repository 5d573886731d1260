"""Shared builders for tests: small schemas and hypothesis strategies."""

import numpy as np
from hypothesis import strategies as st

from relsql.schema import Column, Schema, Table


def make_schema(sid, tables, columns, pks=(), fks=(), star=False):
    """columns: list of (name, type, table_index)."""
    cols = [Column(name.split("_"), typ, ti) for name, typ, ti in columns]
    offset = 0
    if star:
        cols = [Column(["*"], "others", None, orig_name="*")] + cols
        offset = 1
    return Schema(
        id=sid,
        tables=[Table(t.split("_")) for t in tables],
        columns=cols,
        primary_keys={p + offset for p in pks},
        foreign_keys=[(a + offset, b + offset) for a, b in fks],
    )


def flights_schema(star=False):
    """Three-table aviation schema; flights holds foreign keys into both others."""
    return make_schema(
        "flights_db",
        tables=["airlines", "airports", "flights"],
        columns=[
            ("uid", "number", 0), ("airline_name", "text", 0), ("country", "text", 0),
            ("airport_id", "number", 1), ("city", "text", 1), ("code", "text", 1),
            ("flight_id", "number", 2), ("airline", "number", 2),
            ("source", "number", 2), ("dest", "number", 2),
        ],
        pks=[0, 3, 6],
        fks=[(7, 0), (8, 3), (9, 3)],
        star=star,
    )


@st.composite
def schemas(draw, max_tables=4, max_columns=12, star=False):
    n_tables = draw(st.integers(1, max_tables))
    n_cols = draw(st.integers(n_tables, max_columns))
    table_of = [i % n_tables for i in range(n_cols)]
    types = [draw(st.sampled_from(["number", "text", "time", "boolean", "others"]))
             for _ in range(n_cols)]
    pks = set()
    for t in range(n_tables):
        owned = [i for i in range(n_cols) if table_of[i] == t]
        if owned and draw(st.booleans()):
            pks.update(draw(st.sets(st.sampled_from(owned), min_size=1, max_size=2)))
    fk_pairs = draw(st.sets(
        st.tuples(st.integers(0, n_cols - 1), st.integers(0, n_cols - 1)).filter(
            lambda ab: ab[0] != ab[1]),
        max_size=6))
    fk_pairs = {(a, b) for a, b in fk_pairs if (b, a) not in fk_pairs or a < b}
    return make_schema(
        f"rand_{n_tables}_{n_cols}",
        tables=[f"tab{i}" for i in range(n_tables)],
        columns=[(f"col{i}", types[i], table_of[i]) for i in range(n_cols)],
        pks=sorted(pks),
        fks=sorted(fk_pairs),
        star=star,
    )


def random_connected_schema(rng: np.random.Generator, n_tables=3, star=True):
    """Schema whose foreign-key graph connects all tables (tree-shaped)."""
    columns, fks, pks = [], [], []
    for t in range(n_tables):
        pks.append(len(columns))
        columns.append((f"id{t}", "number", t))
        columns.append((f"name{t}", "text", t))
        if t > 0:
            parent = int(rng.integers(0, t))
            fks.append((len(columns), pks[parent]))
            columns.append((f"ref{t}", "number", t))
        if rng.random() < 0.5:
            columns.append((f"extra{t}", "number", t))
    return make_schema(
        f"conn{n_tables}", [f"tab{t}" for t in range(n_tables)],
        columns, pks=pks, fks=fks, star=star,
    )
