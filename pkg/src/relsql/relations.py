"""Relation taxonomy over (column, table, question-token) element pairs.

Every ordered pair in the combined input sequence (columns, then tables,
then question tokens) receives exactly one relation type: a schema-graph
edge label where one applies, identity on the diagonal, clipped signed
distance between question tokens, and a kind-default label otherwise.

Three vocabulary configurations exist: the full 25 types, a 15-type
variant that drops the schema-graph labels, and a 6-type variant that
further merges kind defaults into one code and both identity labels into
the zero-distance code. Integer codes are stable; checkpoints depend on
them.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum, IntEnum

import numpy as np

from .schema import Schema

QUESTION_CLIP_DIST = 2  # question-distance labels cover clip(j - i, 2)


class RelationType(IntEnum):
    # schema-graph edge labels
    SAME_TABLE = 0
    FOREIGN_KEY_COL_F = 1
    FOREIGN_KEY_COL_R = 2
    PRIMARY_KEY_F = 3
    BELONGS_TO_F = 4
    PRIMARY_KEY_R = 5
    BELONGS_TO_R = 6
    FOREIGN_KEY_TAB_F = 7
    FOREIGN_KEY_TAB_R = 8
    FOREIGN_KEY_TAB_B = 9
    # identity
    COLUMN_IDENTITY = 10
    TABLE_IDENTITY = 11
    # question-to-question clipped distance
    QUESTION_DIST_NEG2 = 12
    QUESTION_DIST_NEG1 = 13
    QUESTION_DIST_0 = 14
    QUESTION_DIST_POS1 = 15
    QUESTION_DIST_POS2 = 16
    # question/schema kind pairs
    QUESTION_COLUMN = 17
    QUESTION_TABLE = 18
    COLUMN_QUESTION = 19
    TABLE_QUESTION = 20
    # schema kind-pair defaults
    COLUMN_COLUMN = 21
    COLUMN_TABLE = 22
    TABLE_COLUMN = 23
    TABLE_TABLE = 24


GRAPH_LABELS = frozenset(rt for rt in RelationType if rt <= RelationType.FOREIGN_KEY_TAB_B)

KIND_DEFAULTS = frozenset({
    RelationType.QUESTION_COLUMN, RelationType.QUESTION_TABLE,
    RelationType.COLUMN_QUESTION, RelationType.TABLE_QUESTION,
    RelationType.COLUMN_COLUMN, RelationType.COLUMN_TABLE,
    RelationType.TABLE_COLUMN, RelationType.TABLE_TABLE,
})

_GRAPH_FALLBACK = {
    RelationType.SAME_TABLE: RelationType.COLUMN_COLUMN,
    RelationType.FOREIGN_KEY_COL_F: RelationType.COLUMN_COLUMN,
    RelationType.FOREIGN_KEY_COL_R: RelationType.COLUMN_COLUMN,
    RelationType.PRIMARY_KEY_F: RelationType.COLUMN_TABLE,
    RelationType.BELONGS_TO_F: RelationType.COLUMN_TABLE,
    RelationType.PRIMARY_KEY_R: RelationType.TABLE_COLUMN,
    RelationType.BELONGS_TO_R: RelationType.TABLE_COLUMN,
    RelationType.FOREIGN_KEY_TAB_F: RelationType.TABLE_TABLE,
    RelationType.FOREIGN_KEY_TAB_R: RelationType.TABLE_TABLE,
    RelationType.FOREIGN_KEY_TAB_B: RelationType.TABLE_TABLE,
}


class ElemKind(Enum):
    COLUMN = "column"
    TABLE = "table"
    QUESTION = "question"


@dataclass(frozen=True)
class Element:
    kind: ElemKind
    index: int


def column_elem(i: int) -> Element:
    return Element(ElemKind.COLUMN, i)


def table_elem(i: int) -> Element:
    return Element(ElemKind.TABLE, i)


def question_elem(i: int) -> Element:
    return Element(ElemKind.QUESTION, i)


def element_sequence(schema: Schema, question_len: int) -> list[Element]:
    """Combined input order: all columns, all tables, all question tokens."""
    return ([column_elem(i) for i in range(len(schema.columns))]
            + [table_elem(i) for i in range(len(schema.tables))]
            + [question_elem(i) for i in range(question_len)])


def clip(a: int, d: int) -> int:
    return max(-d, min(d, a))


class RelationVocab:
    """Maps relation types to dense embedding codes under one configuration."""

    def __init__(self, name: str, merge_graph: bool, merge_minimal: bool):
        self.name = name
        self._merge_graph = merge_graph
        self._merge_minimal = merge_minimal
        self._codes: dict[RelationType, int] = {}
        self._names: dict[int, list[str]] = {}
        for rt in RelationType:
            label = self.collapse(rt)
            key = self._merge_key(label)
            code = self._codes.get(key)
            if code is None:
                code = len(self._names)
                self._codes[key] = code
                self._names[code] = []
            if label.name.lower().replace("_", "-") not in self._names[code]:
                self._names[code].append(label.name.lower().replace("_", "-"))
        self.size = len(self._names)

    def _merge_key(self, label: RelationType):
        if self._merge_minimal:
            if label in KIND_DEFAULTS:
                return "kind-default"
            if label in (RelationType.COLUMN_IDENTITY, RelationType.TABLE_IDENTITY):
                return RelationType.QUESTION_DIST_0
        return label

    def collapse(self, rt: RelationType) -> RelationType:
        """Label after configuration collapse (graph labels fall back to kind defaults)."""
        if self._merge_graph and rt in GRAPH_LABELS:
            return _GRAPH_FALLBACK[rt]
        return rt

    def code(self, rt: RelationType) -> int:
        return self._codes[self._merge_key(self.collapse(rt))]

    def legend(self) -> dict[int, str]:
        return {code: "|".join(names) for code, names in self._names.items()}


FULL25 = RelationVocab("full25", merge_graph=False, merge_minimal=False)
FEWER15 = RelationVocab("fewer15", merge_graph=True, merge_minimal=False)
MINIMAL6 = RelationVocab("minimal6", merge_graph=True, merge_minimal=True)

_VOCABS = {v.name: v for v in (FULL25, FEWER15, MINIMAL6)}


def relation_vocab(name: str) -> RelationVocab:
    try:
        return _VOCABS[name]
    except KeyError:
        raise ValueError(f"unknown relation vocab {name!r}; choose from {sorted(_VOCABS)}")


class _SchemaIndex:
    """Precomputed key lookups for fast pairwise relation queries."""

    def __init__(self, schema: Schema):
        self.schema = schema
        self.fk_pairs = set(schema.foreign_keys)
        self.table_fk: dict[tuple[int, int], bool] = {}
        for src, tgt in schema.foreign_keys:
            ts = schema.columns[src].table_index
            tt = schema.columns[tgt].table_index
            if ts is not None and tt is not None and ts != tt:
                self.table_fk[(ts, tt)] = True

    def column_column(self, i: int, j: int) -> RelationType:
        if (i, j) in self.fk_pairs:
            return RelationType.FOREIGN_KEY_COL_F
        if (j, i) in self.fk_pairs:
            return RelationType.FOREIGN_KEY_COL_R
        ci, cj = self.schema.columns[i], self.schema.columns[j]
        if ci.table_index is not None and ci.table_index == cj.table_index:
            return RelationType.SAME_TABLE
        return RelationType.COLUMN_COLUMN

    def column_table(self, i: int, t: int) -> RelationType:
        col = self.schema.columns[i]
        if col.table_index == t:
            if i in self.schema.primary_keys:
                return RelationType.PRIMARY_KEY_F
            return RelationType.BELONGS_TO_F
        return RelationType.COLUMN_TABLE

    def table_column(self, t: int, j: int) -> RelationType:
        col = self.schema.columns[j]
        if col.table_index == t:
            if j in self.schema.primary_keys:
                return RelationType.PRIMARY_KEY_R
            return RelationType.BELONGS_TO_R
        return RelationType.TABLE_COLUMN

    def table_table(self, s: int, t: int) -> RelationType:
        fwd = (s, t) in self.table_fk
        rev = (t, s) in self.table_fk
        if fwd and rev:
            return RelationType.FOREIGN_KEY_TAB_B
        if fwd:
            return RelationType.FOREIGN_KEY_TAB_F
        if rev:
            return RelationType.FOREIGN_KEY_TAB_R
        return RelationType.TABLE_TABLE


_QUESTION_DIST = {
    -2: RelationType.QUESTION_DIST_NEG2,
    -1: RelationType.QUESTION_DIST_NEG1,
    0: RelationType.QUESTION_DIST_0,
    1: RelationType.QUESTION_DIST_POS1,
    2: RelationType.QUESTION_DIST_POS2,
}


def _raw_relation(index: _SchemaIndex, i: Element, j: Element) -> RelationType:
    # identity wins over everything, including self-referential foreign keys
    if i == j:
        if i.kind is ElemKind.COLUMN:
            return RelationType.COLUMN_IDENTITY
        if i.kind is ElemKind.TABLE:
            return RelationType.TABLE_IDENTITY
        return RelationType.QUESTION_DIST_0
    ki, kj = i.kind, j.kind
    if ki is ElemKind.QUESTION and kj is ElemKind.QUESTION:
        return _QUESTION_DIST[clip(j.index - i.index, QUESTION_CLIP_DIST)]
    if ki is ElemKind.QUESTION:
        return (RelationType.QUESTION_COLUMN if kj is ElemKind.COLUMN
                else RelationType.QUESTION_TABLE)
    if kj is ElemKind.QUESTION:
        return (RelationType.COLUMN_QUESTION if ki is ElemKind.COLUMN
                else RelationType.TABLE_QUESTION)
    if ki is ElemKind.COLUMN and kj is ElemKind.COLUMN:
        return index.column_column(i.index, j.index)
    if ki is ElemKind.COLUMN:
        return index.column_table(i.index, j.index)
    if kj is ElemKind.COLUMN:
        return index.table_column(i.index, j.index)
    return index.table_table(i.index, j.index)


def relation_type(schema: Schema, i: Element, j: Element,
                  vocab: RelationVocab = FULL25) -> RelationType:
    """The unique relation label for one ordered element pair."""
    return vocab.collapse(_raw_relation(_SchemaIndex(schema), i, j))


def build_relation_matrix(schema: Schema, question_len: int,
                          vocab: RelationVocab = FULL25):
    """Dense (n x n) int matrix of embedding codes, n = |c| + |t| + |q|."""
    if question_len < 1:
        raise ValueError("question_len must be >= 1")
    index = _SchemaIndex(schema)
    elems = element_sequence(schema, question_len)
    n = len(elems)
    out = np.empty((n, n), dtype=np.int64)
    for a in range(n):
        for b in range(n):
            out[a, b] = vocab.code(_raw_relation(index, elems[a], elems[b]))
    return out


def build_schema_graph(schema: Schema) -> list[tuple[Element, Element, RelationType]]:
    """Directed labeled edges of the schema graph (graph labels only).

    The "*" column never appears; identity / distance / kind-default labels
    are not edges of this graph.
    """
    index = _SchemaIndex(schema)
    edges = []
    cols = [i for i, c in enumerate(schema.columns) if not c.is_star]
    tabs = range(len(schema.tables))
    for a in cols:
        for b in cols:
            if a == b:
                continue
            rel = index.column_column(a, b)
            if rel in GRAPH_LABELS:
                edges.append((column_elem(a), column_elem(b), rel))
    for a in cols:
        for t in tabs:
            rel = index.column_table(a, t)
            if rel in GRAPH_LABELS:
                edges.append((column_elem(a), table_elem(t), rel))
            rel = index.table_column(t, a)
            if rel in GRAPH_LABELS:
                edges.append((table_elem(t), column_elem(a), rel))
    for s in tabs:
        for t in tabs:
            if s == t:
                continue
            rel = index.table_table(s, t)
            if rel in GRAPH_LABELS:
                edges.append((table_elem(s), table_elem(t), rel))
    return edges
