"""Relation-aware schema encoding and grammar-constrained decoding for text-to-SQL."""

from .schema import Column, Schema, SchemaError, Table
from .relations import (
    FULL25, FEWER15, MINIMAL6, Element, ElemKind, RelationType, RelationVocab,
    build_relation_matrix, build_schema_graph, clip, relation_type, relation_vocab,
)
from .grammar import SQL_GRAMMAR, ApplyRule, FromClause, Grammar, Node, PointTo
from .sql_parse import ParseError, parse_sql
from .sql_render import render_sql
from .from_recovery import FromRecoveryError, recover_from_clause
from .match import exact_set_match
from .data import Example, Vocabulary, build_vocab, load_embeddings, load_examples, \
    load_schemas, tokenize
from .model import Model, PreparedExample
from .config import RunConfig, load_config, parse_config
from .train import train

__version__ = "0.1.0"

__all__ = [
    "Column", "Schema", "SchemaError", "Table",
    "FULL25", "FEWER15", "MINIMAL6", "Element", "ElemKind", "RelationType",
    "RelationVocab", "build_relation_matrix", "build_schema_graph", "clip",
    "relation_type", "relation_vocab",
    "SQL_GRAMMAR", "ApplyRule", "FromClause", "Grammar", "Node", "PointTo",
    "ParseError", "parse_sql", "render_sql",
    "FromRecoveryError", "recover_from_clause", "exact_set_match",
    "Example", "Vocabulary", "build_vocab", "load_embeddings", "load_examples",
    "load_schemas", "tokenize",
    "Model", "PreparedExample", "RunConfig", "load_config", "parse_config", "train",
]
