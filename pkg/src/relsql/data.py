"""Corpus ingestion: schema files, example files, vocabulary, embeddings.

Schema files follow the usual tables-JSON layout: each entry carries db_id,
table_names_original, column_names_original as [table_index, name] pairs
(index -1 marks the special "*" column), column_types, primary_keys and
foreign_keys. Example files carry db_id / question / query and an optional
difficulty label. Gold queries are parsed eagerly so corpus problems
surface at load time, not mid-training.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

from .grammar import Node
from .schema import COLUMN_TYPES, Column, Schema, SchemaError, Table
from .sql_parse import parse_sql

DIFFICULTIES = ("easy", "medium", "hard", "extra")

_TRAILING_PUNCT = {"?", ".", ","}


def name_tokens(raw: str) -> list[str]:
    """Lowercase and split on whitespace and underscores."""
    toks = [t for t in re.split(r"[\s_]+", raw.lower()) if t]
    return toks or [raw.lower()]


def tokenize(question: str) -> list[str]:
    """Lowercase, split on whitespace, peel trailing ?/./, into their own tokens."""
    out: list[str] = []
    for chunk in question.lower().split():
        tail: list[str] = []
        while len(chunk) > 1 and chunk[-1] in _TRAILING_PUNCT:
            tail.append(chunk[-1])
            chunk = chunk[:-1]
        out.append(chunk)
        out.extend(reversed(tail))
    return out


def load_schemas(path: str) -> dict[str, Schema]:
    with open(path, encoding="utf-8") as f:
        try:
            entries = json.load(f)
        except json.JSONDecodeError as e:
            raise SchemaError(f"{path}: malformed JSON ({e})") from e
    if not isinstance(entries, list):
        raise SchemaError(f"{path}: expected a JSON array of schema entries")
    schemas: dict[str, Schema] = {}
    for entry in entries:
        db_id = entry.get("db_id", "<missing db_id>")
        try:
            tables = [Table(name_tokens(n), orig_name=n.lower())
                      for n in entry["table_names_original"]]
            columns = []
            for (t_idx, name), ctype in zip(entry["column_names_original"],
                                            entry["column_types"]):
                if ctype not in COLUMN_TYPES:
                    raise SchemaError(f"unknown column type {ctype!r}")
                if t_idx == -1:
                    columns.append(Column(["*"], "others", None, orig_name="*"))
                else:
                    if not 0 <= t_idx < len(tables):
                        raise SchemaError(f"column {name!r} has table index {t_idx}")
                    columns.append(Column(name_tokens(name), ctype, t_idx,
                                          orig_name=name.lower()))
            schema = Schema(
                id=db_id,
                tables=tables,
                columns=columns,
                primary_keys=set(entry.get("primary_keys", [])),
                foreign_keys=[tuple(fk) for fk in entry.get("foreign_keys", [])],
            )
        except (KeyError, SchemaError, TypeError) as e:
            raise SchemaError(f"schema entry {db_id!r}: {e}") from e
        schemas[db_id] = schema
    return schemas


@dataclass
class Example:
    question_tokens: list[str]
    schema_id: str
    gold_sql: str
    difficulty: str | None = None
    gold_ast: Node | None = field(default=None, repr=False)


def load_examples(path: str, schemas: dict[str, Schema]) -> list[Example]:
    with open(path, encoding="utf-8") as f:
        entries = json.load(f)
    examples = []
    for i, entry in enumerate(entries):
        db_id = entry.get("db_id")
        if db_id not in schemas:
            raise ValueError(f"example {i}: unknown db_id {db_id!r}")
        difficulty = entry.get("difficulty")
        if difficulty is not None and difficulty not in DIFFICULTIES:
            raise ValueError(f"example {i}: difficulty {difficulty!r} "
                             f"not in {DIFFICULTIES}")
        ex = Example(
            question_tokens=tokenize(entry["question"]),
            schema_id=db_id,
            gold_sql=entry["query"],
            difficulty=difficulty,
        )
        try:
            ex.gold_ast = parse_sql(ex.gold_sql, schemas[db_id])
        except ValueError as e:
            raise ValueError(f"example {i}: cannot parse gold query: {e}") from e
        examples.append(ex)
    return examples


class Vocabulary:
    """Token-to-index map; index 0 is UNK, order is frequency desc then lexicographic."""

    UNK = 0
    UNK_TOKEN = "<unk>"

    def __init__(self, tokens: list[str]):
        self.tokens = [self.UNK_TOKEN] + tokens
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self.index.get(token, self.UNK)

    def ids(self, tokens: list[str]) -> list[int]:
        return [self.id(t) for t in tokens]


def schema_word_tokens(schema: Schema) -> list[str]:
    """Every word one use of the schema contributes: type + name per column, table names."""
    out: list[str] = []
    for col in schema.columns:
        out.append(col.type_token)
        out.extend(col.name_tokens)
    for tab in schema.tables:
        out.extend(tab.name_tokens)
    return out


def build_vocab(examples: list[Example], schemas: dict[str, Schema],
                min_count: int = 3) -> Vocabulary:
    """Schema words count once per example that uses the schema."""
    counts: dict[str, int] = {}
    for ex in examples:
        for tok in ex.question_tokens:
            counts[tok] = counts.get(tok, 0) + 1
        for tok in schema_word_tokens(schemas[ex.schema_id]):
            counts[tok] = counts.get(tok, 0) + 1
    kept = [t for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


def load_embeddings(path: str, vocab: Vocabulary, dim: int = 300) -> np.ndarray:
    """Text format: one token per line, the word then `dim` floats.

    Rows for in-vocabulary words are copied verbatim; everything else
    (including UNK) keeps the zero row.
    """
    matrix = np.zeros((len(vocab), dim), dtype=np.float64)
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            word, values = parts[0], parts[1:]
            if len(values) != dim:
                raise ValueError(f"{path}:{lineno}: expected {dim} floats for "
                                 f"{word!r}, found {len(values)}")
            idx = vocab.index.get(word)
            if idx is not None and idx != Vocabulary.UNK:
                matrix[idx] = [float(v) for v in values]
    return matrix
