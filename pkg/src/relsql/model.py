"""The full parser model: encoder + decoder parameters over one vocabulary."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .data import Example, Vocabulary
from .decoder import (
    DecodeResult, DecoderConfig, DecoderParams, decode_greedy, init_decoder,
    loss_teacher_forced,
)
from .encoder import EncoderConfig, EncoderOutput, EncoderParams, encode, init_encoder
from .grammar import SQL_GRAMMAR, Grammar, Node
from .from_recovery import recover_from_clause
from .relations import build_relation_matrix
from .schema import Schema
from .sql_render import render_sql


@dataclass
class SchemaTensors:
    column_ids: list[list[int]]   # each starts with the column's type token id
    table_ids: list[list[int]]


def schema_tensors(schema: Schema, vocab: Vocabulary) -> SchemaTensors:
    cols = [[vocab.id(c.type_token)] + vocab.ids(c.name_tokens) for c in schema.columns]
    tabs = [vocab.ids(t.name_tokens) for t in schema.tables]
    return SchemaTensors(cols, tabs)


@dataclass
class PreparedExample:
    example: Example
    schema: Schema
    question_ids: list[int]
    tensors: SchemaTensors
    relations: np.ndarray
    _rel_scatter: np.ndarray | None = field(default=None, repr=False)

    @property
    def gold_ast(self) -> Node:
        return self.example.gold_ast

    def relation_scatter(self, vocab_size: int) -> np.ndarray:
        """One-hot of the relation matrix, cached; backs dense gradient scatter."""
        if self._rel_scatter is None or self._rel_scatter.shape[1] != vocab_size \
                or self._rel_scatter.dtype != ad.current_dtype():
            self._rel_scatter = ad.one_hot(self.relations, vocab_size)
        return self._rel_scatter


class Model:
    def __init__(self, enc_config: EncoderConfig, dec_config: DecoderConfig,
                 vocab: Vocabulary, rng: np.random.Generator,
                 grammar: Grammar = SQL_GRAMMAR,
                 pretrained: np.ndarray | None = None):
        if dec_config.model_dim != enc_config.model_dim:
            raise ValueError("encoder and decoder disagree on model_dim")
        self.enc_config = enc_config
        self.dec_config = dec_config
        self.vocab = vocab
        self.grammar = grammar
        self.encoder: EncoderParams = init_encoder(enc_config, len(vocab), rng, pretrained)
        self.decoder: DecoderParams = init_decoder(dec_config, grammar, rng)

    def parameters(self) -> list[Parameter]:
        return self.encoder.all() + self.decoder.all()

    def named_parameters(self) -> dict[str, Parameter]:
        named = {}
        for p in self.parameters():
            if p.name in named:
                raise ValueError(f"duplicate parameter name {p.name}")
            named[p.name] = p
        return named

    # ---------------------------------------------------------------------

    def prepare(self, example: Example, schema: Schema,
                st: SchemaTensors | None = None) -> PreparedExample:
        return PreparedExample(
            example=example,
            schema=schema,
            question_ids=self.vocab.ids(example.question_tokens),
            tensors=st if st is not None else schema_tensors(schema, self.vocab),
            relations=build_relation_matrix(schema, len(example.question_tokens),
                                            self.enc_config.vocab()),
        )

    def prepare_all(self, examples: list[Example],
                    schemas: dict[str, Schema]) -> list[PreparedExample]:
        st_cache: dict[str, SchemaTensors] = {}
        prepared = []
        for ex in examples:
            st = st_cache.get(ex.schema_id)
            if st is None:
                st = st_cache[ex.schema_id] = schema_tensors(schemas[ex.schema_id],
                                                             self.vocab)
            prepared.append(self.prepare(ex, schemas[ex.schema_id], st))
        return prepared

    def encode_prepared(self, prep: PreparedExample, training: bool = False,
                        rng: np.random.Generator | None = None) -> EncoderOutput:
        return encode(prep.question_ids, prep.tensors.column_ids,
                      prep.tensors.table_ids, prep.relations,
                      self.encoder, self.enc_config, training, rng)

    def loss(self, prep: PreparedExample, training: bool = True,
             rng: np.random.Generator | None = None) -> Tensor:
        out = self.encode_prepared(prep, training, rng)
        return loss_teacher_forced(out, prep.gold_ast, self.decoder, self.dec_config,
                                   self.grammar, prep.schema, training, rng)

    def predict(self, prep: PreparedExample,
                max_actions: int | None = None) -> tuple[Node, str, DecodeResult]:
        """Greedy decode, FROM recovery, canonical SQL."""
        out = self.encode_prepared(prep, training=False)
        result = decode_greedy(out, self.decoder, self.dec_config, self.grammar,
                               prep.schema, max_actions)
        recover_from_clause(result.ast, prep.schema)
        return result.ast, render_sql(result.ast, prep.schema), result
