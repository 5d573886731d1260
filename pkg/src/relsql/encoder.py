"""Input encoder: per-element BiLSTM summaries refined by a stack of
relation-aware self-attention layers.

Columns and tables are summarized by BiLSTMs over their name tokens (the
column's type token is prepended); question tokens keep per-position
BiLSTM states. The three BiLSTMs share no parameters. The combined
sequence (columns, tables, question) then passes through N attention
layers in which every ordered pair contributes learned key/value bias
vectors indexed by its relation code; each layer owns its weights and its
own relation embedding tables, shared across heads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .lstm import BiLstmParams, bilstm_endpoints, bilstm_sequence, init_bilstm
from .relations import RelationVocab, relation_vocab


@dataclass
class EncoderConfig:
    layers: int = 4                  # N
    heads: int = 8                   # H
    model_dim: int = 256             # d_x = d_z
    ffn_dim: int = 1024
    attn_dropout: float = 0.1
    lstm_hidden: int = 128           # per direction
    lstm_dropout: float = 0.2        # recurrent
    word_dim: int = 300
    relation_vocab: str = "full25"

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ValueError("model_dim must be divisible by heads")
        if self.model_dim != 2 * self.lstm_hidden:
            raise ValueError("model_dim must equal 2 * lstm_hidden so the initial "
                             "encodings feed the attention stack without projection")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads

    def vocab(self) -> RelationVocab:
        return relation_vocab(self.relation_vocab)


@dataclass
class RatLayerParams:
    wq: Parameter
    wk: Parameter
    wv: Parameter
    rel_k: Parameter   # (relation codes, head_dim), shared across heads
    rel_v: Parameter
    ffn_w1: Parameter
    ffn_b1: Parameter
    ffn_w2: Parameter
    ffn_b2: Parameter
    ln1_g: Parameter
    ln1_b: Parameter
    ln2_g: Parameter
    ln2_b: Parameter

    def all(self) -> list[Parameter]:
        return [self.wq, self.wk, self.wv, self.rel_k, self.rel_v,
                self.ffn_w1, self.ffn_b1, self.ffn_w2, self.ffn_b2,
                self.ln1_g, self.ln1_b, self.ln2_g, self.ln2_b]


@dataclass
class EncoderParams:
    embedding: Parameter
    col_lstm: BiLstmParams
    tab_lstm: BiLstmParams
    q_lstm: BiLstmParams
    layers: list[RatLayerParams] = field(default_factory=list)

    def all(self) -> list[Parameter]:
        out = [self.embedding]
        out += self.col_lstm.all() + self.tab_lstm.all() + self.q_lstm.all()
        for lp in self.layers:
            out += lp.all()
        return out


def init_rat_layer(name: str, config: EncoderConfig, rng: np.random.Generator) -> RatLayerParams:
    d, dh = config.model_dim, config.head_dim
    rel_n = config.vocab().size
    dtype = ad.current_dtype()
    return RatLayerParams(
        wq=ad.uniform_param(f"{name}.wq", (d, d), rng),
        wk=ad.uniform_param(f"{name}.wk", (d, d), rng),
        wv=ad.uniform_param(f"{name}.wv", (d, d), rng),
        rel_k=ad.uniform_param(f"{name}.rel_k", (rel_n, dh), rng, fan_in=dh),
        rel_v=ad.uniform_param(f"{name}.rel_v", (rel_n, dh), rng, fan_in=dh),
        ffn_w1=ad.uniform_param(f"{name}.ffn_w1", (d, config.ffn_dim), rng),
        ffn_b1=ad.uniform_param(f"{name}.ffn_b1", (config.ffn_dim,), rng, fan_in=d),
        ffn_w2=ad.uniform_param(f"{name}.ffn_w2", (config.ffn_dim, d), rng),
        ffn_b2=ad.uniform_param(f"{name}.ffn_b2", (d,), rng, fan_in=config.ffn_dim),
        ln1_g=Parameter(np.ones(d, dtype=dtype), f"{name}.ln1_g"),
        ln1_b=Parameter(np.zeros(d, dtype=dtype), f"{name}.ln1_b"),
        ln2_g=Parameter(np.ones(d, dtype=dtype), f"{name}.ln2_g"),
        ln2_b=Parameter(np.zeros(d, dtype=dtype), f"{name}.ln2_b"),
    )


def init_encoder(config: EncoderConfig, vocab_size: int, rng: np.random.Generator,
                 pretrained: np.ndarray | None = None) -> EncoderParams:
    """Pretrained word vectors, when given, are loaded and frozen."""
    if pretrained is not None:
        if pretrained.shape != (vocab_size, config.word_dim):
            raise ValueError(f"embedding shape {pretrained.shape} does not match "
                             f"({vocab_size}, {config.word_dim})")
        embedding = Parameter(pretrained.astype(ad.current_dtype()), "embedding",
                              trainable=False)
    else:
        embedding = ad.normal_param("embedding", (vocab_size, config.word_dim), rng)
    return EncoderParams(
        embedding=embedding,
        col_lstm=init_bilstm("enc.col", config.word_dim, config.lstm_hidden, rng),
        tab_lstm=init_bilstm("enc.tab", config.word_dim, config.lstm_hidden, rng),
        q_lstm=init_bilstm("enc.q", config.word_dim, config.lstm_hidden, rng),
        layers=[init_rat_layer(f"enc.rat{i}", config, rng) for i in range(config.layers)],
    )


def encode_initial(question_ids: list[int], column_ids: list[list[int]],
                   table_ids: list[list[int]], params: EncoderParams,
                   config: EncoderConfig, training: bool = False,
                   rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor, Tensor]:
    """BiLSTM summaries: (|c|, d), (|t|, d), (|q|, d) matrices.

    column_ids sequences start with the column's type token id; a column or
    table is summarized by concat(forward final state, reverse first state),
    question tokens by their per-position states.
    """
    if not question_ids:
        raise ValueError("cannot encode an empty question")
    if not column_ids:
        raise ValueError("cannot encode a schema with no columns")
    rate = config.lstm_dropout
    c_init = bilstm_endpoints(column_ids, params.embedding, params.col_lstm,
                              rate, training, rng)
    t_init = bilstm_endpoints(table_ids, params.embedding, params.tab_lstm,
                              rate, training, rng)
    q_init = bilstm_sequence(question_ids, params.embedding, params.q_lstm,
                             rate, training, rng)
    return c_init, t_init, q_init


def rat_layer(x: Tensor, relation_codes: np.ndarray, lp: RatLayerParams,
              config: EncoderConfig, training: bool = False,
              rng: np.random.Generator | None = None,
              attn_out: list | None = None) -> Tensor:
    """One relation-aware self-attention layer over an (n, d) sequence."""
    n = x.data.shape[0]
    if x.data.shape[1] != config.model_dim:
        raise ValueError(f"layer input width {x.data.shape[1]}, expected {config.model_dim}")
    if relation_codes.shape != (n, n):
        raise ValueError(f"relation matrix shape {relation_codes.shape}, expected {(n, n)}")
    h = config.heads
    q = ad.matmul(x, lp.wq)
    k = ad.matmul(x, lp.wk)
    v = ad.matmul(x, lp.wv)
    rk = ad.embedding_lookup(lp.rel_k, relation_codes)   # (n, n, head_dim)
    rv = ad.embedding_lookup(lp.rel_v, relation_codes)
    scores = ad.mh_scores_rel(q, k, rk, h)               # (h, n, n), scaled
    alpha = ad.softmax(scores)
    if attn_out is not None:
        attn_out.append(alpha)
    alpha = ad.dropout(alpha, config.attn_dropout, training, rng)
    z = ad.mh_mix_rel(alpha, v, rv, h)                   # (n, d)
    y1 = ad.layer_norm(ad.add(x, z), lp.ln1_g, lp.ln1_b)
    inner = ad.relu(ad.linear(y1, lp.ffn_w1, lp.ffn_b1))
    y2 = ad.linear(inner, lp.ffn_w2, lp.ffn_b2)
    return ad.layer_norm(ad.add(y1, y2), lp.ln2_g, lp.ln2_b)


@dataclass
class EncoderOutput:
    c_final: Tensor
    t_final: Tensor
    q_final: Tensor
    c_init: Tensor
    t_init: Tensor
    q_init: Tensor

    @property
    def memory(self) -> Tensor:
        """All final vectors in input order: (|c| + |t| + |q|, d)."""
        return ad.concat([self.c_final, self.t_final, self.q_final], axis=0)


def encode(question_ids: list[int], column_ids: list[list[int]],
           table_ids: list[list[int]], relation_codes: np.ndarray,
           params: EncoderParams, config: EncoderConfig,
           training: bool = False,
           rng: np.random.Generator | None = None) -> EncoderOutput:
    """Full encoding pass; with zero layers the finals equal the initials."""
    c_init, t_init, q_init = encode_initial(question_ids, column_ids, table_ids,
                                            params, config, training, rng)
    nc, nt, nq = (m.data.shape[0] for m in (c_init, t_init, q_init))
    x = ad.concat([c_init, t_init, q_init], axis=0)
    for lp in params.layers:
        x = rat_layer(x, relation_codes, lp, config, training, rng)
    return EncoderOutput(
        c_final=ad.narrow(x, 0, 0, nc),
        t_final=ad.narrow(x, 0, nc, nt),
        q_final=ad.narrow(x, 0, nc + nt, nq),
        c_init=c_init, t_init=t_init, q_init=q_init,
    )
