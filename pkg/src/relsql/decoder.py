"""Grammar-constrained tree decoder with pointer selection.

Actions expand the tree depth-first: apply a production rule at a
nonterminal slot, or point at a schema column/table at a pointer slot. At
every step the LSTM consumes the previous action embedding, a multi-head
attention context over all encoder outputs, and the current slot's type
embedding. Rule scores and pointer scores (scaled dot products against the
column/table finals) share one softmax over the legal-action union;
illegal actions are masked out before normalization, so emitted trees are
grammar-valid by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import NEG_INF, Parameter, Tensor
from .encoder import EncoderOutput
from .grammar import (
    COLUMN, NODE, TABLE, Action, ApplyRule, Grammar, Node, PointTo, Slot, TreeBuilder,
)
from .lstm import LstmParams, init_lstm, lstm_cell
from .relations import ElemKind, Element
from .schema import Schema


@dataclass
class DecoderConfig:
    rule_embed_dim: int = 128
    node_type_embed_dim: int = 64
    hidden: int = 256
    dropout: float = 0.2
    heads: int = 8
    model_dim: int = 256          # width of the encoder outputs
    max_actions: int = 200

    def __post_init__(self):
        for name in ("rule_embed_dim", "node_type_embed_dim", "hidden", "heads", "model_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class DecoderParams:
    rule_embed: Parameter
    node_type_embed: Parameter
    pointer_action_w: Parameter
    lstm: LstmParams
    attn_wq: Parameter
    attn_wk: Parameter
    attn_wv: Parameter
    attn_wo: Parameter
    rule_w: Parameter
    rule_b: Parameter
    ptr_w: Parameter

    def all(self) -> list[Parameter]:
        return [self.rule_embed, self.node_type_embed, self.pointer_action_w,
                *self.lstm.all(), self.attn_wq, self.attn_wk, self.attn_wv,
                self.attn_wo, self.rule_w, self.rule_b, self.ptr_w]


def init_decoder(config: DecoderConfig, grammar: Grammar,
                 rng: np.random.Generator) -> DecoderParams:
    d, hid = config.model_dim, config.hidden
    n_rules = len(grammar)
    lstm_in = config.rule_embed_dim + d + config.node_type_embed_dim
    return DecoderParams(
        rule_embed=ad.normal_param("dec.rule_embed", (n_rules, config.rule_embed_dim), rng),
        node_type_embed=ad.normal_param(
            "dec.node_type_embed", (len(grammar.slot_types), config.node_type_embed_dim),
            rng),
        pointer_action_w=ad.uniform_param("dec.pointer_action_w",
                                          (d, config.rule_embed_dim), rng),
        lstm=init_lstm("dec.lstm", lstm_in, hid, rng),
        attn_wq=ad.uniform_param("dec.attn_wq", (hid, d), rng),
        attn_wk=ad.uniform_param("dec.attn_wk", (d, d), rng),
        attn_wv=ad.uniform_param("dec.attn_wv", (d, d), rng),
        attn_wo=ad.uniform_param("dec.attn_wo", (d, d), rng),
        rule_w=ad.uniform_param("dec.rule_w", (hid, n_rules), rng),
        rule_b=ad.uniform_param("dec.rule_b", (n_rules,), rng, fan_in=hid),
        ptr_w=ad.uniform_param("dec.ptr_w", (hid, d), rng),
    )


@dataclass
class Memory:
    """Per-example encoder outputs with reusable attention projections."""
    mem: Tensor
    attn_k: Tensor
    attn_v: Tensor
    c_final: Tensor
    t_final: Tensor
    cols_t: Tensor
    tabs_t: Tensor

    @property
    def n_cols(self) -> int:
        return self.c_final.data.shape[0]

    @property
    def n_tabs(self) -> int:
        return self.t_final.data.shape[0]


def make_memory(out: EncoderOutput, params: DecoderParams) -> Memory:
    mem = out.memory
    return Memory(
        mem=mem,
        attn_k=ad.matmul(mem, params.attn_wk),
        attn_v=ad.matmul(mem, params.attn_wv),
        c_final=out.c_final,
        t_final=out.t_final,
        cols_t=ad.transpose(out.c_final),
        tabs_t=ad.transpose(out.t_final),
    )


@dataclass
class DecoderState:
    h: Tensor
    c: Tensor
    prev_action: Tensor
    builder: TreeBuilder
    actions: list[Action] = field(default_factory=list)

    @property
    def done(self) -> bool:
        return self.builder.done


def initial_state(grammar: Grammar, config: DecoderConfig) -> DecoderState:
    dtype = ad.current_dtype()
    return DecoderState(
        h=Tensor(np.zeros((1, config.hidden), dtype=dtype)),
        c=Tensor(np.zeros((1, config.hidden), dtype=dtype)),
        prev_action=Tensor(np.zeros((1, config.rule_embed_dim), dtype=dtype)),
        builder=TreeBuilder(grammar),
    )


def legal_actions(state: DecoderState, grammar: Grammar, schema: Schema) -> np.ndarray:
    """Boolean mask over [rules | columns | tables]; never empty."""
    if state.done:
        raise ValueError("legal_actions on a completed tree (empty frontier)")
    slot = state.builder.next_slot()
    n_rules = len(grammar)
    n_cols, n_tabs = len(schema.columns), len(schema.tables)
    mask = np.zeros(n_rules + n_cols + n_tabs, dtype=bool)
    if slot.kind == NODE:
        for r in grammar.by_head[slot.head]:
            mask[r.index] = True
    elif slot.kind == COLUMN:
        mask[n_rules:n_rules + n_cols] = True
    else:
        mask[n_rules + n_cols:] = True
    return mask


def _slot_type_id(slot: Slot, grammar: Grammar) -> int:
    key = slot.head if slot.kind == NODE else slot.kind
    return grammar.slot_type_index[key]


def decode_step(state: DecoderState, memory: Memory, params: DecoderParams,
                config: DecoderConfig, grammar: Grammar, schema: Schema,
                training: bool = False,
                rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor, Tensor]:
    """One step: masked log-probabilities over actions plus the next (h, c).

    The caller picks an action and calls advance(); splitting the two keeps
    teacher forcing and greedy decoding on the same code path.
    """
    slot = state.builder.next_slot()
    ctx_q = ad.matmul(state.h, params.attn_wq)
    alpha = ad.softmax(ad.mh_scores(ctx_q, memory.attn_k, config.heads))
    ctx = ad.matmul(ad.mh_mix(alpha, memory.attn_v, config.heads), params.attn_wo)
    type_row = ad.embedding_lookup(params.node_type_embed,
                                   np.array([_slot_type_id(slot, grammar)]))
    x = ad.concat([state.prev_action, ctx, type_row], axis=1)
    h2, c2 = lstm_cell(x, state.h, state.c, params.lstm)
    h_drop = ad.dropout(h2, config.dropout, training, rng)

    rule_scores = ad.linear(h_drop, params.rule_w, params.rule_b)
    ptr_q = ad.matmul(h_drop, params.ptr_w)
    inv = 1.0 / math.sqrt(config.model_dim)
    col_scores = ad.scale(ad.matmul(ptr_q, memory.cols_t), inv)
    tab_scores = ad.scale(ad.matmul(ptr_q, memory.tabs_t), inv)
    scores = ad.reshape(ad.concat([rule_scores, col_scores, tab_scores], axis=1), (-1,))
    mask = legal_actions(state, grammar, schema)
    logp = ad.log_softmax(ad.mask_fill(scores, mask, NEG_INF))
    return logp, h2, c2


def advance(state: DecoderState, action: Action, h2: Tensor, c2: Tensor,
            memory: Memory, params: DecoderParams) -> DecoderState:
    state.builder.apply(action)
    if isinstance(action, ApplyRule):
        prev = ad.embedding_lookup(params.rule_embed, np.array([action.rule_index]))
    else:
        elem = action.element
        source = memory.c_final if elem.kind is ElemKind.COLUMN else memory.t_final
        row = ad.narrow(source, 0, elem.index, 1)
        prev = ad.matmul(row, params.pointer_action_w)
    state.h, state.c, state.prev_action = h2, c2, prev
    state.actions.append(action)
    return state


def action_index(action: Action, grammar: Grammar, schema: Schema) -> int:
    if isinstance(action, ApplyRule):
        return action.rule_index
    if action.element.kind is ElemKind.COLUMN:
        return len(grammar) + action.element.index
    return len(grammar) + len(schema.columns) + action.element.index


def action_from_index(idx: int, grammar: Grammar, schema: Schema) -> Action:
    n_rules, n_cols = len(grammar), len(schema.columns)
    if idx < n_rules:
        return ApplyRule(idx)
    if idx < n_rules + n_cols:
        return PointTo(Element(ElemKind.COLUMN, idx - n_rules))
    return PointTo(Element(ElemKind.TABLE, idx - n_rules - n_cols))


def loss_teacher_forced(encoder_out: EncoderOutput, gold: Node, params: DecoderParams,
                        config: DecoderConfig, grammar: Grammar, schema: Schema,
                        training: bool = False,
                        rng: np.random.Generator | None = None) -> Tensor:
    """Sum of per-step negative log-likelihood of the gold action sequence."""
    from .grammar import linearize

    actions = linearize(gold, grammar)
    memory = make_memory(encoder_out, params)
    state = initial_state(grammar, config)
    nlls = []
    for action in actions:
        logp, h2, c2 = decode_step(state, memory, params, config, grammar, schema,
                                   training, rng)
        idx = action_index(action, grammar, schema)
        if logp.data[idx] <= NEG_INF / 2:
            raise ValueError(f"gold action {action} is illegal at its step")
        nlls.append(ad.neg(ad.pick(logp, idx)))
        state = advance(state, action, h2, c2, memory, params)
    if not state.done:
        raise ValueError("gold action sequence left unexpanded slots")
    return ad.add_n(nlls)


@dataclass
class DecodeResult:
    ast: Node
    actions: list[Action]
    truncated: bool


def _close_frontier(state: DecoderState, grammar: Grammar) -> None:
    """Finish a truncated decode with lowest-index legal choices."""
    while not state.done:
        slot = state.builder.next_slot()
        if slot.kind == NODE:
            action: Action = ApplyRule(grammar.by_head[slot.head][0].index)
        elif slot.kind == COLUMN:
            action = PointTo(Element(ElemKind.COLUMN, 0))
        else:
            action = PointTo(Element(ElemKind.TABLE, 0))
        state.builder.apply(action)
        state.actions.append(action)


def decode_greedy(encoder_out: EncoderOutput, params: DecoderParams,
                  config: DecoderConfig, grammar: Grammar, schema: Schema,
                  max_actions: int | None = None) -> DecodeResult:
    """Argmax decoding until the frontier empties; always grammar-valid.

    Exhausting the action budget closes remaining slots with lowest-index
    legal choices and flags the result truncated.
    """
    budget = config.max_actions if max_actions is None else max_actions
    if budget < 1:
        raise ValueError("max_actions must be >= 1")
    memory = make_memory(encoder_out, params)
    state = initial_state(grammar, config)
    truncated = False
    while not state.done:
        if len(state.actions) >= budget:
            truncated = True
            _close_frontier(state, grammar)
            break
        logp, h2, c2 = decode_step(state, memory, params, config, grammar, schema)
        action = action_from_index(int(np.argmax(logp.data)), grammar, schema)
        state = advance(state, action, h2, c2, memory, params)
    return DecodeResult(ast=state.builder.root, actions=state.actions, truncated=truncated)
