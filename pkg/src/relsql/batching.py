"""Cross-example batching for training throughput.

Position-wise work (BiLSTM cells, Q/K/V projections, feed-forward, layer
norm, decoder LSTM and scorers) runs once over the concatenated rows of a
whole mini-batch; only relation-aware attention and pointer scoring, which
depend on each example's own relation matrix and schema, run per example.
The result is numerically the per-example computation, just grouped into
larger matrix products; `tests` assert equivalence against the unbatched
path.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import NEG_INF, Tensor
from .decoder import DecoderConfig, DecoderParams, Memory, action_index, make_memory
from .encoder import EncoderConfig, EncoderOutput, EncoderParams
from .grammar import ApplyRule, Grammar, linearize
from .lstm import lstm_cell, recurrent_mask, run_lstm
from .model import Model, PreparedExample
from .relations import ElemKind


def _batched_endpoints(all_seqs, params, emb, rate, training, rng):
    if any(not s for s in all_seqs):
        raise ValueError("empty token sequence in batch")
    batch = len(all_seqs)
    max_len = max(len(s) for s in all_seqs)
    dtype = ad.current_dtype()

    def step_batch(reverse):
        xs, masks = [], []
        for t in range(max_len):
            ids = np.zeros(batch, dtype=np.int64)
            live = np.zeros((batch, 1), dtype=dtype)
            for r, seq in enumerate(all_seqs):
                if t < len(seq):
                    ids[r] = seq[len(seq) - 1 - t] if reverse else seq[t]
                    live[r, 0] = 1.0
            xs.append(ad.embedding_lookup(emb, ids))
            masks.append(live)
        return xs, masks

    hid = params.fwd.hidden
    xs_f, live = step_batch(False)
    _, hf, _ = run_lstm(xs_f, params.fwd,
                        recurrent_mask(batch, hid, rate, training, rng), live)
    xs_r, live_r = step_batch(True)
    _, hr, _ = run_lstm(xs_r, params.rev,
                        recurrent_mask(batch, hid, rate, training, rng), live_r)
    return ad.concat([hf, hr], axis=1)


def _batched_question_states(questions, params, emb, rate, training, rng):
    """Per-example (len_i, 2*hidden) matrices from one padded batch run."""
    batch = len(questions)
    max_len = max(len(q) for q in questions)
    dtype = ad.current_dtype()
    hid = params.fwd.hidden

    def step_batch(reverse):
        xs, masks = [], []
        for t in range(max_len):
            ids = np.zeros(batch, dtype=np.int64)
            live = np.zeros((batch, 1), dtype=dtype)
            for r, seq in enumerate(questions):
                if t < len(seq):
                    ids[r] = seq[len(seq) - 1 - t] if reverse else seq[t]
                    live[r, 0] = 1.0
            xs.append(ad.embedding_lookup(emb, ids))
            masks.append(live)
        return xs, masks

    xs_f, live_f = step_batch(False)
    outs_f, _, _ = run_lstm(xs_f, params.fwd,
                            recurrent_mask(batch, hid, rate, training, rng),
                            live_f, collect=True)
    xs_r, live_r = step_batch(True)
    outs_r, _, _ = run_lstm(xs_r, params.rev,
                            recurrent_mask(batch, hid, rate, training, rng),
                            live_r, collect=True)
    per_example = []
    for i, q in enumerate(questions):
        rows = []
        for t in range(len(q)):
            fwd = ad.narrow(outs_f[t], 0, i, 1)
            rev = ad.narrow(outs_r[len(q) - 1 - t], 0, i, 1)
            rows.append(ad.concat([fwd, rev], axis=1))
        per_example.append(ad.concat(rows, axis=0))
    return per_example


def encode_batch(preps: list[PreparedExample], params: EncoderParams,
                 config: EncoderConfig, training: bool = False,
                 rng: np.random.Generator | None = None) -> list[EncoderOutput]:
    """Encode several examples; equals per-example encode() up to batching."""
    if not preps:
        return []
    col_seqs, tab_seqs = [], []
    col_spans, tab_spans = [], []
    for p in preps:
        col_spans.append((len(col_seqs), len(p.tensors.column_ids)))
        col_seqs.extend(p.tensors.column_ids)
        tab_spans.append((len(tab_seqs), len(p.tensors.table_ids)))
        tab_seqs.extend(p.tensors.table_ids)
    rate = config.lstm_dropout
    c_all = _batched_endpoints(col_seqs, params.col_lstm, params.embedding,
                               rate, training, rng)
    t_all = _batched_endpoints(tab_seqs, params.tab_lstm, params.embedding,
                               rate, training, rng)
    q_each = _batched_question_states([p.question_ids for p in preps],
                                      params.q_lstm, params.embedding,
                                      rate, training, rng)

    inits = []   # per-example (c_init, t_init, q_init)
    rows = []    # concatenated layer input
    spans = []   # (start, n) in the concatenated row space
    start = 0
    for i, p in enumerate(preps):
        (cs, cn), (ts, tn) = col_spans[i], tab_spans[i]
        c_init = ad.narrow(c_all, 0, cs, cn)
        t_init = ad.narrow(t_all, 0, ts, tn)
        q_init = q_each[i]
        inits.append((c_init, t_init, q_init))
        n = cn + tn + q_init.data.shape[0]
        spans.append((start, n))
        start += n
        rows.extend([c_init, t_init, q_init])
    x = ad.concat(rows, axis=0)

    heads = config.heads
    rel_vocab_size = params.layers[0].rel_k.data.shape[0] if params.layers else 0
    for lp in params.layers:
        q_all = ad.matmul(x, lp.wq)
        k_all = ad.matmul(x, lp.wk)
        v_all = ad.matmul(x, lp.wv)
        z_rows = []
        for (s, n), p in zip(spans, preps):
            qi = ad.narrow(q_all, 0, s, n)
            ki = ad.narrow(k_all, 0, s, n)
            vi = ad.narrow(v_all, 0, s, n)
            scatter = p.relation_scatter(rel_vocab_size)
            rk = ad.embedding_lookup_dense(lp.rel_k, p.relations, scatter)
            rv = ad.embedding_lookup_dense(lp.rel_v, p.relations, scatter)
            alpha = ad.softmax(ad.mh_scores_rel(qi, ki, rk, heads))
            alpha = ad.dropout(alpha, config.attn_dropout, training, rng)
            z_rows.append(ad.mh_mix_rel(alpha, vi, rv, heads))
        z = ad.concat(z_rows, axis=0)
        y1 = ad.layer_norm(ad.add(x, z), lp.ln1_g, lp.ln1_b)
        inner = ad.relu(ad.linear(y1, lp.ffn_w1, lp.ffn_b1))
        y2 = ad.linear(inner, lp.ffn_w2, lp.ffn_b2)
        x = ad.layer_norm(ad.add(y1, y2), lp.ln2_g, lp.ln2_b)

    outs = []
    for (s, n), p, (c_init, t_init, q_init) in zip(spans, preps, inits):
        nc = c_init.data.shape[0]
        nt = t_init.data.shape[0]
        outs.append(EncoderOutput(
            c_final=ad.narrow(x, 0, s, nc),
            t_final=ad.narrow(x, 0, s + nc, nt),
            q_final=ad.narrow(x, 0, s + nc + nt, n - nc - nt),
            c_init=c_init, t_init=t_init, q_init=q_init))
    return outs


def _plan_metadata(plan, grammar: Grammar, schema) -> tuple[list[int], list[np.ndarray]]:
    """Slot-type id and legal-action mask at every step of a gold plan."""
    from .grammar import COLUMN, NODE, TreeBuilder

    builder = TreeBuilder(grammar)
    n_rules, n_cols, n_tabs = len(grammar), len(schema.columns), len(schema.tables)
    slot_ids, masks = [], []
    for action in plan:
        slot = builder.next_slot()
        slot_ids.append(grammar.slot_type_index[
            slot.head if slot.kind == NODE else slot.kind])
        mask = np.zeros(n_rules + n_cols + n_tabs, dtype=bool)
        if slot.kind == NODE:
            for r in grammar.by_head[slot.head]:
                mask[r.index] = True
        elif slot.kind == COLUMN:
            mask[n_rules:n_rules + n_cols] = True
        else:
            mask[n_rules + n_cols:] = True
        masks.append(mask)
        builder.apply(action)
    return slot_ids, masks


def loss_batch(model: Model, preps: list[PreparedExample],
               training: bool = True,
               rng: np.random.Generator | None = None) -> Tensor:
    """Mean teacher-forced loss over a batch, computed with shared-step GEMMs.

    Examples are ordered longest-first internally so the live set is always
    a prefix; finished rows simply drop off the state matrices.
    """
    cfg: DecoderConfig = model.dec_config
    grammar: Grammar = model.grammar
    params: DecoderParams = model.decoder

    all_plans = [linearize(p.gold_ast, grammar) for p in preps]
    order = sorted(range(len(preps)), key=lambda i: -len(all_plans[i]))
    preps = [preps[i] for i in order]
    plans = [all_plans[i] for i in order]
    metadata = [_plan_metadata(plan, grammar, p.schema)
                for plan, p in zip(plans, preps)]
    outs = encode_batch(preps, model.encoder, model.enc_config, training, rng)
    memories = [make_memory(o, params) for o in outs]
    lengths = [len(a) for a in plans]
    batch = len(preps)
    dtype = ad.current_dtype()

    h = Tensor(np.zeros((batch, cfg.hidden), dtype=dtype))
    c = Tensor(np.zeros((batch, cfg.hidden), dtype=dtype))
    prev = Tensor(np.zeros((batch, cfg.rule_embed_dim), dtype=dtype))
    nlls = []
    inv_ptr = 1.0 / math.sqrt(cfg.model_dim)
    for t in range(max(lengths)):
        n_live = sum(1 for L in lengths if L > t)
        if n_live < h.data.shape[0]:
            h = ad.narrow(h, 0, 0, n_live)
            c = ad.narrow(c, 0, 0, n_live)
            prev = ad.narrow(prev, 0, 0, n_live)

        # attention context: shared query projection, per-example mixing
        q_all = ad.matmul(h, params.attn_wq)
        ctx_rows = []
        type_ids = np.zeros(n_live, dtype=np.int64)
        for i in range(n_live):
            qi = ad.narrow(q_all, 0, i, 1)
            alpha = ad.softmax(ad.mh_scores(qi, memories[i].attn_k, cfg.heads))
            ctx_rows.append(ad.mh_mix(alpha, memories[i].attn_v, cfg.heads))
            type_ids[i] = metadata[i][0][t]
        ctx = ad.matmul(ad.concat(ctx_rows, axis=0), params.attn_wo)
        type_rows = ad.embedding_lookup(params.node_type_embed, type_ids)

        x = ad.concat([prev, ctx, type_rows], axis=1)
        h2, c2 = lstm_cell(x, h, c, params.lstm)
        h_drop = ad.dropout(h2, cfg.dropout, training, rng)
        rule_scores = ad.linear(h_drop, params.rule_w, params.rule_b)
        ptr_q = ad.matmul(h_drop, params.ptr_w)

        prev_rows = []
        for i in range(n_live):
            action = plans[i][t]
            mem = memories[i]
            rs = ad.narrow(rule_scores, 0, i, 1)
            pq = ad.narrow(ptr_q, 0, i, 1)
            cs = ad.scale(ad.matmul(pq, mem.cols_t), inv_ptr)
            ts_ = ad.scale(ad.matmul(pq, mem.tabs_t), inv_ptr)
            scores = ad.reshape(ad.concat([rs, cs, ts_], axis=1), (-1,))
            logp = ad.log_softmax(ad.mask_fill(scores, metadata[i][1][t], NEG_INF))
            idx = action_index(action, grammar, preps[i].schema)
            nlls.append(ad.neg(ad.pick(logp, idx)))
            prev_rows.append(_action_embedding(action, mem, params))
        h, c = h2, c2
        prev = ad.concat(prev_rows, axis=0)
    return ad.scale(ad.add_n(nlls), 1.0 / batch)


def _action_embedding(action, mem: Memory, params: DecoderParams) -> Tensor:
    if isinstance(action, ApplyRule):
        return ad.embedding_lookup(params.rule_embed, np.array([action.rule_index]))
    elem = action.element
    source = mem.c_final if elem.kind is ElemKind.COLUMN else mem.t_final
    return ad.matmul(ad.narrow(source, 0, elem.index, 1), params.pointer_action_w)
