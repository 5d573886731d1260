import math

import numpy as np
import numpy.testing as npt
import pytest

from relsql import autodiff as ad
from relsql.autodiff import Tensor, grad_check
from relsql.decoder import (
    DecoderConfig, action_from_index, action_index, advance, decode_greedy,
    decode_step, init_decoder, initial_state, legal_actions, loss_teacher_forced,
    make_memory,
)
from relsql.encoder import EncoderOutput
from relsql.from_recovery import recover_from_clause
from relsql.grammar import (
    COLUMN, NODE, SQL_GRAMMAR, ApplyRule, PointTo, check_conformance, linearize,
)
from relsql.match import exact_set_match
from relsql.relations import ElemKind, Element
from relsql.sql_parse import parse_sql
from relsql.sql_render import render_sql
from util import flights_schema, make_schema, random_connected_schema

G = SQL_GRAMMAR


@pytest.fixture
def fp64():
    ad.set_dtype("float64")
    yield
    ad.set_dtype("float32")


def fake_output(rng, n_c, n_t, n_q, d):
    c = Tensor(rng.normal(size=(n_c, d)))
    t = Tensor(rng.normal(size=(n_t, d)))
    q = Tensor(rng.normal(size=(n_q, d)))
    return EncoderOutput(c_final=c, t_final=t, q_final=q, c_init=c, t_init=t, q_init=q)


def small_config(d=8, heads=2):
    return DecoderConfig(rule_embed_dim=6, node_type_embed_dim=4, hidden=d,
                         heads=heads, model_dim=d, dropout=0.2)


def walk_to_column_slot(state, memory, params, cfg, schema):
    for name in ("query", "select_plain", "sel_one", "sel_col", "agg_none"):
        logp, h2, c2 = decode_step(state, memory, params, cfg, G, schema)
        state = advance(state, ApplyRule(G.rule(name).index), h2, c2, memory, params)
    assert state.builder.next_slot().kind == COLUMN
    return state


def test_legal_actions_column_slot_is_all_columns():
    schema = flights_schema()
    cfg = small_config()
    rng = np.random.default_rng(0)
    params = init_decoder(cfg, G, rng)
    memory = make_memory(fake_output(rng, 10, 3, 4, 8), params)
    state = walk_to_column_slot(initial_state(G, cfg), memory, params, cfg, schema)
    mask = legal_actions(state, G, schema)
    assert not mask[:len(G)].any()
    assert mask[len(G):len(G) + 10].all()
    assert not mask[len(G) + 10:].any()


def test_legal_actions_root_is_query_rules_only():
    schema = flights_schema()
    state = initial_state(G, small_config())
    mask = legal_actions(state, G, schema)
    legal = {i for i in range(len(mask)) if mask[i]}
    assert legal == {r.index for r in G.by_head["query"]}


def test_legal_actions_nonempty_for_every_node_type():
    schema = make_schema("one", ["t"], [("c", "text", 0)])
    for head, rules in G.by_head.items():
        assert rules, head
    # pointer slots too
    assert len(schema.columns) > 0 and len(schema.tables) > 0


def test_masked_distribution_is_proper():
    schema = flights_schema()
    cfg = small_config()
    rng = np.random.default_rng(1)
    params = init_decoder(cfg, G, rng)
    memory = make_memory(fake_output(rng, 10, 3, 4, 8), params)
    state = initial_state(G, cfg)
    logp, _, _ = decode_step(state, memory, params, cfg, G, schema)
    probs = np.exp(logp.data)
    mask = legal_actions(state, G, schema)
    assert probs[mask].sum() == pytest.approx(1.0, abs=1e-6)
    assert (probs[~mask] < 1e-12).all()


def test_single_column_schema_forces_pointer():
    schema = make_schema("one", ["t"], [("c", "text", 0)])
    cfg = small_config()
    rng = np.random.default_rng(2)
    params = init_decoder(cfg, G, rng)
    memory = make_memory(fake_output(rng, 1, 1, 2, 8), params)
    state = walk_to_column_slot(initial_state(G, cfg), memory, params, cfg, schema)
    logp, _, _ = decode_step(state, memory, params, cfg, G, schema)
    assert np.exp(logp.data[len(G)]) == pytest.approx(1.0, abs=1e-9)


def test_pointer_scores_match_hand_scaled_dot_products(fp64):
    schema = make_schema("two", ["t"], [("a", "text", 0), ("b", "text", 0)])
    cfg = small_config(d=4, heads=2)
    rng = np.random.default_rng(3)
    params = init_decoder(cfg, G, rng)
    out = fake_output(rng, 2, 1, 2, 4)
    memory = make_memory(out, params)
    state = walk_to_column_slot(initial_state(G, cfg), memory, params, cfg, schema)
    logp, h2, _ = decode_step(state, memory, params, cfg, G, schema)
    # independent recomputation of the pointer path from the new hidden state
    q = h2.data @ params.ptr_w.data
    scores = np.array([q[0] @ out.c_final.data[0], q[0] @ out.c_final.data[1]])
    scores = scores / math.sqrt(cfg.model_dim)
    want = np.exp(scores - scores.max())
    want = want / want.sum()
    got = np.exp(logp.data[len(G):len(G) + 2])
    npt.assert_allclose(got, want, atol=1e-12)


def test_uniform_model_loss_is_sum_of_log_counts(fp64):
    schema = flights_schema(star=True)
    cfg = small_config()
    rng = np.random.default_rng(4)
    params = init_decoder(cfg, G, rng)
    params.rule_w.data[...] = 0.0
    params.rule_b.data[...] = 0.0
    params.ptr_w.data[...] = 0.0
    gold = parse_sql("SELECT count(*) FROM flights WHERE flight_id > 3", schema)
    out = fake_output(rng, len(schema.columns), len(schema.tables), 5, 8)
    loss = loss_teacher_forced(out, gold, params, cfg, G, schema)
    want = 0.0
    for action in linearize(gold, G):
        # number of legal actions at that step depends only on the slot type
        if isinstance(action, ApplyRule):
            want += math.log(len(G.by_head[G.rules[action.rule_index].head]))
        elif action.element.kind is ElemKind.COLUMN:
            want += math.log(len(schema.columns))
        else:
            want += math.log(len(schema.tables))
    assert loss.data == pytest.approx(want, rel=1e-9)
    # steps with exactly one legal action contribute log 1 = 0
    assert math.log(1) == 0.0


def test_loss_gradient_check(fp64):
    schema = make_schema("g", ["t0", "t1"],
                         [("a", "number", 0), ("b", "text", 1)], pks=[0], fks=[(1, 0)])
    cfg = small_config(d=4, heads=2)
    rng = np.random.default_rng(5)
    params = init_decoder(cfg, G, rng)
    out = fake_output(rng, 2, 2, 3, 4)
    gold = parse_sql("SELECT a FROM t0 WHERE a = 3", schema)

    def f():
        return loss_teacher_forced(out, gold, params, cfg, G, schema)

    subset = [out.c_final, params.rule_embed, params.node_type_embed,
              params.pointer_action_w, params.lstm.w, params.attn_wq,
              params.rule_w, params.ptr_w]
    assert grad_check(f, subset) < 1e-4


def test_greedy_decode_validity_sample():
    cfg = small_config()
    rng = np.random.default_rng(6)
    for trial in range(60):
        if trial % 10 == 0:
            params = init_decoder(cfg, G, rng)
        schema = random_connected_schema(rng, n_tables=int(rng.integers(1, 4)))
        out = fake_output(rng, len(schema.columns), len(schema.tables),
                          int(rng.integers(2, 6)), 8)
        result = decode_greedy(out, params, cfg, G, schema, max_actions=120)
        check_conformance(result.ast, G, schema)
        recover_from_clause(result.ast, schema)
        text = render_sql(result.ast, schema)
        reparsed = parse_sql(text, schema)
        assert render_sql(reparsed, schema) == text


def test_greedy_budget_one_truncates_to_minimal_tree():
    schema = flights_schema()
    cfg = small_config()
    rng = np.random.default_rng(7)
    params = init_decoder(cfg, G, rng)
    out = fake_output(rng, len(schema.columns), len(schema.tables), 3, 8)
    result = decode_greedy(out, params, cfg, G, schema, max_actions=1)
    assert result.truncated
    check_conformance(result.ast, G, schema)
    # closure picks first rules everywhere: plain single-column select
    assert result.ast.children[0].rule.name == "select_plain"
    assert result.ast.children[1].rule.name == "no_where"
    with pytest.raises(ValueError, match="max_actions"):
        decode_greedy(out, params, cfg, G, schema, max_actions=0)


def test_overfit_single_example_reproduces_gold():
    """A few Adam steps on one tiny example drive greedy decode to the gold tree."""
    from relsql.optim import AdamConfig, adam_step
    from relsql.autodiff import Tape, backward, zero_grads

    schema = make_schema("o", ["t0"], [("a", "number", 0), ("b", "text", 0)])
    cfg = small_config()
    rng = np.random.default_rng(8)
    params = init_decoder(cfg, G, rng)
    out = fake_output(rng, 2, 1, 3, 8)
    gold = parse_sql("SELECT b FROM t0 WHERE a > 7", schema)
    opt = AdamConfig(max_steps=400, base_lr=5e-3)
    all_params = params.all()
    for step in range(120):
        zero_grads(all_params)
        with Tape() as tape:
            loss = loss_teacher_forced(out, gold, params, cfg, G, schema)
        backward(loss, tape)
        adam_step(all_params, opt, min(step + 30, 399))
    result = decode_greedy(out, params, cfg, G, schema)
    result.ast.from_clause = gold.from_clause
    ok, _ = exact_set_match(gold, result.ast)
    assert ok, render_sql(result.ast, schema) if result.ast.from_clause else "?"


def test_pointer_symmetry_under_column_swap():
    """Swapping two identical columns' encoder rows swaps their pointer probabilities."""
    schema = make_schema("sym", ["t"], [("x", "text", 0), ("x", "text", 0)])
    cfg = small_config()
    rng = np.random.default_rng(9)
    params = init_decoder(cfg, G, rng)
    out = fake_output(rng, 2, 1, 3, 8)
    swapped = EncoderOutput(
        c_final=Tensor(out.c_final.data[[1, 0]]), t_final=out.t_final,
        q_final=out.q_final, c_init=out.c_init, t_init=out.t_init, q_init=out.q_init)

    def col_probs(o):
        memory = make_memory(o, params)
        state = walk_to_column_slot(initial_state(G, cfg), memory, params, cfg, schema)
        logp, _, _ = decode_step(state, memory, params, cfg, G, schema)
        return np.exp(logp.data[len(G):len(G) + 2])

    p = col_probs(out)
    q = col_probs(swapped)
    npt.assert_allclose(p, q[[1, 0]], atol=1e-6)


def test_action_index_roundtrip():
    schema = flights_schema()
    for idx in range(len(G) + len(schema.columns) + len(schema.tables)):
        action = action_from_index(idx, G, schema)
        assert action_index(action, G, schema) == idx
    assert isinstance(action_from_index(len(G), G, schema), PointTo)
